"""Exception hierarchy.

Every error raised by the package derives from :class:`ResiLimbError`.  The
reconstruction pipeline sets ``stage`` on errors that escape it so callers
can tell which step failed.
"""


class ResiLimbError(Exception):
    stage = None


# geometry / projection
class DepthNonPositive(ResiLimbError, ValueError):
    pass


class VertexBehindCamera(ResiLimbError, ValueError):
    def __init__(self, vertex_index, message=None):
        self.vertex_index = int(vertex_index)
        super().__init__(message or f"vertex {vertex_index} has non-positive camera depth")


# optimizer
class NonFiniteObjective(ResiLimbError, FloatingPointError):
    pass


class EmptyParameterVector(ResiLimbError, ValueError):
    pass


# rafo
class LambdaOutOfRange(ResiLimbError, ValueError):
    pass


class OptimizationDiverged(ResiLimbError, RuntimeError):
    pass


class InvalidLimbTable(ResiLimbError, ValueError):
    pass


# meshedit
class RejectedRafoResult(ResiLimbError, ValueError):
    pass


class DegenerateSegment(ResiLimbError, ValueError):
    pass


class UnknownPartId(ResiLimbError, KeyError):
    pass


class NoBandVertices(ResiLimbError, ValueError):
    pass


class MultipleBoundaryComponents(ResiLimbError, ValueError):
    def __init__(self, loop_count, message=None):
        self.loop_count = int(loop_count)
        super().__init__(message or f"cut produced {loop_count} boundary loops of comparable size")


class NonManifoldBoundary(ResiLimbError, ValueError):
    def __init__(self, vertices):
        self.vertices = sorted(int(v) for v in vertices)
        super().__init__(f"boundary vertices with more than two boundary edges: {self.vertices}")


class LoopCollapsed(ResiLimbError, ValueError):
    pass


class DegenerateLoop(ResiLimbError, ValueError):
    pass


class SelfIntersectingSeal(ResiLimbError, ValueError):
    """Sealing would intersect kept geometry; ``mesh`` holds the unsealed input."""

    def __init__(self, mesh, pairs):
        self.mesh = mesh
        self.pairs = pairs
        super().__init__(f"{len(pairs)} added triangles intersect kept triangles")


# metrics
class NoVisibleKeypoints(ResiLimbError, ValueError):
    pass


class DimensionMismatch(ResiLimbError, ValueError):
    pass


class MissingPrediction(ResiLimbError, ValueError):
    pass


# io
class ParseError(ResiLimbError, ValueError):
    pass


class SchemaVersionMismatch(ParseError):
    pass


class WrongSlotCount(ParseError):
    pass


class NonOrthonormalRotation(ParseError):
    pass


class UnsupportedImageFormat(ResiLimbError, ValueError):
    pass


class DimensionOverflow(ResiLimbError, ValueError):
    pass
