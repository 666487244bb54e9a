"""Exception hierarchy shared by every stage."""


class HousetexError(Exception):
    pass


class ParseError(HousetexError):
    """House JSON does not match the schema. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class IntegrityError(HousetexError):
    pass


class GeometryError(HousetexError):
    pass


class PlacementError(HousetexError):
    pass


class CoverageError(HousetexError):
    def __init__(self, missing):
        self.missing = list(missing)
        names = ", ".join(f"({r}, {k})" for r, k in self.missing)
        super().__init__(f"no texture for surfaces: {names}")


class BackendError(HousetexError):
    pass


class ModelError(HousetexError):
    pass


class TrainingError(HousetexError):
    pass


class PipelineError(HousetexError):
    def __init__(self, stage, surface, cause):
        super().__init__(f"stage {stage!r} failed for surface {surface}: {cause}")
        self.stage = stage
        self.surface = surface
