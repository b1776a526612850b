"""Exception hierarchy shared by every stage."""


class C2GMAError(Exception):
    pass


class ParseError(C2GMAError, ValueError):
    """Malformed input document; the message names the offending record index."""


class ShapeError(C2GMAError, ValueError):
    pass


class CapacityError(C2GMAError, ValueError):
    pass


class GeometryError(C2GMAError, ValueError):
    pass


class ParameterError(C2GMAError, ValueError):
    pass


class ConfigurationError(C2GMAError, ValueError):
    pass


class EmptyDatasetError(C2GMAError, ValueError):
    pass


class InsufficientDataError(C2GMAError, ValueError):
    pass
