"""Exception types; the CLI maps them onto exit codes."""


class AvgSadError(Exception):
    pass


class ValidationError(AvgSadError, ValueError):
    """Invalid graph, parameter or input data."""


class SpecError(ValidationError):
    """Malformed spec string on the command line (graph, law, mu, vertex)."""


class ResourceError(AvgSadError, RuntimeError):
    """A safety cap (region size, search budget) was exceeded."""
