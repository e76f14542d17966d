"""Exception hierarchy shared by every kcl module.

Anything derived from :class:`KclError` is a *domain* error: bad input data,
an inconsistent KG, an invalid config.  The CLI maps these to exit code 1.
"""


class KclError(Exception):
    """Base class for all domain errors raised by kcl."""


class ShapeMismatch(KclError, ValueError):
    pass


class ConfigInvalid(KclError, ValueError):
    pass
