"""Exception types shared across the package."""


class ModelError(ValueError):
    """The model violates a structural requirement (e.g. ellipticity)."""


class NumericalError(RuntimeError):
    """A numerical procedure could not deliver the requested accuracy."""


class ConfigError(ValueError):
    """An experiment configuration is malformed."""

    def __init__(self, message: str, *, section: str | None = None, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section:
            where.append(f"[{section}]")
        if key:
            where.append(key)
        super().__init__(f"{' '.join(where)}: {message}" if where else message)
        self.section = section
        self.key = key
        self.line = line
