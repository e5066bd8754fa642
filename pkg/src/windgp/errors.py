"""Exception types raised across the package."""


class WindGPError(Exception):
    """Base class for all package errors."""


class ZeroVariance(WindGPError):
    def __init__(self, dimension):
        super().__init__(f"feature dimension {dimension} has zero variance")
        self.dimension = dimension


class OutOfRange(WindGPError):
    pass


class SchemaMismatch(WindGPError):
    def __init__(self, column, path=None):
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing column {column!r}{where}")
        self.column = column
        self.path = path


class DimensionMismatch(WindGPError):
    pass


class NonPositiveLengthscale(WindGPError):
    pass


class NonPositiveLatent(WindGPError):
    pass


class IllegalNoise(WindGPError):
    pass


class SingularGram(WindGPError):
    """Cholesky factorization failed even at the largest allowed jitter."""


class SingularLatentGram(SingularGram):
    pass


class NegativeVariance(WindGPError):
    pass


class NonFiniteGradient(WindGPError):
    pass


class DivergedToInfinity(WindGPError):
    pass


class AllRestartsFailed(WindGPError):
    pass


class NonPositiveVariance(WindGPError):
    pass


class EmptySet(WindGPError):
    pass


class NonPositiveRatedPower(WindGPError):
    pass


class MissingModel(WindGPError):
    pass


class ConfigError(WindGPError):
    def __init__(self, message, key=None, path=None):
        ctx = []
        if path is not None:
            ctx.append(f"file={path}")
        if key is not None:
            ctx.append(f"key={key}")
        suffix = f" ({', '.join(ctx)})" if ctx else ""
        super().__init__(message + suffix)
        self.key = key
        self.path = path
