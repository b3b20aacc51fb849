"""Exception types shared across the package.

Argument/shape problems raise plain ValueError; these classes cover the two
failure modes that map to dedicated CLI exit codes.
"""


class GagaError(Exception):
    """Base class for package-specific failures."""


class FormatError(GagaError):
    """A serialized file is malformed (bad magic, version, or truncation)."""


class NumericError(GagaError):
    """A numeric invariant broke at runtime (NaN loss, singular solve)."""
