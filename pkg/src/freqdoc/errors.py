"""Error types shared across the package.

File-level problems (unreadable paths, permissions) surface as the built-in
OSError family; these classes cover everything past the filesystem.
"""


class FormatError(ValueError):
    """Byte-level container problems: undecodable images, bad tensor files."""


class ValidationError(ValueError):
    """Structurally sound input that violates a documented precondition."""
