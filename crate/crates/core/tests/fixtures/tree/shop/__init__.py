"""Shop package."""

VERSION = "1.0"


def version():
    """Return the package version."""
    return VERSION
