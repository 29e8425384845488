"""Bundled scenario configuration files."""

from pathlib import Path


def bundled(name):
    """Absolute path of a shipped scenario config."""
    path = Path(__file__).resolve().parent / name
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path
