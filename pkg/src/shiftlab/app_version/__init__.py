from .version import APP_VERSION


def tool_version() -> str:
    """Version string embedded in reports and checkpoints."""
    return f"shiftlab {APP_VERSION}"
