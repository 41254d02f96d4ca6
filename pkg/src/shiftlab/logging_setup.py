import logging
from pathlib import Path

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

_def_logger = None
_file_handlers: dict[Path, logging.Handler] = {}


def get_logger(name: str = "shiftlab", logfile: Path | None = None) -> logging.Logger:
    """Return the package logger; library modules log through its children."""
    global _def_logger
    if _def_logger is None:
        logger = logging.getLogger(name)
        logger.setLevel(logging.INFO)

        ch = logging.StreamHandler()
        ch.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(ch)
        _def_logger = logger

    if logfile is not None:
        logfile = Path(logfile).resolve()
        if logfile not in _file_handlers:
            logfile.parent.mkdir(parents=True, exist_ok=True)
            fh = logging.FileHandler(logfile, encoding="utf-8")
            fh.setFormatter(logging.Formatter(LOG_FORMAT))
            _def_logger.addHandler(fh)
            _file_handlers[logfile] = fh

    return _def_logger


def set_verbosity(level: int | str) -> None:
    get_logger().setLevel(level)
