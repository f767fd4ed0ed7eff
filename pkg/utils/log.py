import logging

from utils.settings import MEC_LOG_LEVEL

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Install the root handler once; library modules only create loggers."""
    resolved = (level or MEC_LOG_LEVEL).upper()
    numeric = getattr(logging, resolved, None)
    if not isinstance(numeric, int):
        raise ValueError(f"unknown log level: {resolved}")
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=numeric, format=LOG_FORMAT)
    root.setLevel(numeric)
