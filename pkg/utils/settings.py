import os
from dotenv import load_dotenv

load_dotenv()

MEC_WORKERS = int(os.getenv("MEC_WORKERS", "1"))
MEC_LOG_LEVEL = os.getenv("MEC_LOG_LEVEL", "INFO")
MEC_OUTPUT_DIR = os.getenv("MEC_OUTPUT_DIR", "out")


def worker_count(requested: int | None = None) -> int:
    """Resolve the worker count for parallel maps, falling back to MEC_WORKERS."""
    workers = requested if requested is not None else MEC_WORKERS
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers
