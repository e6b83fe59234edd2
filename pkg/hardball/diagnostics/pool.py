"""Worker pool for ensembles of independent trajectories"""

from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, Iterable, List, Literal, Optional, TypeVar

from ..utils.logging import setup_logging

logger = setup_logging()

T = TypeVar("T")


class EnsembleRunner:
    """Runs a per-sample task over sample indices on an executor

    Results come back ordered by index, so the worker count never changes
    an ensemble's output.
    """

    def __init__(self, max_workers: int = 1, backend: Literal["thread", "process"] = "process"):
        """Initialize the runner

        Args:
            max_workers: Number of workers; 1 runs every task inline
            backend: "process" for CPU-bound tasks (tasks must be picklable) or "thread"
        """
        if max_workers < 1:
            raise ValueError(f"max_workers must be positive, got {max_workers}")
        self.max_workers = max_workers
        self.backend = backend
        self._executor: Optional[Executor] = None
        self._running = False

    def start(self):
        """Start the worker pool"""
        if not self._running:
            if self.max_workers > 1:
                pool = ProcessPoolExecutor if self.backend == "process" else ThreadPoolExecutor
                self._executor = pool(max_workers=self.max_workers)
            self._running = True
            logger.debug(f"Ensemble runner started ({self.max_workers} {self.backend} workers)")

    def stop(self):
        """Stop the worker pool"""
        if self._running:
            self._running = False
            if self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None
            logger.debug("Ensemble runner stopped")

    def __enter__(self) -> "EnsembleRunner":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.stop()

    def map(self, task: Callable[[int], T], indices: Iterable[int]) -> List[T]:
        """Apply task to every index; results in index order"""
        indices = list(indices)
        if not self._running:
            self.start()
        if self._executor is None:
            return [task(i) for i in indices]
        chunk = max(1, len(indices) // (4 * self.max_workers))
        if self.backend == "process":
            return list(self._executor.map(task, indices, chunksize=chunk))
        return list(self._executor.map(task, indices))
