"""Thread-pool worker for independent training and testing jobs.

Jobs never share mutable state (each CG-DAN module owns its parameters, each
CI test reads the same immutable arrays), so they can run side by side.
Results always come back in job order, whatever order they finish in.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

log = logging.getLogger(__name__)

THREADS_ENV = "SHIFTLAB_THREADS"


class TrainCancelledError(Exception):
    """Raised when cancellation of the running jobs was requested."""


@dataclass(slots=True)
class TrainJob:
    """One unit of work.

    - ``name`` : label used in status messages and as the result key.
    - ``fn``   : zero-argument callable doing the work.
    """

    name: str
    fn: Callable[[], Any]


def resolve_workers(default: int = 1) -> int:
    """``default`` capped by ``SHIFTLAB_THREADS`` (when set), never below 1."""
    workers = max(1, int(default))
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, min(workers, int(raw)))
        except ValueError:
            log.warning("Ignoring non-integer %s=%r", THREADS_ENV, raw)
    return workers


class TrainWorker:
    """Runs a batch of ``TrainJob`` on a thread pool, reporting progress.

    ``status_cb(message)`` and ``progress_cb(done, total)`` are optional;
    ``request_cancel()`` stops the batch before the next job starts.
    """

    def __init__(self, workers: int = 1,
                 status_cb: Optional[Callable[[str], None]] = None,
                 progress_cb: Optional[Callable[[int, int], None]] = None) -> None:
        self.workers = resolve_workers(workers)
        self._status_cb = status_cb
        self._progress_cb = progress_cb
        self._cancel_requested = False

    # --------------------------- cancellation API -------------------------
    def request_cancel(self) -> None:
        self._cancel_requested = True

    def _check_cancel(self) -> None:
        if self._cancel_requested:
            raise TrainCancelledError("Training cancelled by request.")

    # ------------------------------- API ----------------------------------
    def _guarded(self, job: TrainJob) -> Callable[[], Any]:
        def call():
            self._check_cancel()
            if self._status_cb:
                self._status_cb(f"Running {job.name}")
            return job.fn()
        return call

    def run(self, jobs: Sequence[TrainJob]) -> dict[str, Any]:
        """Run every job; the first failure (in job order) is re-raised."""
        names = [job.name for job in jobs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate job names: {names}")
        total = len(jobs)
        results: dict[str, Any] = {}
        if total == 0:
            return results

        if self.workers == 1 or total == 1:
            for done, job in enumerate(jobs, start=1):
                results[job.name] = self._guarded(job)()
                if self._progress_cb:
                    self._progress_cb(done, total)
            return results

        with ThreadPoolExecutor(max_workers=min(self.workers, total)) as pool:
            futures = [pool.submit(self._guarded(job)) for job in jobs]
            pending = set(futures)
            done_count = 0
            while pending:
                finished, pending = wait(pending, return_when=FIRST_EXCEPTION)
                done_count += len(finished)
                if self._progress_cb:
                    self._progress_cb(done_count, total)
                if any(f.exception() is not None for f in finished):
                    self._cancel_requested = True
                    for f in pending:
                        f.cancel()
                    wait(pending)
                    break
        # report the earliest failing job, not the first to fail in time
        errors = [f.exception() for f in futures if not f.cancelled() and f.exception() is not None]
        for exc in errors:
            if not isinstance(exc, TrainCancelledError):
                raise exc
        if errors:
            raise errors[0]
        self._check_cancel()
        return {job.name: fut.result() for job, fut in zip(jobs, futures)}
