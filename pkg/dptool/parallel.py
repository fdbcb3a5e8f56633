"""Batch processing for dptool

Runs independent per-item computations:
- per-condition loss reports
- bootstrap resamples
- design sweep rows

Items are split into batches and each batch runs on a bounded thread
pool. Results come back in input order, so serial and parallel runs
produce identical tables.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Sequence

logger = logging.getLogger(__name__)


class BatchProcessor:
    """Processes batch operations with concurrency control."""

    def __init__(self, batch_size: int = 100, max_concurrent: int = 1):
        if batch_size < 1 or max_concurrent < 1:
            raise ValueError("batch_size and max_concurrent must be positive")
        self.batch_size = batch_size
        self.max_concurrent = max_concurrent
        self.completed = 0
        self.failed = 0
        self._lock = threading.Lock()

    def process_batch(
        self,
        items: Sequence[Any],
        processor_func: Callable[[Any], Any],
        return_exceptions: bool = False,
    ) -> List[Any]:
        """Apply `processor_func` to every item.

        With `return_exceptions`, a failing item yields its exception in
        place of a result and the remaining items still run.
        """
        results: List[Any] = []
        batches = [items[i:i + self.batch_size] for i in range(0, len(items), self.batch_size)]
        logger.info(f"Processing {len(items)} items in {len(batches)} batches")

        def run(item: Any) -> Any:
            try:
                result = processor_func(item)
                with self._lock:
                    self.completed += 1
                return result
            except Exception as e:
                with self._lock:
                    self.failed += 1
                if not return_exceptions:
                    raise
                logger.debug(f"Item failed: {e}")
                return e

        for batch_idx, batch in enumerate(batches):
            if self.max_concurrent == 1:
                results.extend(run(item) for item in batch)
            else:
                with ThreadPoolExecutor(max_workers=self.max_concurrent) as executor:
                    results.extend(executor.map(run, batch))
            logger.debug(f"Batch {batch_idx + 1}/{len(batches)} completed")
        return results

    def get_stats(self) -> dict:
        total = self.completed + self.failed
        return {
            "max_concurrent": self.max_concurrent,
            "completed": self.completed,
            "failed": self.failed,
            "success_rate": self.completed / total if total > 0 else 0,
        }
