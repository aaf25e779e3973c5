import time
import logging
import threading

from enum import Enum
from tqdm import tqdm
from dataclasses import dataclass, asdict
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence
from models.errors import ConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_MAX_WORKERS = 4
UPDATABLE_FIELDS = ("status", "progress", "message", "result", "error")


class ExperimentStatus(Enum):
    FAILED = "failed"
    PENDING = "pending"
    SOLVING = "solving"
    COMPLETED = "completed"


@dataclass
class ExperimentInfo:
    experiment_id: str
    status: ExperimentStatus
    progress: float = 0.0
    message: str = ""
    created_at: float = None
    updated_at: float = None
    result: Optional[Any] = None
    error: Optional[str] = None

    def __post_init__(self):
        now = time.time()
        if self.created_at is None:
            self.created_at = now
        if self.updated_at is None:
            self.updated_at = now

    def update(self, **changes: Any):
        """Set the given fields; None leaves a field unchanged."""
        for key, value in changes.items():
            if key not in UPDATABLE_FIELDS:
                raise AttributeError(f"ExperimentInfo has no updatable field {key!r}")
            if value is not None:
                setattr(self, key, value)
        self.updated_at = time.time()


class ExperimentManager:
    """
    Runs the entries of a target schedule on a thread pool and keeps one
    ExperimentInfo per entry. Results come back in schedule order.
    """

    def __init__(self, config: dict = None):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Show a progress bar and per-entry log lines
                - max_workers (int): Pool size
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.max_workers = self.config.get("max_workers", DEFAULT_MAX_WORKERS)
        self.experiments: Dict[str, ExperimentInfo] = {}
        self.lock = threading.RLock()

    def create_experiment(self, experiment_id: str) -> ExperimentInfo:
        with self.lock:
            info = ExperimentInfo(
                experiment_id=experiment_id,
                status=ExperimentStatus.PENDING,
                message="Experiment created",
            )
            self.experiments[experiment_id] = info
            return info

    def update_experiment(self, experiment_id: str, **kwargs) -> Optional[ExperimentInfo]:
        with self.lock:
            info = self.experiments.get(experiment_id)
            if info:
                info.update(**kwargs)
                return info
            return None

    def get_experiment_dict(self, experiment_id: str) -> Optional[Dict]:
        with self.lock:
            info = self.experiments.get(experiment_id)
            if info:
                d = asdict(info)
                d["status"] = info.status.value
                return d
            return None

    def failed(self) -> List[ExperimentInfo]:
        with self.lock:
            return [i for i in self.experiments.values() if i.status is ExperimentStatus.FAILED]

    def failure_report(self, experiment_ids: Sequence[str]) -> Dict[str, str]:
        """experiment id -> error message for the failed experiments among experiment_ids."""
        wanted = set(experiment_ids)
        report = {}
        for info in self.failed():
            if info.experiment_id in wanted:
                report[info.experiment_id] = self.get_experiment_dict(info.experiment_id)["error"]
        return report

    def run_schedule(
        self,
        fn: Callable[[Any], Any],
        items: Sequence[Any],
        label: str = "entry",
    ) -> List[Any]:
        """
        Apply fn to every item concurrently.

        Args:
            fn (Callable): Work for one schedule entry
            items (Sequence): Schedule entries
            label (str): Prefix of the experiment ids

        Returns:
            List: fn(item) for every item, in schedule order

        Raises:
            Exception: The first failure in schedule order, after every entry has finished;
                a ConvergenceError also lists every failed experiment id under "failed"
        """
        ids = [f"{label}-{k}" for k in range(len(items))]
        for experiment_id in ids:
            self.create_experiment(experiment_id)

        def run_one(k: int):
            experiment_id = ids[k]
            self.update_experiment(experiment_id, status=ExperimentStatus.SOLVING, message="Solving")
            try:
                result = fn(items[k])
            except Exception as e:
                logger.exception(f"Experiment {experiment_id} failed")
                self.update_experiment(
                    experiment_id, status=ExperimentStatus.FAILED, message="Failed", error=str(e)
                )
                return e
            self.update_experiment(
                experiment_id,
                status=ExperimentStatus.COMPLETED,
                progress=1.0,
                message="Completed",
                result=result,
            )
            if self.verbose:
                logger.info(f"Experiment {experiment_id} completed")
            return result

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            outcomes = list(
                tqdm(
                    executor.map(run_one, range(len(items))),
                    total=len(items),
                    desc=label,
                    disable=not self.verbose,
                )
            )

        errors = [outcome for outcome in outcomes if isinstance(outcome, Exception)]
        if errors:
            report = self.failure_report(ids)
            logger.error(f"{len(report)} of {len(ids)} experiments failed: {', '.join(sorted(report))}")
            first = errors[0]
            if isinstance(first, ConvergenceError):
                first.diagnostics["failed"] = ",".join(i for i in ids if i in report)
            raise first
        return outcomes
