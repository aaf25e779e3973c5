import re
import math

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator
from models.green.experiments import Target, diag_targets, ray_targets, wall_targets

RANGE_PATTERN = re.compile(r"^(-?\d+)\.\.(-?\d+):(\d+)$")
MAX_SEED = 2**64 - 1


class InputValidator:
    """
    Utility class for validating command-line parameters.
    """

    @staticmethod
    def validate_vector(text: Any, dim: Optional[int] = None, integer: bool = False) -> Dict[str, Any]:
        """
        Validate a comma-separated vector such as "1,0".

        Args:
            text: Raw parameter
            dim (Optional[int]): Required number of coordinates
            integer (bool): Require integer coordinates

        Returns:
            Dict[str, Any]: Validation result with the parsed tuple as 'value'
        """
        if not text or not isinstance(text, str):
            return {"valid": False, "error": "Vector is required and must be a string"}
        try:
            parts = [p.strip() for p in text.split(",")]
            if integer:
                value = tuple(int(p) for p in parts)
            else:
                value = tuple(float(p) for p in parts)
        except ValueError:
            kind = "integers" if integer else "numbers"
            return {"valid": False, "error": f"Vector {text!r} must be comma-separated {kind}"}
        if not integer and not all(math.isfinite(v) for v in value):
            return {"valid": False, "error": f"Vector {text!r} has non-finite entries"}
        if dim is not None and len(value) != dim:
            return {"valid": False, "error": f"Vector {text!r} must have {dim} coordinates"}
        return {"valid": True, "value": value}

    @staticmethod
    def validate_direction(text: Any, dim: int, upper: bool = True) -> Dict[str, Any]:
        """Validate and normalise a direction; upper=True requires q_d >= 0."""
        result = InputValidator.validate_vector(text, dim)
        if not result["valid"]:
            return result
        norm = math.sqrt(sum(v * v for v in result["value"]))
        if norm == 0.0:
            return {"valid": False, "error": "Direction must be non-zero"}
        value = tuple(v / norm for v in result["value"])
        if upper and value[-1] < 0.0:
            return {"valid": False, "error": "Direction must point into the upper half-space"}
        return {"valid": True, "value": value}

    @staticmethod
    def validate_tolerance(value: Any) -> Dict[str, Any]:
        if value is None:
            return {"valid": True, "value": None}
        try:
            tol = float(value)
        except (ValueError, TypeError):
            return {"valid": False, "error": "Tolerance must be a number"}
        if not math.isfinite(tol) or tol <= 0.0:
            return {"valid": False, "error": "Tolerance must be positive"}
        return {"valid": True, "value": tol}

    @staticmethod
    def validate_seed(value: Any) -> Dict[str, Any]:
        if value is None:
            return {"valid": True, "value": None}
        try:
            seed = int(value)
        except (ValueError, TypeError):
            return {"valid": False, "error": "Seed must be an integer"}
        if not 0 <= seed <= MAX_SEED:
            return {"valid": False, "error": "Seed must be an unsigned 64-bit integer"}
        return {"valid": True, "value": seed}

    @staticmethod
    def validate_schedule(
        text: Any, dim: int, q: Optional[Tuple[float, ...]] = None, killed: bool = True
    ) -> Dict[str, Any]:
        """
        Validate a target schedule.

        Accepted forms: diag:a..b:step, wall:a..b:step, ray:a..b:step (needs q)
        and list:x,y;x,y;... Targets of killed schedules must lie in the
        half-space; free schedules only exclude the origin.

        Returns:
            Dict[str, Any]: Validation result with a list of Target as 'value'
        """
        if not text or not isinstance(text, str) or ":" not in text:
            return {"valid": False, "error": "Schedule must look like 'diag:5..60:5' or 'list:1,1;2,2'"}
        kind, _, body = text.partition(":")

        if kind == "list":
            targets: List[Target] = []
            for k, item in enumerate(filter(None, body.split(";")), start=1):
                point = InputValidator.validate_vector(item, dim, integer=True)
                if not point["valid"]:
                    return point
                if killed and point["value"][-1] < 1:
                    return {"valid": False, "error": f"Target {item!r} is not in the half-space"}
                if not any(point["value"]):
                    return {"valid": False, "error": "Target must differ from the origin"}
                targets.append(Target(k, point["value"]))
            if not targets:
                return {"valid": False, "error": "Target list is empty"}
            return {"valid": True, "value": targets}

        match = RANGE_PATTERN.match(body)
        if not match:
            return {"valid": False, "error": f"Range {body!r} must look like 'a..b:step'"}
        start, stop, step = (int(g) for g in match.groups())
        if step < 1 or start < 1 or stop < start:
            return {"valid": False, "error": f"Range {body!r} needs 1 <= a <= b and step >= 1"}
        ns = list(range(start, stop + 1, step))

        if kind == "diag":
            return {"valid": True, "value": diag_targets(ns, dim)}
        if kind == "wall":
            return {"valid": True, "value": wall_targets(ns, dim)}
        if kind == "ray":
            if q is None:
                return {"valid": False, "error": "A ray schedule needs --q"}
            return {"valid": True, "value": ray_targets(ns, q, killed)}
        return {"valid": False, "error": f"Unknown schedule kind {kind!r}"}


class ExperimentConfig(BaseModel):
    """Parameters of one CLI invocation after parsing."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, protected_namespaces=())

    model_path: Path
    command: str
    q: Optional[Tuple[float, ...]] = None
    targets: Optional[List[Target]] = None
    zs: List[Tuple[int, ...]] = Field(default_factory=list)
    z0: Optional[Tuple[int, ...]] = None
    tol: Optional[float] = Field(default=None, gt=0)
    seed: Optional[int] = Field(default=None, ge=0, le=MAX_SEED)
    monte_carlo: bool = False
    n_paths: int = Field(default=100000, ge=1)
    horizon: int = Field(default=100000, ge=1)
    out: Optional[Path] = None

    @model_validator(mode="after")
    def check_seed(self) -> "ExperimentConfig":
        if self.monte_carlo and self.seed is None:
            raise ValueError("--seed is required for Monte Carlo runs")
        return self
