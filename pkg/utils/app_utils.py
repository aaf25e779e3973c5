import os
import sys
import json
import logging

from pathlib import Path
from contextlib import contextmanager
from dotenv import load_dotenv
from typing import IO, Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

load_dotenv(override=True)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.json"
CONFIG_ENV_VAR = "MARTIN_CONFIG"
LOG_LEVEL_ENV_VAR = "LOG_LEVEL"


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Load configuration from a JSON file: the explicit path, else $MARTIN_CONFIG,
    else config.json at the repository root.
    Raises RuntimeError if the file is not found or is malformed.
    """
    path = Path(path or os.getenv(CONFIG_ENV_VAR) or DEFAULT_CONFIG_PATH)
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise RuntimeError(f"{path} not found. Please provide a valid configuration file.")
    except json.JSONDecodeError:
        raise RuntimeError(f"{path} is malformed. Please check the file format.")


def setup_logger(level: Optional[str] = None) -> logging.Logger:
    """
    Setup a basic logger for the application on standard error.
    The level comes from the argument, else $LOG_LEVEL, else INFO.
    """
    level = (level or os.getenv(LOG_LEVEL_ENV_VAR) or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(message)s",
        stream=sys.stderr,
    )
    return logging.getLogger(__name__)


def format_number(value: Any) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def format_vector(values: Sequence[Any]) -> str:
    return ",".join(format_number(float(v)) if not isinstance(v, int) else str(v) for v in values)


@contextmanager
def open_output(path: Optional[Union[str, Path]]) -> Iterator[IO[str]]:
    """Yield a text stream for path, or standard output when path is None."""
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        yield f


def write_csv(stream: IO[str], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Comma-separated rows; vector cells are quoted so they stay one column."""
    stream.write(",".join(header) + "\n")
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (tuple, list)):
                cells.append(f'"{format_vector(cell)}"')
            else:
                cells.append(format_number(cell))
        stream.write(",".join(cells) + "\n")


def write_key_values(stream: IO[str], pairs: List[Tuple[str, Any]]) -> None:
    for key, value in pairs:
        if isinstance(value, (tuple, list)):
            value = format_vector(value)
        else:
            value = format_number(value)
        stream.write(f"{key}={value}\n")
