import logging

from pathlib import Path
from typing import Dict, Tuple, Union
from models.errors import ModelError
from models.walks.jump_model import JumpDistribution

logger = logging.getLogger(__name__)


def parse_model(text: str) -> JumpDistribution:
    """
    Parse the line-oriented model format.

    The first meaningful line is ``dim <d>``; each following line is
    ``jump <z1> ... <zd> <prob>``. Everything after ``#`` is a comment.

    Args:
        text (str): Model file contents

    Returns:
        JumpDistribution: The parsed law

    Raises:
        ModelError: On malformed lines, duplicate jumps or bad probabilities
    """
    dim = None
    entries: Dict[Tuple[int, ...], float] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()

        if dim is None:
            if tokens[0] != "dim" or len(tokens) != 2:
                raise ModelError(f"line {lineno}: expected 'dim <d>', got {raw!r}")
            try:
                dim = int(tokens[1])
            except ValueError:
                raise ModelError(f"line {lineno}: dimension {tokens[1]!r} is not an integer")
            continue

        if tokens[0] != "jump" or len(tokens) != dim + 2:
            raise ModelError(
                f"line {lineno}: expected 'jump' with {dim} coordinates and a probability"
            )
        try:
            jump = tuple(int(c) for c in tokens[1:-1])
            prob = float(tokens[-1])
        except ValueError:
            raise ModelError(f"line {lineno}: malformed number in {raw!r}")
        if jump in entries:
            raise ModelError(f"line {lineno}: duplicate jump {jump}")
        entries[jump] = prob

    if dim is None:
        raise ModelError("model file has no 'dim' line")

    return JumpDistribution(dim=dim, entries=entries)


def load_model(path: Union[str, Path]) -> JumpDistribution:
    """Read and parse a model file (UTF-8)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read model file {path}: {e}")
        raise ModelError(f"Cannot read model file {path}")
    except UnicodeDecodeError as e:
        logger.error(f"Model file {path} is not UTF-8 text: {e}")
        raise ModelError(f"Model file {path} is not UTF-8 text")
    return parse_model(text)


def format_model(model: JumpDistribution) -> str:
    """Render a law in the model format, probabilities with 17 significant digits."""
    lines = [f"dim {model.dim}"]
    for jump, prob in model.entries.items():
        coords = " ".join(str(c) for c in jump)
        lines.append(f"jump {coords} {prob:.17g}")
    return "\n".join(lines) + "\n"
