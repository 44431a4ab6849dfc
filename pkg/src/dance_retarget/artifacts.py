"""
Reading and writing the JSON/CSV documents exchanged between pipeline stages.

Every document written by the tool starts with a ``header`` object so that
any artifact can be traced back to the configuration and seed that produced it.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from dance_retarget import __version__
from dance_retarget.errors import FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def make_header(
    kind: str, config_hash: Optional[str] = None, seed: Optional[int] = None
) -> Dict[str, Any]:
    return {
        "tool": "dance-retarget",
        "version": __version__,
        "kind": kind,
        "config_hash": config_hash,
        "seed": seed,
    }


def read_json(path: PathLike, kind: Optional[str] = None) -> Dict[str, Any]:
    """
    Load a JSON document written by (or compatible with) this tool.

    Args:
        path: Location of the document
        kind: If given and the document has a header, its ``kind`` must match

    Returns:
        The parsed document

    Raises:
        FormatError: If the file is missing, is not valid JSON or has the wrong kind
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(str(path), f"cannot read file ({exc.strerror})") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(str(path), exc.msg, line=exc.lineno) from exc
    if not isinstance(document, dict):
        raise FormatError(str(path), "top-level value must be an object")
    header = document.get("header")
    if kind is not None and isinstance(header, dict) and header.get("kind") not in (None, kind):
        raise FormatError(
            str(path), f"expected a '{kind}' document, got '{header.get('kind')}'"
        )
    return document


def write_json(path: PathLike, document: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=False) + "\n")
    logger.debug("wrote %s", path)
    return path


def require(document: Dict[str, Any], field: str, path: PathLike) -> Any:
    """Fetch a mandatory field, naming the document and field when it is absent."""
    if field not in document:
        raise FormatError(str(path), f"missing field '{field}'")
    return document[field]


def write_csv(path: PathLike, frame: pd.DataFrame, header: Dict[str, Any]) -> Path:
    """Write a table preceded by ``# key=value`` comment lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        for key, value in header.items():
            handle.write(f"# {key}={value}\n")
        frame.to_csv(handle, index=False, float_format="%.9g")
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
