"""CSV and JSON artifact writers shared by the CLI and the scripts."""

import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd

logger = logging.getLogger(__name__)

# Round-trips every double exactly
FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: str | Path, index: bool = False) -> Path:
    """Comma-separated, header row, LF endings, full double precision"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"✅ Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: str | Path, index_col: str | None = None) -> pd.DataFrame:
    return pd.read_csv(path, index_col=index_col, float_precision="round_trip")


def dumps(document: Any) -> str:
    """UTF-8 JSON with keys in insertion order"""
    return json.dumps(document, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(document: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(document))
    logger.info(f"✅ Wrote {path}")
    return path


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
