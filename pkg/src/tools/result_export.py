"""CSV and JSON writers for run records, tables and metadata."""

from typing import Any, Dict, List, Optional, Union
from enum import Enum
from pathlib import Path
import json
import logging

import numpy as np
import pandas as pd

from .mcgd_solver import RunRecord, Setting, gap_series

logger = logging.getLogger(__name__)


def run_file_name(experiment: str, loss: str, method: str, seed: int) -> str:
    return f"{experiment}_{loss}_{method}_seed{seed}.csv"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_frame(frame: pd.DataFrame, output_file: Union[str, Path]) -> Path:
    output_path = Path(output_file)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False)
    logger.info(f"Saved {len(frame)} rows to {output_path}")
    return output_path


def write_metadata(metadata: Dict[str, Any], output_file: Union[str, Path]) -> Path:
    output_path = Path(output_file)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w") as f:
        json.dump(metadata, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    logger.info(f"Saved metadata to {output_path}")
    return output_path


def write_run(record: RunRecord, output_file: Union[str, Path]) -> Path:
    return write_frame(record.to_frame(), output_file)


def plot_rows(record: RunRecord, experiment: str, loss: str, method: str,
              f_star: Optional[float]) -> List[Dict[str, Any]]:
    """Long-format curve: ergodic gap for convex runs, running min ||grad||^2 otherwise"""
    if record.setting == Setting.CONVEX and f_star is not None:
        metric = "ergodic_gap"
        values = gap_series(record, f_star).ergodic_gap
    else:
        metric = "min_grad_norm_sq"
        values = record.min_grad_norm_series
    return [
        {"experiment": experiment, "loss": loss, "method": method, "seed": record.seed,
         "samples_consumed": samples, "metric": metric, "value": float(value)}
        for samples, value in zip(record.samples_consumed, values)
    ]
