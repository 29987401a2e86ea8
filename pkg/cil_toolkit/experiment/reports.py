"""JSON and CSV writers for experiment outputs; every file is written atomically."""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from cil_toolkit.learning.incremental_engine import STEP_CSV_HEADER, ExperimentReport
from cil_toolkit.learning.multitask_trainer import TrainLog
from utils import atomic_write_text

from .constants import OUTPUT_FILES

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def to_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_plain) + "\n"


def write_json(path: Union[str, Path], data: Any) -> Path:
    return atomic_write_text(path, to_json(data))


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return atomic_write_text(path, buffer.getvalue())


def write_train_log(out_dir: Path, log: TrainLog) -> Path:
    return write_csv(out_dir / OUTPUT_FILES["train_log"], log.csv_header(), log.to_csv_rows())


def write_experiment_report(out_dir: Path, report: ExperimentReport) -> List[Path]:
    """``report.json`` (deterministic payload), ``timing.json``, ``steps.csv``, confusions."""
    paths = [
        write_json(out_dir / OUTPUT_FILES["report"], report.to_dict(include_timing=False)),
        write_json(out_dir / OUTPUT_FILES["timing"], report.timing),
        write_csv(out_dir / OUTPUT_FILES["steps"], STEP_CSV_HEADER, report.csv_rows()),
    ]
    for step in report.steps:
        labels = [str(c) for c in step.classes]
        rows = [[label] + list(row) for label, row in zip(labels, step.confusion.tolist())]
        paths.append(
            write_csv(
                out_dir / OUTPUT_FILES["confusion"].format(step=step.step),
                ["true\\pred"] + labels,
                rows,
            )
        )
    logger.info(f"Wrote {len(paths)} report files to {out_dir}")
    return paths


def mean_or_none(values: Sequence[Any]) -> Any:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def std_or_none(values: Sequence[Any]) -> Any:
    present = [v for v in values if v is not None]
    return float(np.std(present)) if present else None


def summarize(
    rows: Sequence[Mapping[str, Any]], key_fields: Sequence[str], value_fields: Sequence[str]
) -> List[Dict[str, Any]]:
    """Mean and population std of ``value_fields`` over rows sharing ``key_fields``.

    Groups come out in first-seen key order; each value field ``f`` yields ``f`` (mean)
    and ``f_std``.
    """
    groups: Dict[tuple, List[Mapping[str, Any]]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in key_fields), []).append(row)
    summary = []
    for key, members in groups.items():
        entry: Dict[str, Any] = dict(zip(key_fields, key))
        entry["runs"] = len(members)
        for field_name in value_fields:
            values = [m[field_name] for m in members]
            entry[field_name] = mean_or_none(values)
            entry[f"{field_name}_std"] = std_or_none(values)
        summary.append(entry)
    return summary


def add_baseline_delta(
    summary: Sequence[Dict[str, Any]],
    baseline: Mapping[str, Any],
    value_fields: Sequence[str],
    match_fields: Sequence[str] = (),
) -> List[Dict[str, Any]]:
    """Add ``f_vs_baseline`` (mean minus the baseline row's mean) to every summary row.

    The baseline row for a given row is the one matching every ``baseline`` item and
    sharing the row's ``match_fields``. Rows without a baseline get ``None``.
    """
    for row in summary:
        reference = next(
            (
                other
                for other in summary
                if all(other.get(k) == v for k, v in baseline.items())
                and all(other.get(k) == row.get(k) for k in match_fields)
            ),
            None,
        )
        for field_name in value_fields:
            delta = None
            if reference is not None and None not in (row[field_name], reference[field_name]):
                delta = row[field_name] - reference[field_name]
            row[f"{field_name}_vs_baseline"] = delta
        if reference is None:
            logger.warning(f"No baseline row {dict(baseline)} for {dict(row)}")
    return list(summary)


def write_table(path: Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    if not rows:
        raise ValueError(f"No rows to write to {path}")
    header = list(rows[0].keys())
    return write_csv(path, header, ([row[h] for h in header] for row in rows))
