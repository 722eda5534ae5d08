"""Schema-validated readers for the rgwsaw CSV/JSON artifacts."""

from __future__ import annotations

import csv
import json


class SchemaError(ValueError):
    """Input does not match the documented artifact schema."""


GREEN_COLUMNS = ["x1", "x2", "x3", "x4", "green", "asymptote", "ratio"]
FLOW_COLUMNS = [
    "j", "gbar", "gtilde", "nu", "z", "lambda_a", "lambda_b",
    "q_a", "q_b", "delta_q", "v_lambda", "v_q",
]
SWEEP_COLUMNS = ["ab", "j_ab", "q_infinity", "green", "ratio", "deviation", "gbar_jab", "inv_log_ab"]
SUMMARY_KEYS = ["j_ab", "j_m", "ab_distance", "remainder_K", "q_infinity", "green_ab"]


def read_csv(path, required_columns) -> list[dict]:
    """Rows as float dicts; raises SchemaError naming any missing column."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        for col in required_columns:
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = []
        for lineno, raw in enumerate(reader, 2):
            try:
                rows.append({k: float(raw[k]) for k in required_columns})
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: non-numeric row ({exc})") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def read_summary(path) -> dict:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    for key in SUMMARY_KEYS:
        if key not in payload:
            raise SchemaError(f"{path}: missing key {key!r}")
    return payload
