# confsel/tasks/reporting.py
# The module turns replication records into the raw table, aggregates the metrics per
# (setting, n, outcome, method, set) and writes metrics.csv, raw.csv, timings.csv and a
# markdown summary, each headed by '# key=value' provenance lines.

from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from tabulate import tabulate

from confsel.schemas.results import SET_NAMES, ReplicationRecord
from confsel.services.dataset import write_header

ESTIMATORS: Tuple[str, ...] = ("psm", "tmle")
SET_ORDER: Tuple[str, ...] = ("X",) + SET_NAMES
METHOD_ORDER: Tuple[str, ...] = ("all", "mmpc", "mmhc")
KEYS = ["setting", "n", "outcome", "method", "set"]


def records_to_frame(records: Iterable[ReplicationRecord]) -> pd.DataFrame:
    """One row per (replication, method, set), in record order."""
    rows = [row for record in records for row in record.to_rows()]
    return pd.DataFrame(rows)


def timings_frame(records: Iterable[ReplicationRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"setting": r.setting, "n": r.n, "outcome": r.outcome, "replication": r.replication, "wall_time": r.wall_time}
            for r in records
        ]
    )


def _estimator_metrics(group: pd.DataFrame, estimator: str, truth: float) -> Dict[str, float]:
    prefix = f"{estimator}_"
    if f"{prefix}beta_hat" not in group:
        return {}
    ok = group[~group[f"{prefix}failed"].astype(bool)]
    beta = ok[f"{prefix}beta_hat"].to_numpy(dtype=float)
    low = ok[f"{prefix}ci_low"].to_numpy(dtype=float)
    high = ok[f"{prefix}ci_high"].to_numpy(dtype=float)
    out = {f"{prefix}failures": int(len(group) - len(ok))}
    if beta.size == 0:
        out.update({f"{prefix}{m}": np.nan for m in ("bias", "sd", "mse", "cp", "ciw", "cil", "ciu")})
        return out
    out.update(
        {
            f"{prefix}bias": float(np.mean(beta)) - truth,
            f"{prefix}sd": float(np.std(beta)),
            f"{prefix}mse": float(np.mean((beta - truth) ** 2)),
            f"{prefix}cp": 100.0 * float(np.mean((low <= truth) & (truth <= high))),
            f"{prefix}ciw": float(np.mean(high - low)),
            f"{prefix}cil": float(np.mean(low)),
            f"{prefix}ciu": float(np.mean(high)),
        }
    )
    return out


def aggregate(raw: pd.DataFrame, truths: Mapping[Tuple[int, str], float]) -> pd.DataFrame:
    """
    Success rates (%), median cardinality and per-estimator bias, SD (denominator R), MSE
    about the true effect, coverage (%), mean CI width and mean CI bounds.
    """
    rows: List[Dict[str, object]] = []
    for (setting, n, outcome, method, set_name), group in raw.groupby(KEYS, sort=False):
        truth = truths[(int(setting), str(outcome))]
        row: Dict[str, object] = {
            "n": int(n),
            "method": method,
            "set": set_name,
            "Yt_perp_T": 100.0 * float(group["unconf"].astype(bool).mean()),
            "S_subset": 100.0 * float(group["superset"].astype(bool).mean()),
            "S_equal": 100.0 * float(group["equal"].astype(bool).mean()),
            "card_median": float(np.median(group["cardinality"].to_numpy(dtype=float))),
        }
        for estimator in ESTIMATORS:
            row.update(_estimator_metrics(group, estimator, truth))
        row.update({"setting": int(setting), "outcome": outcome, "replications": int(len(group))})
        rows.append(row)
    metrics = pd.DataFrame(rows)
    if metrics.empty:
        return metrics
    sort_keys = pd.DataFrame(
        {
            "setting": metrics["setting"],
            "n": metrics["n"],
            "outcome": metrics["outcome"],
            "method": metrics["method"].map({m: k for k, m in enumerate(METHOD_ORDER)}).fillna(len(METHOD_ORDER)),
            "set": metrics["set"].map({s: k for k, s in enumerate(SET_ORDER)}).fillna(len(SET_ORDER)),
        }
    )
    order = sort_keys.sort_values(list(sort_keys.columns), kind="stable").index
    return metrics.loc[order].reset_index(drop=True)


def _write_csv(path: Path, frame: pd.DataFrame, header: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        write_header(handle, header)
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")


def read_raw(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", keep_default_na=True, dtype={"selected": str}).fillna({"selected": ""})


def summary_markdown(metrics: pd.DataFrame, header: Mapping[str, object], columns: Sequence[str] = ()) -> str:
    columns = list(columns) or [
        c
        for c in ("setting", "outcome", "n", "method", "set", "Yt_perp_T", "S_subset", "S_equal", "card_median",
                  "psm_bias", "psm_sd", "psm_mse", "psm_cp", "tmle_bias", "tmle_sd", "tmle_mse", "tmle_cp")
        if c in metrics
    ]
    lines = [f"<!-- {key}={value} -->" for key, value in header.items()]
    lines += ["", "# Simulation summary", ""]
    lines.append(tabulate(metrics[columns], headers="keys", tablefmt="github", showindex=False, floatfmt=".3f"))
    return "\n".join(lines) + "\n"


def write_outputs(
    out_dir: Path,
    records: Sequence[ReplicationRecord],
    truths: Mapping[Tuple[int, str], float],
    header: Mapping[str, object],
) -> pd.DataFrame:
    """Writes all four report files and returns the metrics table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    full_header = dict(header)
    for (setting, outcome), value in sorted(truths.items()):
        full_header[f"true_ace_setting{setting}_{outcome}"] = repr(float(value))

    raw = records_to_frame(records)
    _write_csv(out_dir / "raw.csv", raw, full_header)
    # aggregate what was persisted, so a rerun from raw.csv reproduces metrics.csv
    metrics = aggregate(read_raw(out_dir / "raw.csv"), truths)
    _write_csv(out_dir / "metrics.csv", metrics, full_header)
    _write_csv(out_dir / "timings.csv", timings_frame(records), full_header)
    (out_dir / "summary.md").write_text(summary_markdown(metrics, full_header), encoding="utf-8")
    return metrics
