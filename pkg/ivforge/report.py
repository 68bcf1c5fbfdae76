"""Serialize experiment results to csv, json or a static svg scatter."""
import logging
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from . import errors  # noqa: E402
from .montecarlo import AuditTable, SemisynthTable, SimulationReport, SweepResult  # noqa: E402

logger = logging.getLogger("ivforge.report")

# Stable element ids and no timestamp, so identical results give identical bytes.
plt.rcParams["svg.hashsalt"] = "ivforge"
plt.rcParams["svg.fonttype"] = "none"

Result = Union[SimulationReport, SweepResult, AuditTable, SemisynthTable]
FORMATS = ("csv", "json", "svg")


def _replication_frame(points: list[SimulationReport]) -> pd.DataFrame:
    records = []
    for point in points:
        theta_by_rep = dict(zip(point.rep_index, point.per_rep_theta))
        for rep in range(point.config.replications):
            theta = theta_by_rep.get(rep)
            records.append({
                "rho": point.rho,
                "rep": rep,
                "theta_hat": theta,
                "identified": int(theta is not None),
            })
    return pd.DataFrame.from_records(records, columns=["rho", "rep", "theta_hat", "identified"])


def to_frame(result: Result) -> pd.DataFrame:
    if isinstance(result, SimulationReport):
        return _replication_frame([result])
    if isinstance(result, SweepResult):
        return _replication_frame(result.points)
    if isinstance(result, AuditTable):
        return pd.DataFrame([r.model_dump(mode="json") for r in result.rows])
    if isinstance(result, SemisynthTable):
        return pd.DataFrame([r.model_dump(mode="json") for r in result.rows])
    raise errors.ConfigError(f"cannot tabulate {type(result).__name__}")


def _scatter(result: SimulationReport | SweepResult, path: Path) -> None:
    points = result.points if isinstance(result, SweepResult) else [result]
    truth = result.config.truth_theta
    xs, ys = [], []
    for point in points:
        x = point.rho if point.rho is not None else 0.0
        xs.extend([x] * len(point.per_rep_theta))
        ys.extend(point.per_rep_theta)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        (dots,) = ax.plot(xs, ys, linestyle="none", marker="o", markersize=2.0, alpha=0.4, color="tab:blue")
        dots.set_gid("replications")
        line = ax.axhline(truth, linestyle="--", color="black", linewidth=1.0)
        line.set_gid("truth")
        ax.set_xlabel("interaction coefficient")
        ax.set_ylabel("IV estimate")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def emit_report(result: Result, fmt: str, path: str | Path) -> Path:
    """Write `result` in `fmt` to `path` and return the path."""
    if fmt not in FORMATS:
        raise errors.ConfigError(f"unknown output format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
        elif fmt == "csv":
            to_frame(result).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        else:
            if not isinstance(result, (SimulationReport, SweepResult)):
                raise errors.ConfigError(f"svg output needs replication results, not {type(result).__name__}")
            _scatter(result, path)
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc
    logger.info("wrote %s", path)
    return path
