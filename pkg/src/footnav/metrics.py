"""Horizontal-error metrics, percentile/CDF reporting, and method dispatch.

The eight benchmark variants are named <ESTIMATOR>-ZUPT[-POS][-STEP] where
the estimator is EKF or FGO, POS enables position-fix fusion and STEP the
inter-foot distance constraint. Errors are horizontal-plane (xy) position
errors against ground truth at matched timestamps.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .ekf import EkfOptions, run_ekf
from .fgo import FgoOptions, TrajectoryEstimate, run_fgo
from .simulate import TrajectoryDataset

METHODS = (
    "EKF-ZUPT",
    "EKF-ZUPT-STEP",
    "EKF-ZUPT-POS",
    "EKF-ZUPT-POS-STEP",
    "FGO-ZUPT",
    "FGO-ZUPT-STEP",
    "FGO-ZUPT-POS",
    "FGO-ZUPT-POS-STEP",
)


@dataclass(frozen=True)
class ErrorReport:
    """Per-method error summary for both feet plus the CDF tables."""

    method: str
    errors_right: np.ndarray  # per-epoch horizontal error series, m
    errors_left: np.ndarray
    stats_right: dict  # mean, rms, max, p90, p95, p99
    stats_left: dict
    cdf_right: np.ndarray  # (n, 2) columns: error_m, cumulative fraction
    cdf_left: np.ndarray
    violation_frac: float  # share of scheduled constraint epochs beyond d + 0.02


def horizontal_errors(t_est: np.ndarray, p_est: np.ndarray, t_truth: np.ndarray,
                      p_truth: np.ndarray, max_dt: float = 0.05) -> np.ndarray:
    """Per-epoch xy error norm at matched timestamps.

    Estimate epochs are matched to truth samples by nearest neighbor; a gap
    beyond max_dt means the series are misaligned and is an error.
    """
    idx = np.searchsorted(t_truth, t_est)
    idx = np.clip(idx, 0, t_truth.shape[0] - 1)
    left = np.clip(idx - 1, 0, t_truth.shape[0] - 1)
    pick = np.where(
        np.abs(t_truth[left] - t_est) < np.abs(t_truth[idx] - t_est), left, idx
    )
    gap = np.abs(t_truth[pick] - t_est)
    if np.any(gap > max_dt):
        raise ValueError(
            f"timestamp misalignment: worst gap {gap.max():.4f} s exceeds {max_dt} s"
        )
    d = p_est[:, :2] - p_truth[pick, :2]
    return np.linalg.norm(d, axis=1)


def error_stats(series: np.ndarray) -> dict:
    if series.size == 0:
        raise ValueError("empty error series")
    return {
        "mean": float(np.mean(series)),
        "rms": float(np.sqrt(np.mean(series**2))),
        "max": float(np.max(series)),
        **{f"p{int(100 * q)}": b for q, b in zip((0.90, 0.95, 0.99), percentile_bounds(series))},
    }


def percentile_bounds(series: np.ndarray, levels=(0.90, 0.95, 0.99)) -> list[float]:
    """Empirical quantiles by linear interpolation of the sorted series."""
    if series.size == 0:
        raise ValueError("empty error series")
    return [float(np.percentile(series, 100.0 * q, method="linear")) for q in levels]


def cdf_table(series: np.ndarray) -> np.ndarray:
    """Sorted (error, cumulative fraction) pairs; final fraction is exactly 1."""
    s = np.sort(series)
    frac = np.arange(1, s.shape[0] + 1) / s.shape[0]
    return np.column_stack([s, frac])


def _violation_fraction(est: TrajectoryEstimate, d: float, slack: float = 0.02) -> float:
    if est.penalty_times.size == 0:
        return 0.0
    p1, p2 = est.positions()
    idx = np.searchsorted(est.t, est.penalty_times)
    idx = np.clip(idx, 0, est.t.shape[0] - 1)
    sep = np.linalg.norm(p1[idx] - p2[idx], axis=1)
    return float(np.mean(sep > d + slack))


def method_flags(method: str) -> tuple[str, bool, bool]:
    """(estimator, use_pos, use_step) from a benchmark method name."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    parts = method.split("-")
    return parts[0], "POS" in parts, "STEP" in parts


def run_method(
    ds: TrajectoryDataset,
    method: str,
    fgo_opts: FgoOptions | None = None,
    ekf_opts: EkfOptions | None = None,
    detector_cfg=None,
) -> tuple[TrajectoryEstimate, ErrorReport]:
    """Run one benchmark variant on a dataset and summarize its errors."""
    estimator, use_pos, use_step = method_flags(method)
    if estimator == "FGO":
        opts = fgo_opts if fgo_opts is not None else FgoOptions()
        opts = replace(opts, use_pos=use_pos, use_step=use_step, use_zupt=True)
        est = run_fgo(ds, opts, detector_cfg=detector_cfg)
        d_bound = opts.constraint.d
    else:
        opts = ekf_opts if ekf_opts is not None else EkfOptions()
        opts = replace(opts, use_pos=use_pos, use_step=use_step, use_zupt=True)
        est = run_ekf(ds, opts, detector_cfg=detector_cfg)
        d_bound = opts.constraint.d
    est.method = method
    return est, build_report(est, ds, method, d_bound)


def build_report(est: TrajectoryEstimate, ds: TrajectoryDataset, method: str, d_bound: float) -> ErrorReport:
    p1, p2 = est.positions()
    err_r = horizontal_errors(est.t, p1, ds.truth_right.t, ds.truth_right.p)
    err_l = horizontal_errors(est.t, p2, ds.truth_left.t, ds.truth_left.p)
    return ErrorReport(
        method=method,
        errors_right=err_r,
        errors_left=err_l,
        stats_right=error_stats(err_r),
        stats_left=error_stats(err_l),
        cdf_right=cdf_table(err_r),
        cdf_left=cdf_table(err_l),
        violation_frac=_violation_fraction(est, d_bound),
    )


SUMMARY_HEADER = "method,foot,mean,rms,max,p90,p95,p99,violation_frac"


def compare(reports: list[ErrorReport], out_dir: str | None = None) -> str:
    """Combined ranking table (by right-foot RMS) plus per-method CDF CSVs.

    Returns the summary table as CSV text; when out_dir is given, writes
    summary.csv and <method>_cdf_<foot>.csv files there.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least 2 reports")
    ordered = sorted(reports, key=lambda r: r.stats_right["rms"])
    lines = [SUMMARY_HEADER]
    for rep in ordered:
        for foot, stats in (("right", rep.stats_right), ("left", rep.stats_left)):
            lines.append(
                ",".join(
                    [rep.method, foot]
                    + [format(stats[k], ".6f") for k in ("mean", "rms", "max", "p90", "p95", "p99")]
                    + [format(rep.violation_frac, ".6f")]
                )
            )
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        for rep in reports:
            for foot, cdf in (("right", rep.cdf_right), ("left", rep.cdf_left)):
                path = os.path.join(out_dir, f"{rep.method}_cdf_{foot}.csv")
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write("error_m,fraction\n")
                    for e, fr in cdf:
                        fh.write(f"{e:.17g},{fr:.17g}\n")
    return text


def save_report_csv(report: ErrorReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for foot, stats in (("right", report.stats_right), ("left", report.stats_left)):
            fh.write(
                ",".join(
                    [report.method, foot]
                    + [format(stats[k], ".6f") for k in ("mean", "rms", "max", "p90", "p95", "p99")]
                    + [format(report.violation_frac, ".6f")]
                )
                + "\n"
            )
