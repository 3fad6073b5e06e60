"""Dataset directory layout and lossless CSV round-tripping.

A dataset directory contains:
    manifest.txt     key=value lines (configs, seeds, row counts)
    imu_right.csv    t,fx,fy,fz,wx,wy,wz
    imu_left.csv
    truth_right.csv  t,px,py,pz,vx,vy,vz,qw,qx,qy,qz
    truth_left.csv
    fixes.csv        t,p1x,p1y,p1z,p2x,p2y,p2z,outlier_flag
    stance.csv       t,right,left

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly; save -> load is bit-identical.
"""

from __future__ import annotations

import os

import numpy as np

from .preintegration import ImuNoiseModel
from .simulate import (
    CorruptionConfig,
    FootTruth,
    GaitConfig,
    PositionFixes,
    TrajectoryDataset,
)
from .states import ImuSeries


class DatasetError(Exception):
    """Raised when a dataset directory is missing files or malformed."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_csv(path: str, n_cols: int) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"{path}: file is missing")
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise DatasetError(f"{path}:1: empty file")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != n_cols:
                raise DatasetError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(parts)}"
                )
            try:
                out.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return np.array(out) if out else np.zeros((0, n_cols))


def save_dataset(ds: TrajectoryDataset, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)

    for name, series in (("imu_right.csv", ds.imu_right), ("imu_left.csv", ds.imu_left)):
        rows = (
            [_fmt(series.t[k])] + [_fmt(x) for x in series.f[k]] + [_fmt(x) for x in series.w[k]]
            for k in range(len(series))
        )
        _write_csv(os.path.join(directory, name), "t,fx,fy,fz,wx,wy,wz", rows)

    for name, tr in (("truth_right.csv", ds.truth_right), ("truth_left.csv", ds.truth_left)):
        rows = (
            [_fmt(tr.t[k])]
            + [_fmt(x) for x in tr.p[k]]
            + [_fmt(x) for x in tr.v[k]]
            + [_fmt(x) for x in tr.q[k]]
            for k in range(tr.t.shape[0])
        )
        _write_csv(os.path.join(directory, name), "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz", rows)

    rows = (
        [_fmt(ds.fixes.t[k])]
        + [_fmt(x) for x in ds.fixes.y[k]]
        + [str(int(ds.fixes.outlier[k]))]
        for k in range(ds.fixes.t.shape[0])
    )
    _write_csv(
        os.path.join(directory, "fixes.csv"),
        "t,p1x,p1y,p1z,p2x,p2y,p2z,outlier_flag",
        rows,
    )

    rows = (
        [_fmt(ds.truth_right.t[k]), str(int(ds.truth_right.stance[k])), str(int(ds.truth_left.stance[k]))]
        for k in range(ds.truth_right.t.shape[0])
    )
    _write_csv(os.path.join(directory, "stance.csv"), "t,right,left", rows)

    manifest = {
        "schema_version": "1",
        "n_truth_samples": str(ds.truth_right.t.shape[0]),
        "n_imu_samples": str(len(ds.imu_right)),
        "n_fixes": str(ds.fixes.t.shape[0]),
        "gait.step_length": _fmt(ds.gait.step_length),
        "gait.cadence": _fmt(ds.gait.cadence),
        "gait.step_width": _fmt(ds.gait.step_width),
        "gait.stance_ratio": _fmt(ds.gait.stance_ratio),
        "gait.duration": _fmt(ds.gait.duration),
        "gait.imu_rate": _fmt(ds.gait.imu_rate),
        "gait.foot_lift": _fmt(ds.gait.foot_lift),
        "gait.pitch_amp": _fmt(ds.gait.pitch_amp),
        "gait.seed": str(ds.gait.seed),
        "corruption.pos_sigma": _fmt(ds.corruption.pos_sigma),
        "corruption.pos_interval": _fmt(ds.corruption.pos_interval),
        "corruption.outlier_prob": _fmt(ds.corruption.outlier_prob),
        "corruption.outlier_set": " ".join(_fmt(x) for x in ds.corruption.outlier_set),
        "corruption.seed": str(ds.corruption.seed),
        "noise.sigma_a": _fmt(ds.noise.sigma_a),
        "noise.sigma_g": _fmt(ds.noise.sigma_g),
        "noise.sigma_ba": _fmt(ds.noise.sigma_ba),
        "noise.sigma_bg": _fmt(ds.noise.sigma_bg),
    }
    for key, val in ds.seeds.items():
        manifest[f"seeds.{key}"] = str(val)
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for key, val in manifest.items():
            fh.write(f"{key}={val}\n")


def read_manifest(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise DatasetError(f"{path}: file is missing")
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def load_dataset(directory: str) -> TrajectoryDataset:
    man = read_manifest(os.path.join(directory, "manifest.txt"))
    try:
        n_truth = int(man["n_truth_samples"])
        n_imu = int(man["n_imu_samples"])
        n_fixes = int(man["n_fixes"])
        gait = GaitConfig(
            step_length=float(man["gait.step_length"]),
            cadence=float(man["gait.cadence"]),
            step_width=float(man["gait.step_width"]),
            stance_ratio=float(man["gait.stance_ratio"]),
            duration=float(man["gait.duration"]),
            imu_rate=float(man["gait.imu_rate"]),
            foot_lift=float(man["gait.foot_lift"]),
            pitch_amp=float(man["gait.pitch_amp"]),
            seed=int(man["gait.seed"]),
        )
        corruption = CorruptionConfig(
            pos_sigma=float(man["corruption.pos_sigma"]),
            pos_interval=float(man["corruption.pos_interval"]),
            outlier_prob=float(man["corruption.outlier_prob"]),
            outlier_set=tuple(float(x) for x in man["corruption.outlier_set"].split()),
            seed=int(man["corruption.seed"]),
        )
        noise = ImuNoiseModel(
            sigma_a=float(man["noise.sigma_a"]),
            sigma_g=float(man["noise.sigma_g"]),
            sigma_ba=float(man["noise.sigma_ba"]),
            sigma_bg=float(man["noise.sigma_bg"]),
        )
    except KeyError as exc:
        raise DatasetError(f"{directory}/manifest.txt: missing key {exc}") from None

    seeds = {k[len("seeds.") :]: int(v) for k, v in man.items() if k.startswith("seeds.")}

    def check_rows(path, arr, expected):
        if arr.shape[0] != expected:
            raise DatasetError(f"{path}: expected {expected} rows, found {arr.shape[0]} (file truncated?)")
        return arr

    trs = {}
    for name in ("truth_right", "truth_left"):
        path = os.path.join(directory, f"{name}.csv")
        arr = check_rows(path, _read_csv(path, 11), n_truth)
        trs[name] = arr
    imus = {}
    for name in ("imu_right", "imu_left"):
        path = os.path.join(directory, f"{name}.csv")
        arr = check_rows(path, _read_csv(path, 7), n_imu)
        imus[name] = ImuSeries(t=arr[:, 0], f=arr[:, 1:4], w=arr[:, 4:7])
    path = os.path.join(directory, "fixes.csv")
    fx = check_rows(path, _read_csv(path, 8), n_fixes)
    path = os.path.join(directory, "stance.csv")
    st = check_rows(path, _read_csv(path, 3), n_truth)

    def foot(arr, stance_col):
        return FootTruth(
            t=arr[:, 0], p=arr[:, 1:4], v=arr[:, 4:7], q=arr[:, 7:11],
            stance=st[:, stance_col].astype(bool),
        )

    fixes = PositionFixes(t=fx[:, 0], y=fx[:, 1:7], outlier=fx[:, 7].astype(bool))
    return TrajectoryDataset(
        truth_right=foot(trs["truth_right"], 1),
        truth_left=foot(trs["truth_left"], 2),
        imu_right=imus["imu_right"],
        imu_left=imus["imu_left"],
        fixes=fixes,
        gait=gait,
        corruption=corruption,
        noise=noise,
        seeds=seeds,
    )


def save_trajectory_csv(path: str, t: np.ndarray, states_right, states_left) -> None:
    """Estimated-trajectory export shared by both estimators.

    states_* are sequences of NavState aligned with t. Columns: t, then
    p/v/q of the right foot, then p/v/q of the left foot.
    """
    header = (
        "t,p1x,p1y,p1z,v1x,v1y,v1z,q1w,q1x,q1y,q1z,"
        "p2x,p2y,p2z,v2x,v2y,v2z,q2w,q2x,q2y,q2z"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for k in range(t.shape[0]):
            s1, s2 = states_right[k], states_left[k]
            vals = (
                [t[k]]
                + list(s1.p) + list(s1.v) + list(s1.q)
                + list(s2.p) + list(s2.v) + list(s2.q)
            )
            fh.write(",".join(_fmt(x) for x in vals) + "\n")
