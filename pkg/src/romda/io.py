"""Schema-versioned persistence for ensembles, bases, models and reports.

JSON documents carry a ``schema`` tag (checked on load) and a ``_meta``
block with tool version, config hash and seed as their first key. CSV files
begin with one comment line carrying the same metadata. Numeric round trips
are exact: floats are serialized with their shortest round-trip
representation.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .pce import PceModel
from .pod import PodBasis, SnapshotMatrix
from .surrogate import ErrorCovariance, PodEnSurrogate, PodPceSurrogate

SCHEMAS = {
    "snapshot": "snapshot/1",
    "pod_basis": "pod-basis/1",
    "pce_model": "pce-model/1",
    "podpce": "podpce-surrogate/1",
    "poden": "poden-surrogate/1",
    "covariance": "covariance/1",
    "analysis": "analysis/1",
    "report": "report/1",
    "config": "config/1",
}


class SchemaError(ValueError):
    """Document schema does not match what the loader expects."""


def config_hash(config: Any) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _meta(seed: int | None = None, cfg_hash: str | None = None) -> dict:
    return {
        "tool": "romda",
        "version": __version__,
        "config": cfg_hash or "none",
        "seed": "none" if seed is None else int(seed),
    }


def csv_header_line(seed: int | None = None, cfg_hash: str | None = None, **extra: str) -> str:
    parts = [f"romda={__version__}", f"config={cfg_hash or 'none'}",
             f"seed={'none' if seed is None else seed}"]
    parts.extend(f"{key}={value}" for key, value in extra.items())
    return "# " + " ".join(parts)


def save_json(path: str | Path, schema_key: str, body: dict,
              seed: int | None = None, cfg_hash: str | None = None) -> None:
    doc = {"_meta": _meta(seed, cfg_hash), "schema": SCHEMAS[schema_key]}
    doc.update(body)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_json(path: str | Path, schema_key: str) -> dict:
    doc = json.loads(Path(path).read_text())
    expected = SCHEMAS[schema_key]
    found = doc.get("schema")
    if found != expected:
        raise SchemaError(f"schema mismatch in {path}: found {found!r}, expected {expected!r}")
    return doc


def _fmt(value: float) -> str:
    return repr(float(value))


# Snapshot matrices ---------------------------------------------------------------


def write_snapshot_csv(path: str | Path, snapshots: SnapshotMatrix,
                       seed: int | None = None, cfg_hash: str | None = None) -> None:
    lines = [csv_header_line(seed, cfg_hash, schema=SCHEMAS["snapshot"])]
    lines.append(",".join(["label", *snapshots.member_ids]))
    for label, row in zip(snapshots.row_labels, snapshots.data):
        lines.append(",".join([label, *(_fmt(v) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot_csv(path: str | Path) -> SnapshotMatrix:
    rows = []
    labels = []
    member_ids: tuple[str, ...] | None = None
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if member_ids is None:
            if cells[0] != "label":
                raise ValueError(f"snapshot CSV {path} must start with a 'label' header row")
            member_ids = tuple(cells[1:])
            continue
        labels.append(cells[0])
        rows.append([float(v) for v in cells[1:]])
    if member_ids is None or not rows:
        raise ValueError(f"snapshot CSV {path} has no data")
    return SnapshotMatrix(
        data=np.array(rows, dtype=float),
        row_labels=tuple(labels),
        member_ids=member_ids,
    )


# Decompositions and models --------------------------------------------------------


def save_pod_basis(path: str | Path, basis: PodBasis, **meta: Any) -> None:
    save_json(
        path,
        "pod_basis",
        {
            "mean": basis.mean.tolist(),
            "modes": basis.modes.tolist(),
            "singular_values": basis.singular_values.tolist(),
            "coefficients": basis.coefficients.tolist(),
            "retained": basis.retained,
        },
        **meta,
    )


def load_pod_basis(path: str | Path) -> PodBasis:
    doc = load_json(path, "pod_basis")
    return PodBasis(
        mean=np.array(doc["mean"], dtype=float),
        modes=np.array(doc["modes"], dtype=float),
        singular_values=np.array(doc["singular_values"], dtype=float),
        coefficients=np.array(doc["coefficients"], dtype=float),
        retained=int(doc["retained"]),
    )


def _pce_body(model: PceModel) -> dict:
    return {
        "families": list(model.families),
        "offsets": model.offsets.tolist(),
        "scales": model.scales.tolist(),
        "indices": [list(alpha) for alpha in model.indices],
        "coefficients": model.coefficients.tolist(),
        "empirical_errors": model.empirical_errors.tolist(),
        "selected_degrees": list(model.selected_degrees),
        "validation_bias": model.validation_bias.tolist(),
    }


def _pce_from_body(doc: dict) -> PceModel:
    return PceModel(
        families=tuple(doc["families"]),
        offsets=np.array(doc["offsets"], dtype=float),
        scales=np.array(doc["scales"], dtype=float),
        indices=tuple(tuple(alpha) for alpha in doc["indices"]),
        coefficients=np.array(doc["coefficients"], dtype=float),
        empirical_errors=np.array(doc["empirical_errors"], dtype=float),
        selected_degrees=tuple(doc["selected_degrees"]),
        validation_bias=np.array(doc["validation_bias"], dtype=float),
    )


def save_pce_model(path: str | Path, model: PceModel, **meta: Any) -> None:
    save_json(path, "pce_model", _pce_body(model), **meta)


def load_pce_model(path: str | Path) -> PceModel:
    return _pce_from_body(load_json(path, "pce_model"))


def save_podpce(path: str | Path, surrogate: PodPceSurrogate, **meta: Any) -> None:
    basis = surrogate.state_basis
    save_json(
        path,
        "podpce",
        {
            "state_basis": {
                "mean": basis.mean.tolist(),
                "modes": basis.modes.tolist(),
                "singular_values": basis.singular_values.tolist(),
                "coefficients": basis.coefficients.tolist(),
                "retained": basis.retained,
            },
            "pce": _pce_body(surrogate.pce),
            "parameter_bounds": surrogate.parameter_bounds.tolist(),
            "n_members": surrogate.n_members,
        },
        **meta,
    )


def load_podpce(path: str | Path) -> PodPceSurrogate:
    doc = load_json(path, "podpce")
    raw = doc["state_basis"]
    basis = PodBasis(
        mean=np.array(raw["mean"], dtype=float),
        modes=np.array(raw["modes"], dtype=float),
        singular_values=np.array(raw["singular_values"], dtype=float),
        coefficients=np.array(raw["coefficients"], dtype=float),
        retained=int(raw["retained"]),
    )
    return PodPceSurrogate(
        state_basis=basis,
        pce=_pce_from_body(doc["pce"]),
        parameter_bounds=np.array(doc["parameter_bounds"], dtype=float),
        n_members=int(doc["n_members"]),
    )


def save_poden(path: str | Path, surrogate: PodEnSurrogate, **meta: Any) -> None:
    basis = surrogate.basis
    save_json(
        path,
        "poden",
        {
            "basis": {
                "mean": basis.mean.tolist(),
                "modes": basis.modes.tolist(),
                "singular_values": basis.singular_values.tolist(),
                "coefficients": basis.coefficients.tolist(),
                "retained": basis.retained,
            },
            "m_x": surrogate.m_x,
        },
        **meta,
    )


def load_poden(path: str | Path) -> PodEnSurrogate:
    doc = load_json(path, "poden")
    raw = doc["basis"]
    basis = PodBasis(
        mean=np.array(raw["mean"], dtype=float),
        modes=np.array(raw["modes"], dtype=float),
        singular_values=np.array(raw["singular_values"], dtype=float),
        coefficients=np.array(raw["coefficients"], dtype=float),
        retained=int(raw["retained"]),
    )
    return PodEnSurrogate(basis=basis, m_x=int(doc["m_x"]))


def write_covariance_csv(path: str | Path, cov: ErrorCovariance,
                         seed: int | None = None, cfg_hash: str | None = None) -> None:
    lines = [csv_header_line(seed, cfg_hash, schema=SCHEMAS["covariance"], kind=cov.kind)]
    for row in cov.matrix:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_covariance_csv(path: str | Path) -> tuple[np.ndarray, str]:
    kind = ""
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("kind="):
                    kind = token.split("=", 1)[1]
            continue
        if line:
            rows.append([float(v) for v in line.split(",")])
    return np.array(rows, dtype=float), kind


# Experiment reports ----------------------------------------------------------------

REPORT_COLUMNS = (
    "experiment",
    "solver",
    "covariance",
    "n",
    "d",
    "noise",
    "alpha_b",
    "alpha_r",
    "rmse_truth",
    "rmse_obs",
    "rmse_truth_background",
    "rmse_u",
    "rmse_v",
    "rmse_eta",
    "rmse_p1",
    "rmse_p2",
    "rmse_p3",
    "rmse_p4",
    "rmse_p5",
    "x_a_k2",
    "x_a_mtl",
    "x_a_ctl",
    "x_a_ctv",
    "clipped",
    "j_final",
    "model_runs",
    "surrogate_evals",
    "converged",
    "reason",
    "error",
)


def _report_cells(row) -> list[str]:
    by_var = row.rmse_by_variable
    by_station = row.rmse_by_station
    cells = [
        row.experiment,
        row.solver,
        row.covariance,
        str(row.n),
        str(row.d),
        _fmt(row.noise),
        _fmt(row.alpha_b),
        _fmt(row.alpha_r),
        _fmt(row.rmse_truth),
        _fmt(row.rmse_obs),
        _fmt(row.rmse_truth_background),
    ]
    for key in ("u", "v", "eta"):
        cells.append(_fmt(by_var.get(key, float("nan"))))
    for p in range(1, 6):
        cells.append(_fmt(by_station.get(f"P{p}", float("nan"))))
    cells.extend(_fmt(v) for v in row.x_a)
    cells.extend(
        [
            str(int(row.clipped)),
            _fmt(row.j_final),
            str(row.model_runs),
            str(row.surrogate_evals),
            str(int(row.converged)),
            row.reason,
            row.error.replace(",", ";").replace("\n", " "),
        ]
    )
    return cells


def report_csv_text(report, seed: int | None = None, cfg_hash: str | None = None) -> str:
    """Canonical report CSV: deterministic bytes for a given (config, seed).

    Wall-clock timings vary between runs, so they are written separately by
    :func:`write_timings_csv`.
    """
    buffer = _io.StringIO()
    buffer.write(csv_header_line(seed, cfg_hash, schema=SCHEMAS["report"]) + "\n")
    buffer.write(",".join(REPORT_COLUMNS) + "\n")
    for row in report.rows:
        buffer.write(",".join(_report_cells(row)) + "\n")
    return buffer.getvalue()


def write_report_csv(path: str | Path, report, seed: int | None = None,
                     cfg_hash: str | None = None) -> None:
    Path(path).write_text(report_csv_text(report, seed, cfg_hash))


def write_timings_csv(path: str | Path, report, seed: int | None = None,
                      cfg_hash: str | None = None) -> None:
    lines = [csv_header_line(seed, cfg_hash, schema=SCHEMAS["report"], content="timings")]
    lines.append("experiment,solver,covariance,n,d,noise,alpha_b,alpha_r,wall_time_s")
    for row in report.rows:
        lines.append(
            ",".join(
                [
                    row.experiment,
                    row.solver,
                    row.covariance,
                    str(row.n),
                    str(row.d),
                    _fmt(row.noise),
                    _fmt(row.alpha_b),
                    _fmt(row.alpha_r),
                    _fmt(row.wall_time),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_plot_csvs(outdir: str | Path, report, seed: int | None = None,
                    cfg_hash: str | None = None) -> list[Path]:
    """Long-format CSVs, one per figure analogue present in the report."""
    outdir = Path(outdir)
    written: list[Path] = []

    def dump(name: str, header: list[str], rows: list[list[str]]) -> None:
        if not rows:
            return
        path = outdir / name
        lines = [csv_header_line(seed, cfg_hash, content=name)]
        lines.append(",".join(header))
        lines.extend(",".join(r) for r in rows)
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    twin = [r for r in report.rows if r.experiment == "twin" and not r.error]
    dump(
        "plot_noise_sweep.csv",
        ["noise", "n", "d", "solver", "rmse_truth", "rmse_obs"],
        [
            [_fmt(r.noise), str(r.n), str(r.d), r.solver, _fmt(r.rmse_truth), _fmt(r.rmse_obs)]
            for r in twin
        ],
    )
    dump(
        "plot_mode_sweep.csv",
        ["d", "n", "noise", "solver", "rmse_truth"],
        [[str(r.d), str(r.n), _fmt(r.noise), r.solver, _fmt(r.rmse_truth)] for r in twin],
    )
    grid = [r for r in report.rows if r.experiment == "covgrid" and not r.error]
    dump(
        "plot_covariance_grid.csv",
        ["alpha_b", "alpha_r", "rmse_truth"],
        [[_fmt(r.alpha_b), _fmt(r.alpha_r), _fmt(r.rmse_truth)] for r in grid],
    )
    boot = [r for r in report.rows if r.experiment.startswith("bootstrap") and not r.error]
    dump(
        "plot_bootstrap.csv",
        ["replicate", "solver", "d", "rmse_truth"],
        [
            [r.experiment.split("/", 1)[1], r.solver, str(r.d), _fmt(r.rmse_truth)]
            for r in boot
        ],
    )
    measure = [r for r in report.rows if r.experiment == "measure" and not r.error]
    dump(
        "plot_measurement.csv",
        ["solver", "covariance", "n", "d", "rmse_obs", "model_runs"],
        [
            [r.solver, r.covariance, str(r.n), str(r.d), _fmt(r.rmse_obs), str(r.model_runs)]
            for r in measure
        ],
    )
    return written
