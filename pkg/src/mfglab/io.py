"""Deterministic on-disk formats: CSV tables and JSON metadata.

Every writer produces byte-identical output for identical inputs: floats go
through repr-faithful %.17g, JSON keys are sorted, newlines are fixed, and
no timestamps are recorded.  Tables carry header rows; metadata is JSON.
"""

from __future__ import annotations

import csv
import json
import os
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .grid import Field, Grid, Prism, make_grid
from .kernels import GaussianProduct, HeavisideCausal, Kernel, SeparableDelta
from .carleman import CarlemanReport, LemmaReport
from .mfg import MFGTriple
from .stability import StabilityParams, SweepReport

__all__ = [
    "fmt",
    "save_field_csv",
    "load_field_csv",
    "grid_to_dict",
    "grid_from_dict",
    "save_grid_json",
    "load_grid_json",
    "kernel_to_dict",
    "kernel_from_dict",
    "save_triple_dir",
    "save_history_csv",
    "save_carleman_report",
    "save_carleman_family",
    "save_lemma_reports",
    "save_sweep_report",
    "stability_params_to_dict",
    "save_provenance",
]


def fmt(x: float) -> str:
    """Shortest round-trip decimal form of a float."""
    return "%.17g" % float(x)


def _write_json(path: str, payload) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# fields and grids


def save_field_csv(field: Field, path: str) -> None:
    """One row per node: spatial indices, time index, value."""
    g = field.grid
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"i{a}" for a in range(g.dim)] + ["j", "value"])
        flat = field.values.reshape(-1, g.nt)
        for row_idx in range(flat.shape[0]):
            idx = np.unravel_index(row_idx, g.shape_space)
            prefix = [str(int(i)) for i in idx]
            for j in range(g.nt):
                writer.writerow(prefix + [str(j), fmt(flat[row_idx, j])])


def load_field_csv(grid: Grid, path: str) -> Field:
    values = np.empty(grid.shape)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != grid.dim + 2:
            raise ValueError(
                f"{path}: expected {grid.dim + 2} columns, found {len(header)}"
            )
        for row in reader:
            idx = tuple(int(c) for c in row[: grid.dim])
            values[idx + (int(row[grid.dim]),)] = float(row[-1])
    return Field(grid, values, _copy=False)


def grid_to_dict(grid: Grid) -> dict:
    p = grid.prism
    return {
        "a": p.a,
        "b": p.b,
        "half_widths": list(p.half_widths),
        "T": p.T,
        "nx": grid.nx,
        "nt": grid.nt,
    }


def grid_from_dict(d: Mapping) -> Grid:
    prism = Prism(d["a"], d["b"], tuple(d["half_widths"]), d["T"])
    return make_grid(prism, d["nx"], d["nt"])


def save_grid_json(grid: Grid, path: str) -> None:
    _write_json(path, grid_to_dict(grid))


def load_grid_json(path: str) -> Grid:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# kernels


def kernel_to_dict(kernel: Kernel) -> dict:
    if isinstance(kernel, GaussianProduct):
        return {
            "type": "gaussian",
            "sigmas": list(kernel.sigmas),
            "amplitude": kernel.amplitude,
            "n1": kernel.n1,
        }
    profile = kernel.profile
    if callable(profile):
        raise ValueError("callable kernel profiles are not serializable")
    name = "separable" if isinstance(kernel, SeparableDelta) else "causal"
    return {
        "type": name,
        "profile": profile,
        "amplitude": kernel.amplitude,
        "n1": kernel.n1,
    }


def kernel_from_dict(d: Mapping) -> Kernel:
    kind = d.get("type")
    if kind == "gaussian":
        return GaussianProduct(
            tuple(d["sigmas"]), amplitude=d.get("amplitude", 1.0), n1=d.get("n1")
        )
    cls = {"separable": SeparableDelta, "causal": HeavisideCausal}.get(kind)
    if cls is None:
        raise ValueError(f"unknown kernel type {kind!r}")
    return cls(
        profile=d.get("profile", "constant"),
        amplitude=d.get("amplitude", 1.0),
        n1=d.get("n1"),
    )


# ---------------------------------------------------------------------------
# triples and histories


def save_triple_dir(
    triple: MFGTriple,
    outdir: str,
    *,
    f: Field | None = None,
    kernel: Kernel | None = None,
) -> None:
    """Write grid.json, u.csv, m.csv, k.csv and the solver report."""
    os.makedirs(outdir, exist_ok=True)
    g = triple.grid
    save_grid_json(g, os.path.join(outdir, "grid.json"))
    save_field_csv(triple.u, os.path.join(outdir, "u.csv"))
    save_field_csv(triple.m, os.path.join(outdir, "m.csv"))
    with open(os.path.join(outdir, "k.csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"i{a}" for a in range(g.dim)] + ["value"])
        flat = triple.k.reshape(-1)
        for row_idx in range(flat.shape[0]):
            idx = np.unravel_index(row_idx, g.shape_space)
            writer.writerow([str(int(i)) for i in idx] + [fmt(flat[row_idx])])
    if f is not None:
        save_field_csv(f, os.path.join(outdir, "f.csv"))
    if kernel is not None:
        _write_json(os.path.join(outdir, "kernel.json"), kernel_to_dict(kernel))
    report = {
        key: val for key, val in triple.report.items() if key != "history"
    }
    _write_json(os.path.join(outdir, "report.json"), report)
    history = triple.report.get("history")
    if history is not None:
        save_history_csv(history, os.path.join(outdir, "history.csv"))


def save_history_csv(history: Sequence[float], path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "change"])
        for i, change in enumerate(history):
            writer.writerow([str(i), fmt(change)])


# ---------------------------------------------------------------------------
# carleman reports


def save_carleman_report(report: CarlemanReport, outdir: str, stem: str = "carleman") -> None:
    """Per-lambda CSV plus a summary JSON with (C0, lambda0)."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, stem + ".csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["lambda", "log_scale", "lhs", "main", "boundary", "negligible",
             "negligible_log", "passed"]
        )
        for i, lam in enumerate(report.lambdas):
            writer.writerow(
                [fmt(lam), fmt(report.log_scales[i]), fmt(report.lhs[i]),
                 fmt(report.main[i]), fmt(report.boundary[i]),
                 fmt(report.negligible[i]), fmt(report.negligible_log[i]),
                 str(int(report.passed[i]))]
            )
    _write_json(
        os.path.join(outdir, stem + ".json"),
        {
            "c0": report.c0,
            "lambda0": report.lambda0,
            "sign": report.sign,
            "restricted": report.restricted,
            "decay_flag": report.decay_flag,
            "all_passed": all(report.passed),
        },
    )


def save_carleman_family(
    reports: Sequence[CarlemanReport], outdir: str, c0: float | None, lambda0: float | None
) -> None:
    """Family sweep: one CSV row per (member, sign, lambda) plus summary JSON."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "carleman.csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["member", "sign", "lambda", "lhs", "main", "boundary",
             "negligible", "negligible_log", "passed"]
        )
        for idx, rep in enumerate(reports):
            for i, lam in enumerate(rep.lambdas):
                writer.writerow(
                    [str(idx), str(rep.sign), fmt(lam), fmt(rep.lhs[i]),
                     fmt(rep.main[i]), fmt(rep.boundary[i]),
                     fmt(rep.negligible[i]), fmt(rep.negligible_log[i]),
                     str(int(rep.passed[i]))]
                )
    _write_json(
        os.path.join(outdir, "carleman.json"),
        {
            "c0": c0,
            "lambda0": lambda0,
            "members": len(reports),
            "restricted": bool(reports[0].restricted) if reports else False,
        },
    )


def save_lemma_reports(reports: Sequence[LemmaReport], outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "lemmas.csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["which", "sample", "lambda", "ratio"])
        for idx, rep in enumerate(reports):
            for lam, ratio in zip(rep.lambdas, rep.ratios):
                writer.writerow([rep.which, str(idx), fmt(lam), fmt(ratio)])
    summary = [
        {
            "which": rep.which,
            "c_bound": rep.c_bound,
            "spread": rep.spread,
            "slope": rep.slope,
            "passed": rep.passed,
            "degenerate": rep.degenerate,
        }
        for rep in reports
    ]
    _write_json(os.path.join(outdir, "lemmas.json"), summary)


# ---------------------------------------------------------------------------
# sweep reports and parameters


def stability_params_to_dict(params: StabilityParams) -> dict:
    return {
        "rho": str(params.rho),
        "epsilon": str(params.epsilon),
        "T": str(params.T),
        "a": str(params.a),
        "b": str(params.b),
        "lam1": params.lam1,
        "s": str(params.s),
        "beta": str(params.beta),
        "alpha": str(params.alpha),
        "d": str(params.d),
        "beta_float": float(params.beta),
        "alpha_float": float(params.alpha),
        "d_float": float(params.d),
        "delta0": params.delta0,
    }


def save_sweep_report(
    report: SweepReport, outdir: str, params: StabilityParams | None = None
) -> None:
    """sweep.csv with one row per scale, fit.json, optional params.json."""
    os.makedirs(outdir, exist_ok=True)
    cols = ["scale", "delta", "err_k", "err_u_s0", "err_u_s1", "err_u_s2",
            "err_m_s0", "err_m_s1", "err_m_s2"]
    with open(os.path.join(outdir, "sweep.csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in report.rows:
            writer.writerow([fmt(row[c]) for c in cols])
    def _num(x: float):
        return None if x != x else x

    _write_json(
        os.path.join(outdir, "fit.json"),
        {
            "slope": _num(report.slope),
            "intercept": _num(report.intercept),
            "r_squared": _num(report.r_squared),
            "delta_decades": report.delta_decades(),
            "completeness": report.completeness,
            "excluded": list(report.excluded),
        },
    )
    if params is not None:
        _write_json(os.path.join(outdir, "params.json"), stability_params_to_dict(params))


def save_provenance(outdir: str, payload: Mapping) -> None:
    """Re-run recipe for an output directory; deliberately timestamp-free."""
    os.makedirs(outdir, exist_ok=True)
    _write_json(os.path.join(outdir, "provenance.json"), dict(payload))
