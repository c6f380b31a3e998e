"""Experiment driver: build graph and kernel, run a tagged check, persist.

Every run is a pure function of (config, seed): report files carry no
timestamps, rows are sorted, and floats are written with repr, so a
rerun with the same config is byte-identical. Expensive kernels are
cached under FRACTALWALKS_CACHE_DIR keyed by a content fingerprint of
the graph and the kernel spec; a mismatched cache is an error, never a
silent reuse.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, GraphSpec, KernelSpec, canonical_text, config_hash
from .cutoffs import csj_cutoff, csj_test_family, csj_window_violation, verify_csj
from .davies import meyer_split, off_diagonal_check, tilt_bound_check, verify_davies_inequality
from .errors import EXIT_INVARIANT, EXIT_OK, FractalWalksError, InvalidParameterError
from .estimates import (
    ball_indicator_family,
    check_hkp,
    mc_exit_time,
    nash_constant,
    sample_core_pairs,
)
from .forms import verify_form_identities
from .graphs import WeightedGraph, build_graph, volume_profile
from .kernels import (
    MarkovKernel,
    heavy_tailed_kernel,
    kernel_fingerprint,
    load_kernel,
    nearest_neighbor_kernel,
    perturb_kernel,
    save_kernel,
    subordinate_kernel,
)

__all__ = [
    "CACHE_ENV",
    "RunResult",
    "build_graph_from_spec",
    "build_kernel_from_spec",
    "kernel_cache_path",
    "kernel_spec_fingerprint",
    "run_experiment",
    "emit_summary",
    "write_csv",
]

CACHE_ENV = "FRACTALWALKS_CACHE_DIR"


def build_graph_from_spec(spec: GraphSpec) -> WeightedGraph:
    spec.validate()
    return build_graph(spec.generator, **spec.params)


def _base_spec_dict(ks: KernelSpec) -> dict:
    return {
        "kind": ks.kind,
        "beta": ks.beta,
        "laziness": ks.laziness,
        "n_terms": ks.n_terms,
    }


def kernel_spec_fingerprint(g: WeightedGraph, ks: KernelSpec) -> str:
    """Content fingerprint of (graph, base kernel spec), perturbation excluded."""
    return kernel_fingerprint(g, _base_spec_dict(ks))


def kernel_cache_path(
    g: WeightedGraph, ks: KernelSpec, cache_dir: str | None = None
) -> Path | None:
    """Cache file build_kernel_from_spec would use, or None when uncached."""
    cache_dir = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if ks.kind != "subordinated" or not cache_dir:
        return None
    return Path(cache_dir) / f"{kernel_spec_fingerprint(g, ks)}.hklb"


def build_kernel_from_spec(
    g: WeightedGraph,
    ks: KernelSpec,
    cache_dir: str | None = None,
) -> MarkovKernel:
    """Build (or load) the configured kernel; perturbation applied on top.

    Only subordinated kernels are cached: they cost minutes, while the
    direct constructions cost milliseconds. The cache key fingerprints
    both the graph content and the base kernel spec, and the loader
    re-checks the stored vertex measure, so a stale file cannot pass.
    """
    ks.validate()
    if ks.kind == "nearest-neighbor":
        K = nearest_neighbor_kernel(g, lazy=ks.laziness)
    elif ks.kind == "direct":
        K = heavy_tailed_kernel(g, beta=ks.beta)
    else:
        path = kernel_cache_path(g, ks, cache_dir)
        fp = kernel_spec_fingerprint(g, ks)
        if path is not None and path.exists():
            K = load_kernel(
                path, g, "subordinated", beta=ks.beta,
                meta={"cache": str(path), "fingerprint": fp},
            )
        else:
            base = nearest_neighbor_kernel(g, lazy=ks.laziness)
            kwargs = {} if ks.n_terms is None else {"n_terms": ks.n_terms}
            K = subordinate_kernel(base, beta=ks.beta, **kwargs)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(f".tmp-{os.getpid()}")
                save_kernel(tmp, K)
                os.replace(tmp, path)
    if ks.perturb_seed is not None:
        K = perturb_kernel(K, seed=ks.perturb_seed, amplitude=ks.perturb_amplitude)
    return K


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header: list[str], rows: list[tuple]) -> None:
    """Write rows with repr-exact floats; caller provides sorted rows."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + f".tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    os.replace(tmp, path)


def _write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + f".tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _deep_center(g: WeightedGraph) -> int:
    """Deterministic deepest-core vertex: max boundary clearance, lowest id."""
    bd = g.boundary_distance()
    return int(np.argmax(bd))


def _versions() -> dict:
    import numpy
    import scipy

    return {
        "package": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


@dataclass
class RunResult:
    status: int
    out_dir: str
    files: list[str]
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == EXIT_OK


def _run_volume(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    r_max = int(cfg.scalar("r_max", float(max(1, g.core_radius))))
    n_centers = int(cfg.scalar("centers", 3.0))
    bd = g.boundary_distance()
    core = g.core_vertices()
    order = sorted(core.tolist(), key=lambda v: (-int(bd[v]), v))
    centers = order[: max(1, n_centers)]
    rep = volume_profile(g, centers, r_max)
    tol = cfg.tolerance("df_rel", 0.15)
    checks = {
        "df-fit-near-nominal": abs(rep.df_hat - rep.nominal_df) <= tol * rep.nominal_df,
    }
    constants = {
        "df_hat": rep.df_hat,
        "nominal_df": rep.nominal_df,
        "cv_hat": rep.cv_hat,
        "r_max": r_max,
        "centers": centers,
    }
    rows = sorted(rep.rows)
    files = {"volume_report.csv": (["center", "r", "volume"], rows)}
    return {"constants": constants, "checks": checks}, files


def _run_identities(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    samples = int(cfg.scalar("samples", 100.0))
    rep = verify_form_identities(K, samples=samples, seed=cfg.seed)
    rows = []
    for name in sorted(rep.checks):
        c = rep.checks[name]
        rows.append((name, c.kind, c.worst, c.witness_sample))
    checks = {}
    for name, c in rep.checks.items():
        if c.kind == "identity":
            checks[f"{name}-rel-err"] = c.worst <= rep.identity_tol
        else:
            checks[f"{name}-slack"] = c.worst >= rep.slack_tol
    max_identity = max(
        (c.worst for c in rep.checks.values() if c.kind == "identity"), default=0.0
    )
    min_slack = min(
        (c.worst for c in rep.checks.values() if c.kind == "inequality"), default=0.0
    )
    constants = {
        "max_identity_error": max_identity,
        "min_normalized_slack": min_slack,
        "samples": samples,
        "kernel_kind": rep.kernel_kind,
    }
    files = {"identities_report.csv": (["check", "kind", "worst", "witness_sample"], rows)}
    return {"constants": constants, "checks": checks}, files


def _estimate_csv(rep) -> tuple[list[str], list[tuple]]:
    rows = [
        (r.tag, r.n, r.x, r.y, r.d, r.k_n, r.envelope, r.ratio)
        for r in sorted(rep.rows, key=lambda r: (r.n, r.d, r.x, r.y))
    ]
    return ["tag", "n", "x", "y", "d", "k_n", "envelope", "ratio"], rows


def _run_hkp(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    df = g.nominal_df
    beta = float(K.beta)
    core = max(1, g.core_radius)
    n_cap = int(core ** beta / 4.0)
    default_grid = [float(2 ** k) for k in range(0, 20) if 2 ** k <= max(1, n_cap)]
    n_grid = cfg.int_grid("n", [int(v) for v in default_grid])
    max_d = int(cfg.scalar("max_distance", 24.0))
    n_pairs = int(cfg.scalar("pairs", 150.0))
    pairs = sample_core_pairs(g, max_d, n_pairs, seed=cfg.seed)
    rep = check_hkp(K, n_grid, pairs, df, beta)
    checks = {
        "constants-finite": rep.finite,
        "no-zero-cells-in-window": True,  # a violation raises before this point
    }
    constants = {
        "c_up": rep.c_up,
        "c_low": rep.c_low,
        "product": rep.c_up * rep.c_low,
        "dyadic_drift": rep.dyadic_drift(),
        "c_up_by_n": {str(int(k)): v for k, v in sorted(rep.c_up_by_n.items())},
        "c_low_by_n": {str(int(k)): v for k, v in sorted(rep.c_low_by_n.items())},
        "pairs": len(pairs),
        "zero_cells": len(rep.zero_cells),
        "flags": rep.flags,
    }
    header, rows = _estimate_csv(rep)
    files = {"hkp_report.csv": (header, rows)}
    return {"constants": constants, "checks": checks}, files


def _run_csj(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    r_grid = cfg.int_grid("r", [16, 32])
    n_grid = cfg.int_grid("n", [1, 2, 4])
    x = _deep_center(g)
    rows = []
    checks = {}
    constants: dict = {"center": x, "cells": {}}
    for r in sorted(r_grid):
        fam = csj_test_family(K, x, r, seed=cfg.seed)
        for n in sorted(n_grid):
            phi = csj_cutoff(K, x, r, n)
            ev = phi.endpoint_violation(g)
            wv = csj_window_violation(g, phi)
            dev_ok = phi.deviation <= 1.0 / n
            checks[f"endpoint-exact-r{r}-n{n}"] = ev == 0.0
            checks[f"window-exact-r{r}-n{n}"] = wv == 0.0
            checks[f"deviation-bound-r{r}-n{n}"] = dev_ok
            rep = verify_csj(K, phi, fam, r, n)
            checks[f"constants-finite-r{r}-n{n}"] = rep.finite
            cell = {}
            for row in rep.rows:
                rows.append((r, n, row.c1, row.c2, rep.deviation, row.witness))
                cell[f"C1={row.c1:g}"] = row.c2
            cell["deviation"] = rep.deviation
            cell["flags"] = rep.flags
            constants["cells"][f"r{r}-n{n}"] = cell
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    drift = 1.0
    rs = sorted(r_grid)
    for a, b in zip(rs, rs[1:]):
        for n in n_grid:
            for c1 in ("C1=1", "C1=10", "C1=100"):
                ca = constants["cells"][f"r{a}-n{n}"].get(c1)
                cb = constants["cells"][f"r{b}-n{n}"].get(c1)
                if ca and cb and min(ca, cb) > 0:
                    drift = max(drift, max(ca, cb) / min(ca, cb))
    constants["cross_scale_drift"] = drift
    files = {
        "csj_report.csv": (
            ["r", "n", "C1_grid_value", "C2_min", "sup_deviation", "witness_function_id"],
            rows,
        )
    }
    return {"constants": constants, "checks": checks}, files


def _run_nash(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    df = g.nominal_df
    beta = float(K.beta) if K.beta is not None else g.nominal_dw
    r_max = int(cfg.scalar("r_max", 32.0))
    x = _deep_center(g)
    fam = ball_indicator_family(g, x, list(range(1, r_max + 1)))
    rep = nash_constant(K, df, beta, fam)
    rows = sorted(rep.ratios)
    checks = {"constant-finite": math.isfinite(rep.constant) and rep.constant > 0}
    constants = {
        "nash_constant": rep.constant,
        "witness": rep.witness,
        "used": rep.used,
        "center": x,
        "notes": rep.notes,
    }
    files = {"nash_report.csv": (["function_id", "ratio"], rows)}
    return {"constants": constants, "checks": checks}, files


def _run_exit(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    r_grid = cfg.int_grid("r", [8, 16])
    delta_grid = cfg.grid("delta", [0.01])
    trials = int(cfg.scalar("trials", 10_000.0))
    x = _deep_center(g)
    rep = mc_exit_time(K, x, sorted(r_grid), sorted(delta_grid), trials, seed=cfg.seed)
    rows = [
        (r.x, r.r, r.delta, r.horizon, r.p_hat, r.half_width, r.trials, r.seed)
        for r in sorted(rep.rows, key=lambda r: (r.r, r.delta))
    ]
    checks = {"estimates-in-range": all(0.0 <= r.p_hat <= 1.0 for r in rep.rows)}
    for r in sorted(r_grid):
        ps = [row.p_hat for row in sorted(rep.rows, key=lambda q: q.delta) if row.r == r]
        checks[f"monotone-in-delta-r{r}"] = all(a <= b for a, b in zip(ps, ps[1:]))
    constants = {
        "center": x,
        "tail_constant": rep.tail_constant,
        "trials": trials,
        "cells": {
            f"r{r.r}-delta{r.delta:g}": {"p_hat": r.p_hat, "half_width": r.half_width}
            for r in rep.rows
        },
    }
    files = {
        "exit_report.csv": (
            ["x", "r", "delta", "horizon", "p_hat", "half_width", "trials", "seed"],
            rows,
        )
    }
    return {"constants": constants, "checks": checks}, files


def _run_davies(cfg: ExperimentConfig, g: WeightedGraph, K) -> tuple[dict, dict]:
    df = g.nominal_df
    beta = float(K.beta)
    t_grid = cfg.grid("t", [4.0, 16.0, 64.0])
    min_d = int(cfg.scalar("min_distance", 4.0))
    max_d = int(cfg.scalar("max_distance", 24.0))
    n_pairs = int(cfg.scalar("pairs", 60.0))
    samples = int(cfg.scalar("samples", 20.0))
    l_grid = cfg.int_grid("L", [2, 4, 8])
    pairs = sample_core_pairs(g, max_d, n_pairs, seed=cfg.seed, min_distance=min_d)
    rep = off_diagonal_check(K, pairs, sorted(t_grid), df, beta)
    rows = [
        (r.x, r.y, r.d, r.t, r.h_t, r.envelope, r.ratio, r.lam, r.active_branch)
        for r in sorted(rep.rows, key=lambda r: (r.t, r.d, r.x, r.y))
    ]
    checks = {"c-up-finite": rep.finite}
    min_slack = math.inf
    worst_tilt = -math.inf
    rng = np.random.default_rng(cfg.seed)
    for L in sorted(l_grid):
        T, _ = meyer_split(K, L)
        for s in range(samples):
            f = rng.uniform(0.0, 1.0, g.n_vertices)
            psi = rng.uniform(-1.0, 1.0, g.n_vertices)
            p = (1.0, 2.0, 4.0)[s % 3]
            ineq = verify_davies_inequality(T, f, psi, p)
            min_slack = min(min_slack, ineq.slack / max(ineq.scale, 1e-300))
            checks_ok = ineq.ok
            if not checks_ok:
                checks[f"key-inequality-L{L}-s{s}"] = False
        worst_tilt = max(worst_tilt, tilt_bound_check(T, rng.uniform(-1.0, 1.0, g.n_vertices)))
    checks["key-inequality-nonnegative"] = min_slack >= -1e-10
    checks["tilt-bound-pointwise"] = worst_tilt <= 1e-12
    constants = {
        "c_up": rep.c_up,
        "c_od1_by_t": {f"{k:g}": v for k, v in sorted(rep.c_od1_by_t.items())},
        "c_od2_by_t": {f"{k:g}": v for k, v in sorted(rep.c_od2_by_t.items())},
        "dyadic_drift": rep.dyadic_drift(),
        "min_normalized_slack": min_slack,
        "worst_tilt_excess": worst_tilt,
        "pairs": len(pairs),
        "flags": rep.flags,
    }
    files = {
        "davies_report.csv": (
            ["x", "y", "d", "t", "h_t", "envelope", "ratio", "lambda", "active_branch"],
            rows,
        )
    }
    return {"constants": constants, "checks": checks}, files


_RUNNERS = {
    "volume": _run_volume,
    "identities": _run_identities,
    "hkp": _run_hkp,
    "csj": _run_csj,
    "nash": _run_nash,
    "exit": _run_exit,
    "davies": _run_davies,
}


def run_experiment(
    cfg: ExperimentConfig,
    base_dir: str | None = None,
    cache_dir: str | None = None,
) -> RunResult:
    """Run one tagged experiment and write its artifacts.

    Returns status 0 on success, 2 for config errors, 3 for numerical
    failures, 4 when a checked invariant fails; on error a diagnostic
    JSON is written in place of the summary when the output directory
    is reachable.
    """
    out_dir = Path(base_dir) if base_dir is not None else Path(cfg.out_dir)
    try:
        cfg.validate()
    except FractalWalksError as exc:
        return RunResult(status=exc.exit_code, out_dir=str(out_dir), files=[],
                         summary={"error": str(exc)})
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = cfg.tag
    try:
        g = build_graph_from_spec(cfg.graph)
        K = build_kernel_from_spec(g, cfg.kernel, cache_dir=cache_dir)
        body, files = _RUNNERS[tag](cfg, g, K)
    except FractalWalksError as exc:
        err = {
            "tag": tag,
            "config_hash": config_hash(cfg),
            "error": str(exc),
            "error_kind": type(exc).__name__,
            "exit_code": exc.exit_code,
        }
        path = out_dir / f"{tag}_error.json"
        _write_json(path, err)
        return RunResult(status=exc.exit_code, out_dir=str(out_dir),
                         files=[str(path)], summary=err)
    written = []
    for name, (header, rows) in sorted(files.items()):
        path = out_dir / name
        write_csv(path, header, rows)
        written.append(str(path))
    checks = body.get("checks", {})
    status = EXIT_OK if all(checks.values()) else EXIT_INVARIANT
    summary = {
        "tag": tag,
        "config_hash": config_hash(cfg),
        "config": canonical_text(cfg),
        "seed": cfg.seed,
        "status": status,
        "constants": body.get("constants", {}),
        "checks": checks,
        "versions": _versions(),
        "report_files": sorted(files),
    }
    spath = out_dir / f"{tag}_summary.json"
    _write_json(spath, summary)
    written.append(str(spath))
    return RunResult(status=status, out_dir=str(out_dir), files=written, summary=summary)


def _plot_rows_from_csv(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        out = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            out.append(dict(zip(header, parts)))
    return out


def emit_summary(summary_paths: list, out_dir) -> dict:
    """Consolidate run summaries into one JSON plus plot-data CSVs.

    Tags with no recorded cells are listed in the notes instead of the
    body; two or more hkp summaries produce a constant-drift field (the
    ratio of consecutive c_up values, in input order).
    """
    if not summary_paths:
        raise InvalidParameterError("no summaries to consolidate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_tag: dict[str, list[dict]] = {}
    notes: list[str] = []
    sources: dict[str, list[Path]] = {}
    for p in summary_paths:
        p = Path(p)
        with open(p, "r", encoding="utf-8") as fh:
            s = json.load(fh)
        tag = s.get("tag", "unknown")
        if not s.get("constants") and not s.get("checks"):
            notes.append(f"{p.name}: empty report for tag {tag}, omitted")
            continue
        by_tag.setdefault(tag, []).append(s)
        sources.setdefault(tag, []).append(p)
    body: dict = {"experiments": by_tag, "notes": notes}
    if len(by_tag.get("hkp", [])) >= 2:
        ups = [s["constants"]["c_up"] for s in by_tag["hkp"]]
        body["hkp_constant_drift"] = [b / a for a, b in zip(ups, ups[1:])]
    files = []
    for tag, paths in sorted(sources.items()):
        if tag not in ("hkp", "davies"):
            continue
        ratio_key = "ratio"
        scale_key = "n" if tag == "hkp" else "t"
        by_scale: dict[float, list[float]] = {}
        by_d: dict[int, list[float]] = {}
        for p in paths:
            csv_path = p.parent / f"{tag}_report.csv"
            if not csv_path.exists():
                notes.append(f"{csv_path.name} missing next to {p.name}; plots skipped")
                continue
            for row in _plot_rows_from_csv(csv_path):
                by_scale.setdefault(float(row[scale_key]), []).append(float(row[ratio_key]))
                by_d.setdefault(int(row["d"]), []).append(float(row[ratio_key]))
        if by_scale:
            rows = [
                (s, max(v), min(v)) for s, v in sorted(by_scale.items())
            ]
            path = out_dir / f"plot_{tag}_ratio_vs_{scale_key}.csv"
            write_csv(path, [scale_key, "ratio_max", "ratio_min"], rows)
            files.append(str(path))
        if by_d:
            rows = [(d, max(v), min(v)) for d, v in sorted(by_d.items())]
            path = out_dir / f"plot_{tag}_ratio_vs_d.csv"
            write_csv(path, ["d", "ratio_max", "ratio_min"], rows)
            files.append(str(path))
    cpath = out_dir / "consolidated.json"
    _write_json(cpath, body)
    files.append(str(cpath))
    return {"files": files, "body": body}
