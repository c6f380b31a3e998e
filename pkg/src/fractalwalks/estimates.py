"""Envelope functions and empirical heat-kernel, Nash, and exit-time checks.

The polynomial envelope min(n^(-df/beta), n d^(-(df+beta))) is the
two-sided target for heavy-tailed kernels; the sub-Gaussian envelope
covers the diffusive base walks. Checks report the empirical constants
that make the bounds two-sided rather than asserting literature values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParameterError,
    InvariantViolationError,
    ResourceLimitError,
)
from .forms import dirichlet_form
from .kernels import MarkovKernel, iter_kernel_powers

__all__ = [
    "EstimateRow",
    "EstimateReport",
    "SurvivalRow",
    "SurvivalReport",
    "hkp_envelope",
    "sub_gaussian_envelope",
    "envelope_product_form",
    "check_hkp",
    "sample_core_pairs",
    "mc_exit_time",
    "ball_indicator_family",
    "NashReport",
    "nash_constant",
]


def hkp_envelope(n: int, d: int, df: float, beta: float) -> float:
    """min(n^(-df/beta), n * max(d,1)^(-(df+beta))); first branch at d = 0."""
    if n < 1:
        raise InvalidParameterError(f"hkp_envelope needs n >= 1, got {n}")
    on_diag = float(n) ** (-df / beta)
    if d == 0:
        return on_diag
    return min(on_diag, n * float(max(d, 1)) ** (-(df + beta)))


def sub_gaussian_envelope(n: int, d: int, df: float, dw: float, c: float) -> float:
    """n^(-df/dw) * exp(-(d^dw / (c n))^(1/(dw-1))) with caller-supplied c."""
    if n < 1:
        raise InvalidParameterError(f"sub_gaussian_envelope needs n >= 1, got {n}")
    if dw <= 1:
        raise InvalidParameterError(f"sub_gaussian_envelope needs dw > 1, got {dw}")
    if c <= 0:
        raise InvalidParameterError(f"sub_gaussian_envelope needs c > 0, got {c}")
    body = float(n) ** (-df / dw)
    if d == 0:
        return body
    return body * math.exp(-((float(d) ** dw / (c * n)) ** (1.0 / (dw - 1.0))))


def envelope_product_form(n: int, d: int, df: float, beta: float) -> float:
    """n^(-df/beta) (1 + d/n^(1/beta))^(-(df+beta)), the product form.

    Agrees with hkp_envelope within the factor 2^(df+beta) everywhere.
    """
    if n < 1:
        raise InvalidParameterError(f"needs n >= 1, got {n}")
    return float(n) ** (-df / beta) * (1.0 + d / float(n) ** (1.0 / beta)) ** (-(df + beta))


@dataclass
class EstimateRow:
    tag: str
    n: float
    x: int
    y: int
    d: int
    k_n: float
    envelope: float
    ratio: float


@dataclass
class EstimateReport:
    """Per-cell ratios of a kernel against an envelope, with the constants.

    c_up is the largest ratio, c_low the reciprocal of the smallest
    positive one; cells where the kernel vanishes are listed separately.
    """

    tag: str
    df: float
    beta: float
    rows: list[EstimateRow]
    c_up: float
    c_low: float
    witness_up: tuple[float, int, int] | None
    witness_low: tuple[float, int, int] | None
    c_up_by_n: dict[float, float] = field(default_factory=dict)
    c_low_by_n: dict[float, float] = field(default_factory=dict)
    zero_cells: list[tuple[float, int, int]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.c_up) and math.isfinite(self.c_low)

    def dyadic_drift(self) -> float:
        """Largest ratio of per-scale constants at consecutive grid scales."""
        worst = 1.0
        for by in (self.c_up_by_n, self.c_low_by_n):
            ns = sorted(by)
            for a, b in zip(ns, ns[1:]):
                q = by[b] / by[a]
                worst = max(worst, q, 1.0 / q if q > 0 else math.inf)
        return worst


def _report_from_rows(
    tag: str, df: float, beta: float, rows: list[EstimateRow],
    zero_cells: list[tuple[float, int, int]], flags: list[str],
) -> EstimateReport:
    ratios = [row.ratio for row in rows if row.ratio > 0]
    c_up_by_n: dict[float, float] = {}
    c_low_by_n: dict[float, float] = {}
    for row in rows:
        if row.ratio <= 0:
            continue
        c_up_by_n[row.n] = max(c_up_by_n.get(row.n, 0.0), row.ratio)
        c_low_by_n[row.n] = max(c_low_by_n.get(row.n, 0.0), 1.0 / row.ratio)
    if ratios:
        c_up = max(ratios)
        c_low = 1.0 / min(ratios)
        up_row = max((row for row in rows if row.ratio > 0), key=lambda row: row.ratio)
        low_row = min((row for row in rows if row.ratio > 0), key=lambda row: row.ratio)
        witness_up = (up_row.n, up_row.x, up_row.y)
        witness_low = (low_row.n, low_row.x, low_row.y)
    else:
        c_up = math.inf
        c_low = math.inf
        witness_up = None
        witness_low = None
    return EstimateReport(
        tag=tag, df=df, beta=beta, rows=rows, c_up=c_up, c_low=c_low,
        witness_up=witness_up, witness_low=witness_low,
        c_up_by_n=c_up_by_n, c_low_by_n=c_low_by_n,
        zero_cells=zero_cells, flags=flags,
    )


def sample_core_pairs(
    g,
    max_distance: int,
    n_pairs: int,
    seed: int = 0,
    min_distance: int = 0,
) -> list[tuple[int, int]]:
    """Deterministic sample of core vertex pairs with d in the given band.

    Stratified by distance so far pairs are not drowned out by the
    (much more numerous) near ones.
    """
    core = g.core_vertices()
    dist = g.distance_matrix()[np.ix_(core, core)]
    rng = np.random.default_rng(seed)
    by_d: dict[int, list[tuple[int, int]]] = {}
    ii, jj = np.nonzero((dist >= min_distance) & (dist <= max_distance))
    keep = ii <= jj
    ii, jj = ii[keep], jj[keep]
    for i, j in zip(ii.tolist(), jj.tolist()):
        by_d.setdefault(int(dist[i, j]), []).append((int(core[i]), int(core[j])))
    pairs: list[tuple[int, int]] = []
    dists = sorted(by_d)
    if not dists:
        return pairs
    per_d = max(1, n_pairs // len(dists))
    for d in dists:
        bucket = by_d[d]
        if len(bucket) > per_d:
            idx = rng.choice(len(bucket), size=per_d, replace=False)
            bucket = [bucket[int(i)] for i in sorted(idx)]
        pairs.extend(bucket)
    return pairs


def check_hkp(
    K: MarkovKernel,
    n_grid: list[int],
    pair_sample: list[tuple[int, int]],
    df: float,
    beta: float,
) -> EstimateReport:
    """Two-sided comparison of k_n against the polynomial envelope.

    Zero cells with n >= d sit inside the validity window and are hard
    failures; zero cells with n < d are expected for non-lazy kernels
    (the walk cannot reach that far yet) and are only flagged.
    """
    if not n_grid:
        raise InvalidParameterError("empty n grid")
    if not pair_sample:
        raise InvalidParameterError("empty pair sample")
    if min(n_grid) < 1:
        raise InvalidParameterError(f"n grid must be >= 1, got min {min(n_grid)}")
    core = max(1, K.graph.core_radius)
    n_cap = core ** beta / 4.0
    if max(n_grid) > n_cap:
        raise InvalidParameterError(
            f"n grid reaches {max(n_grid)} but the boundary-safe cap is "
            f"{n_cap:.1f} (core radius {core}, beta {beta})"
        )
    xs = np.array([p[0] for p in pair_sample])
    ys = np.array([p[1] for p in pair_sample])
    dmat = K.graph.distance_matrix()
    ds = dmat[xs, ys].astype(np.int64)
    rows: list[EstimateRow] = []
    zero_cells: list[tuple[float, int, int]] = []
    flags: list[str] = []
    hard_zero: list[tuple[float, int, int]] = []
    for n, kn in iter_kernel_powers(K, sorted(set(int(n) for n in n_grid))):
        vals = kn[xs, ys]
        for x, y, d, v in zip(xs.tolist(), ys.tolist(), ds.tolist(), vals.tolist()):
            env = hkp_envelope(n, int(d), df, beta)
            if v <= 0.0:
                zero_cells.append((float(n), x, y))
                if n >= d:
                    hard_zero.append((float(n), x, y))
                continue
            rows.append(EstimateRow(
                tag="hkp", n=float(n), x=x, y=y, d=int(d),
                k_n=float(v), envelope=env, ratio=float(v) / env,
            ))
    if hard_zero:
        n0, x0, y0 = hard_zero[0]
        raise InvariantViolationError(
            f"k_n vanished inside the validity window at {len(hard_zero)} "
            f"cells, first (n={n0:.0f}, x={x0}, y={y0})"
        )
    if zero_cells:
        flags.append("zero-cells-before-arrival")
    return _report_from_rows("hkp", df, beta, rows, zero_cells, flags)


@dataclass
class SurvivalRow:
    x: int
    r: int
    delta: float
    horizon: int
    p_hat: float
    half_width: float
    trials: int
    seed: int


@dataclass
class SurvivalReport:
    """Monte Carlo exit-probability estimates P_x(tau <= delta r^beta).

    half_width is the 95% normal-approximation binomial half width
    1.96 sqrt(p(1-p)/trials). tail_constant is the empirical constant in
    the displacement tail bound P(d >= r) <= C n / r^beta, measured on
    the same trajectories.
    """

    x: int
    beta: float
    rows: list[SurvivalRow]
    trials: int
    seed: int
    tail_constant: float

    def p_hat_at(self, r: int, delta: float) -> float:
        for row in self.rows:
            if row.r == r and row.delta == delta:
                return row.p_hat
        raise KeyError(f"no cell at r={r}, delta={delta}")


MAX_HORIZON = 5_000_000


def mc_exit_time(
    K: MarkovKernel,
    x: int,
    r_grid: list[int],
    delta_grid: list[float],
    trials: int,
    seed: int,
) -> SurvivalReport:
    """Estimate exit probabilities of the K-walk from balls around x.

    One trajectory per (seed, trial) pair of a counter-based generator,
    run to the largest horizon and shared across the (r, delta) grid, so
    results are independent of evaluation order and trial batching.
    """
    if trials < 1000:
        raise InvalidParameterError(f"trials must be >= 1000, got {trials}")
    if not r_grid or not delta_grid:
        raise InvalidParameterError("empty r or delta grid")
    if K.beta is None:
        raise InvalidParameterError("kernel has no nominal beta")
    if min(delta_grid) <= 0:
        raise InvalidParameterError("delta must be positive")
    g = K.graph
    beta = float(K.beta)
    r_max = max(r_grid)
    bdist = g.boundary_distance()
    if bdist[x] <= r_max:
        raise InvalidParameterError(
            f"ball B({x},{r_max}) is not inside the core (boundary "
            f"clearance {int(bdist[x])})"
        )
    horizons = {
        (r, dl): int(math.floor(dl * float(r) ** beta))
        for r in r_grid for dl in delta_grid
    }
    max_h = max(horizons.values())
    if max_h > MAX_HORIZON:
        raise ResourceLimitError(
            f"horizon {max_h} exceeds the step budget {MAX_HORIZON}"
        )
    dist_x = g.distances_from(x)
    # Row CDFs of the transition matrix, for inverse-CDF stepping.
    cdf = np.cumsum(K.transition(), axis=1)
    cdf[:, -1] = 1.0
    n_steps = max_h
    # exit_step[t] = first step index (1-based) at which distance >= r,
    # recorded per trial and per radius; 0 means never within horizon.
    exit_step = {r: np.zeros(trials, dtype=np.int64) for r in r_grid}
    max_disp_by_n = np.zeros(n_steps + 1)
    for trial in range(trials):
        rng = np.random.Generator(np.random.Philox(key=(seed, trial)))
        pos = x
        alive = set(r_grid)
        if n_steps == 0:
            break
        u = rng.random(n_steps)
        for step in range(1, n_steps + 1):
            pos = int(np.searchsorted(cdf[pos], u[step - 1], side="right"))
            dxy = dist_x[pos]
            if dxy > max_disp_by_n[step]:
                max_disp_by_n[step] = dxy
            for r in list(alive):
                if dxy >= r:
                    exit_step[r][trial] = step
                    alive.discard(r)
            if not alive:
                break
    rows = []
    for r in r_grid:
        for dl in delta_grid:
            horizon = horizons[(r, dl)]
            if horizon < 1:
                p_hat = 0.0
            else:
                hits = np.count_nonzero(
                    (exit_step[r] > 0) & (exit_step[r] <= horizon)
                )
                p_hat = hits / trials
            hw = 1.96 * math.sqrt(p_hat * (1.0 - p_hat) / trials)
            rows.append(SurvivalRow(
                x=int(x), r=int(r), delta=float(dl), horizon=horizon,
                p_hat=p_hat, half_width=hw, trials=trials, seed=seed,
            ))
    # Displacement tail on the same trajectories: for each (n, r) cell the
    # fraction of trials displaced >= r by step n, against C n / r^beta.
    tail_c = 0.0
    if n_steps >= 1:
        for r in r_grid:
            steps = exit_step[r]
            reached = steps[steps > 0]
            if len(reached) == 0:
                continue
            for n in sorted(set(int(2 ** k) for k in range(0, int(math.log2(n_steps)) + 1))):
                if n > n_steps:
                    break
                p_n = np.count_nonzero(reached <= n) / trials
                if p_n > 0:
                    tail_c = max(tail_c, p_n * float(r) ** beta / n)
    return SurvivalReport(
        x=int(x), beta=beta, rows=rows, trials=trials, seed=seed,
        tail_constant=tail_c,
    )


def ball_indicator_family(g, x: int, radii: list[int]) -> list[tuple[str, np.ndarray]]:
    d = g.distances_from(x)
    return [(f"ball-{r}", (d <= r).astype(np.float64)) for r in radii]


@dataclass
class NashReport:
    constant: float
    df: float
    beta: float
    used: int
    witness: str
    ratios: list[tuple[str, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def nash_constant(
    K: MarkovKernel,
    df: float,
    beta: float,
    test_fs: list[tuple[str, np.ndarray]],
) -> NashReport:
    """Empirical Nash constant over a family of non-constant functions.

    constant = max ||f||_2^(2(1+beta/df)) / (E(f,f) ||f||_1^(2 beta/df)).
    Constant members have E = 0 and are skipped with a note; the ratio is
    invariant under scaling f -> cf.
    """
    if not test_fs:
        raise InvalidParameterError("empty test family")
    mu = K.mu
    best = 0.0
    witness = ""
    ratios: list[tuple[str, float]] = []
    notes: list[str] = []
    for name, f in test_fs:
        energy = dirichlet_form(K, f)
        if np.all(f == f[0]):
            notes.append(f"skipped {name}: constant function, E(f,f) = 0")
            continue
        if energy <= 0:
            notes.append(f"skipped {name}: nonpositive energy {energy:.3e}")
            continue
        l2sq = float(np.dot(f * f, mu))
        l1 = float(np.dot(np.abs(f), mu))
        if l1 == 0.0:
            notes.append(f"skipped {name}: zero function")
            continue
        lhs = l2sq ** (1.0 + beta / df)
        ratio = lhs / (energy * l1 ** (2.0 * beta / df))
        ratios.append((name, ratio))
        if ratio > best:
            best = ratio
            witness = name
    if not ratios:
        raise InvalidParameterError("no usable member in the test family")
    return NashReport(
        constant=best, df=df, beta=beta, used=len(ratios), witness=witness,
        ratios=ratios, notes=notes,
    )
