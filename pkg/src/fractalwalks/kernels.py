"""mu-symmetric Markov kernels with prescribed jump index.

All kernels are stored as dense matrices of k(x,y), the kernel *with
respect to mu*: the operator action is (Kf)(x) = sum_y k(x,y) f(y) mu(y)
and the transition matrix of the associated walk is P = k * mu[None, :].
Iteration composes through the measure, k_{m+n} = k_m * diag(mu) * k_n,
which is plain matrix algebra on the transition matrices.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, NumericalFailureError, ResourceLimitError
from .graphs import MAX_DENSE_VERTICES, WeightedGraph

CACHE_MAGIC = b"HKLB"
CACHE_VERSION = 1
MARKOV_KINDS = ("nearest-neighbor", "direct-heavy-tail", "subordinated", "perturbed")

__all__ = [
    "MarkovKernel",
    "JumpBoundReport",
    "nearest_neighbor_kernel",
    "heavy_tailed_kernel",
    "subordination_weights",
    "subordinate_kernel",
    "perturb_kernel",
    "check_jump_bounds",
    "iterate_kernel",
    "kernel_power",
    "iter_kernel_powers",
    "continuous_semigroup",
    "semigroup_columns",
    "save_kernel",
    "load_kernel",
    "kernel_fingerprint",
]


@dataclass
class MarkovKernel:
    """Dense kernel k(x,y) w.r.t. mu on a weighted graph.

    `kind` is one of nearest-neighbor | direct-heavy-tail | subordinated |
    perturbed | killed | meyer-small | meyer-large; the killed and Meyer
    kinds are sub-Markov (row mass <= 1). `locality` is set for kernels
    supported on d(x,y) <= L.
    """

    graph: WeightedGraph
    matrix: np.ndarray
    kind: str
    beta: float | None = None
    locality: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.n_vertices

    @property
    def mu(self) -> np.ndarray:
        return self.graph.mu

    def transition(self) -> np.ndarray:
        """Row-(sub)stochastic matrix P(x,y) = k(x,y) mu(y)."""
        return self.matrix * self.mu[None, :]

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Operator action (Kf)(x) = sum_y k(x,y) f(y) mu(y)."""
        return self.matrix @ (self.mu * f)

    def row_mass(self) -> np.ndarray:
        return self.transition().sum(axis=1)

    def markov_defect(self) -> float:
        return float(np.abs(self.row_mass() - 1.0).max())

    def symmetry_defect(self) -> float:
        m = self.matrix
        peak = float(np.abs(m).max())
        if peak == 0.0:
            return 0.0
        return float(np.abs(m - m.T).max() / peak)

    @property
    def is_markov(self) -> bool:
        return self.kind in MARKOV_KINDS

    def warnings(self) -> list[str]:
        return list(self.meta.get("warnings", []))


def _check_dense(g: WeightedGraph) -> None:
    if g.n_vertices > MAX_DENSE_VERTICES:
        raise ResourceLimitError(
            f"dense kernels need n <= {MAX_DENSE_VERTICES}, got {g.n_vertices}"
        )


def nearest_neighbor_kernel(g: WeightedGraph, lazy: float = 0.0) -> MarkovKernel:
    """One-step walk kernel p(x,y) = mu_xy/(mu(x)mu(y)), optionally lazy.

    Laziness mixes in the identity kernel delta_xy/mu(x), so rows still
    integrate to one against mu.
    """
    if not 0.0 <= lazy < 1.0:
        raise InvalidParameterError(f"lazy must be in [0, 1), got {lazy}")
    _check_dense(g)
    adj = g.adjacency().toarray()
    k = (1.0 - lazy) * adj / np.outer(g.mu, g.mu)
    k[np.diag_indices_from(k)] += lazy / g.mu
    return MarkovKernel(g, k, "nearest-neighbor", locality=1, meta={"lazy": lazy})


def heavy_tailed_kernel(g: WeightedGraph, beta: float) -> MarkovKernel:
    """Direct construction of a kernel satisfying the two-sided jump bound.

    Off-diagonal weights a(x,y) = (1 + d(x,y))^{-(d_f+beta)} are globally
    rescaled by Z = 2 max_x s(x) (s = off-diagonal row mass) so that every
    diagonal entry is at least 1/(2 mu(x)).
    """
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    _check_dense(g)
    gamma = g.nominal_df + beta
    d = g.distance_matrix().astype(np.float64)
    a = (1.0 + d) ** (-gamma)
    np.fill_diagonal(a, 0.0)
    s = a @ g.mu
    z = 2.0 * s.max()
    k = a / z
    np.fill_diagonal(k, (z - s) / (z * g.mu))
    return MarkovKernel(g, k, "direct-heavy-tail", beta=beta, meta={"z": float(z)})


def subordination_weights(beta: float, dw: float, n_terms: int) -> np.ndarray:
    """Normalized polynomial weights c_m proportional to m^{-1-beta/dw}."""
    if n_terms < 1:
        raise InvalidParameterError("n_terms must be >= 1")
    m = np.arange(1, n_terms + 1, dtype=np.float64)
    c = m ** (-1.0 - beta / dw)
    return c / c.sum()


def subordinate_kernel(
    P: MarkovKernel, beta: float, dw: float | None = None, n_terms: int = 400
) -> MarkovKernel:
    """Heavy-tailed kernel K = sum_m c_m P^m from a lazy base walk.

    The transition powers are accumulated through a sparse copy of the base
    transition matrix; run time is n_terms sparse-dense products.
    """
    if P.kind != "nearest-neighbor":
        raise InvalidParameterError("subordination base must be the nearest-neighbor kernel")
    dw = P.graph.nominal_dw if dw is None else dw
    if not 0.0 < beta < dw:
        raise InvalidParameterError(f"subordination needs 0 < beta < dw={dw:.4f}, got {beta}")
    c = subordination_weights(beta, dw, n_terms)
    warnings = []
    if P.meta.get("lazy", 0.0) <= 0.0:
        warnings.append("subordination base is not lazy; parity artifacts possible")
    tail_scale = float(P.graph.core_radius) ** dw
    if n_terms < tail_scale:
        warnings.append(
            f"n_terms={n_terms} below tail-resolution heuristic "
            f"core_radius^dw={tail_scale:.0f}"
        )
    t_sparse = sp.csr_matrix(P.transition())
    acc = t_sparse.toarray()  # P^1
    total = c[0] * acc
    for m in range(1, n_terms):
        acc = t_sparse @ acc
        total += c[m] * acc
    k = total / P.graph.mu[None, :]
    k = 0.5 * (k + k.T)  # clean off last-bit asymmetry from the sparse products
    return MarkovKernel(
        P.graph,
        k,
        "subordinated",
        beta=beta,
        meta={"n_terms": n_terms, "dw": dw, "lazy": P.meta.get("lazy"), "warnings": warnings},
    )


def perturb_kernel(K: MarkovKernel, seed: int, amplitude: float) -> MarkovKernel:
    """Multiply off-diagonal entries by symmetric uniform factors in [1/A, A].

    The row-mass change is absorbed into the diagonal; if that would drive
    some diagonal negative, the off-diagonals are globally rescaled by
    Z = 2 max_x s(x) as in the direct heavy-tail construction (flagged).
    amplitude = 1 returns the kernel unchanged.
    """
    if not K.is_markov:
        raise InvalidParameterError("perturb_kernel expects a Markov kernel")
    if not 1.0 <= amplitude <= 4.0:
        raise InvalidParameterError(f"amplitude must be in [1, 4], got {amplitude}")
    if amplitude == 1.0:
        return K
    n = K.n
    rng = np.random.default_rng(seed)
    factors = rng.uniform(1.0 / amplitude, amplitude, size=(n, n))
    iu = np.triu_indices(n, k=1)
    sym = np.ones((n, n))
    sym[iu] = factors[iu]
    sym.T[iu] = factors[iu]
    a = K.matrix * sym
    np.fill_diagonal(a, 0.0)
    s = a @ K.mu
    warnings = K.warnings()
    if (s <= 1.0).all():
        k = a
        np.fill_diagonal(k, (1.0 - s) / K.mu)
    else:
        z = 2.0 * s.max()
        k = a / z
        np.fill_diagonal(k, (z - s) / (z * K.mu))
        warnings.append(f"perturbation renormalized globally (Z={z:.6g})")
    return MarkovKernel(
        K.graph,
        k,
        "perturbed",
        beta=K.beta,
        meta={
            "base_kind": K.kind,
            "amplitude": amplitude,
            "seed": seed,
            "warnings": warnings,
        },
    )


@dataclass
class JumpBoundReport:
    """Empirical two-sided jump-bound constants over sampled core pairs."""

    beta: float
    df: float
    n_pairs: int
    c_upper: float
    c_lower: float
    witness_upper: tuple[int, int]
    witness_lower: tuple[int, int]

    @property
    def c_total(self) -> float:
        return max(self.c_upper, self.c_lower)


def check_jump_bounds(
    K: MarkovKernel,
    beta: float | None = None,
    max_pairs: int = 2_000_000,
    seed: int = 0,
) -> JumpBoundReport:
    """Smallest constants C with C^-1 <= k(x,y)(1+d)^{d_f+beta} <= C on core pairs.

    Diagonal pairs are included. A zero kernel entry makes the lower
    constant infinite, with the witness recorded.
    """
    beta = K.beta if beta is None else beta
    if beta is None:
        raise InvalidParameterError("kernel has no nominal beta; pass beta explicitly")
    g = K.graph
    gamma = g.nominal_df + beta
    core = g.core_vertices()
    if len(core) ** 2 > max_pairs:
        rng = np.random.default_rng(seed)
        m = int(math.isqrt(max_pairs))
        core = rng.choice(core, size=m, replace=False)
        core.sort()
    d = g.distance_matrix()[np.ix_(core, core)].astype(np.float64)
    kk = K.matrix[np.ix_(core, core)]
    ratio = kk * (1.0 + d) ** gamma
    hi = np.unravel_index(np.argmax(ratio), ratio.shape)
    c_upper = float(ratio[hi])
    if (kk <= 0.0).any():
        lo = np.unravel_index(np.argmin(kk), kk.shape)
        c_lower = math.inf
    else:
        lo = np.unravel_index(np.argmin(ratio), ratio.shape)
        c_lower = float(1.0 / ratio[lo])
    return JumpBoundReport(
        beta=float(beta),
        df=g.nominal_df,
        n_pairs=len(core) ** 2,
        c_upper=c_upper,
        c_lower=c_lower,
        witness_upper=(int(core[hi[0]]), int(core[hi[1]])),
        witness_lower=(int(core[lo[0]]), int(core[lo[1]])),
    )


def iterate_kernel(K: MarkovKernel, n_max: int) -> list[np.ndarray]:
    """Materialized iterated kernels [k_1, ..., k_{n_max}]."""
    if n_max < 1:
        raise InvalidParameterError("n_max must be >= 1")
    budget = 2 * 1024**3
    if n_max * K.n * K.n * 8 > budget:
        raise ResourceLimitError(
            f"iterate_kernel({n_max}) on n={K.n} exceeds the {budget >> 30} GiB budget; "
            "use iter_kernel_powers for large grids"
        )
    p = K.transition()
    acc = p.copy()
    out = [acc / K.mu[None, :]]
    for _ in range(n_max - 1):
        acc = acc @ p
        out.append(acc / K.mu[None, :])
    return out


def kernel_power(K: MarkovKernel, n: int) -> np.ndarray:
    """k_n by binary powering of the transition matrix."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    return np.linalg.matrix_power(K.transition(), n) / K.mu[None, :]


def iter_kernel_powers(K: MarkovKernel, ns: list[int]):
    """Yield (n, k_n) for ascending n in `ns`, holding O(1) matrices.

    Steps between consecutive grid points use binary powering of the gap,
    so dyadic grids cost one squaring per point.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise InvalidParameterError("power grid must contain integers >= 1")
    p = K.transition()
    cur_n = ns[0]
    cur = np.linalg.matrix_power(p, cur_n)
    yield cur_n, cur / K.mu[None, :]
    for n in ns[1:]:
        gap = n - cur_n
        if gap == cur_n:
            cur = cur @ cur
        else:
            cur = cur @ np.linalg.matrix_power(p, gap)
        cur_n = n
        yield cur_n, cur / K.mu[None, :]


def poisson_weights(t: float, tol: float, m_budget: int = 100_000) -> np.ndarray:
    """e^{-t} t^m / m! for m = 0..M with tail mass below tol."""
    if t <= 0:
        raise InvalidParameterError("t must be > 0")
    if not 0.0 < tol <= 1e-6:
        raise InvalidParameterError("tol must be in (0, 1e-6]")
    w = math.exp(-t)
    weights = [w]
    cum = w
    m = 0
    while cum < 1.0 - tol:
        m += 1
        if m > m_budget:
            raise ResourceLimitError(f"uniformization needs more than {m_budget} terms")
        w *= t / m
        weights.append(w)
        cum += w
    return np.array(weights)


def continuous_semigroup(K: MarkovKernel, t: float, tol: float = 1e-12) -> np.ndarray:
    """Full kernel h_t of exp(t(K - I)) via the uniformization series."""
    weights = poisson_weights(t, tol)
    if len(weights) * K.n**3 > 5e11:
        raise ResourceLimitError(
            "full semigroup kernel too expensive; use semigroup_columns"
        )
    p = K.transition()
    acc = np.eye(K.n)
    total = weights[0] * acc
    for w in weights[1:]:
        acc = acc @ p
        total += w * acc
    return total / K.mu[None, :]


def semigroup_columns(
    K: MarkovKernel, t: float, ys: list[int], tol: float = 1e-12
) -> np.ndarray:
    """Columns h_t(., y) for y in ys, shape (n, len(ys)).

    Evolves the indicator vectors 1_y / mu(y), which is exact for the
    kernel columns and costs one dense mat-vec block per series term.
    """
    weights = poisson_weights(t, tol)
    p = K.transition()
    f = np.zeros((K.n, len(ys)))
    for j, y in enumerate(ys):
        f[y, j] = 1.0 / K.mu[y]
    acc = f.copy()
    total = weights[0] * acc
    for w in weights[1:]:
        acc = p @ acc
        total += w * acc
    return total


# -- cache file format -----------------------------------------------------


def kernel_fingerprint(g: WeightedGraph, spec: dict) -> str:
    """Content address of (graph, kernel spec); names the cache file."""
    blob = g.fingerprint() + json.dumps(spec, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def save_kernel(path, K: MarkovKernel) -> None:
    mat = np.ascontiguousarray(K.matrix, dtype="<f8")
    mu = np.ascontiguousarray(K.mu, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(struct.pack("<Q", K.n))
        fh.write(struct.pack("<B", 0))  # dense
        fh.write(mat.tobytes())
        fh.write(mu.tobytes())


def load_kernel(
    path, g: WeightedGraph, kind: str, beta: float | None = None, meta: dict | None = None
) -> MarkovKernel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CACHE_MAGIC:
        raise NumericalFailureError(f"{path}: bad cache magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CACHE_VERSION:
        raise NumericalFailureError(f"{path}: unsupported cache version {version}")
    (n,) = struct.unpack_from("<Q", raw, 8)
    (storage,) = struct.unpack_from("<B", raw, 16)
    off = 17
    if n != g.n_vertices:
        raise NumericalFailureError(
            f"{path}: cache built for n={n}, graph has {g.n_vertices}"
        )
    if storage == 0:
        mat = np.frombuffer(raw, dtype="<f8", count=n * n, offset=off).reshape(n, n)
        off += n * n * 8
    elif storage == 1:
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        mat = np.zeros((n, n))
        rec = np.dtype([("u", "<u8"), ("v", "<u8"), ("w", "<f8")])
        trip = np.frombuffer(raw, dtype=rec, count=count, offset=off)
        off += count * rec.itemsize
        mat[trip["u"], trip["v"]] = trip["w"]
    else:
        raise NumericalFailureError(f"{path}: unknown storage tag {storage}")
    mu = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    if not np.array_equal(mu, g.mu):
        raise NumericalFailureError(f"{path}: cached mu does not match the graph")
    return MarkovKernel(g, np.array(mat), kind, beta=beta, meta=dict(meta or {}))
