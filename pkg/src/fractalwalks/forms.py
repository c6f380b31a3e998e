"""Energy measures, Dirichlet forms, killed kernels and resolvents.

Vertex functions are plain float arrays indexed by vertex. The energy
measure carries the vertex measure inside it (Gamma(f,g)(x) already
includes the mu(x) factor), so identities below sum it without extra
weights: E(f,g) = sum_x Gamma(f,g)(x) + sum_x f g (1 - P1) mu for
sub-Markov kernels, with the correction vanishing in the Markov case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (
    InvalidGeometryError,
    InvalidParameterError,
    NumericalFailureError,
)
from .kernels import MarkovKernel

__all__ = [
    "energy_measure",
    "energy_sum",
    "dirichlet_form",
    "killed_kernel",
    "resolvent",
    "FunhReport",
    "funh_builder",
    "IdentityCheck",
    "IdentityReport",
    "verify_form_identities",
]


def _masked_matrix(K: MarkovKernel, L: int | None) -> np.ndarray:
    if L is None:
        return K.matrix
    d = K.graph.distance_matrix()
    return np.where(d <= L, K.matrix, 0.0)


def energy_measure(
    K: MarkovKernel,
    f: np.ndarray,
    g: np.ndarray | None = None,
    L: int | None = None,
) -> np.ndarray:
    """Gamma(f,g)(x) = 1/2 sum_y (f(x)-f(y))(g(x)-g(y)) k(x,y) mu(y) mu(x).

    With L given the sum is restricted to y with d(x,y) <= L. Expanding the
    product turns the evaluation into four kernel mat-vecs.
    """
    f = np.asarray(f, dtype=np.float64)
    g = f if g is None else np.asarray(g, dtype=np.float64)
    if len(f) != K.n or len(g) != K.n:
        raise InvalidParameterError("function length does not match the kernel's graph")
    mat = _masked_matrix(K, L)
    mu = K.mu
    kf = mat @ (mu * f)
    kg = kf if g is f else mat @ (mu * g)
    kfg = mat @ (mu * f * g)
    k1 = mat @ mu
    return 0.5 * mu * (f * g * k1 - f * kg - g * kf + kfg)


def energy_sum(
    K: MarkovKernel,
    f: np.ndarray,
    g: np.ndarray | None = None,
    L: int | None = None,
) -> float:
    """Total energy sum_x Gamma(f,g)(x)."""
    return float(energy_measure(K, f, g, L).sum())


def dirichlet_form(K: MarkovKernel, f: np.ndarray, g: np.ndarray | None = None) -> float:
    """E(f,g) = <f, (I-K)g> in the mu-weighted inner product."""
    f = np.asarray(f, dtype=np.float64)
    g = f if g is None else np.asarray(g, dtype=np.float64)
    if len(f) != K.n or len(g) != K.n:
        raise InvalidParameterError("function length does not match the kernel's graph")
    return float(np.dot(f * K.mu, g - K.apply(g)))


def killed_kernel(K: MarkovKernel, D: np.ndarray) -> MarkovKernel:
    """Restriction k_D(x,y) = k(x,y) 1_D(x) 1_D(y); sub-Markov."""
    D = np.asarray(D, dtype=np.int64)
    if len(D) == 0:
        raise InvalidParameterError("killed_kernel needs a nonempty domain")
    mask = np.zeros(K.n, dtype=bool)
    mask[D] = True
    mat = np.where(np.outer(mask, mask), K.matrix, 0.0)
    return MarkovKernel(
        K.graph, mat, "killed", beta=K.beta, locality=K.locality,
        meta={"domain_size": int(len(D)), "base_kind": K.kind},
    )


def resolvent(
    K: MarkovKernel,
    D: np.ndarray,
    lam: float,
    f: np.ndarray,
    tol: float = 1e-10,
    return_info: bool = False,
):
    """Solve (I - K_D/(1+lambda)) u = f on D; u = 0 off D.

    Starts with the geometric series (whose partial-sum residual is exactly
    the next term), bails out early when the observed contraction rate
    cannot reach the target within the 10*(1+1/lambda) iteration cap, and
    falls back to conjugate gradient on the mu^{1/2}-symmetrized system,
    which is positive definite for lambda > 0.
    """
    if lam <= 0:
        raise InvalidParameterError("lambda must be > 0")
    D = np.asarray(D, dtype=np.int64)
    if len(D) == 0:
        raise InvalidParameterError("resolvent needs a nonempty domain")
    f = np.asarray(f, dtype=np.float64)
    mu_d = K.mu[D]
    kd = K.matrix[np.ix_(D, D)]
    t = kd * (mu_d[None, :] / (1.0 + lam))
    b = f[D].astype(np.float64)
    b_norm = float(np.linalg.norm(b))
    info = {"method": "neumann", "iterations": 0, "residual": 0.0}
    u = b.copy()
    if b_norm > 0:
        cap = int(10 * (1 + 1 / lam))
        target = tol * b_norm
        term = b.copy()
        converged = False
        prev_norm = b_norm
        for i in range(1, cap + 1):
            term = t @ term
            u += term
            tn = float(np.linalg.norm(term))
            info["iterations"] = i
            if tn <= target:
                converged = True
                info["residual"] = tn
                break
            if i % 32 == 0:
                rate = (tn / prev_norm) ** (1.0 / 32.0)
                prev_norm = tn
                if rate >= 1.0 or i + math.log(target / tn) / math.log(rate) > cap:
                    break
        if not converged:
            w = np.sqrt(mu_d)
            s = kd * np.outer(w, w) / (1.0 + lam)
            m = np.eye(len(D)) - s
            v, code = spla.cg(m, w * b, rtol=1e-14, atol=0.0, maxiter=50 * len(D))
            u = v / w
            res = float(np.linalg.norm(b - u + t @ u))
            info = {"method": "cg", "iterations": int(code) if code else None,
                    "residual": res}
            if code != 0 or res > tol * b_norm:
                raise NumericalFailureError(
                    f"resolvent stalled: cg code={code}, residual={res:.3e}, "
                    f"target={tol * b_norm:.3e}, |D|={len(D)}, lambda={lam:.3e}"
                )
        else:
            info["residual"] = float(np.linalg.norm(b - u + t @ u))
    out = np.zeros(K.n)
    out[D] = u
    return (out, info) if return_info else out


@dataclass
class FunhReport:
    x0: int
    R: float
    r: float
    lam: float
    max_h: float
    bound: float  # 2 r^beta
    c1_empirical: float  # min over D_2 of h / r^beta
    sizes: tuple[int, int, int]
    solver: dict
    flags: list[str]

    @property
    def bound_ok(self) -> bool:
        return self.max_h <= self.bound


def funh_builder(
    K: MarkovKernel,
    x0: int,
    R: float,
    r: float,
    strict_geometry: bool = True,
) -> tuple[np.ndarray, FunhReport]:
    """Resolvent profile h = G_lambda^{D_0} 1_{D_1} with lambda = r^{-beta}.

    D_0, D_1, D_2 are the nested annuli around x0 with radii R + (1/10,
    9/10), (1/5, 4/5), (2/5, 3/5) of r. h lives on D_0, is bounded by
    2 r^beta, and its minimum over D_2 (divided by r^beta) is the
    empirical lower-profile constant.
    """
    if K.beta is None:
        raise InvalidParameterError("kernel has no nominal beta")
    if r <= 10:
        raise InvalidParameterError(f"funh_builder needs r > 10, got {r}")
    g = K.graph
    d0 = g.annulus(x0, R + r / 10, R + 9 * r / 10)
    d1 = g.annulus(x0, R + r / 5, R + 4 * r / 5)
    d2 = g.annulus(x0, R + 2 * r / 5, R + 3 * r / 5)
    flags: list[str] = []
    outer = R + 9 * r / 10
    in_core = x0 in set(g.core_vertices().tolist()) and g.boundary_distance()[x0] > outer
    if strict_geometry:
        if min(len(d0), len(d1), len(d2)) == 0:
            raise InvalidGeometryError(
                f"empty annulus around x0={x0}, R={R}, r={r} "
                f"(sizes {len(d0)}, {len(d1)}, {len(d2)})"
            )
        if not in_core:
            raise InvalidGeometryError(
                f"annuli around x0={x0} reach radius {outer:.1f} but boundary "
                f"clearance is {int(g.boundary_distance()[x0])}"
            )
    else:
        if min(len(d0), len(d1), len(d2)) == 0:
            flags.append("degenerate-annulus")
        if not in_core:
            flags.append("outside-core")
    lam = float(r) ** (-float(K.beta))
    if len(d0) == 0 or len(d1) == 0:
        h = np.zeros(K.n)
        solver = {"method": "empty", "iterations": 0, "residual": 0.0}
    else:
        ind = np.zeros(K.n)
        ind[d1] = 1.0
        h, solver = resolvent(K, d0, lam, ind, return_info=True)
    rb = float(r) ** float(K.beta)
    c1 = float((h[d2] / rb).min()) if len(d2) else 0.0
    report = FunhReport(
        x0=int(x0), R=float(R), r=float(r), lam=lam,
        max_h=float(h.max()), bound=2.0 * rb, c1_empirical=c1,
        sizes=(len(d0), len(d1), len(d2)), solver=solver, flags=flags,
    )
    return h, report


@dataclass
class IdentityCheck:
    name: str
    kind: str  # identity | inequality
    worst: float  # max relative error, or min normalized slack
    witness_sample: int


@dataclass
class IdentityReport:
    kernel_kind: str
    samples: int
    checks: dict[str, IdentityCheck]
    identity_tol: float = 1e-10
    slack_tol: float = -1e-12

    @property
    def ok(self) -> bool:
        for c in self.checks.values():
            if c.kind == "identity" and c.worst > self.identity_tol:
                return False
            if c.kind == "inequality" and c.worst < self.slack_tol:
                return False
        return True


def _rel_err(lhs: float, rhs: float) -> float:
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return abs(lhs - rhs) / scale


def _norm_slack(lhs: float, rhs: float) -> float:
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return (lhs - rhs) / scale


def verify_form_identities(K: MarkovKernel, samples: int = 100, seed: int = 0) -> IdentityReport:
    """Exercise the exact form identities and the power-chain inequalities.

    Each sample draws bounded uniform f, g, h (nonnegative |f| for the
    inequality chains, with p cycling through 1, 2, 4) and records the worst
    relative violation per identity and the worst normalized slack per
    inequality.
    """
    if samples < 1:
        raise InvalidParameterError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = K.n
    mu = K.mu
    one = np.ones(n)
    correction_mass = (1.0 - K.row_mass()) * mu  # (1 - P1) mu, zero when Markov

    worst: dict[str, tuple[float, int]] = {}

    def update(name: str, value: float, sample: int, kind: str) -> None:
        if name not in worst:
            worst[name] = (value, sample)
        else:
            best = worst[name][0]
            if (kind == "identity" and value > best) or (
                kind == "inequality" and value < best
            ):
                worst[name] = (value, sample)

    kinds = {}
    for i in range(samples):
        f = rng.uniform(-1.0, 1.0, n)
        g = rng.uniform(-1.0, 1.0, n)
        h = rng.uniform(-1.0, 1.0, n)
        p = (1, 2, 4)[i % 3]

        # interpolation identity: E(f,g) = sum Gamma(f,g) + sum f g (1-P1) mu
        e_fg = dirichlet_form(K, f, g)
        gsum = energy_sum(K, f, g)
        update("form-energy", _rel_err(e_fg, gsum + float(np.dot(f * g, correction_mass))), i, "identity")
        kinds["form-energy"] = "identity"
        if K.is_markov:
            update("form-energy-markov", _rel_err(e_fg, gsum), i, "identity")
            kinds["form-energy-markov"] = "identity"

        # Leibniz rule: sum Gamma(fg,h) = sum [f Gamma(g,h) + g Gamma(f,h)]
        lhs = energy_sum(K, f * g, h)
        gam_gh = energy_measure(K, g, h)
        gam_fh = energy_measure(K, f, h)
        update("leibniz", _rel_err(lhs, float((f * gam_gh + g * gam_fh).sum())), i, "identity")
        kinds["leibniz"] = "identity"

        # polarization of the Leibniz rule:
        # sum g Gamma(f,h) = 1/2 sum [Gamma(gh,f) + Gamma(gf,h) - Gamma(g,fh)]
        lhs = float((g * gam_fh).sum())
        rhs = 0.5 * (
            energy_sum(K, g * h, f) + energy_sum(K, g * f, h) - energy_sum(K, g, f * h)
        )
        update("leibniz-polarized", _rel_err(lhs, rhs), i, "identity")
        kinds["leibniz-polarized"] = "identity"

        # power chains on nonnegative functions
        fp = np.abs(f)
        a = energy_sum(K, fp ** (2 * p - 1), fp)
        b = float((fp ** (2 * p - 2) * energy_measure(K, fp, fp)).sum())
        c = energy_sum(K, fp**p, fp**p)
        update("power-chain-1-hi", _norm_slack(a, b), i, "inequality")
        update("power-chain-1-lo", _norm_slack(b, a / (2 * p - 1)), i, "inequality")
        update("power-chain-2-hi", _norm_slack(c, a), i, "inequality")
        update("power-chain-2-lo", _norm_slack(a, (2 * p - 1) / p**2 * c), i, "inequality")
        for name in ("power-chain-1-hi", "power-chain-1-lo", "power-chain-2-hi", "power-chain-2-lo"):
            kinds[name] = "inequality"

    checks = {
        name: IdentityCheck(name, kinds[name], val, idx)
        for name, (val, idx) in sorted(worst.items())
    }
    return IdentityReport(kernel_kind=K.kind, samples=samples, checks=checks)
