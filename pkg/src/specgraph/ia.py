"""Iterative joint estimation of CSD and inverse CSD slices.

Inexact successive convex approximation: each outer iteration performs a
single ADMM sweep on the two convex surrogate subproblems (one in the inverse
slices ``P``, one in the CSD slices ``F``), then smooths the primal iterates
with a diminishing stepsize.

All variables are kept in matrix form, shape ``(M, N, N)``. The vectorized
quantities of the derivation are their column-major ``vec``; every norm used
here is invariant to that reshaping.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .prox import block_soft_threshold, gamma1_blocks, project_hermitian_pd, prox_linf
from .tensor_core import (
    CSDTensor,
    FrequencyPartition,
    InverseCSDTensor,
    NumericalError,
    ValidationError,
    hermitianize,
)

STEPSIZE_RULES = ("log_t", "log_sqrt_t")
INIT_MODES = ("identity", "inverse")


@dataclass(frozen=True)
class IAConfig:
    lam: float = 0.5
    eta: float = 0.01
    eps: float = 1e-8
    tau: float = 1.0
    sigma: float = 1.0
    omega: float = 1.0
    theta: float = 1.0
    rho: float = 1.0
    delta: float = 1.0
    stepsize_rule: str = "log_t"
    c1: float = 0.5
    c2: float = 0.99
    tol_abs_p: float = 5e-4
    tol_rel_p: float = 5e-4
    tol_abs_d: float = 5e-4
    tol_rel_d: float = 5e-4
    max_iters: int = 2000
    init: str = "identity"

    def __post_init__(self):
        positive = ("eta", "eps", "tau", "sigma", "omega", "theta", "rho", "delta")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")
        for name in ("tol_abs_p", "tol_rel_p", "tol_abs_d", "tol_rel_d"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not 0 < self.c1 <= self.c2 < 1:
            raise ValidationError("need 0 < c1 <= c2 < 1")
        if self.stepsize_rule not in STEPSIZE_RULES:
            raise ValidationError(f"stepsize_rule must be one of {STEPSIZE_RULES}")
        if self.init not in INIT_MODES:
            raise ValidationError(f"init must be one of {INIT_MODES}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValidationError("max_iters must be a positive integer")

    @classmethod
    def from_mapping(cls, values: dict) -> "IAConfig":
        """Build from string or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValidationError(f"unknown IA config key {key!r}")
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(raw) if not isinstance(default, str) else str(raw)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class IAState:
    """Mutable learner state. Arrays have shape ``(M, N, N)`` except ``beta`` (``(M,)``).

    ``v`` and ``phi`` are stored frequency-major; their block flattenings are
    the fibers used by the group penalty.
    """

    ftilde: np.ndarray
    f: np.ndarray
    p: np.ndarray
    x: np.ndarray
    w: np.ndarray
    u: np.ndarray
    l: np.ndarray
    mu: np.ndarray
    om: np.ndarray
    al: np.ndarray
    dl: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    t: int = 0
    xi: float = 1.0

    ARRAYS = ("ftilde", "f", "p", "x", "w", "u", "l", "mu", "om", "al", "dl", "beta", "v", "phi")

    @property
    def m(self) -> int:
        return self.f.shape[0]

    @property
    def n(self) -> int:
        return self.f.shape[1]

    def copy(self) -> "IAState":
        return replace(self, **{a: getattr(self, a).copy() for a in self.ARRAYS})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, a))) for a in self.ARRAYS)


@dataclass(frozen=True)
class ResidualReport:
    t: int
    xi: float
    pi1: float
    pi2: float
    p3: float
    pi4: float
    pi5: float
    pi6: float
    delta1: float
    delta2: float
    thresholds: tuple[float, ...]
    converged: bool

    @property
    def norms(self) -> tuple[float, ...]:
        return (self.pi1, self.pi2, self.p3, self.pi4, self.pi5, self.pi6, self.delta1, self.delta2)

    @property
    def satisfied(self) -> tuple[bool, ...]:
        return tuple(a < b for a, b in zip(self.norms, self.thresholds))


class IAResult(NamedTuple):
    inverse: InverseCSDTensor
    csd: CSDTensor
    trace: list

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def converged(self) -> bool:
        return bool(self.trace) and self.trace[-1].converged


# --- helpers -----------------------------------------------------------------


def _h(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _offdiag(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    i = np.arange(a.shape[-1])
    out[..., i, i] = 0
    return out


def _prox_linf_mat(a: np.ndarray, lam: float) -> np.ndarray:
    shape = a.shape
    return prox_linf(a.reshape(shape[:-2] + (-1,)), lam).reshape(shape)


def _fro(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2)))


def _ks(ks) -> slice | np.ndarray:
    return slice(None) if ks is None else np.asarray(ks)


# --- initialization and stepsize -------------------------------------------


def ia_init(smoothed: CSDTensor, config: IAConfig) -> IAState:
    ft = np.array(smoothed.slices, dtype=complex)
    if not np.all(np.isfinite(ft)):
        raise ValidationError("smoothed tensor contains non-finite values")
    m, n, _ = ft.shape
    eye = np.broadcast_to(np.eye(n, dtype=complex), ft.shape)
    if config.init == "identity":
        p = eye.copy()
    else:
        cond = np.linalg.cond(ft)
        bad = np.flatnonzero(~np.isfinite(cond) | (1.0 / cond < 1e-13))
        if bad.size:
            raise NumericalError(f"inverse init: slice k={bad[0]} is singular or near-singular")
        p = hermitianize(np.linalg.inv(ft))
    resid = ft @ p - eye
    zeros = np.zeros_like(ft)
    return IAState(
        ftilde=ft,
        f=ft.copy(),
        p=p,
        x=resid.copy(),
        w=p.copy(),
        u=resid.copy(),
        l=ft.copy(),
        mu=zeros.copy(),
        om=zeros.copy(),
        al=zeros.copy(),
        dl=zeros.copy(),
        beta=np.zeros(m),
        v=_offdiag(p),
        phi=zeros.copy(),
    )


def stepsize(t: int, prev: float, config: IAConfig) -> float:
    """``(prev + log(t)^c1) / (1 + c2 * g(t))`` with ``g(t) = t`` or ``sqrt(t)``."""
    if t < 1:
        raise ValidationError("stepsize is defined for t >= 1")
    num = prev + math.log(t) ** config.c1
    g = t if config.stepsize_rule == "log_t" else math.sqrt(t)
    return num / (1.0 + config.c2 * g)


# --- p-subproblem ------------------------------------------------------------


def update_p(state: IAState, config: IAConfig, ks=None) -> np.ndarray:
    """Closed-form p-step followed by SCA smoothing with ``state.xi``."""
    k = _ks(ks)
    c = config
    f, p = state.f[k], state.p[k]
    eye = np.eye(state.n)
    rhs = (
        c.tau * p
        + c.omega * (state.w[k] - state.om[k])
        + c.sigma * (_h(f) @ (eye + state.x[k] - state.mu[k]))
        + c.theta * _offdiag(state.v[k] - state.phi[k])
    )
    blocks = gamma1_blocks(f, c.tau, c.omega, c.sigma, c.theta)
    # column j of P solves block j
    cols = np.linalg.solve(blocks, np.swapaxes(rhs, -1, -2)[..., None])[..., 0]
    p_new = np.swapaxes(cols, -1, -2)
    return p + state.xi * (p_new - p)


def update_x(state: IAState, config: IAConfig, p_new: np.ndarray, ks=None) -> np.ndarray:
    k = _ks(ks)
    arg = state.f[k] @ p_new - np.eye(state.n) + state.mu[k]
    return _prox_linf_mat(arg, 1.0 / config.sigma)


def update_w(state: IAState, config: IAConfig, p_new: np.ndarray, ks=None) -> np.ndarray:
    k = _ks(ks)
    return project_hermitian_pd(p_new + state.om[k], config.eps)


# --- f-subproblem ------------------------------------------------------------


def _bisect_beta(c: np.ndarray, d: np.ndarray, eta: float, max_steps: int = 400) -> np.ndarray:
    """Per-instance root of ``g(beta) = sum_ij |c_ij|^2 / (d_j + beta)^2 = eta`` with ``g(0) > eta``.

    Returns an upper end of the final bracket, so ``g(beta) <= eta`` holds.
    """
    w = np.sum(np.abs(c) ** 2, axis=-2)  # (K, N) column weights

    def g(beta):
        return np.sum(w / (d + beta[:, None]) ** 2, axis=-1)

    lo = np.zeros(len(w))
    hi = np.ones(len(w))
    for _ in range(max_steps):
        over = g(hi) > eta
        if not over.any():
            break
        lo = np.where(over, hi, lo)
        hi = np.where(over, 2.0 * hi, hi)
    else:
        raise NumericalError("beta bracket search did not terminate")
    active = np.ones(len(w), dtype=bool)
    for _ in range(max_steps):
        ghi = g(hi)
        active &= (np.abs(ghi - eta) > 1e-8 * eta) & (hi - lo >= 1e-12 * np.maximum(1.0, hi))
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        feasible = g(mid) <= eta
        hi = np.where(active & feasible, mid, hi)
        lo = np.where(active & ~feasible, mid, lo)
    return hi


def update_f(state: IAState, config: IAConfig, ks=None) -> tuple[np.ndarray, np.ndarray]:
    """Trust-constrained f-step (KKT + bisection on beta) followed by SCA smoothing.

    Returns the smoothed ``F`` slices and the multipliers ``beta``.
    """
    k = _ks(ks)
    c = config
    ft, f, p = state.ftilde[k], state.f[k], state.p[k]
    eye = np.eye(state.n)
    # rhs without the beta * ftilde term
    r0 = 0.5 * c.tau * f + 0.5 * c.delta * (state.l[k] - state.dl[k]) + 0.5 * c.rho * (
        (eye + state.u[k] - state.al[k]) @ _h(p)
    )
    lam, vecs = np.linalg.eigh(hermitianize(p @ _h(p)))
    d = 0.5 * c.tau + 0.5 * c.delta + 0.5 * c.rho * np.maximum(lam, 0.0)
    # F(beta) - ftilde = C diag(1 / (d + beta)) U^H
    cmat = r0 @ vecs - (ft @ vecs) * d[..., None, :]
    g0 = np.sum(np.abs(cmat) ** 2 / d[..., None, :] ** 2, axis=(-2, -1))
    beta = np.zeros(g0.shape)
    need = g0 > c.eta
    if need.any():
        beta[need] = _bisect_beta(cmat[need], d[need], c.eta)
    f_new = ft + (cmat / (d + beta[..., None])[..., None, :]) @ _h(vecs)
    return f + state.xi * (f_new - f), beta


def update_u(state: IAState, config: IAConfig, f_new: np.ndarray, ks=None) -> np.ndarray:
    k = _ks(ks)
    arg = f_new @ state.p[k] - np.eye(state.n) + state.al[k]
    return _prox_linf_mat(arg, 1.0 / config.rho)


def update_l(state: IAState, config: IAConfig, f_new: np.ndarray, ks=None) -> np.ndarray:
    k = _ks(ks)
    return project_hermitian_pd(f_new + state.dl[k], config.eps)


# --- group-sparsity split and duals -----------------------------------------


def update_v(state: IAState, config: IAConfig, p_new: np.ndarray, partition: FrequencyPartition) -> np.ndarray:
    """Block soft-threshold every off-diagonal fiber ``(S2 p + phi)`` over each frequency block."""
    z = _offdiag(p_new) + state.phi
    if config.lam == 0:
        return z
    out = np.empty_like(z)
    thr = config.lam / config.theta
    for lo, hi in map(partition.bounds, range(partition.k)):
        fib = np.moveaxis(z[lo:hi], 0, -1)  # (N, N, |K_m|)
        out[lo:hi] = np.moveaxis(block_soft_threshold(fib, thr), -1, 0)
    return out


def update_duals(state: IAState, new: dict) -> dict:
    """Scaled dual ascent for all five dual families. ``new`` holds the sweep's primal/splitting values."""
    eye = np.eye(state.n)
    return {
        "mu": state.mu + (state.f @ new["p"] - eye - new["x"]),
        "om": state.om + (new["p"] - new["w"]),
        "al": state.al + (new["f"] @ state.p - eye - new["u"]),
        "dl": state.dl + (new["f"] - new["l"]),
        "phi": state.phi + (_offdiag(new["p"]) - new["v"]),
    }


# --- residuals ----------------------------------------------------------------


def residual_report(old: IAState, new: IAState, config: IAConfig) -> ResidualReport:
    """Primal/dual residual norms of the sweep ``old -> new`` and the eight stopping tests."""
    c = config
    m, n = new.m, new.n
    eye = np.eye(n)
    fp = old.f @ new.p
    pf = new.f @ old.p
    dist = np.sqrt(np.sum(np.abs(new.f - new.ftilde) ** 2, axis=(-2, -1)))
    # positive part: an inactive trust constraint is not a violation
    p3 = np.maximum(dist**2 - c.eta, 0.0)
    pi = [
        _fro(fp - eye - new.x),
        _fro(pf - eye - new.u),
        float(np.linalg.norm(p3)),
        _fro(_offdiag(new.p) - new.v),
        _fro(new.p - new.w),
        _fro(new.f - new.l),
    ]
    d1 = _fro(
        c.omega * (new.w - old.w)
        + c.sigma * (_h(old.f) @ (new.x - old.x))
        + c.theta * _offdiag(new.v - old.v)
    )
    d2 = _fro(0.5 * c.delta * (new.l - old.l) + 0.5 * c.rho * ((new.u - old.u) @ _h(old.p)))
    abs_p = n * math.sqrt(m) * c.tol_abs_p
    abs_d = n * math.sqrt(m) * c.tol_abs_d
    root_mn = math.sqrt(m * n)
    thr = (
        abs_p + c.tol_rel_p * max(_fro(fp), _fro(new.x), root_mn),
        abs_p + c.tol_rel_p * max(_fro(pf), _fro(new.u), root_mn),
        abs_p + c.tol_rel_p * max(float(np.linalg.norm(dist)), c.eta * math.sqrt(m)),
        abs_p + c.tol_rel_p * max(_fro(_offdiag(new.p)), _fro(new.v)),
        abs_p + c.tol_rel_p * max(_fro(new.p), _fro(new.w)),
        abs_p + c.tol_rel_p * max(_fro(new.f), _fro(new.l)),
        abs_d + c.tol_rel_d * max(c.omega * _fro(new.om), c.sigma * _fro(_h(old.f) @ new.mu), c.theta * _fro(_offdiag(new.phi))),
        abs_d + 0.5 * c.tol_rel_d * max(c.delta * _fro(new.dl), c.rho * _fro(new.al @ _h(old.p))),
    )
    norms = (pi[0], pi[1], pi[2], pi[3], pi[4], pi[5], d1, d2)
    converged = all(a < b for a, b in zip(norms, thr))
    return ResidualReport(new.t, new.xi, pi[0], pi[1], pi[2], pi[3], pi[4], pi[5], d1, d2, thr, converged)


def ia_objective(f: np.ndarray, p: np.ndarray, partition: FrequencyPartition, lam: float) -> float:
    """``sum_k max|F_k P_k - I| + lam * sum_m sum_(i != j) ||fiber_ij over block m||_2``."""
    eye = np.eye(p.shape[-1])
    fit = np.abs(f @ p - eye).max(axis=(-2, -1)).sum()
    off = _offdiag(p)
    group = sum(np.linalg.norm(off[lo:hi], axis=0).sum() for lo, hi in map(partition.bounds, range(partition.k)))
    return float(fit + lam * group)


# --- driver -------------------------------------------------------------------


def _chunks(m: int, order, chunk_size: int | None) -> list[np.ndarray]:
    if order is None or (isinstance(order, str) and order == "forward"):
        idx = np.arange(m)
    elif isinstance(order, str) and order == "reverse":
        idx = np.arange(m)[::-1]
    else:
        idx = np.asarray(order, dtype=int)
        if sorted(idx.tolist()) != list(range(m)):
            raise ValidationError("order must be a permutation of the frequency indices")
    size = m if chunk_size is None else max(1, int(chunk_size))
    return [idx[i : i + size] for i in range(0, m, size)]


def ia_sweep(
    state: IAState,
    config: IAConfig,
    partition: FrequencyPartition,
    chunks: Sequence[np.ndarray] | None = None,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[IAState, ResidualReport]:
    """One outer iteration. Phases read only values from the previous phase."""
    chunks = chunks if chunks is not None else [np.arange(state.m)]
    new = {name: np.empty_like(state.p) for name in ("p", "x", "w", "f", "u", "l")}
    beta = np.empty_like(state.beta)

    def p_phase(ks):
        p = update_p(state, config, ks)
        new["p"][ks] = p
        new["x"][ks] = update_x(state, config, p, ks)
        new["w"][ks] = update_w(state, config, p, ks)

    def f_phase(ks):
        f, b = update_f(state, config, ks)
        new["f"][ks] = f
        beta[ks] = b
        new["u"][ks] = update_u(state, config, f, ks)
        new["l"][ks] = update_l(state, config, f, ks)

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for phase in (p_phase, f_phase):
                if pool is None:
                    for ks in chunks:
                        phase(ks)
                else:
                    list(pool.map(phase, chunks))
    except (NumericalError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"iteration {state.t + 1}: {exc}") from exc

    new["v"] = update_v(state, config, new["p"], partition)
    duals = update_duals(state, new)
    nxt = IAState(
        ftilde=state.ftilde,
        f=new["f"],
        p=new["p"],
        x=new["x"],
        w=new["w"],
        u=new["u"],
        l=new["l"],
        mu=duals["mu"],
        om=duals["om"],
        al=duals["al"],
        dl=duals["dl"],
        beta=beta,
        v=new["v"],
        phi=duals["phi"],
        t=state.t + 1,
        xi=state.xi,
    )
    if not nxt.all_finite():
        raise NumericalError(f"non-finite value produced at iteration {nxt.t}")
    report = residual_report(state, nxt, config)
    nxt.xi = stepsize(nxt.t, state.xi, config)
    return nxt, report


def ia_learn(
    smoothed: CSDTensor,
    partition: FrequencyPartition,
    config: IAConfig,
    order=None,
    chunk_size: int | None = None,
    threads: int | None = None,
    callback: Callable[[IAState, ResidualReport], None] | None = None,
) -> IAResult:
    """Run sweeps until all eight stopping tests hold or ``max_iters`` is reached.

    The inverse read-out is the eps-PD copy ``w``; the CSD read-out is its
    counterpart ``l``.
    """
    if partition.m != smoothed.m:
        raise ValidationError(f"partition covers M={partition.m} frequencies, tensor has {smoothed.m}")
    state = ia_init(smoothed, config)
    chunks = _chunks(state.m, order, chunk_size)
    trace = []
    pool = ThreadPoolExecutor(threads) if threads and threads > 1 and len(chunks) > 1 else None
    try:
        for _ in range(int(config.max_iters)):
            state, report = ia_sweep(state, config, partition, chunks, pool)
            trace.append(report)
            if callback is not None:
                callback(state, report)
            if report.converged:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    inverse = InverseCSDTensor(hermitianize(state.w), smoothed.t, epsilon=config.eps)
    csd = CSDTensor(hermitianize(state.l), smoothed.t)
    return IAResult(inverse, csd, trace)


TRACE_COLUMNS = ("t", "xi", "pi1", "pi2", "pi4", "pi5", "pi6", "p3", "delta1", "delta2", "converged")


def write_trace_csv(trace: Sequence[ResidualReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r.t, repr(r.xi), *(repr(getattr(r, c)) for c in TRACE_COLUMNS[2:-1]), int(r.converged)])
