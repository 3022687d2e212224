"""Entropic optimal transport between two sets of node embeddings.

Three distances share one machinery:

* Wasserstein (node alignment): ``<T, C>`` with a cross-set cosine cost ``C``.
* Gromov-Wasserstein (edge alignment): ``sum T_ij T_kl |Ca_ik - Cb_jl|`` over
  intra-set cost matrices.
* GOT: ``phi * WD + (1 - phi) * GWD`` with one shared plan.

Plans are computed with Sinkhorn scaling.  The GW and GOT outer loops linearise
the quadratic term around the current plan and solve each round with the
previous plan as the reference measure of the entropy term (a proximal point
step), which drives the plan to the unregularised optimum as rounds proceed.

All numerical routines accept leading batch dimensions, so a minibatch of
pairs is solved in one call.  The public single-instance functions validate
their arguments and wrap the batched kernels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, NonConvergence, TooLarge, ZeroNormRow

LOG_DOMAIN_BELOW = 0.01


@dataclass(frozen=True)
class SinkhornConfig:
    reg: float = 0.05
    max_iter: int = 500
    marginal_tol: float = 1e-6
    outer_iter: int = 10

    def __post_init__(self):
        if not self.reg > 0:
            raise ValueError(f"reg must be positive, got {self.reg}")
        if not self.marginal_tol > 0:
            raise ValueError(f"marginal_tol must be positive, got {self.marginal_tol}")
        if self.max_iter < 1 or self.outer_iter < 1:
            raise ValueError("max_iter and outer_iter must be >= 1")


@dataclass(frozen=True)
class TransportPlan:
    """A coupling with its prescribed marginals.

    ``objective`` holds the entropic objective after every Sinkhorn sweep,
    evaluated through the dual (block-coordinate ascent makes it monotone).
    """

    values: np.ndarray
    u: np.ndarray
    v: np.ndarray
    n_iter: int = 0
    objective: tuple = field(default=(), repr=False)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def marginal_violation(self) -> float:
        rows = np.abs(self.values.sum(axis=-1) - self.u).max()
        cols = np.abs(self.values.sum(axis=-2) - self.v).max()
        return float(max(rows, cols))

    @property
    def T(self) -> "TransportPlan":
        return TransportPlan(self.values.T, self.v, self.u, self.n_iter, self.objective)


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _values(x) -> np.ndarray:
    """Node matrix of anything that looks like a feature set."""
    nodes = getattr(x, "nodes", x)
    return np.asarray(nodes, dtype=np.float64)


# ---------------------------------------------------------------------------
# cost matrices


def cost_matrix(A, B) -> np.ndarray:
    """Cosine distance ``1 - cos(A_i, B_j)`` between the rows of ``A`` and ``B``.

    Works on ``(..., n, d)`` and ``(..., m, d)`` stacks; entries lie in [0, 2].
    """
    A, B = _values(A), _values(B)
    if A.shape[-1] != B.shape[-1] or A.shape[-1] < 1:
        raise DimensionMismatch(f"feature dims differ: {A.shape} vs {B.shape}")
    na = np.linalg.norm(A, axis=-1)
    nb = np.linalg.norm(B, axis=-1)
    if (na == 0).any() or (nb == 0).any():
        raise ZeroNormRow("cost_matrix got a feature row with zero norm")
    cos = (A / na[..., None]) @ np.swapaxes(B / nb[..., None], -1, -2)
    return np.clip(1.0 - cos, 0.0, 2.0)


def gw_pseudo_cost(Ca, Cb, T) -> np.ndarray:
    """Linearised GW cost ``M_ij = sum_{i'j'} T_i'j' |Ca_ii' - Cb_jj'|``.

    Evaluated directly on the full ``n x m x n x m`` difference tensor.
    """
    Ca, Cb, T = (np.asarray(x, dtype=np.float64) for x in (Ca, Cb, T))
    n, m = Ca.shape[-1], Cb.shape[-1]
    if Ca.shape[-2] != n or Cb.shape[-2] != m or T.shape[-2:] != (n, m):
        raise DimensionMismatch(
            f"incompatible shapes Ca{Ca.shape} Cb{Cb.shape} T{T.shape}")
    return _contract(np.abs(gw_difference(Ca, Cb)), T)


def row_signature_cost(Ca, Cb) -> np.ndarray:
    """Mean absolute gap between the sorted rows of ``Ca`` and ``Cb``.

    This is the 1-D Wasserstein distance between the distributions of node
    ``i``'s and node ``j``'s edge costs under uniform weights.  It does not
    depend on node labels, so it seeds the GW iterations without breaking
    permutation equivariance.  Requires ``n == m``.
    """
    sa = np.sort(np.asarray(Ca, dtype=np.float64), axis=-1)
    sb = np.sort(np.asarray(Cb, dtype=np.float64), axis=-1)
    if sa.shape[-1] != sb.shape[-1]:
        raise DimensionMismatch("row signatures need equal node counts")
    return np.abs(sa[..., :, None, :] - sb[..., None, :, :]).mean(axis=-1)


# ---------------------------------------------------------------------------
# Sinkhorn


def _anneal_schedule(reg: float) -> list[float]:
    stages = []
    r = 1.0
    while r > reg * 2.0:
        stages.append(r)
        r *= 0.25
    return stages + [reg]


def _dual(alpha, beta, T, u, v, r):
    return (u * alpha).sum(-1) + (v * beta).sum(-1) - r * T.sum(axis=(-1, -2))


def _newton(C, logP, u, v, r, alpha, beta, tol, max_steps, history):
    """Newton ascent on the entropic dual, batched over leading dimensions.

    The Hessian ``-(1/r) [[diag(T1), T], [T^T, diag(T^T 1)]]`` is singular
    along ``(1, -1)``; a tiny ridge picks the minimum-norm step.  Backtracking
    keeps every accepted step an ascent step, so the recorded objective stays
    monotone.
    """
    n, m = u.shape[-1], v.shape[-1]

    def plan(al, be):
        z = (al[..., :, None] + be[..., None, :] - C) / r
        if logP is not None:
            z = z + logP
        # overflowing trial steps come out as inf and fail the ascent test
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            return np.exp(z)

    T = plan(alpha, beta)
    err = np.inf
    steps = 0
    for steps in range(1, max_steps + 1):
        gu, gv = u - T.sum(-1), v - T.sum(-2)
        err = max(np.abs(gu).max(), np.abs(gv).max())
        if err < tol:
            break
        H = np.zeros(T.shape[:-2] + (n + m, n + m))
        H[..., :n, :n] = _diag(T.sum(-1))
        H[..., n:, n:] = _diag(T.sum(-2))
        H[..., :n, n:] = T
        H[..., n:, :n] = np.swapaxes(T, -1, -2)
        H += 1e-12 * np.eye(n + m)
        step = r * np.linalg.solve(H, np.concatenate([gu, gv], axis=-1)[..., None])[..., 0]
        base = _dual(alpha, beta, T, u, v, r)
        t = np.ones(base.shape)
        for _ in range(30):
            na = alpha + t[..., None] * step[..., :n]
            nb = beta + t[..., None] * step[..., n:]
            Tn = plan(na, nb)
            ok = _dual(na, nb, Tn, u, v, r) >= base - 1e-15 * np.abs(base)
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        alpha, beta, T = na, nb, Tn
        if history is not None:
            history.append(-float(_dual(alpha, beta, T, u, v, r).sum()))
    err = max(np.abs(u - T.sum(-1)).max(), np.abs(v - T.sum(-2)).max())
    return T, steps, err


def _diag(x):
    out = np.zeros(x.shape + x.shape[-1:])
    idx = np.arange(x.shape[-1])
    out[..., idx, idx] = x
    return out


SWEEPS_BEFORE_NEWTON = 50
NEWTON_MARGIN = 1e-3


def _sinkhorn(C, u, v, reg, prior, max_iter, tol, record):
    """Stabilised Sinkhorn with reg annealing and a Newton finish.

    Dual potentials ``alpha, beta`` (cost units) are carried through a
    geometric schedule of regularisations that ends at ``reg``.  Within a stage
    the kernel ``exp((alpha + beta - C) / r)`` is rebuilt from the potentials,
    so scaling vectors stay near one.  Below ``LOG_DOMAIN_BELOW`` the scalings
    are absorbed into the potentials after every sweep, which keeps all
    arithmetic in the log domain.  When the final stage has not met ``tol``
    after a few dozen sweeps (slow mixing between nearly decoupled blocks),
    Newton steps on the dual finish the job.
    """
    logP = None
    if prior is not None:
        with np.errstate(divide="ignore"):
            logP = np.log(prior)
    log_domain = reg < LOG_DOMAIN_BELOW
    alpha = np.zeros(u.shape)
    beta = np.zeros(v.shape)
    history = [] if record else None
    err = np.inf
    it = 0
    stages = _anneal_schedule(reg)
    for r in stages:
        final = r == stages[-1]
        limit, stage_tol = (min(max_iter, SWEEPS_BEFORE_NEWTON), tol) if final else (100, 1e-3)

        def kernel():
            z = (alpha[..., :, None] + beta[..., None, :] - C) / r
            if logP is not None:
                z = z + logP
            with np.errstate(under="ignore"):
                return np.exp(z)

        K = kernel()
        a = np.ones(u.shape)
        b = np.ones(v.shape)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            for it in range(1, limit + 1):
                a = u / (K @ b[..., None])[..., 0]
                b = v / (a[..., None, :] @ K)[..., 0, :]
                Kb = (K @ b[..., None])[..., 0]
                err = np.abs(a * Kb - u).max()
                if final and record:
                    dual = ((u * (alpha + r * np.log(a))).sum()
                            + (v * (beta + r * np.log(b))).sum() - r * (a * Kb).sum())
                    history.append(-dual)
                if err < stage_tol:
                    break
                if log_domain or not (np.abs(np.log(a)).max() < 50 and np.abs(np.log(b)).max() < 50):
                    alpha, beta = alpha + r * np.log(a), beta + r * np.log(b)
                    K = kernel()
                    a = np.ones(u.shape)
                    b = np.ones(v.shape)
        if final and err < tol:
            T = a[..., :, None] * K * b[..., None, :]
            break
        alpha, beta = alpha + r * np.log(a), beta + r * np.log(b)
        if final:
            # aim well below tol: the closing pass moves column error into the rows
            T, steps, err = _newton(C, logP, u, v, r, alpha, beta, NEWTON_MARGIN * tol,
                                    max(max_iter - it, 1), history)
            it += steps
            # one closing scaling pass: columns exact, so the total mass is 1
            T = T * (u / T.sum(-1))[..., :, None]
            T = T * (v / T.sum(-2))[..., None, :]
            err = np.abs(T.sum(-1) - u).max()
    return T, it, err, history or []


def _solve(C, u, v, reg, max_iter, tol, prior=None, record=False):
    T, it, err, history = _sinkhorn(C, u, v, reg, prior, max_iter, tol, record)
    if not np.isfinite(err) or err >= tol:
        raise NonConvergence(
            f"marginal violation {err:.3g} > tol {tol:g} after {it} iterations "
            f"(reg={reg:g})")
    return T, it, history


def _check_marginals(u, v, n, m):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[-1] != n or v.shape[-1] != m:
        raise DimensionMismatch(f"marginals {u.shape}, {v.shape} vs cost {n}x{m}")
    if (u <= 0).any() or (v <= 0).any():
        raise ValueError("marginals must be strictly positive")
    if not (np.allclose(u.sum(axis=-1), 1.0) and np.allclose(v.sum(axis=-1), 1.0)):
        raise ValueError("marginals must each sum to 1")
    return u, v


def sinkhorn(C, u=None, v=None, cfg: SinkhornConfig = SinkhornConfig(), prior=None,
             record: bool = True) -> TransportPlan:
    """Entropic OT plan for cost ``C`` with marginals ``u`` and ``v``.

    Minimises ``<T, C> - reg * H(T)``; with ``prior`` the entropy is taken
    relative to that reference measure instead (``KL(T | prior)``).  Scalings are
    absorbed into log-domain potentials after every sweep when ``cfg.reg`` is
    below 0.01.

    Raises :class:`NonConvergence` when the row marginals are still off by more
    than ``cfg.marginal_tol`` after ``cfg.max_iter`` sweeps.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise DimensionMismatch(f"cost must be a matrix, got shape {C.shape}")
    if not np.isfinite(C).all():
        raise ValueError("cost matrix has non-finite entries")
    n, m = C.shape
    u = uniform(n) if u is None else u
    v = uniform(m) if v is None else v
    u, v = _check_marginals(u, v, n, m)
    if prior is not None and np.shape(prior) != C.shape:
        raise DimensionMismatch("prior must match the cost shape")
    T, it, history = _solve(C, u, v, cfg.reg, cfg.max_iter, cfg.marginal_tol,
                            prior=prior, record=record)
    return TransportPlan(T, u, v, it, tuple(history))


def wasserstein_distance(T, C) -> float:
    """Transport cost ``sum_ij T_ij C_ij`` of a given plan."""
    T = getattr(T, "values", T)
    T, C = np.asarray(T, dtype=np.float64), np.asarray(C, dtype=np.float64)
    if T.shape != C.shape:
        raise DimensionMismatch(f"plan {T.shape} vs cost {C.shape}")
    return float((T * C).sum())


def gw_energy(Ca, Cb, T) -> np.ndarray:
    """GW objective ``sum_{ijkl} T_ij T_kl |Ca_ik - Cb_jl|`` of a plan."""
    T = np.asarray(getattr(T, "values", T), dtype=np.float64)
    return (T * gw_pseudo_cost(Ca, Cb, T)).sum(axis=(-1, -2))


# ---------------------------------------------------------------------------
# GW / GOT outer loops

EXHAUSTIVE_STARTS_UP_TO = 6
RANDOM_STARTS = 32


def gw_difference(Ca, Cb) -> np.ndarray:
    """Signed edge-cost gaps ``D[..., i, j, k, l] = Ca[i, k] - Cb[j, l]``."""
    Ca, Cb = np.asarray(Ca, dtype=np.float64), np.asarray(Cb, dtype=np.float64)
    return np.subtract(Ca[..., :, None, :, None], Cb[..., None, :, None, :])


def _contract(L, T):
    # sum_kl L[..., i, j, k, l] T[..., k, l] via one batched matmul
    n, m = T.shape[-2:]
    Lf = L.reshape(L.shape[:-4] + (n * m, n * m))
    return (Lf @ T.reshape(T.shape[:-2] + (n * m, 1))).reshape(T.shape)


def _got_value(T, Cw, L, phi):
    gw = (T * _contract(L, T)).sum(axis=(-1, -2))
    if Cw is None:
        return gw
    return phi * (T * Cw).sum(axis=(-1, -2)) + (1.0 - phi) * gw


def _seed_cost(Ca, Cb, L, u, v):
    n, m = Ca.shape[-1], Cb.shape[-1]
    if n == m and np.allclose(u, 1.0 / n) and np.allclose(v, 1.0 / m):
        return row_signature_cost(Ca, Cb)
    return np.einsum("...ijkl,...k,...l->...ij", L, u, v)


def _got_iterate(Cw, L, u, v, phi, cfg: SinkhornConfig, T, trace=None):
    """Proximal rounds ``T <- sinkhorn(phi Cw + (1-phi) M(T), prior=T)``."""
    if trace is not None:
        trace.append(_got_value(T, Cw, L, phi))
    for _ in range(cfg.outer_iter):
        M = _contract(L, T)
        cost = (1.0 - phi) * M if Cw is None else phi * Cw + (1.0 - phi) * M
        T, _, _ = _solve(cost, u, v, cfg.reg, cfg.max_iter, cfg.marginal_tol, prior=T)
        if trace is not None:
            trace.append(_got_value(T, Cw, L, phi))
    return T


def _seeded_plan(Cw, Ca, Cb, L, u, v, phi, cfg):
    seed = (1.0 - phi) * _seed_cost(Ca, Cb, L, u, v)
    if Cw is not None:
        seed = seed + phi * Cw
    T, _, _ = _solve(seed, u, v, cfg.reg, cfg.max_iter, cfg.marginal_tol)
    return T


def _start_plans(u, v, cfg):
    """Extra starting plans for the nonconvex GW term.

    Square uniform problems with at most ``EXHAUSTIVE_STARTS_UP_TO`` nodes get
    one softened permutation plan per permutation; otherwise plans of random
    costs drawn from a fixed seed are used, which keeps the result a pure
    function of the inputs.
    """
    n, m = u.shape[-1], v.shape[-1]
    if n == m and n <= EXHAUSTIVE_STARTS_UP_TO and np.allclose(u, 1.0 / n) \
            and np.allclose(v, 1.0 / m):
        perms = np.array(list(itertools.permutations(range(n))))
        P = np.zeros((len(perms), n, n))
        P[np.arange(len(perms))[:, None], np.arange(n), perms] = 1.0 / n
        return 0.5 * P + 0.5 * np.outer(u, v)
    rng = np.random.default_rng(0)
    costs = rng.random((RANDOM_STARTS, n, m))
    T, _, _ = _solve(costs, np.broadcast_to(u, (RANDOM_STARTS, n)),
                     np.broadcast_to(v, (RANDOM_STARTS, m)), 0.1, cfg.max_iter, cfg.marginal_tol)
    return T


def _transport_lp(cost, u, v):
    n, m = cost.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=A[:-1], b_eq=np.concatenate([u, v])[:-1],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return np.clip(res.x, 0.0, None).reshape(n, m)


def _polish(Cw, L, u, v, phi, T, value, rounds=3):
    """Exact vertex steps on the linearised objective, kept only if they help.

    Entropic plans keep a little mass on every cell, so near-duplicate nodes
    leave a residual distance of order ``reg``; solving the linearised
    transport problem exactly removes it whenever the optimum is a vertex.
    """
    for _ in range(rounds):
        M = _contract(L, T)
        cost = (1.0 - phi) * M if Cw is None else phi * Cw + (1.0 - phi) * M
        V = _transport_lp(cost, u, v)
        if V is None:
            break
        cand = float(_got_value(V, Cw, L, phi))
        if not cand < value - 1e-15:
            break
        T, value = V, cand
    return T, value


def _multistart(Cw, Ca, Cb, u, v, phi, cfg, trace):
    L = np.abs(gw_difference(Ca, Cb))
    seeded = _seeded_plan(Cw, Ca, Cb, L, u, v, phi, cfg)
    seeded_trace = [] if trace is not None else None
    best = _got_iterate(Cw, L, u, v, phi, cfg, seeded, seeded_trace)
    best_value = float(_got_value(best, Cw, L, phi))
    if phi < 1.0:
        starts = _start_plans(u, v, cfg)
        k = len(starts)
        ub, vb = np.broadcast_to(u, (k,) + u.shape), np.broadcast_to(v, (k,) + v.shape)
        Lb = np.broadcast_to(L, (k,) + L.shape)
        Cwb = None if Cw is None else np.broadcast_to(Cw, (k,) + Cw.shape)
        plans = _got_iterate(Cwb, Lb, ub, vb, phi, cfg, starts)
        values = _got_value(plans, Cwb, Lb, phi)
        j = int(np.argmin(values))
        if values[j] < best_value - 1e-12:
            best, best_value = plans[j], float(values[j])
            seeded_trace = None
            if trace is not None:
                _got_iterate(Cw, L, u, v, phi, cfg, starts[j], trace)
    if seeded_trace is not None:
        trace.extend(float(x) for x in seeded_trace)
    best, polished = _polish(Cw, L, u, v, phi, best, best_value)
    if trace is not None and polished < best_value:
        trace.append(polished)
    return best, max(polished, 0.0)


def gromov_wasserstein(Ca, Cb, u=None, v=None, cfg: SinkhornConfig = SinkhornConfig(),
                       trace: list | None = None) -> tuple[TransportPlan, float]:
    """Entropic GW plan and distance between two intra-set cost matrices.

    The first start is seeded from :func:`row_signature_cost`; further starts
    (see :func:`_start_plans`) guard against the local minima of the quadratic
    objective, and the lowest final objective wins.  If ``trace`` is a list,
    the GW objective of the winning run after every outer round is appended.
    """
    Ca, Cb = np.asarray(Ca, dtype=np.float64), np.asarray(Cb, dtype=np.float64)
    if Ca.ndim != 2 or Ca.shape[0] != Ca.shape[1] or Cb.ndim != 2 or Cb.shape[0] != Cb.shape[1]:
        raise DimensionMismatch(f"GW needs square cost matrices, got {Ca.shape}, {Cb.shape}")
    n, m = len(Ca), len(Cb)
    u = uniform(n) if u is None else u
    v = uniform(m) if v is None else v
    u, v = _check_marginals(u, v, n, m)
    T, dist = _multistart(None, Ca, Cb, u, v, 0.0, cfg, trace)
    return TransportPlan(T, u, v, cfg.outer_iter), dist


def got_distance(Va, Vb, phi: float = 0.5, cfg: SinkhornConfig = SinkhornConfig(),
                 trace: list | None = None) -> tuple[TransportPlan, float]:
    """GOT distance ``phi * <T, Cw> + (1 - phi) * <T, M(T)>`` between two node sets.

    ``Va`` and ``Vb`` are ``(K+1, d)`` node matrices (or objects with a
    ``nodes`` attribute).  Marginals are uniform.  Uses the same multi-start
    search as :func:`gromov_wasserstein` whenever ``phi < 1``.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    A, B = _values(Va), _values(Vb)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"node sets must be (n, d) with equal d: {A.shape}, {B.shape}")
    Cw, Ca, Cb = cost_matrix(A, B), cost_matrix(A, A), cost_matrix(B, B)
    u, v = uniform(len(A)), uniform(len(B))
    T, dist = _multistart(Cw, Ca, Cb, u, v, phi, cfg, trace)
    return TransportPlan(T, u, v, cfg.outer_iter), dist


def got_terms(T, Va, Vb) -> tuple[float, float]:
    """Wasserstein and Gromov-Wasserstein parts of a GOT plan."""
    A, B = _values(Va), _values(Vb)
    T = np.asarray(getattr(T, "values", T), dtype=np.float64)
    wd = wasserstein_distance(T, cost_matrix(A, B))
    gw = float(gw_energy(cost_matrix(A, A), cost_matrix(B, B), T))
    return wd, gw


def got_plans_batch(Cw: np.ndarray, Ca: np.ndarray, Cb: np.ndarray, phi: float,
                    cfg: SinkhornConfig = SinkhornConfig(), D: np.ndarray | None = None) -> np.ndarray:
    """Shared GOT plans for a stack of pairs, single seeded start each.

    ``Cw``, ``Ca`` and ``Cb`` are ``(P, n, n)`` cost stacks; pass ``D`` to reuse
    a precomputed :func:`gw_difference`.  Used inside training, where the
    multi-start search of :func:`got_distance` is too costly.
    """
    Cw, Ca, Cb = (np.asarray(x, dtype=np.float64) for x in (Cw, Ca, Cb))
    if Cw.ndim != 3 or Ca.shape != Cw.shape or Cb.shape != Cw.shape:
        raise DimensionMismatch(f"expected matching (P, n, n) stacks, got {Cw.shape}, "
                                f"{Ca.shape}, {Cb.shape}")
    P, n, _ = Cw.shape
    if P == 0:
        return np.zeros_like(Cw)
    L = np.abs(gw_difference(Ca, Cb) if D is None else D)
    u = np.full((P, n), 1.0 / n)
    T = _seeded_plan(Cw, Ca, Cb, L, u, u, phi, cfg)
    return _got_iterate(Cw, L, u, u, phi, cfg, T)


# ---------------------------------------------------------------------------
# exact oracle


def exact_ot_oracle(C, u=None, v=None) -> tuple[np.ndarray, float]:
    """Exact OT by enumerating basic feasible solutions (n, m <= 4).

    Every vertex of the transport polytope is supported on at most
    ``n + m - 1`` cells, so solving the marginal equations on each such cell
    subset and keeping the nonnegative solutions visits all vertices.  Ties are
    broken towards the lexicographically smallest plan in row-major order.
    """
    C = np.asarray(C, dtype=np.float64)
    n, m = C.shape
    if n > 4 or m > 4:
        raise TooLarge(f"exact oracle supports n, m <= 4, got {n}x{m}")
    u = uniform(n) if u is None else np.asarray(u, dtype=np.float64)
    v = uniform(m) if v is None else np.asarray(v, dtype=np.float64)
    if u.shape != (n,) or v.shape != (m,):
        raise DimensionMismatch("marginals do not match the cost shape")
    # marginal constraints on the flattened plan
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    rhs = np.concatenate([u, v])
    k = n + m - 1
    best_cost, best_plan = np.inf, None
    for cells in itertools.combinations(range(n * m), k):
        sub = A[:, cells]
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ x - rhs).max() > 1e-10 or (x < -1e-12).any():
            continue
        plan = np.zeros(n * m)
        plan[list(cells)] = np.clip(x, 0.0, None)
        cost = float(plan @ C.ravel())
        if cost < best_cost - 1e-12:
            best_cost, best_plan = cost, plan
        elif abs(cost - best_cost) <= 1e-12 and tuple(np.round(plan, 12)) < tuple(
                np.round(best_plan, 12)):
            best_plan = plan
    return best_plan.reshape(n, m), best_cost
