"""IRS phase optimizers: per-user alignment, exhaustive search, and SCA with
sequential rank-one constraint relaxation (SROCR) for NOMA and OMA.

All rate bookkeeping is done in noise-normalized units: gains are
``|combined|^2 / sigma^2`` and the lifted Gram matrices are scaled likewise,
so the noise power becomes 1 inside the conic subproblems.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelBatch, ChannelState
from .irs import (PhaseConfig, TWO_PI, build_cascade, codebook, combined_channel,
                  quantize, random_phases, wrap_phase)
from .power import rates_batch
from .sdp import Block, ConicProblem, Constraint, Objective, max_eigpair, rank1_extract, solve

__all__ = [
    "align_tdma",
    "align_tdma_batch",
    "exhaustive",
    "sum_rate_objective",
    "SurrogateCoeffs",
    "taylor_surrogate",
    "SrocrParams",
    "SrocrState",
    "SrocrResult",
    "Subproblem",
    "build_subproblem",
    "initial_state",
    "srocr_noma",
    "srocr_oma",
    "EXHAUSTIVE_CAP",
]

log = logging.getLogger(__name__)

LOG2E = 1.0 / np.log(2.0)
EXHAUSTIVE_CAP = 2 ** 24
_TINY_SNR = 1e-12


def _as_batch(states) -> ChannelBatch:
    if isinstance(states, ChannelBatch):
        return states
    if isinstance(states, ChannelState):
        states = [states]
    return ChannelBatch.from_states(states)


def align_tdma(state: ChannelState, user: int) -> PhaseConfig:
    """Continuous phases co-phasing every reflected path with the direct link of ``user``."""
    if user not in (1, 2):
        raise ValueError("user must be 1 or 2")
    k = user - 1
    h = state.h[k]
    phi0 = np.angle(h) if h != 0 else 0.0
    theta = phi0 - np.angle(np.conj(state.r[k])) - np.angle(state.g)
    return PhaseConfig(theta)


def align_tdma_batch(batch: ChannelBatch) -> np.ndarray:
    """Aligned phases for both users of every state, shape ``(F, 2, N)``."""
    phi0 = np.where(batch.h != 0, np.angle(batch.h), 0.0)
    theta = phi0[..., None] - np.angle(np.conj(batch.r)) - np.angle(batch.g)[:, None, :]
    return wrap_phase(theta)


def sum_rate_objective(states, powers, scheme: str, noise_power: float, first=None, alpha1=None):
    """Callable ``theta -> mean sum rate`` over ``states`` at fixed resources.

    ``theta`` may be ``(N,)`` or a stack ``(M, N)``; stacks return ``(M,)``.
    ``powers`` is ``(2,)`` or per state ``(S, 2)``; ``first`` is the user
    decoded first (NOMA) and ``alpha1`` user 1's resource share (OMA).
    """
    b = _as_batch(states)
    S = len(b)
    pw = np.broadcast_to(np.asarray(powers, dtype=float), (S, 2))
    fi = np.broadcast_to(np.asarray(1 if first is None else first), (S,))
    al = np.broadcast_to(np.asarray(0.5 if alpha1 is None else alpha1, dtype=float), (S,))

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        th = theta[None] if single else theta
        # (M, S, 2) combined channels
        c = combined_channel(b.h[None], b.g[None], b.r[None], th[:, None, :])
        gam = np.abs(c) ** 2 / noise_power
        r1, r2 = rates_batch(gam[..., 0], gam[..., 1], pw[None, :, 0], pw[None, :, 1], scheme,
                             al[None], fi[None])
        val = np.mean(r1 + r2, axis=-1)
        return float(val[0]) if single else val

    return f


def exhaustive(states, powers, scheme: str, levels: int, noise_power: float, first=None,
               alpha1=None, chunk: int = 4096) -> tuple[PhaseConfig, float]:
    """Globally optimal codebook phases by full enumeration.

    Configurations are scanned in lexicographic order of codebook indices,
    so among exact ties (to 1e-12 relative) the lexicographically smallest
    phase vector wins.
    """
    b = _as_batch(states)
    n = b.num_elements
    count = (2 ** levels) ** n
    if count > EXHAUSTIVE_CAP:
        raise ValueError(f"exhaustive search over {count} configurations exceeds cap {EXHAUSTIVE_CAP}")
    cb = codebook(levels)
    obj = sum_rate_objective(b, powers, scheme, noise_power, first, alpha1)
    if n == 0:
        return PhaseConfig(np.zeros(0), levels), obj(np.zeros(0))
    best_val, best_idx = -np.inf, None
    it = itertools.product(range(cb.size), repeat=n)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            break
        idx = np.array(block)
        vals = obj(cb[idx])
        j = int(np.argmax(vals))
        # strict improvement keeps the earliest configuration on ties
        if vals[j] > best_val * (1 + 1e-12) + 1e-300 or best_idx is None:
            thr = vals[j] - 1e-12 * max(1.0, abs(vals[j]))
            j = int(np.argmax(vals >= thr))
            if best_idx is None or vals[j] > best_val + 1e-12 * max(1.0, abs(best_val)):
                best_val, best_idx = float(vals[j]), idx[j]
    return PhaseConfig(cb[best_idx], levels), best_val


@dataclass(frozen=True)
class SurrogateCoeffs:
    """Linear lower bounds of both users' rates around a local point.

    ``R1_low(X11, Y12) = c1 + dx1 (X11 - x11) + dy1 (Y12 - y12)`` and
    ``R2_low(X22) = c2 + dx2 (X22 - x22)``.
    """

    c1: float
    dx1: float
    dy1: float
    c2: float
    dx2: float
    x11: float
    y12: float
    x22: float
    noise_power: float

    def r1_low(self, x11, y12):
        return self.c1 + self.dx1 * (np.asarray(x11) - self.x11) + self.dy1 * (np.asarray(y12) - self.y12)

    def r2_low(self, x22):
        return self.c2 + self.dx2 * (np.asarray(x22) - self.x22)


def _hyperbolic_taylor(x, y):
    """Value and gradient of ``log2(1 + 1/(x y))`` (jointly convex for x, y > 0)."""
    val = np.log1p(1.0 / (x * y)) * LOG2E
    dx = -LOG2E / (x + x * x * y)
    dy = -LOG2E / (y + y * y * x)
    return val, dx, dy


def taylor_surrogate(x11: float, y12: float, x22: float, noise_power: float) -> SurrogateCoeffs:
    """First-order expansion of ``log2(1 + 1/(X11 Y12))`` and ``log2(1 + 1/(X22 sigma^2))``.

    Both functions are convex, so the tangent planes are global lower bounds.
    """
    if min(x11, y12, x22) <= 0 or noise_power <= 0:
        raise ValueError("local point and noise power must be positive")
    c1, dx1, dy1 = _hyperbolic_taylor(x11, y12)
    c2, dx2, _ = _hyperbolic_taylor(x22, noise_power)
    return SurrogateCoeffs(float(c1), float(dx1), float(dy1), float(c2), float(dx2),
                           x11, y12, x22, noise_power)


@dataclass(frozen=True)
class SrocrParams:
    eps1: float = 0.999
    eps2: float = 1e-3
    delta0: float = 0.1
    max_iter: int = 30
    solver_tol: float = 1e-7


@dataclass
class SrocrState:
    """Iterate of the rank-one relaxation loop.

    ``local`` maps term keys to expansion points (X values in gain units,
    Y values as ``gamma p + 1``).
    """

    U: np.ndarray
    kappa: float
    step: float
    local: dict
    iteration: int = 0

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.step <= 0:
            raise ValueError("step must be positive")


@dataclass
class Subproblem:
    problem: ConicProblem
    x_terms: list  # (key, block index, scale q)
    y_terms: list  # (key, scalar index, scale)
    constant: float
    floors: bool


@dataclass
class _Term:
    """One user's rate in one state, linearized around a local point."""

    state: int
    user: int  # 1 or 2
    weight: float  # alpha for OMA, 1 for NOMA
    power: float
    interferer: int | None = None  # NOMA first-decoded user: the other user
    interferer_power: float = 0.0


def _grams(b: ChannelBatch, noise_power: float):
    """Noise-normalized Gram matrices ``(S, 2, N+1, N+1)``."""
    S, n = len(b), b.num_elements
    z = np.empty((S, 2, n + 1), dtype=complex)
    z[:, :, :n] = np.conj(b.r) * b.g[:, None, :]
    z[:, :, n] = b.h
    return np.conj(z)[..., :, None] * z[..., None, :] / noise_power


def _terms(scheme, S, pw, fi, al):
    terms = []
    for s in range(S):
        if scheme == "NOMA":
            f = int(fi[s])
            o = 3 - f
            if pw[s, f - 1] > 0:
                terms.append(_Term(s, f, 1.0, pw[s, f - 1], o, pw[s, o - 1]))
            if pw[s, o - 1] > 0:
                terms.append(_Term(s, o, 1.0, pw[s, o - 1]))
        else:
            for k, a in ((1, al[s]), (2, 1.0 - al[s])):
                if a > 0 and pw[s, k - 1] > 0:
                    terms.append(_Term(s, k, a, pw[s, k - 1]))
    return terms


def _local_from_gains(terms, gam):
    """Expansion points that make every slack tight at the given gains."""
    local = {}
    for t in terms:
        snr = gam[t.state, t.user - 1] * t.power
        local[("x", t.state, t.user)] = 1.0 / max(snr, _TINY_SNR)
        if t.interferer is not None and t.interferer_power > 0:
            local[("y", t.state)] = gam[t.state, t.user - 1] * t.interferer_power + 1.0
    return local


def _prepare(scheme, states, powers, first=None, alpha1=None):
    b = _as_batch(states)
    S = len(b)
    pw = np.broadcast_to(np.asarray(powers, dtype=float), (S, 2)).copy()
    fi = np.broadcast_to(np.asarray(1 if first is None else first), (S,)).copy()
    al = np.broadcast_to(np.asarray(0.5 if alpha1 is None else alpha1, dtype=float), (S,)).copy()
    return b, pw, fi, al, _terms(scheme, S, pw, fi, al)


def initial_state(states, powers, scheme: str, noise_power: float, phases: PhaseConfig, first=None,
                  alpha1=None, step: float = 0.1) -> SrocrState:
    """SROCR state at ``kappa = 0`` whose expansion points are tight at ``phases``."""
    b, pw, fi, al, terms = _prepare(_scheme_kind(scheme), states, powers, first, alpha1)
    gam = np.abs(combined_channel(b.h, b.g, b.r, phases.theta)) ** 2 / noise_power
    u = phases.u_bar
    return SrocrState(np.outer(u, np.conj(u)), 0.0, step, _local_from_gains(terms, gam))


def _scheme_kind(scheme):
    if scheme == "NOMA":
        return "NOMA"
    if scheme in ("TDMA", "FDMA", "OMA"):
        return "OMA"
    raise ValueError(f"unknown scheme {scheme!r}")


def build_subproblem(state: SrocrState, states, powers, scheme: str, noise_power: float, first=None,
                     alpha1=None, rate_floor: float = 0.0, with_floors: bool = True) -> Subproblem:
    """Conic subproblem for one SCA/SROCR step around ``state``.

    ``first`` is the NOMA first-decoded user and ``alpha1`` the OMA share
    of user 1 (scalars or per state).  See :func:`_build` for the layout.
    """
    b, _, _, _, terms = _prepare(_scheme_kind(scheme), states, powers, first, alpha1)
    return _build(state, _grams(b, noise_power), terms, rate_floor, with_floors)


def _build(state: SrocrState, grams: np.ndarray, terms: list, rate_floor: float,
           with_floors: bool = True) -> Subproblem:
    """Conic subproblem for one SCA/SROCR step.

    Variables: the lifted phase matrix ``U`` (Hermitian, unit diagonal), a
    2x2 block ``[[x, 1], [1, t]]`` per rate term encoding ``x t >= 1`` with
    ``t <= (p / q) Tr(U G)``, and a scalar per interference term.  ``x`` and
    ``y`` are scaled by their local values so the solver sees O(1) numbers.
    The objective is the mean over states of the linearized rates.
    """
    S = grams.shape[0]
    n1 = grams.shape[-1]
    blocks = [Block(n1, hermitian=True)]
    cons = [Constraint({0: np.diag(np.eye(n1)[i]).astype(complex)}, {}, "==", 1.0) for i in range(n1)]
    obj_blocks = {}
    obj_scalars = {}
    constant = 0.0
    x_terms, y_terms = [], []
    user_rate = {1: ({}, {}, 0.0), 2: ({}, {}, 0.0)}
    e12 = np.array([[0.0, 0.5], [0.5, 0.0]])
    e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
    e22 = np.array([[0.0, 0.0], [0.0, 1.0]])
    y_index = {}
    nscal = 0
    for t in terms:
        xl = state.local[("x", t.state, t.user)]
        has_y = t.interferer is not None and t.interferer_power > 0
        yl = state.local[("y", t.state)] if has_y else 1.0
        a = t.weight
        # rate = a * log2(1 + 1/(a x y)); tangent plane in (x, y)
        val, dx, dy = _hyperbolic_taylor(a * xl, yl)
        val, dx, dy = a * val, a * a * dx, a * dy
        q = 1.0 / xl  # local SNR
        j = len(blocks)
        blocks.append(Block(2))
        cons.append(Constraint({j: e12}, {}, "==", 1.0))
        cons.append(Constraint({j: e22, 0: -(t.power / q) * grams[t.state, t.user - 1]}, {}, "<=", 0.0))
        x_terms.append((("x", t.state, t.user), j, q))
        coef_x = dx / q / S
        coef_y = 0.0
        c_term = (val - dx * xl) / S
        if has_y:
            if ("y", t.state) not in y_index:
                y_index[("y", t.state)] = nscal
                # y * yl >= gamma_interf p_other + 1
                cons.append(Constraint({0: -t.interferer_power * grams[t.state, t.user - 1]},
                                       {nscal: yl}, ">=", 1.0))
                y_terms.append((("y", t.state), nscal, yl))
                nscal += 1
            coef_y = dy * yl / S
            c_term -= dy * yl / S
        constant += c_term
        obj_blocks[j] = obj_blocks.get(j, 0.0) + coef_x * e11
        if has_y:
            sidx = y_index[("y", t.state)]
            obj_scalars[sidx] = obj_scalars.get(sidx, 0.0) + coef_y
        ub, us, uc = user_rate[t.user]
        ub[j] = ub.get(j, 0.0) + coef_x * e11
        if has_y:
            sidx = y_index[("y", t.state)]
            us[sidx] = us.get(sidx, 0.0) + coef_y
        user_rate[t.user] = (ub, us, uc + c_term)
    if with_floors and rate_floor > 0:
        for k in (1, 2):
            ub, us, uc = user_rate[k]
            if ub:
                cons.append(Constraint(dict(ub), dict(us), ">=", rate_floor - uc))
    if state.kappa > 0:
        _, e = max_eigpair(state.U)
        cut = np.outer(e, np.conj(e)) - state.kappa * np.eye(n1)
        cons.append(Constraint({0: cut}, {}, ">=", 0.0))
    prob = ConicProblem(blocks, nscal, Objective(obj_blocks, obj_scalars, constant), cons)
    return Subproblem(prob, x_terms, y_terms, constant, with_floors)


@dataclass
class SrocrResult:
    phases: PhaseConfig
    objective: float
    initial_objective: float
    kappa_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    floors_dropped: bool = False
    status: str = "ok"
    U: np.ndarray | None = None


def _srocr(scheme, states, powers, noise_power, levels, rate_floor=0.0, first=None, alpha1=None,
           params: SrocrParams = SrocrParams(), init: PhaseConfig | None = None, rng=None) -> SrocrResult:
    b, pw, fi, al, terms = _prepare(scheme, states, powers, first, alpha1)
    n = b.num_elements
    obj = sum_rate_objective(b, pw, scheme, noise_power, fi, al)
    if init is None:
        rng = np.random.default_rng(0) if rng is None else rng
        init = random_phases(rng, n, levels)
    elif levels is not None and init.levels != levels:
        init = quantize(init, levels)
    best_phase, best_val = init, obj(init.theta)
    result = SrocrResult(best_phase, best_val, best_val)
    if n == 0 or not terms:
        result.status = "trivial"
        return result

    grams = _grams(b, noise_power)
    gam0 = np.abs(combined_channel(b.h, b.g, b.r, init.theta)) ** 2 / noise_power
    u0 = init.u_bar
    st = SrocrState(np.outer(u0, np.conj(u0)), 0.0, params.delta0, _local_from_gains(terms, gam0))

    def run(state, floors):
        sub = _build(state, grams, terms, rate_floor, floors)
        return sub, solve(sub.problem, tol=params.solver_tol)

    def consider(U):
        nonlocal best_phase, best_val
        u, _ = rank1_extract(U)
        cont = PhaseConfig.from_vector(u)
        cand = quantize(cont, levels) if levels is not None else cont
        v = obj(cand.theta)
        if v > best_val:
            best_phase, best_val = cand, v
        return obj(cont.theta)

    def update_local(sub, sol, state):
        local = dict(state.local)
        for key, j, q in sub.x_terms:
            local[key] = max(float(np.real(sol.blocks[j][0, 0])) / q, 1e-300)
        for key, i, scale in sub.y_terms:
            local[key] = max(float(sol.scalars[i]) * scale, 1.0)
        return local

    floors = rate_floor > 0
    sub, sol = run(st, floors)
    if not sol.optimal and floors:
        floors = False
        result.floors_dropped = True
        sub, sol = run(st, floors)
    if not sol.optimal:
        result.status = f"initial-{sol.status}"
        return result
    U = sol.blocks[0]
    st.U, st.local = U, update_local(sub, sol, st)
    prev = consider(U)
    result.objective_trace.append(prev)
    lam, _ = max_eigpair(U)
    st.kappa = min(1.0, lam / np.real(np.trace(U)) + st.step)
    accepted_kappa = 0.0
    for it in range(1, params.max_iter + 1):
        st.iteration = it
        sub, sol = run(st, floors)
        if sol.optimal:
            U = sol.blocks[0]
            st.U, st.local = U, update_local(sub, sol, st)
            accepted_kappa = st.kappa
            result.kappa_trace.append(accepted_kappa)
            cur = consider(U)
            result.objective_trace.append(cur)
            converged = abs(cur - prev) <= params.eps2 * max(abs(prev), 1e-12)
            prev = cur
            if accepted_kappa >= params.eps1 and converged:
                break
        else:
            st.step /= 2.0
            if st.step < 1e-8:
                break
        lam, _ = max_eigpair(st.U)
        st.kappa = min(1.0, lam / np.real(np.trace(st.U)) + st.step)
    result.iterations = st.iteration
    result.phases, result.objective = best_phase, best_val
    result.U = st.U
    return result


def srocr_noma(states, powers, noise_power: float, levels: int | None, first=1, rate_floor: float = 0.0,
               params: SrocrParams = SrocrParams(), init: PhaseConfig | None = None, rng=None) -> SrocrResult:
    """NOMA phase design over one or more states with fixed powers and decoding order.

    ``first`` is the user decoded first (scalar or per state).  The returned
    configuration is quantized to ``levels`` bits and never worse (in true
    mean sum rate) than ``init``.
    """
    return _srocr("NOMA", states, powers, noise_power, levels, rate_floor, first=first,
                  params=params, init=init, rng=rng)


def srocr_oma(states, powers, alpha1, noise_power: float, levels: int | None, rate_floor: float = 0.0,
              params: SrocrParams = SrocrParams(), init: PhaseConfig | None = None, rng=None) -> SrocrResult:
    """OMA (shared-configuration) phase design with fixed powers and resource split."""
    return _srocr("OMA", states, powers, noise_power, levels, rate_floor, alpha1=alpha1,
                  params=params, init=init, rng=rng)
