"""Per-state power/resource allocation and the dual (multiplier) iteration.

Gains ``gamma_k`` are combined-channel power over noise power (units 1/W), so
``gamma_k * p_k`` is the received SNR.  Every per-state solver works on
arrays of states at once; the scalar entry points wrap the batch versions.

Decoding order is a tuple: ``(1, 2)`` means user 1 is decoded first and
user 2 sees no interference after SIC.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "DualMultipliers",
    "PowerBudget",
    "StateAllocation",
    "AllocationTable",
    "DualResult",
    "state_rates",
    "rates_batch",
    "noma_lagrangian",
    "oma_lagrangian",
    "noma_state_opt",
    "oma_state_opt",
    "noma_batch_opt",
    "oma_batch_opt",
    "grid_oracle",
    "dual_solve",
    "max_min_rate",
]

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
ORDERS = ((1, 2), (2, 1))
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class DualMultipliers:
    lam: float
    delta: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if min(self.lam, self.delta, self.mu) < 0:
            raise ValueError("multipliers must be nonnegative")

    @property
    def weights(self) -> tuple[float, float]:
        return 1.0 + self.delta, 1.0 + self.mu


@dataclass(frozen=True)
class PowerBudget:
    avg_power: float
    peak_power: float
    min_rate: float = 0.0

    def __post_init__(self):
        if not 0 < self.avg_power <= self.peak_power:
            raise ValueError("need 0 < avg_power <= peak_power")
        if self.min_rate < 0:
            raise ValueError("min_rate must be >= 0")


@dataclass(frozen=True)
class StateAllocation:
    p1: float
    p2: float
    alpha1: float = 0.5
    order: tuple = (1, 2)
    sub_lagrangian_value: float = np.nan

    @property
    def total_power(self) -> float:
        return self.p1 + self.p2


def _log2p(x):
    return np.log1p(x) / LN2


def _oma_term(gamma, p, alpha):
    """``alpha * log2(1 + gamma p / alpha)`` with the ``alpha -> 0`` limit 0."""
    gamma, p, alpha = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gamma, p, alpha)))
    out = np.zeros(alpha.shape)
    pos = alpha > 0
    out[pos] = alpha[pos] * _log2p(gamma[pos] * p[pos] / alpha[pos])
    return out


def rates_batch(g1, g2, p1, p2, scheme: str, alpha1=None, first=None):
    """Vectorized per-state rates.

    ``first`` holds the user decoded first (1 or 2) for NOMA.
    """
    g1, g2, p1, p2 = (np.asarray(v, dtype=float) for v in (g1, g2, p1, p2))
    if scheme == "NOMA":
        first = np.ones(np.broadcast(g1, p1).shape, dtype=int) if first is None else np.asarray(first)
        # user decoded first sees the other user's signal as interference
        r1_first = _log2p(g1 * p1 / (g1 * p2 + 1.0))
        r2_first = _log2p(g2 * p2 / (g2 * p1 + 1.0))
        r1 = np.where(first == 1, r1_first, _log2p(g1 * p1))
        r2 = np.where(first == 1, _log2p(g2 * p2), r2_first)
        return r1, r2
    if scheme in ("TDMA", "FDMA", "OMA"):
        a1 = np.asarray(alpha1, dtype=float)
        return _oma_term(g1, p1, a1), _oma_term(g2, p2, 1.0 - a1)
    raise ValueError(f"unknown scheme {scheme!r}")


def state_rates(alloc: StateAllocation, g1: float, g2: float, scheme: str) -> tuple[float, float]:
    """Instantaneous rates (bits/s/Hz) of both users under ``alloc``."""
    r1, r2 = rates_batch(g1, g2, alloc.p1, alloc.p2, scheme, alloc.alpha1, alloc.order[0])
    return float(r1), float(r2)


def noma_lagrangian(g1, g2, p1, p2, w1, w2, lam, first=1):
    r1, r2 = rates_batch(g1, g2, p1, p2, "NOMA", first=first)
    return w1 * r1 + w2 * r2 - lam * (np.asarray(p1) + np.asarray(p2))


def oma_lagrangian(g1, g2, p1, p2, alpha1, w1, w2, lam):
    r1, r2 = rates_batch(g1, g2, p1, p2, "OMA", alpha1)
    return w1 * r1 + w2 * r2 - lam * (np.asarray(p1) + np.asarray(p2))


def _water_level(w, lam, g):
    """``w / (lam ln2) - 1/g`` with ``lam = 0 -> +inf`` and ``g = 0 -> -inf``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lvl = np.where(lam > 0, w / (np.maximum(lam, 1e-300) * LN2), np.inf)
        inv = np.where(g > 0, 1.0 / np.maximum(g, 1e-300), np.inf)
        out = lvl - inv
    return np.where(np.isnan(out), -np.inf, out)


def _select(values, p1, p2, valid):
    """Argmax over the last axis with ties -> lower total power, then lower p1, then first."""
    vals = np.where(valid, values, -np.inf)
    vmax = vals.max(axis=-1, keepdims=True)
    near = vals >= vmax - _TIE_RTOL * np.maximum(1.0, np.abs(vmax))
    tot = np.where(near, p1 + p2, np.inf)
    tmin = tot.min(axis=-1, keepdims=True)
    near &= tot <= tmin + _TIE_RTOL * np.maximum(1.0, np.abs(tmin))
    p1m = np.where(near, p1, np.inf)
    near &= p1m <= p1m.min(axis=-1, keepdims=True)
    return np.argmax(near, axis=-1)


def _noma_candidates(g1, g2, w1, w2, lam, P):
    """Candidate (p1, p2) pairs for order (1, 2); shapes ``(F, K)``."""
    f = g1.shape[0]
    wf1 = _water_level(w1, lam, g1)
    wf2 = _water_level(w2, lam, g2)
    zero = np.zeros(f)
    Pv = np.full(f, P)
    c1 = [zero, zero, Pv, np.clip(wf1, 0, P), zero]
    c2 = [zero, Pv, zero, zero, np.clip(wf2, 0, P)]
    valid = [np.ones(f, bool)] * 5

    with np.errstate(divide="ignore", invalid="ignore"):
        # stationary point of c*log2(1+g2 p2) - w*log2(1+g1 p2); a maximum only when w1 > w2
        denom = g1 * g2 * (w1 - w2)
        pstar = (w2 * g2 - w1 * g1) / denom
    ok = (w1 > w2) & (g1 > 0) & (g2 > 0) & np.isfinite(pstar) & (pstar > 0)
    q = np.where(ok, np.minimum(pstar, P), 0.0)
    s_hi = np.clip(wf1, q, P)
    c1 += [s_hi - q, zero]
    c2 += [q, np.clip(wf2, 0, q)]
    valid += [ok, ok]

    # literal closed-form pairs, including the swapped stationary assignment
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(g1 > 0, w2 / g1, np.inf) - np.where(g2 > 0, w1 / g2, np.inf)
        t = t / (w1 - w2)
    lit_ok = np.isfinite(t) & (np.abs(w1 - w2) >= 1e-12)
    tt = np.where(lit_ok, t, 0.0)
    c1 += [np.clip(tt, 0, P), np.clip(P - tt, 0, P)]
    c2 += [np.clip(P - tt, 0, P), np.clip(tt, 0, P)]
    valid += [lit_ok, lit_ok]
    p4_2 = np.where(lit_ok, wf2 - tt, -1.0)
    in_simplex = lit_ok & (tt >= 0) & (p4_2 >= 0) & (tt + p4_2 <= P)
    c1 += [np.where(in_simplex, tt, 0.0), np.where(in_simplex, p4_2, 0.0)]
    c2 += [np.where(in_simplex, p4_2, 0.0), np.where(in_simplex, tt, 0.0)]
    valid += [in_simplex, in_simplex]
    return np.stack(c1, -1), np.stack(c2, -1), np.stack(valid, -1)


def _noma_fixed_order(g1, g2, w1, w2, lam, P):
    """Best (p1, p2, value) with user 1 decoded first."""
    p1, p2, valid = _noma_candidates(g1, g2, w1, w2, lam, P)
    vals = noma_lagrangian(g1[:, None], g2[:, None], p1, p2, w1[:, None], w2[:, None], lam[:, None], 1)
    k = _select(vals, p1, p2, valid)
    idx = np.arange(g1.shape[0])
    return p1[idx, k], p2[idx, k], vals[idx, k]


def _bcast(*args):
    arrs = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float)) for a in args))
    return [np.ascontiguousarray(a) for a in arrs]


def noma_batch_opt(g1, g2, w1, w2, lam, P, order=None):
    """Maximize ``w1 R1 + w2 R2 - lam (p1 + p2)`` per state under NOMA.

    ``order`` is ``(1, 2)``, ``(2, 1)``, an array of first-decoded users, or
    ``None`` to pick the better order per state (ties: the stronger user is
    decoded last).  Returns ``(p1, p2, first, value)`` arrays.
    """
    g1, g2, w1, w2, lam = _bcast(g1, g2, w1, w2, lam)
    a1, a2, va = _noma_fixed_order(g1, g2, w1, w2, lam, P)
    b2, b1, vb = _noma_fixed_order(g2, g1, w2, w1, lam, P)  # user 2 decoded first
    if order is None:
        tie = np.abs(va - vb) <= _TIE_RTOL * np.maximum(1.0, np.abs(va))
        pick_b = np.where(tie, g1 > g2, vb > va)
    else:
        first = np.full(g1.shape, order[0]) if isinstance(order, tuple) else np.asarray(order)
        pick_b = first == 2
    p1 = np.where(pick_b, b1, a1)
    p2 = np.where(pick_b, b2, a2)
    val = np.where(pick_b, vb, va)
    return p1, p2, np.where(pick_b, 2, 1), val


def _oma_unit_value(w, g, lam):
    """Per-unit-bandwidth water-filling level and value at price ``lam``."""
    lvl = np.maximum(_water_level(w, lam, g), 0.0)
    with np.errstate(invalid="ignore"):
        v = w * _log2p(g * lvl) - lam * lvl
    return lvl, np.where(np.isnan(v), 0.0, v)


def oma_batch_opt(g1, g2, w1, w2, lam, P, interior_tol: float = 1e-6):
    """Maximize ``w1 R1 + w2 R2 - lam (p1 + p2)`` per state under OMA.

    Returns ``(p1, p2, alpha1, value)`` arrays.  Besides the boundary
    candidates, the peak-binding split between users is located by bisecting
    the dual of the peak constraint, so the candidate set is complete.
    """
    g1, g2, w1, w2, lam = _bcast(g1, g2, w1, w2, lam)
    f = g1.shape[0]
    c1 = _water_level(w1, lam, g1)
    c2 = _water_level(w2, lam, g2)
    zero, one = np.zeros(f), np.ones(f)
    Pv = np.full(f, P)
    half = np.full(f, 0.5)
    P1 = [zero, zero, Pv, zero, np.clip(c1, 0, P)]
    P2 = [zero, Pv, zero, np.clip(c2, 0, P), zero]
    A1 = [half, zero, one, zero, one]
    valid = [np.ones(f, bool)] * 5

    # interior stationary point: equal per-unit values, no peak pressure
    l1, v1 = _oma_unit_value(w1, g1, lam)
    l2, v2 = _oma_unit_value(w2, g2, lam)
    scale = np.maximum(1e-300, np.maximum(np.abs(v1), np.abs(v2)))
    interior = (np.abs(v1 - v2) <= interior_tol * scale) & np.isfinite(l1) & np.isfinite(l2) \
        & (0.5 * (l1 + l2) <= P)
    P1.append(np.where(interior, 0.5 * l1, 0.0))
    P2.append(np.where(interior, 0.5 * l2, 0.0))
    A1.append(half)
    valid.append(interior)

    # peak-binding split: minimize max(v1, v2)(x) + (x - lam) P over x >= lam
    def slope(x):
        u1, e1 = _oma_unit_value(w1, g1, x)
        u2, e2 = _oma_unit_value(w2, g2, x)
        return P - np.where(e1 >= e2, u1, u2)

    binding = slope(lam) < 0
    if np.any(binding):
        lo = lam.copy()
        hi = np.maximum(np.maximum(w1 * g1, w2 * g2) / LN2, lam) * 1.0001 + 1e-300
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            neg = slope(mid) < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
            if np.all((hi - lo) <= 1e-15 * hi):
                break
        u1_lo, _ = _oma_unit_value(w1, g1, lo)
        u2_lo, _ = _oma_unit_value(w2, g2, lo)
        u1_hi, _ = _oma_unit_value(w1, g1, hi)
        u2_hi, _ = _oma_unit_value(w2, g2, hi)
        for u1, u2 in ((u1_lo, u2_lo), (u1_hi, u2_hi)):
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.clip((P - u2) / (u1 - u2), 0.0, 1.0)
            ok = binding & np.isfinite(a) & np.isfinite(u1) & np.isfinite(u2)
            a = np.where(ok, a, 0.5)
            q1 = np.where(ok, np.minimum(a * np.nan_to_num(u1, posinf=0.0), P), 0.0)
            q2 = np.where(ok, np.minimum((1 - a) * np.nan_to_num(u2, posinf=0.0), P - q1), 0.0)
            P1.append(q1)
            P2.append(q2)
            A1.append(a)
            valid.append(ok)

    p1, p2, a1 = (np.stack(v, -1) for v in (P1, P2, A1))
    vmask = np.stack(valid, -1)
    vals = oma_lagrangian(g1[:, None], g2[:, None], p1, p2, a1, w1[:, None], w2[:, None], lam[:, None])
    k = _select(vals, p1, p2, vmask)
    idx = np.arange(f)
    return p1[idx, k], p2[idx, k], a1[idx, k], vals[idx, k]


def noma_state_opt(g1: float, g2: float, duals: DualMultipliers, peak_power: float,
                   order=(1, 2)) -> StateAllocation:
    """Optimal NOMA powers for one state at fixed multipliers."""
    if g1 < 0 or g2 < 0:
        raise ValueError("gains must be >= 0")
    w1, w2 = duals.weights
    p1, p2, first, val = noma_batch_opt(g1, g2, w1, w2, duals.lam, peak_power, order)
    first = int(first[0])
    return StateAllocation(float(p1[0]), float(p2[0]), 0.5, (1, 2) if first == 1 else (2, 1), float(val[0]))


def oma_state_opt(g1: float, g2: float, duals: DualMultipliers, peak_power: float) -> StateAllocation:
    """Optimal OMA powers and resource split for one state at fixed multipliers."""
    if g1 < 0 or g2 < 0:
        raise ValueError("gains must be >= 0")
    w1, w2 = duals.weights
    p1, p2, a1, val = oma_batch_opt(g1, g2, w1, w2, duals.lam, peak_power)
    return StateAllocation(float(p1[0]), float(p2[0]), float(a1[0]), (1, 2), float(val[0]))


def grid_oracle(g1: float, g2: float, duals: DualMultipliers, peak_power: float, scheme: str,
                resolution: int = 400, order=(1, 2), refine: int = 2) -> StateAllocation:
    """Brute-force maximizer of the per-state Lagrangian on a uniform grid.

    Powers run over ``peak_power * k / resolution``; OMA adds the same grid
    over ``alpha1``.  ``refine`` optional zoom passes re-grid a neighbourhood
    of the incumbent, which can only raise the returned value.
    """
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    w1, w2 = duals.weights
    lam = duals.lam
    P = peak_power
    oma = scheme in ("TDMA", "FDMA", "OMA")

    def evaluate(p1, p2, a1):
        if oma:
            return oma_lagrangian(g1, g2, p1, p2, a1, w1, w2, lam)
        return noma_lagrangian(g1, g2, p1, p2, w1, w2, lam, order[0])

    if oma:
        # the alpha axis is coarser to keep the cube tractable; the objective
        # splits per user, so the cube is a sum of two (power, alpha) tables
        ares = max(50, resolution // 8)
        pres = max(100, resolution // 4)
        pg = P * np.arange(pres + 1) / pres
        ag = np.arange(ares + 1) / ares
        t1 = w1 * _oma_term(g1, pg[:, None], ag[None, :]) - lam * pg[:, None]
        t2 = w2 * _oma_term(g2, pg[:, None], 1.0 - ag[None, :]) - lam * pg[:, None]
        vals = t1[:, None, :] + t2[None, :, :]
        p1, p2, a1 = np.meshgrid(pg, pg, ag, indexing="ij")
    else:
        pg = P * np.arange(resolution + 1) / resolution
        p1, p2 = np.meshgrid(pg, pg, indexing="ij")
        a1 = np.full(p1.shape, 0.5)
        vals = evaluate(p1, p2, a1)
    feas = p1 + p2 <= P * (1 + 1e-12)
    vals = np.where(feas, vals, -np.inf)
    k = np.unravel_index(np.argmax(vals), vals.shape)
    best = (float(vals[k]), float(p1[k]), float(p2[k]), float(a1[k]))

    step_p = P / (pres if oma else resolution)
    step_a = 1.0 / ares if oma else 0.0
    for _ in range(refine):
        c1 = np.clip(best[1] + step_p * np.linspace(-1, 1, 41), 0, P)
        c2 = np.clip(best[2] + step_p * np.linspace(-1, 1, 41), 0, P)
        if oma:
            ca = np.clip(best[3] + step_a * np.linspace(-1, 1, 21), 0, 1)
            q1, q2, qa = np.meshgrid(c1, c2, ca, indexing="ij")
        else:
            q1, q2 = np.meshgrid(c1, c2, indexing="ij")
            qa = np.full(q1.shape, 0.5)
        scale = np.maximum(1.0, (q1 + q2) / P)
        q1, q2 = q1 / scale, q2 / scale
        v = evaluate(q1, q2, qa)
        j = np.unravel_index(np.argmax(v), v.shape)
        if v[j] > best[0]:
            best = (float(v[j]), float(q1[j]), float(q2[j]), float(qa[j]))
        step_p /= 20.0
        step_a /= 10.0
    return StateAllocation(best[1], best[2], best[3], tuple(order), best[0])


@dataclass
class AllocationTable:
    """Per-state allocations with time-sharing.

    Each state holds ``K`` components used for fractions ``weight[:, j]`` of
    the state's duration (rows sum to one).  Almost every state has a single
    component; a handful near multiplier thresholds share time.
    """

    p1: np.ndarray  # (F, K)
    p2: np.ndarray
    alpha1: np.ndarray
    first: np.ndarray
    weight: np.ndarray

    @classmethod
    def single(cls, p1, p2, alpha1, first):
        cols = [np.asarray(v)[:, None] for v in (p1, p2, alpha1, first)]
        return cls(cols[0].astype(float), cols[1].astype(float), cols[2].astype(float),
                   cols[3].astype(int), np.ones_like(cols[0], dtype=float))

    def __len__(self) -> int:
        return self.p1.shape[0]

    def rates(self, gains, scheme):
        g1, g2 = gains[:, :1], gains[:, 1:2]
        return rates_batch(g1, g2, self.p1, self.p2, scheme, self.alpha1, self.first)

    def mean_rates(self, gains, scheme) -> np.ndarray:
        r1, r2 = self.rates(gains, scheme)
        return np.array([np.mean(np.sum(self.weight * r1, 1)), np.mean(np.sum(self.weight * r2, 1))])

    def mean_power(self) -> float:
        return float(np.mean(np.sum(self.weight * (self.p1 + self.p2), 1)))

    def dominant(self) -> "AllocationTable":
        """Single-component table keeping each state's largest-weight component."""
        j = np.argmax(self.weight, axis=1)
        idx = np.arange(len(self))
        return AllocationTable.single(self.p1[idx, j], self.p2[idx, j], self.alpha1[idx, j], self.first[idx, j])

    def state_powers(self) -> np.ndarray:
        """Time-averaged ``(p1, p2)`` per state, shape ``(F, 2)``."""
        return np.stack([np.sum(self.weight * self.p1, 1), np.sum(self.weight * self.p2, 1)], -1)


@dataclass
class DualResult:
    duals: DualMultipliers
    allocation: AllocationTable
    mean_rates: np.ndarray
    mean_power: float
    primal_value: float
    dual_value: float
    iterations: int
    feasible: bool = True
    max_min_rate: float = np.nan
    history: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return (self.dual_value - self.primal_value) / max(abs(self.dual_value), 1e-300)

    def residuals(self, budget: PowerBudget) -> dict:
        return {
            "power": (self.mean_power - budget.avg_power) / budget.avg_power,
            "rate": float(np.min(self.mean_rates) - budget.min_rate),
            "slack_power": self.duals.lam * (budget.avg_power - self.mean_power),
            "slack_rate1": self.duals.delta * (self.mean_rates[0] - budget.min_rate),
            "slack_rate2": self.duals.mu * (self.mean_rates[1] - budget.min_rate),
        }


def _solve_states(gains, w1, w2, lam, P, scheme, order=None):
    g1, g2 = gains[:, 0], gains[:, 1]
    if scheme == "NOMA":
        p1, p2, first, val = noma_batch_opt(g1, g2, w1, w2, lam, P, order)
        a1 = np.full(p1.shape, 0.5)
    else:
        p1, p2, a1, val = oma_batch_opt(g1, g2, w1, w2, lam, P)
        first = np.ones(p1.shape, dtype=int)
    return p1, p2, a1, first, val


def _price_bracket(gains, w1, w2, P, Pbar, scheme, order):
    """Price interval whose end points over- and under-spend the average budget.

    Returns ``(lo, hi)`` with ``mean power(lo) >= Pbar >= mean power(hi)``,
    or ``(0, 0)`` when the budget is slack at zero price.
    """
    p1, p2, *_ = _solve_states(gains, w1, w2, 0.0, P, scheme, order)
    if np.mean(p1 + p2) <= Pbar:
        return 0.0, 0.0
    hi = max(w1, w2) * float(np.max(gains)) / LN2 * 1.0001 + 1e-300
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi) if lo > 0 else hi * 1e-6 if hi > 1e-280 else 0.5 * hi
        q1, q2, *_ = _solve_states(gains, w1, w2, mid, P, scheme, order)
        if np.mean(q1 + q2) > Pbar:
            lo = mid
        else:
            hi = mid
        if lo > 0 and hi - lo <= 1e-13 * hi:
            break
    return lo, hi


def _table_at_price(gains, w1, w2, P, Pbar, scheme, order):
    """Lagrangian maximizers at the budget-meeting price, time-shared to spend exactly ``Pbar``."""
    lo, hi = _price_bracket(gains, w1, w2, P, Pbar, scheme, order)
    a = _solve_states(gains, w1, w2, hi, P, scheme, order)
    if hi == 0.0:
        return AllocationTable.single(*a[:4]), 0.0, a[4]
    b = _solve_states(gains, w1, w2, lo, P, scheme, order)
    ea, eb = np.mean(a[0] + a[1]), np.mean(b[0] + b[1])
    theta = 0.0 if eb <= ea else float(np.clip((Pbar - ea) / (eb - ea), 0.0, 1.0))
    differs = (np.abs(a[0] - b[0]) + np.abs(a[1] - b[1]) + np.abs(a[2] - b[2]) + (a[3] != b[3])) > 0
    tab = AllocationTable.single(*a[:4])
    if theta > 0 and np.any(differs):
        tab = AllocationTable(
            np.stack([a[0], b[0]], 1), np.stack([a[1], b[1]], 1), np.stack([a[2], b[2]], 1),
            np.stack([a[3], b[3]], 1),
            np.stack([np.where(differs, 1 - theta, 1.0), np.where(differs, theta, 0.0)], 1),
        )
    lam = hi
    # Lagrangian value at the price, from the side that is exact there
    vals = noma_lagrangian(gains[:, 0], gains[:, 1], a[0], a[1], w1, w2, lam, a[3]) if scheme == "NOMA" \
        else oma_lagrangian(gains[:, 0], gains[:, 1], a[0], a[1], a[2], w1, w2, lam)
    return tab, lam, vals


def _dual_value(gains, lam, delta, mu, P, Pbar, Rbar, scheme, order):
    *_, val = _solve_states(gains, 1 + delta, 1 + mu, lam, P, scheme, order)
    return float(np.mean(val)) + lam * Pbar - (delta + mu) * Rbar


def _recover_primal(gains, pool, budget, scheme):
    """Time-sharing LP over a pool of per-state candidate allocations.

    Maximizes the mean sum rate subject to the average power and rate
    constraints.  Only states whose candidates differ carry LP variables.
    Returns an :class:`AllocationTable` or ``None`` when infeasible.
    """
    P1 = np.stack([c[0] for c in pool], 1)
    P2 = np.stack([c[1] for c in pool], 1)
    A1 = np.stack([c[2] for c in pool], 1)
    FI = np.stack([c[3] for c in pool], 1)
    f, K = P1.shape
    r1, r2 = rates_batch(gains[:, :1], gains[:, 1:2], P1, P2, scheme, A1, FI)
    pw = P1 + P2
    same = np.all((P1 == P1[:, :1]) & (P2 == P2[:, :1]) & (A1 == A1[:, :1]) & (FI == FI[:, :1]), 1)
    free = np.flatnonzero(~same)
    fixed = np.flatnonzero(same)
    base_r1 = r1[fixed, 0].sum()
    base_r2 = r2[fixed, 0].sum()
    base_p = pw[fixed, 0].sum()
    nf = free.size
    if nf == 0:
        tab = AllocationTable.single(P1[:, 0], P2[:, 0], A1[:, 0], FI[:, 0])
        ok = base_p / f <= budget.avg_power * (1 + 1e-9) and min(base_r1, base_r2) / f >= budget.min_rate - 1e-9
        return tab if ok else None
    nv = nf * K
    c = -(r1[free] + r2[free]).ravel()
    A_ub = np.vstack([pw[free].ravel(), -r1[free].ravel(), -r2[free].ravel()])
    b_ub = np.array([budget.avg_power * f - base_p,
                     base_r1 - budget.min_rate * f,
                     base_r2 - budget.min_rate * f])
    A_eq = np.zeros((nf, nv))
    for i in range(nf):
        A_eq[i, i * K:(i + 1) * K] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(nf), bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    W = np.zeros((f, K))
    W[fixed, 0] = 1.0
    W[free] = np.clip(res.x.reshape(nf, K), 0.0, 1.0)
    W /= W.sum(1, keepdims=True)
    keep = np.flatnonzero(np.any(W > 1e-12, 0))
    return AllocationTable(P1[:, keep], P2[:, keep], A1[:, keep], FI[:, keep], W[:, keep])


def max_min_rate(gains, budget: PowerBudget, scheme: str, order=None, iters: int = 60) -> float:
    """Largest ``min(E[R1], E[R2])`` reachable under the power constraints.

    Uses ``max min_k E[R_k] = min_w max (w E[R1] + (1-w) E[R2])`` over the
    (time-shared, hence convex) rate region, with golden-section search on w.
    """
    gains = np.asarray(gains, dtype=float)

    def value(w):
        tab, _, _ = _table_at_price(gains, w, 1 - w, budget.peak_power, budget.avg_power, scheme, order)
        r = tab.mean_rates(gains, scheme)
        return w * r[0] + (1 - w) * r[1], r

    lo, hi = 0.0, 1.0
    g = (np.sqrt(5) - 1) / 2
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = value(x1)[0], value(x2)[0]
    for _ in range(iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = value(x1)[0]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = value(x2)[0]
    return float(min(f1, f2))


def dual_solve(gains, budget: PowerBudget, scheme: str, order=None, tol: float = 1e-2,
               max_iter: int = 300, step: float = 0.5, init=(0.1, 0.1)) -> DualResult:
    """Solve the ergodic power allocation through its Lagrange dual.

    The average-power price is found exactly by bisection for each
    ``(delta, mu)``; the rate multipliers follow normalized projected
    subgradient steps ``step / sqrt(t)``.  Primal allocations are recovered
    with time-sharing over the Lagrangian maximizers met along the way.

    ``gains`` has shape ``(F, 2)``.  ``order`` fixes the NOMA decoding order
    (tuple or per-state first-decoded array); ``None`` optimizes it per state.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 2 or gains.shape[1] != 2 or gains.shape[0] == 0:
        raise ValueError("gains must have shape (F, 2) with F >= 1")
    if np.any(gains < 0):
        raise ValueError("gains must be >= 0")
    P, Pbar, Rbar = budget.peak_power, budget.avg_power, budget.min_rate

    def at(delta, mu):
        tab, lam, vals = _table_at_price(gains, 1 + delta, 1 + mu, P, Pbar, scheme, order)
        D = float(np.mean(vals)) + lam * Pbar - (delta + mu) * Rbar
        return tab, lam, D

    # rate floors slack at zero rate prices: optimal immediately
    tab, lam, D = at(0.0, 0.0)
    r = tab.mean_rates(gains, scheme)
    if np.all(r >= Rbar):
        return DualResult(DualMultipliers(lam, 0.0, 0.0), tab, r, tab.mean_power(),
                          float(r.sum()), D, 1)

    delta, mu = init
    best_D, best_duals = D, (lam, 0.0, 0.0)
    pool = []
    history = []
    best_primal = None
    t = 0
    for t in range(1, max_iter + 1):
        tab, lam, D = at(delta, mu)
        r = tab.mean_rates(gains, scheme)
        history.append((lam, delta, mu, D, *r))
        if D < best_D:
            best_D, best_duals = D, (lam, delta, mu)
        for j in range(tab.p1.shape[1]):
            pool.append((tab.p1[:, j], tab.p2[:, j], tab.alpha1[:, j], tab.first[:, j]))
        pool = pool[-24:]
        if t % 10 == 0 or t == max_iter:
            cand = _recover_primal(gains, pool, budget, scheme)
            if cand is not None:
                rr = cand.mean_rates(gains, scheme)
                if best_primal is None or rr.sum() > best_primal[1].sum():
                    best_primal = (cand, rr)
            if best_primal is not None and (best_D - best_primal[1].sum()) <= tol * abs(best_D):
                break
        g = np.array([r[0] - Rbar, r[1] - Rbar])
        # components pinned at zero by the projection do not count toward the step
        g[(np.array([delta, mu]) <= 0) & (g > 0)] = 0.0
        gn = np.linalg.norm(g)
        if gn == 0:
            continue
        a = step / np.sqrt(t)
        delta = max(0.0, delta - a * g[0] / gn)
        mu = max(0.0, mu - a * g[1] / gn)

    duals = DualMultipliers(*best_duals)
    if best_primal is None:
        mm = max_min_rate(gains, budget, scheme, order)
        feasible = mm >= Rbar - tol
        tab_final, _, _ = at(delta, mu)
        rr = tab_final.mean_rates(gains, scheme)
        log.warning("rate floor %.4g not met; max attainable min-rate %.4g", Rbar, mm)
        return DualResult(duals, tab_final, rr, tab_final.mean_power(), float(rr.sum()), best_D, t,
                          feasible=feasible, max_min_rate=mm, history=history)
    tab, rr = best_primal
    return DualResult(duals, tab, rr, tab.mean_power(), float(rr.sum()), best_D, t, history=history)
