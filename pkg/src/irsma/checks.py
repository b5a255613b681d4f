"""Seeded self-checks comparing each fast path against its slow reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FadingParams, db_to_linear, dbm_to_watts, default_geometry, sample_states
from .irs import batch_gains
from .oracles import dual_first_order, random_trace_sdp
from .phase import align_tdma_batch, exhaustive, srocr_noma, srocr_oma
from .power import DualMultipliers, grid_oracle, noma_lagrangian, noma_state_opt, oma_lagrangian, oma_state_opt
from .sdp import Block, ConicProblem, Constraint, Objective, solve

__all__ = ["CheckResult", "SUITES", "run_suite", "random_duals"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: residual={self.residual:.3e} tol={self.tolerance:.1e}"


def random_duals(rng: np.random.Generator):
    """Random ``(g1, g2, duals, peak)`` spanning several decades of SNR and price."""
    g1, g2 = 10.0 ** rng.uniform(-1, 4, size=2)
    lam = 10.0 ** rng.uniform(-2, 1)
    delta, mu = rng.uniform(0, 2, size=2)
    peak = 10.0 ** rng.uniform(-1, 1)
    return g1, g2, DualMultipliers(lam, delta, mu), peak


def _value(scheme, g1, g2, alloc, duals):
    w1, w2 = duals.weights
    if scheme == "NOMA":
        return float(noma_lagrangian(g1, g2, alloc.p1, alloc.p2, w1, w2, duals.lam, alloc.order[0]))
    return float(oma_lagrangian(g1, g2, alloc.p1, alloc.p2, alloc.alpha1, w1, w2, duals.lam))


def check_power(count: int = 1000, seed: int = 0, tol: float = 1e-3) -> list[CheckResult]:
    """Closed-form per-state allocations against the brute-force grid."""
    rng = np.random.default_rng(seed)
    out = []
    for scheme in ("NOMA", "OMA"):
        worst = 0.0
        for _ in range(count):
            g1, g2, duals, peak = random_duals(rng)
            if scheme == "NOMA":
                order = (1, 2) if rng.integers(2) == 0 else (2, 1)
                fast = noma_state_opt(g1, g2, duals, peak, order)
                ref = grid_oracle(g1, g2, duals, peak, scheme, order=order)
            else:
                fast = oma_state_opt(g1, g2, duals, peak)
                ref = grid_oracle(g1, g2, duals, peak, scheme)
            vf, vr = _value(scheme, g1, g2, fast, duals), _value(scheme, g1, g2, ref, duals)
            # the grid can only do worse; any shortfall of the closed form is an error
            worst = max(worst, (vr - vf) / max(abs(vr), 1e-9))
        out.append(CheckResult(f"power/{scheme.lower()}-vs-grid[{count}]", worst, tol))
    return out


def check_phase(count: int = 50, seed: int = 0, ratio: float = 0.95) -> list[CheckResult]:
    """Quantized SROCR against exhaustive search at N = 4, L = 2."""
    sigma = dbm_to_watts(-90.0)
    geom = default_geometry(seed)
    batch = sample_states(geom, FadingParams(db_to_linear(3.0), 4, sigma, seed=seed), range(count))
    rng = np.random.default_rng(seed)
    out = []
    for scheme in ("NOMA", "OMA"):
        ratios, excess = [], 0.0
        for i in range(count):
            st = batch.state(i)
            pw = rng.uniform(0.01, 0.1, size=2)
            if scheme == "NOMA":
                first = int(rng.integers(1, 3))
                res = srocr_noma(st, pw, sigma, 2, first=first, rng=rng)
                _, best = exhaustive(st, pw, "NOMA", 2, sigma, first=first)
            else:
                a1 = float(rng.uniform(0.2, 0.8))
                res = srocr_oma(st, pw, a1, sigma, 2, rng=rng)
                _, best = exhaustive(st, pw, "OMA", 2, sigma, alpha1=a1)
            ratios.append(res.objective / best)
            excess = max(excess, res.objective - best)
        out.append(CheckResult(f"phase/{scheme.lower()}-mean-shortfall[{count}]", 1.0 - float(np.mean(ratios)),
                               1.0 - ratio))
        out.append(CheckResult(f"phase/{scheme.lower()}-exceeds-exhaustive", max(excess, 0.0), 1e-9))
    return out


def _eig_program(C):
    n = C.shape[0]
    herm = np.iscomplexobj(C)
    return ConicProblem([Block(n, herm)], 0, Objective({0: C}), [Constraint({0: np.eye(n)}, {}, "==", 1.0)])


def check_sdp(count: int = 10, seed: int = 0) -> list[CheckResult]:
    """Eigenvalue programs with known optimum and random trace SDPs against the dual oracle."""
    rng = np.random.default_rng(seed)
    worst_eig = 0.0
    worst_kkt = 0.0
    for _ in range(count):
        n = int(rng.integers(2, 9))
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        C = 0.5 * (a + a.conj().T)
        sol = solve(_eig_program(C))
        worst_eig = max(worst_eig, abs(sol.objective_value - np.linalg.eigvalsh(C)[-1]))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    worst_rand = 0.0
    for _ in range(count):
        prob = random_trace_sdp(rng, max_dim=6)
        sol = solve(prob)
        ref = dual_first_order(prob)
        worst_rand = max(worst_rand, abs(sol.objective_value - ref) / max(1.0, abs(ref)))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    return [
        CheckResult(f"sdp/eigenvalue-programs[{count}]", worst_eig, 1e-6),
        CheckResult(f"sdp/random-vs-dual-oracle[{count}]", worst_rand, 1e-4),
        CheckResult("sdp/kkt-residual", worst_kkt, 1e-6),
    ]


def check_channel(samples: int = 20000, seed: int = 0) -> list[CheckResult]:
    """Empirical link powers against path loss (in standard errors) and the aligned-gain identity."""
    sigma = dbm_to_watts(-90.0)
    geom = default_geometry(seed)
    v = db_to_linear(3.0)
    batch = sample_states(geom, FadingParams(v, 2, sigma, seed=seed), range(samples))
    bu, bi, iu = geom.link_gains()
    z = []
    for emp, mean in (
        (np.abs(batch.h) ** 2, bu),
        (np.abs(batch.g) ** 2, np.full(2, bi)),
        (np.abs(batch.r[:, 0]) ** 2, np.full(2, iu[0])),
        (np.abs(batch.r[:, 1]) ** 2, np.full(2, iu[1])),
    ):
        se = emp.std(0, ddof=1) / np.sqrt(samples)
        z.extend(np.abs(emp.mean(0) - mean) / se)
    theta = align_tdma_batch(batch)
    worst = 0.0
    for k in (0, 1):
        c = np.sqrt(batch_gains(batch, theta[:, k], sigma)[:, k] * sigma)
        bound = np.abs(batch.h[:, k]) + np.sum(np.abs(batch.r[:, k] * batch.g), 1)
        worst = max(worst, float(np.max(np.abs(c - bound) / bound)))
    return [
        CheckResult(f"channel/link-power-zscore[{samples}]", float(np.max(z)), 3.0),
        CheckResult("channel/aligned-gain-identity", worst, 1e-9),
    ]


SUITES = {"power": check_power, "phase": check_phase, "sdp": check_sdp, "channel": check_channel}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
