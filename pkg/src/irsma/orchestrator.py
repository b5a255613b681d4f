"""Alternating power/phase optimization and Monte Carlo rate estimation.

Each round first allocates powers for the current phases (exact dual
decomposition over all states), then redesigns the IRS phases for the
current powers.  Dynamic adjustment redesigns per fading state; one-time
adjustment keeps one configuration per block of ``B`` states, designed
from ``S`` states sampled out of the previous block.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelBatch, FadingParams, ScenarioGeometry, sample_states
from .irs import PhaseConfig, batch_gains, quantize_angles, random_phases
from .phase import SrocrParams, align_tdma_batch, srocr_noma, srocr_oma
from .power import AllocationTable, PowerBudget, dual_solve, rates_batch

__all__ = [
    "SchemeConfig",
    "ExperimentResult",
    "MonotonicityError",
    "enumerate_orders",
    "average_sum_rate",
    "run_ao_noma",
    "run_ao_oma",
    "run_ao",
    "run_experiment",
]

log = logging.getLogger(__name__)

ACCESS = ("NOMA", "TDMA", "FDMA")
ADJUSTMENT = ("dynamic", "one_time")
MONOTONE_SLACK = 1e-9


class MonotonicityError(AssertionError):
    """The alternating-optimization objective decreased between rounds."""


@dataclass(frozen=True)
class SchemeConfig:
    access: str = "NOMA"
    adjustment: str = "dynamic"
    block_size: int = 100
    samples_per_block: int = 8
    ao_max_rounds: int = 10
    convergence_eps: float = 1e-2
    levels: int | None = 3
    srocr: SrocrParams = SrocrParams()
    workers: int = 1

    def __post_init__(self):
        if self.access not in ACCESS:
            raise ValueError(f"access must be one of {ACCESS}")
        if self.adjustment not in ADJUSTMENT:
            raise ValueError(f"adjustment must be one of {ADJUSTMENT}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 1 <= self.samples_per_block <= self.block_size:
            raise ValueError("samples_per_block must lie in [1, block_size]")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.ao_max_rounds < 1:
            raise ValueError("ao_max_rounds must be >= 1")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1 or None")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ExperimentResult:
    avg_sum_rate: float
    per_user_avg_rates: np.ndarray
    avg_power_used: float
    constraint_residuals: dict
    ao_trace: list
    chosen_orders: dict
    feasible: bool = True
    max_min_rate: float = np.nan
    rounds: int = 0
    runtime_s: float = 0.0
    allocation: AllocationTable | None = field(default=None, repr=False)
    theta: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "avg_sum_rate": self.avg_sum_rate,
            "per_user_avg_rates": [float(v) for v in self.per_user_avg_rates],
            "avg_power_used": self.avg_power_used,
            "constraint_residuals": {k: float(v) for k, v in self.constraint_residuals.items()},
            "ao_trace": [float(v) for v in self.ao_trace],
            "chosen_orders": dict(self.chosen_orders),
            "feasible": bool(self.feasible),
            "max_min_rate": None if np.isnan(self.max_min_rate) else float(self.max_min_rate),
            "rounds": self.rounds,
        }


def enumerate_orders(gains, powers) -> np.ndarray:
    """Sum-rate maximizing first-decoded user per state.

    ``gains`` and ``powers`` have shape ``(F, 2)``.  On exact ties the user
    with the weaker combined channel is decoded first (user 1 if equal).
    """
    gains = np.asarray(gains, dtype=float)
    powers = np.asarray(powers, dtype=float)
    g1, g2, p1, p2 = gains[:, 0], gains[:, 1], powers[:, 0], powers[:, 1]
    a = np.sum(rates_batch(g1, g2, p1, p2, "NOMA", first=np.ones_like(g1, dtype=int)), axis=0)
    b = np.sum(rates_batch(g1, g2, p1, p2, "NOMA", first=np.full(g1.shape, 2)), axis=0)
    weak_first = np.where(g2 < g1, 2, 1)
    return np.where(a > b, 1, np.where(b > a, 2, weak_first))


def _order_histogram(table: AllocationTable) -> dict:
    first = table.dominant().first[:, 0]
    return {"1-2": int(np.sum(first == 1)), "2-1": int(np.sum(first == 2))}


def average_sum_rate(states: ChannelBatch, allocation: AllocationTable, theta, scheme: str,
                     noise_power: float) -> float:
    """Sample mean over states of the instantaneous sum rate."""
    if len(states) == 0:
        raise ValueError("empty state list")
    if len(allocation) != len(states):
        raise ValueError("allocation and states differ in length")
    gains = batch_gains(states, theta, noise_power)
    return float(np.sum(allocation.mean_rates(gains, scheme)))


def _state_rates(table: AllocationTable, gains, scheme) -> np.ndarray:
    r1, r2 = table.rates(gains, scheme)
    return np.stack([np.sum(table.weight * r1, 1), np.sum(table.weight * r2, 1)], -1)


def _keep_floors(old, new, accept, floor):
    """Drop accepted updates until mean per-user rates stay above ``floor``.

    ``old``/``new`` are per-state rates ``(F, 2)``; updates that cost the
    deficient user the most rate per unit of sum-rate gain are reverted first.
    Reverting everything restores ``old``, so the loop always terminates.
    """
    accept = accept.copy()
    F = old.shape[0]
    target = np.minimum(floor, old.mean(0))
    for _ in range(4 * F):
        cur = np.where(accept[:, None], new, old)
        short = target - cur.mean(0)
        k = int(np.argmax(short))
        if short[k] <= 0:
            break
        loss = old[:, k] - new[:, k]
        cand = accept & (loss > 0)
        if not np.any(cand):
            break
        gain = (new - old).sum(1)
        ratio = np.where(cand, gain / np.where(loss > 0, loss, 1.0), np.inf)
        order = np.argsort(ratio, kind="stable")
        need = short[k] * F
        cum = np.cumsum(np.where(cand[order], loss[order], 0.0))
        n = int(np.searchsorted(cum, need * (1 + 1e-12))) + 1
        accept[order[:n]] = False
    return accept


def _phase_job(args):
    kind, states, powers, extra, sigma, levels, floor, params, init = args
    if kind == "NOMA":
        res = srocr_noma(states, powers, sigma, levels, first=extra, rate_floor=floor, params=params, init=init)
    else:
        res = srocr_oma(states, powers, extra, sigma, levels, rate_floor=floor, params=params, init=init)
    return res.phases.theta


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


class _Driver:
    """Shared AO bookkeeping for NOMA and OMA."""

    def __init__(self, states, budget, scheme, rng, noise_power):
        if len(states) == 0:
            raise ValueError("empty state list")
        self.states = states
        self.budget = budget
        self.scheme = scheme
        self.rng = rng
        self.sigma = noise_power
        self.access = scheme.access
        self.rate_scheme = "NOMA" if scheme.access == "NOMA" else "OMA"
        F, N = len(states), states.num_elements
        self.blocks = np.arange(F) // scheme.block_size
        self.per_user = scheme.access == "TDMA" and scheme.adjustment == "dynamic"
        if self.per_user:
            self.theta = align_tdma_batch(states)
        elif scheme.adjustment == "one_time":
            nb = int(self.blocks[-1]) + 1
            first_cfg = random_phases(rng, N, scheme.levels).theta
            # later blocks start from the first block's configuration until designed
            self.block_theta = np.tile(first_cfg, (nb, 1))
            self.theta = self.block_theta[self.blocks]
        else:
            self.theta = np.stack([random_phases(rng, N, scheme.levels).theta for _ in range(F)]) \
                if N else np.zeros((F, 0))
        if self.per_user and scheme.levels is not None:
            self.theta = quantize_angles(self.theta, scheme.levels)

    def gains(self, theta=None):
        return batch_gains(self.states, self.theta if theta is None else theta, self.sigma)

    def objective(self, table, theta=None):
        return float(np.sum(table.mean_rates(self.gains(theta), self.rate_scheme)))

    def power_step(self, incumbent):
        res = dual_solve(self.gains(), self.budget, self.access)
        if incumbent is None:
            return res.allocation, res
        # the incumbent stays feasible under the new phases; keep it unless beaten
        if res.feasible and self.objective(res.allocation) >= self.objective(incumbent):
            return res.allocation, res
        return incumbent, res

    def phase_step(self, table):
        if self.per_user or self.states.num_elements == 0:
            return
        dom = table.dominant()
        pw = table.state_powers()
        first = dom.first[:, 0]
        alpha = np.sum(table.weight * table.alpha1, 1)
        old_rates = _state_rates(table, self.gains(), self.rate_scheme)
        p = self.scheme
        if p.adjustment == "dynamic":
            jobs = []
            for i in range(len(self.states)):
                extra = int(first[i]) if self.access == "NOMA" else float(alpha[i])
                jobs.append((self.access if self.access == "NOMA" else "OMA", self.states.state(i), pw[i],
                             extra, self.sigma, p.levels, 0.0, p.srocr, self._cfg(self.theta[i])))
            cand = np.stack(_map(_phase_job, jobs, p.workers))
            new_rates = _state_rates(table, self.gains(cand), self.rate_scheme)
            accept = new_rates.sum(1) > old_rates.sum(1)
            accept = _keep_floors(old_rates, new_rates, accept, self.budget.min_rate)
            self.theta = np.where(accept[:, None], cand, self.theta)
            return
        # one-time: block b is designed from samples of block b-1
        nb = self.block_theta.shape[0]
        jobs, targets = [], []
        for b in range(1, nb):
            prev = np.flatnonzero(self.blocks == b - 1)
            pick = np.sort(self.rng.choice(prev, size=min(p.samples_per_block, prev.size), replace=False))
            avg_pw = pw[prev].mean(0)
            if self.access == "NOMA":
                extra = enumerate_orders(self.gains()[pick], np.tile(avg_pw, (pick.size, 1)))
                kind = "NOMA"
            else:
                extra, kind = float(alpha[prev].mean()), "OMA"
            jobs.append((kind, self.states.subset(pick), avg_pw, extra, self.sigma, p.levels, 0.0, p.srocr,
                         self._cfg(self.block_theta[b])))
            targets.append(b)
        if not jobs:
            return
        designs = _map(_phase_job, jobs, p.workers)
        cand_block = self.block_theta.copy()
        for b, th in zip(targets, designs):
            cand_block[b] = th
        cand = cand_block[self.blocks]
        new_rates = _state_rates(table, self.gains(cand), self.rate_scheme)
        # acceptance is per block on its realized sum rate
        F = len(self.states)
        old_b = np.bincount(self.blocks, old_rates.sum(1), minlength=nb)
        new_b = np.bincount(self.blocks, new_rates.sum(1), minlength=nb)
        acc_b = new_b > old_b
        acc_b = self._block_floors(old_rates, new_rates, acc_b)
        self.block_theta = np.where(acc_b[:, None], cand_block, self.block_theta)
        self.theta = self.block_theta[self.blocks]
        assert self.theta.shape[0] == F

    def _block_floors(self, old, new, acc_b):
        nb = acc_b.size
        ob = np.stack([np.bincount(self.blocks, old[:, k], minlength=nb) for k in (0, 1)], -1)
        nbr = np.stack([np.bincount(self.blocks, new[:, k], minlength=nb) for k in (0, 1)], -1)
        # block sums scaled by nb/F give the same means as the per-state rates
        scale = nb / len(self.states)
        return _keep_floors(ob * scale, nbr * scale, acc_b, self.budget.min_rate)

    def _cfg(self, theta):
        return PhaseConfig(np.asarray(theta, dtype=float), self.scheme.levels)

    def run(self) -> ExperimentResult:
        t0 = time.perf_counter()
        trace = []
        table, res = self.power_step(None)
        if not res.feasible:
            r = res.mean_rates
            return ExperimentResult(float(r.sum()), r, res.mean_power, res.residuals(self.budget), [],
                                    _order_histogram(table), feasible=False, max_min_rate=res.max_min_rate,
                                    rounds=0, runtime_s=time.perf_counter() - t0, allocation=table,
                                    theta=self.theta)
        rounds = 0
        for rounds in range(1, self.scheme.ao_max_rounds + 1):
            if rounds > 1:
                table, res = self.power_step(table)
            val = self.objective(table)
            if trace and val < trace[-1] - MONOTONE_SLACK * max(1.0, abs(trace[-1])):
                raise MonotonicityError(f"objective fell from {trace[-1]!r} to {val!r} in round {rounds}")
            trace.append(val)
            log.info("%s/%s round %d: %.6f", self.access, self.scheme.adjustment, rounds, val)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= self.scheme.convergence_eps * abs(trace[-2]):
                break
            if self.per_user or self.states.num_elements == 0:
                # phases do not depend on powers; one round suffices
                break
            if rounds == self.scheme.ao_max_rounds:
                break
            self.phase_step(table)
        gains = self.gains()
        r = table.mean_rates(gains, self.rate_scheme)
        pm = table.mean_power()
        residuals = {
            "power": (pm - self.budget.avg_power) / self.budget.avg_power,
            "rate": float(np.min(r) - self.budget.min_rate),
        }
        return ExperimentResult(float(r.sum()), r, pm, residuals, trace, _order_histogram(table),
                                rounds=rounds, runtime_s=time.perf_counter() - t0, allocation=table,
                                theta=self.theta)


def run_ao_noma(states: ChannelBatch, budget: PowerBudget, scheme: SchemeConfig,
                rng: np.random.Generator, noise_power: float) -> ExperimentResult:
    """Alternate exact power allocation and SROCR phase design for NOMA."""
    if scheme.access != "NOMA":
        raise ValueError("run_ao_noma needs access NOMA")
    return _Driver(states, budget, scheme, rng, noise_power).run()


def run_ao_oma(states: ChannelBatch, budget: PowerBudget, scheme: SchemeConfig,
               rng: np.random.Generator, noise_power: float) -> ExperimentResult:
    """Alternate power/resource allocation and phase design for TDMA or FDMA.

    Dynamic TDMA aligns the IRS to each user in its own slot; every other
    variant shares one configuration between both users.
    """
    if scheme.access not in ("TDMA", "FDMA"):
        raise ValueError("run_ao_oma needs access TDMA or FDMA")
    return _Driver(states, budget, scheme, rng, noise_power).run()


def run_ao(states, budget, scheme, rng, noise_power) -> ExperimentResult:
    fn = run_ao_noma if scheme.access == "NOMA" else run_ao_oma
    return fn(states, budget, scheme, rng, noise_power)


def run_experiment(geom: ScenarioGeometry, fading: FadingParams, budget: PowerBudget, scheme: SchemeConfig,
                   num_states: int, seed: int) -> ExperimentResult:
    """Draw ``num_states`` fading states and run the matching AO driver.

    Fading draws depend on ``fading.seed`` only; the AO random stream
    (initial phases, block sampling) on ``seed``.  Runs sharing both seeds
    see identical channels and identical random choices.
    """
    states = sample_states(geom, fading, range(num_states))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    return run_ao(states, budget, scheme, rng, fading.noise_power)
