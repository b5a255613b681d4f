"""Block-fading channel generation for the two-user IRS downlink.

Every fading state is a pure function of ``(seed, state_index)``: each state
draws from its own ``SeedSequence`` child, so states can be generated in any
order (or concurrently) and replays are bit-identical.

Draw order inside a state is fixed so that the first ``N`` reflecting elements
of an ``N' > N`` surface see exactly the same coefficients.  Sweeps over the
number of elements are therefore paired.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScenarioGeometry",
    "FadingParams",
    "ChannelState",
    "ChannelBatch",
    "path_loss",
    "sample_rayleigh",
    "sample_rician",
    "sample_state",
    "sample_states",
    "place_users",
    "default_geometry",
    "state_rng",
    "db_to_linear",
    "dbm_to_watts",
    "watts_to_dbm",
]

# spawn_key namespaces for the experiment seed
_STATE_STREAM = 0
_PLACEMENT_STREAM = 1


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_w: float) -> float:
    return 10.0 * np.log10(x_w) + 30.0


@dataclass(frozen=True)
class ScenarioGeometry:
    """Node positions (meters) and large-scale path-loss parameters."""

    bs_position: np.ndarray
    irs_position: np.ndarray
    user_positions: np.ndarray  # (2, 3)
    reference_distance: float = 1.0
    reference_loss: float = 1e-3
    exp_bu: float = 3.5
    exp_bi: float = 2.2
    exp_iu: float = 2.8

    def __post_init__(self):
        for name in ("bs_position", "irs_position", "user_positions"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.user_positions.shape != (2, 3):
            raise ValueError("user_positions must have shape (2, 3)")
        if not 0.0 < self.reference_loss <= 1.0:
            raise ValueError("reference_loss must lie in (0, 1]")
        if min(self.exp_bu, self.exp_bi, self.exp_iu) < 2.0:
            raise ValueError("path-loss exponents must be >= 2")
        if self.reference_distance <= 0:
            raise ValueError("reference_distance must be positive")
        dists = [self.d_bi, *self.d_bu, *self.d_iu]
        if min(dists) <= 0:
            raise ValueError("all node distances must be positive")

    @property
    def d_bi(self) -> float:
        return float(np.linalg.norm(self.irs_position - self.bs_position))

    @property
    def d_bu(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.bs_position, axis=1)

    @property
    def d_iu(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.irs_position, axis=1)

    def link_gains(self) -> tuple[np.ndarray, float, np.ndarray]:
        """Mean link powers ``(bs->user[2], bs->irs, irs->user[2])``."""
        bu = np.array([path_loss(d, self.exp_bu, self) for d in self.d_bu])
        bi = path_loss(self.d_bi, self.exp_bi, self)
        iu = np.array([path_loss(d, self.exp_iu, self) for d in self.d_iu])
        return bu, bi, iu

    def with_irs_at(self, irs_position) -> "ScenarioGeometry":
        return ScenarioGeometry(
            self.bs_position, np.asarray(irs_position, dtype=float), self.user_positions,
            self.reference_distance, self.reference_loss,
            self.exp_bu, self.exp_bi, self.exp_iu,
        )


@dataclass(frozen=True)
class FadingParams:
    rician_factor: float
    num_elements: int
    noise_power: float
    seed: int = 0

    def __post_init__(self):
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be >= 0")
        # N = 0 is the no-IRS baseline
        if self.num_elements < 0:
            raise ValueError("num_elements must be >= 0")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")


@dataclass
class ChannelState:
    """One fading realization: direct links ``h``, BS-IRS ``g``, IRS-user ``r``."""

    h: np.ndarray  # (2,)
    g: np.ndarray  # (N,)
    r: np.ndarray  # (2, N)
    index: int = 0

    @property
    def num_elements(self) -> int:
        return self.g.shape[0]


@dataclass
class ChannelBatch:
    """Stacked fading states, used by the vectorized Monte Carlo paths."""

    h: np.ndarray  # (F, 2)
    g: np.ndarray  # (F, N)
    r: np.ndarray  # (F, 2, N)
    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(self.h.shape[0])

    def __len__(self) -> int:
        return self.h.shape[0]

    @property
    def num_elements(self) -> int:
        return self.g.shape[1]

    def state(self, i: int) -> ChannelState:
        return ChannelState(self.h[i].copy(), self.g[i].copy(), self.r[i].copy(), int(self.indices[i]))

    def subset(self, idx) -> "ChannelBatch":
        idx = np.asarray(idx)
        return ChannelBatch(self.h[idx], self.g[idx], self.r[idx], self.indices[idx])

    @classmethod
    def from_states(cls, states) -> "ChannelBatch":
        states = list(states)
        return cls(
            np.stack([s.h for s in states]),
            np.stack([s.g for s in states]),
            np.stack([s.r for s in states]),
            np.array([s.index for s in states]),
        )


def path_loss(d: float, exponent: float, geom: ScenarioGeometry | None = None) -> float:
    """Large-scale power gain ``rho0 * (d / d0) ** -exponent``.

    ``geom`` supplies ``rho0`` and ``d0``; without it the defaults
    (-30 dB at 1 m) are used.
    """
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    rho0 = 1e-3 if geom is None else geom.reference_loss
    d0 = 1.0 if geom is None else geom.reference_distance
    return rho0 * (d / d0) ** (-exponent)


def state_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STATE_STREAM, int(index)))
    return np.random.default_rng(ss)


def sample_rayleigh(rng: np.random.Generator, mean_power: float, size=None):
    """Circularly-symmetric complex Gaussian with ``E|x|^2 = mean_power``."""
    if mean_power < 0:
        raise ValueError("mean_power must be >= 0")
    z = rng.standard_normal(2 if size is None else (*np.atleast_1d(size), 2))
    x = np.sqrt(mean_power / 2.0) * (z[..., 0] + 1j * z[..., 1])
    return complex(x) if size is None else x


def _rician(mean_power, v, los, nlos):
    if np.isinf(v):
        w_los, w_nlos = 1.0, 0.0
    else:
        w_los, w_nlos = np.sqrt(v / (1.0 + v)), np.sqrt(1.0 / (1.0 + v))
    return np.sqrt(mean_power) * (w_los * los + w_nlos * nlos)


def sample_rician(rng: np.random.Generator, mean_power: float, v: float, los_component):
    """Rician sample around a unit-modulus LoS term.

    The scattered part is drawn through :func:`sample_rayleigh` with unit
    power, so ``v = 0`` consumes the generator exactly like a Rayleigh draw.
    """
    if v < 0:
        raise ValueError("Rician factor must be >= 0")
    los = np.asarray(los_component)
    size = None if los.ndim == 0 else los.shape
    nlos = sample_rayleigh(rng, 1.0, size)
    out = _rician(mean_power, v, los, nlos)
    return complex(out) if size is None else out


def ula_steering(num_elements: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA response; unit-modulus entries."""
    n = np.arange(num_elements)
    return np.exp(1j * np.pi * n * np.sin(angle))


def sample_state(geom: ScenarioGeometry, params: FadingParams, index: int,
                 rng: np.random.Generator | None = None) -> ChannelState:
    """Draw fading state ``index``.

    Without an explicit ``rng`` the state is reproducible from
    ``(params.seed, index)`` alone.
    """
    rng = state_rng(params.seed, index) if rng is None else rng
    n_el = params.num_elements
    v = params.rician_factor
    pl_bu, pl_bi, pl_iu = geom.link_gains()

    angles = rng.uniform(-np.pi / 2, np.pi / 2, size=3)
    zh = rng.standard_normal(4)
    h = np.sqrt(pl_bu / 2.0) * (zh[0::2] + 1j * zh[1::2])

    # element-major draws keep prefixes identical across N
    ze = rng.standard_normal((n_el, 6))
    nlos = (ze[:, 0::2] + 1j * ze[:, 1::2]) / np.sqrt(2.0)
    g = _rician(pl_bi, v, ula_steering(n_el, angles[0]), nlos[:, 0])
    r = np.stack([
        _rician(pl_iu[k], v, ula_steering(n_el, angles[1 + k]), nlos[:, 1 + k])
        for k in range(2)
    ])
    return ChannelState(h=h, g=g, r=r, index=int(index))


def sample_states(geom: ScenarioGeometry, params: FadingParams, indices) -> ChannelBatch:
    indices = np.asarray(indices)
    return ChannelBatch.from_states(sample_state(geom, params, int(i)) for i in indices)


def place_users(rng: np.random.Generator, center=(80.0, 10.0, 0.0), radius: float = 40.0) -> np.ndarray:
    """Two users uniform over the quarter disc ``x >= cx, y >= cy``."""
    center = np.asarray(center, dtype=float)
    rad = radius * np.sqrt(rng.uniform(size=2))
    ang = rng.uniform(0.0, np.pi / 2, size=2)
    pos = np.tile(center, (2, 1))
    pos[:, 0] += rad * np.cos(ang)
    pos[:, 1] += rad * np.sin(ang)
    return pos


def default_geometry(seed: int, irs_x: float = 70.0) -> ScenarioGeometry:
    """Simulation layout: BS at the origin, IRS on the x axis, users placed once per seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_PLACEMENT_STREAM,))
    users = place_users(np.random.default_rng(ss))
    return ScenarioGeometry(
        bs_position=np.zeros(3),
        irs_position=np.array([irs_x, 0.0, 0.0]),
        user_positions=users,
    )
