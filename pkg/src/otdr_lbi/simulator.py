"""Synthetic OTDR profiles: ideal trace, photon-counting noise and coherent Rayleigh noise.

A profile is built as ``A @ beta_sim`` (a dB ramp plus level drops), then
Poisson counting noise is applied to the photon counts behind each sample,
then coherent Rayleigh noise (CRN) multiplies the linear power. All
randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .dictionary import DEFAULT_SIGMA, DictionaryShape, apply_dictionary

CRN_FLOOR = 1e-12


@dataclass(frozen=True)
class FiberSpec:
    """Ground truth for one fiber.

    ``events`` holds ``(position_index, loss_db)`` pairs. ``position_index``
    is the 1-based sample at which the loss first shows up, so the profile
    drops between samples ``position_index - 1`` and ``position_index``.
    """

    n_samples: int
    sample_spacing_m: float = 1.0
    attenuation_db_per_km: float = 0.2
    events: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        events = tuple((int(pos), float(loss)) for pos, loss in self.events)
        object.__setattr__(self, "events", events)
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.sample_spacing_m <= 0:
            raise ValueError("sample_spacing_m must be positive")
        positions = [pos for pos, _ in events]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ValueError("event positions must be strictly ascending")
        for pos, loss in events:
            if not 2 <= pos <= self.n_samples:
                raise ValueError(f"event position {pos} outside 2..{self.n_samples}")
            if not loss > 0:
                raise ValueError(f"event loss must be positive, got {loss}")

    @property
    def length_m(self) -> float:
        return self.n_samples * self.sample_spacing_m

    @property
    def slope_db_per_sample(self) -> float:
        return -self.attenuation_db_per_km * self.sample_spacing_m / 1000.0

    def beta(self, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
        """Sparse coefficient vector in dictionary units."""
        beta = np.zeros(self.n_samples + 1)
        beta[0] = self.slope_db_per_sample / sigma
        for pos, loss in self.events:
            beta[pos] = -loss
        return beta


@dataclass(frozen=True)
class NoiseSpec:
    """Noise parameters.

    ``delta_z_m=None`` uses the fiber length as the CRN length scale.
    ``crn_domain`` is ``"linear"`` (multiply linear power by ``1 + s*g``) or
    ``"db"`` (add ``s*g`` dB directly).
    """

    c0: float = 1e5
    delta_nu_hz: float = 1e5
    v_g_m_s: float = 2e8
    delta_z_m: float | None = None
    counting: bool = True
    crn: bool = True
    crn_domain: str = "linear"

    def __post_init__(self):
        for name in ("c0", "delta_nu_hz", "v_g_m_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_z_m is not None and not self.delta_z_m > 0:
            raise ValueError("delta_z_m must be positive")
        if self.crn_domain not in ("linear", "db"):
            raise ValueError("crn_domain must be 'linear' or 'db'")

    def crn_sigma(self, fiber_length_m: float) -> float:
        dz = fiber_length_m if self.delta_z_m is None else self.delta_z_m
        return crn_sigma(self.v_g_m_s, dz, self.delta_nu_hz)


NOISELESS = NoiseSpec(counting=False, crn=False)


def crn_sigma(v_g_m_s: float, delta_z_m: float, delta_nu_hz: float) -> float:
    """Relative CRN amplitude ``sqrt(v_g / (4 * dz * dnu))``."""
    return math.sqrt(v_g_m_s / (4.0 * delta_z_m * delta_nu_hz))


def synth_clean_profile(spec: FiberSpec, shape: DictionaryShape | None = None):
    """Return ``(y_sim, beta_sim)`` with ``y_sim = A @ beta_sim``."""
    if shape is None:
        shape = DictionaryShape.for_samples(spec.n_samples)
    if shape.p != spec.n_samples + 1:
        raise ValueError(f"dictionary has p={shape.p}, fiber needs {spec.n_samples + 1}")
    beta = spec.beta(shape.sigma)
    return apply_dictionary(shape, beta), beta


def add_counting_noise(y_db, c0: float, rng: np.random.Generator):
    """Poisson photon-count noise.

    Sample ``i`` carries ``C_i = c0 * 10**(y_i/10)`` expected counts; the
    drawn count is converted back to dB relative to ``c0``. Zero counts are
    clamped to one. Returns ``(y_noisy, n_clamped)``.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    y_db = np.asarray(y_db, dtype=float)
    counts = rng.poisson(c0 * 10.0 ** (y_db / 10.0)).astype(float)
    zero = counts < 1
    counts[zero] = 1.0
    return 10.0 * np.log10(counts / c0), int(zero.sum())


def add_crn(y_db, sigma_crn: float, rng: np.random.Generator, domain: str = "linear"):
    """Coherent Rayleigh noise with relative amplitude ``sigma_crn``.

    In the linear domain the power is multiplied by ``1 + sigma_crn * g`` and
    floored at ``1e-12`` before going back to dB. Returns
    ``(y_noisy, n_floored)``.
    """
    y_db = np.asarray(y_db, dtype=float)
    if sigma_crn == 0:
        return y_db.copy(), 0
    g = rng.standard_normal(y_db.size)
    if domain == "db":
        return y_db + sigma_crn * g, 0
    lin = 10.0 ** (y_db / 10.0) * (1.0 + sigma_crn * g)
    low = lin < CRN_FLOOR
    lin[low] = CRN_FLOOR
    return 10.0 * np.log10(lin), int(low.sum())


@dataclass
class SimulatedProfile:
    spec: FiberSpec
    y: np.ndarray
    y_clean: np.ndarray
    beta: np.ndarray
    sigma: float = DEFAULT_SIGMA
    counts_clamped: int = 0
    crn_floored: int = 0
    length: int = field(init=False)
    replicate: int = 0

    def __post_init__(self):
        self.length = self.spec.n_samples


def simulate_profile(
    spec: FiberSpec,
    noise: NoiseSpec = NoiseSpec(),
    rng: np.random.Generator | None = None,
    sigma: float = DEFAULT_SIGMA,
) -> SimulatedProfile:
    """Clean profile, then counting noise, then CRN."""
    rng = np.random.default_rng() if rng is None else rng
    y_clean, beta = synth_clean_profile(spec, DictionaryShape.for_samples(spec.n_samples, sigma))
    y = y_clean
    clamped = floored = 0
    if noise.counting:
        y, clamped = add_counting_noise(y, noise.c0, rng)
    if noise.crn:
        y, floored = add_crn(y, noise.crn_sigma(spec.length_m), rng, noise.crn_domain)
    return SimulatedProfile(spec, np.asarray(y, dtype=float), y_clean, beta, sigma, clamped, floored)


def draw_positions(n_samples: int, count: int, rng: np.random.Generator, min_separation: int = 2) -> np.ndarray:
    """Sorted fault positions in ``2..n_samples``, pairwise at least ``min_separation`` apart."""
    span = n_samples - 1  # candidates 2..n
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if (count - 1) * min_separation + 1 > span:
        raise ValueError(f"cannot place {count} faults {min_separation} apart in {n_samples} samples")
    # "stars and bars": uniform over feasible sets, no rejection loop
    slack = span - (count - 1) * (min_separation - 1)
    base = np.sort(rng.choice(slack, size=count, replace=False))
    return base + np.arange(count) * (min_separation - 1) + 2


def random_fiber(
    n_samples: int,
    faults: int,
    mag_range_db: tuple[float, float],
    rng: np.random.Generator,
    sample_spacing_m: float = 1.0,
    attenuation_db_per_km: float = 0.2,
    min_separation: int = 2,
) -> FiberSpec:
    low, high = mag_range_db
    if not 0 < low <= high:
        raise ValueError("magnitude range must satisfy 0 < low <= high")
    pos = draw_positions(n_samples, faults, rng, min_separation)
    mags = rng.uniform(low, high, size=faults)
    return FiberSpec(n_samples, sample_spacing_m, attenuation_db_per_km, tuple(zip(pos.tolist(), mags.tolist())))


FULL_LENGTHS = tuple(range(5000, 15001, 1000))
DESK_LENGTHS = (5000, 10000, 15000)


def random_testbench(
    lengths: Sequence[int] = DESK_LENGTHS,
    profiles_per_length: int = 50,
    faults_per_profile: int = 5,
    mag_range_db: tuple[float, float] = (0.5, 5.0),
    seed: int = 0,
    noise: NoiseSpec = NoiseSpec(),
    sample_spacing_m: float = 1.0,
    attenuation_db_per_km: float = 0.2,
    min_separation: int = 2,
    sigma: float = DEFAULT_SIGMA,
) -> Iterator[SimulatedProfile]:
    """Yield random noisy profiles, one independent generator per (seed, length, replicate)."""
    if profiles_per_length < 0 or faults_per_profile < 0:
        raise ValueError("counts must be non-negative")
    for length in lengths:
        for rep in range(profiles_per_length):
            rng = np.random.default_rng(np.random.SeedSequence([seed, int(length), rep]))
            spec = random_fiber(
                int(length), faults_per_profile, mag_range_db, rng,
                sample_spacing_m, attenuation_db_per_km, min_separation,
            )
            prof = simulate_profile(spec, noise, rng, sigma)
            prof.replicate = rep
            yield prof


REFERENCE_EVENTS = (
    (3593, 13.9),
    (4404, 2.4),
    (5298, 0.4),
    (5313, 1.1),
    (5317, 1.2),
    (5349, 0.6),
    (6395, 0.7),
    (7932, 5.8),
)


def reference_fiber(n_samples: int = 8000) -> FiberSpec:
    """Eight-event fiber with a tight cluster near 5.3 km (1 m per sample)."""
    return FiberSpec(n_samples, 1.0, 0.2, REFERENCE_EVENTS)
