"""Synthetic grant-free access scenarios: pilots, sparse channels, observations."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .complexlift import ComplexMat, lift_stack
from .container import ShapeMismatchError, load_arrays, save_arrays

NOISELESS = "noiseless"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment family.  ``snr_db=None`` means noiseless."""

    N: int = 64
    L: int = 32
    M: int = 4
    p: float = 0.1
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.N, self.L, self.M) < 1:
            raise ScenarioError(f"N, L, M must be >= 1, got {self.N}, {self.L}, {self.M}")
        if not self.L < self.N:
            raise ScenarioError(f"need L < N (underdetermined), got L={self.L}, N={self.N}")
        if not 0 < self.p < 1:
            raise ScenarioError(f"activity probability must lie in (0, 1), got {self.p}")
        if self.snr_db == NOISELESS:
            object.__setattr__(self, "snr_db", None)
        elif self.snr_db is not None:
            object.__setattr__(self, "snr_db", float(self.snr_db))

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None

    @property
    def noise_var(self) -> float:
        """Per-entry complex noise variance so that E||SX||^2 / E||Z||^2 = 10^(snr/10).

        With unit-variance pilots and channels, E||SX||_F^2 = L*M*N*p.
        """
        if self.snr_db is None:
            return 0.0
        return self.N * self.p * 10.0 ** (-self.snr_db / 10.0)

    def with_snr(self, snr_db) -> "ScenarioConfig":
        return ScenarioConfig(self.N, self.L, self.M, self.p, snr_db, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["snr_db"] is None:
            d["snr_db"] = NOISELESS
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"N", "L", "M", "p", "snr_db", "seed"}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Sample:
    activity: np.ndarray
    H: ComplexMat
    X: ComplexMat
    Y: ComplexMat
    noise_var: float

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (np.array_equal(self.activity, other.activity) and self.H == other.H
                and self.X == other.X and self.Y == other.Y and self.noise_var == other.noise_var)


def _complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> ComplexMat:
    s = np.sqrt(var / 2.0)
    return ComplexMat(s * rng.standard_normal(shape), s * rng.standard_normal(shape))


def gen_pilot(N: int, L: int, seed: int) -> ComplexMat:
    """L x N pilot with i.i.d. CN(0, 1) entries."""
    return _complex_normal(np.random.default_rng(seed), (L, N))


def sample_seed(dataset_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([dataset_seed, index])


def _masked(activity: np.ndarray, H: ComplexMat) -> ComplexMat:
    a = activity[:, None]
    return ComplexMat(np.where(a, H.re, 0.0), np.where(a, H.im, 0.0))


def _observe(pilot: ComplexMat, X: ComplexMat, Z: ComplexMat) -> ComplexMat:
    S = pilot.to_complex()
    SX = S @ X.to_complex()
    return ComplexMat(SX.real + Z.re, SX.imag + Z.im)


def gen_sample(config: ScenarioConfig, pilot: ComplexMat, seed) -> Sample:
    """One draw of activity, Rayleigh channels and noisy observation.

    The random stream is consumed identically for every SNR (the noise is
    drawn at unit variance and scaled), so changing only ``snr_db`` changes
    only the noise level.
    """
    if pilot.shape != (config.L, config.N):
        raise ScenarioError(f"pilot shape {pilot.shape} does not match L x N = "
                            f"{config.L} x {config.N}")
    rng = np.random.default_rng(seed)
    activity = rng.random(config.N) < config.p
    H = _complex_normal(rng, (config.N, config.M))
    Z_unit = _complex_normal(rng, (config.L, config.M))
    sigma = np.sqrt(config.noise_var)
    Z = ComplexMat(sigma * Z_unit.re, sigma * Z_unit.im)
    X = _masked(activity, H)
    return Sample(activity, H, X, _observe(pilot, X, Z), config.noise_var)


@dataclass(frozen=True, eq=False)
class Dataset:
    config: ScenarioConfig
    pilot: ComplexMat
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.config == other.config and self.pilot == other.pilot
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.samples, other.samples)))

    @cached_property
    def lifted(self) -> tuple[np.ndarray, np.ndarray]:
        """``(Y~, X~)`` batches of shapes (n, 2L, M) and (n, 2N, M)."""
        c = self.config
        if not self.samples:
            return np.zeros((0, 2 * c.L, c.M)), np.zeros((0, 2 * c.N, c.M))
        Y = np.stack([lift_stack(s.Y) for s in self.samples])
        X = np.stack([lift_stack(s.X) for s in self.samples])
        return Y, X

    @property
    def activity(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.config.N), dtype=bool)
        return np.stack([s.activity for s in self.samples])

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (Dataset(self.config, self.pilot, self.samples[:n_first]),
                Dataset(self.config, self.pilot, self.samples[n_first:]))


def gen_dataset(config: ScenarioConfig, n_samples: int, pilot: ComplexMat | None = None,
                offset: int = 0) -> Dataset:
    """Samples ``offset .. offset+n_samples-1`` of the family; default pilot from the seed."""
    if pilot is None:
        pilot = gen_pilot(config.N, config.L, config.seed)
    samples = [gen_sample(config, pilot, sample_seed(config.seed, offset + i))
               for i in range(n_samples)]
    return Dataset(config, pilot, samples)


def save_dataset(ds: Dataset, path) -> None:
    c = ds.config
    n = len(ds)
    shape_h = (n, c.N, c.M)
    arrays = {
        "pilot_re": ds.pilot.re, "pilot_im": ds.pilot.im,
        "activity": ds.activity.astype(np.float64).reshape(n, c.N),
        "H_re": np.stack([s.H.re for s in ds.samples]) if n else np.zeros(shape_h),
        "H_im": np.stack([s.H.im for s in ds.samples]) if n else np.zeros(shape_h),
        "Y_re": np.stack([s.Y.re for s in ds.samples]) if n else np.zeros((n, c.L, c.M)),
        "Y_im": np.stack([s.Y.im for s in ds.samples]) if n else np.zeros((n, c.L, c.M)),
        "noise_var": np.array([s.noise_var for s in ds.samples], dtype=np.float64),
    }
    save_arrays(path, arrays, "dataset", {"config": c.to_dict(), "n_samples": n})


def load_dataset(path) -> Dataset:
    arrays, meta = load_arrays(path, kind="dataset")
    try:
        config = ScenarioConfig.from_dict(meta["config"])
        n = int(meta["n_samples"])
    except (KeyError, TypeError, ScenarioError) as exc:
        raise ShapeMismatchError(f"{path}: bad dataset header ({exc})") from exc
    c = config
    expected = {
        "pilot_re": (c.L, c.N), "pilot_im": (c.L, c.N), "activity": (n, c.N),
        "H_re": (n, c.N, c.M), "H_im": (n, c.N, c.M),
        "Y_re": (n, c.L, c.M), "Y_im": (n, c.L, c.M), "noise_var": (n,),
    }
    for name, shape in expected.items():
        if name not in arrays:
            raise ShapeMismatchError(f"{path}: missing array {name!r}")
        if arrays[name].shape != shape:
            raise ShapeMismatchError(
                f"{path}: array {name!r} has shape {arrays[name].shape}, expected {shape}")
    pilot = ComplexMat(arrays["pilot_re"], arrays["pilot_im"])
    samples = []
    for i in range(n):
        activity = arrays["activity"][i] != 0.0
        H = ComplexMat(arrays["H_re"][i].copy(), arrays["H_im"][i].copy())
        Y = ComplexMat(arrays["Y_re"][i].copy(), arrays["Y_im"][i].copy())
        samples.append(Sample(activity, H, _masked(activity, H), Y, float(arrays["noise_var"][i])))
    return Dataset(config, pilot, samples)
