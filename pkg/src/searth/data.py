"""State sequences on disk and the synthetic zonal-advection generator.

A dataset directory holds one GT1 file per time step plus ``manifest.json``
describing the grid, the step length, the train/validation split and
per-channel normalisation statistics of the training split.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IOFormatError, MissingFileError
from .geometry import LatLonGrid
from .gt1 import gt1_read, gt1_write
from .rng import stream

STEP_HOURS = 6
MANIFEST = "manifest.json"


@dataclass
class Wave:
    wavenumber: int
    width: float
    speed: float
    amplitude: float
    phase: float


@dataclass
class SynthConfig:
    n_lat: int = 16
    n_lon: int = 32
    channels: int = 4
    steps: int = 400
    waves: int = 3
    max_wavenumber: int = 4
    cells_per_step: tuple[float, float] = (0.5, 2.0)
    width_range: tuple[float, float] = (20.0, 60.0)
    noise_amplitude: float = 0.05
    noise_decorrelation: float = 0.8
    train_fraction: float = 0.8
    seed: int = 0
    wave_table: list | None = None

    def validate(self) -> None:
        if min(self.n_lat, self.n_lon, self.channels, self.steps) <= 0:
            raise ConfigError("grid, channels and steps must be positive")
        if self.waves < 0 or self.max_wavenumber < 1:
            raise ConfigError("waves must be >= 0 and max_wavenumber >= 1")
        if not 0 <= self.noise_decorrelation < 1:
            raise ConfigError("noise_decorrelation must be in [0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        for channel in self.wave_specs():
            for w in channel:
                if int(w.wavenumber) != w.wavenumber:
                    raise ConfigError(f"zonal wavenumbers must be integers, got {w.wavenumber}")
                if w.width <= 0:
                    raise ConfigError(f"envelope width must be positive, got {w.width}")

    def wave_specs(self) -> list[list[Wave]]:
        """Per-channel waves: the explicit table, else drawn from the seed."""
        if self.wave_table is not None:
            if len(self.wave_table) != self.channels:
                raise ConfigError(f"wave_table has {len(self.wave_table)} channels, expected {self.channels}")
            return [[w if isinstance(w, Wave) else Wave(**w) for w in ch] for ch in self.wave_table]
        rng = stream(self.seed, "synth-waves")
        dlon = 2 * np.pi / self.n_lon
        out = []
        for _ in range(self.channels):
            ch = []
            for _ in range(self.waves):
                m = int(rng.integers(1, self.max_wavenumber + 1))
                cells = rng.uniform(*self.cells_per_step) * rng.choice([-1.0, 1.0])
                ch.append(Wave(wavenumber=m,
                               width=float(rng.uniform(*self.width_range)),
                               speed=float(m * cells * dlon),
                               amplitude=float(rng.uniform(0.5, 1.5)),
                               phase=float(rng.uniform(0, 2 * np.pi))))
            out.append(ch)
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wave_table"] = [[dataclasses.asdict(w) for w in ch] for ch in self.wave_specs()]
        return d


def wave_field(waves: list[Wave], t: float, grid: LatLonGrid) -> np.ndarray:
    """Sum of travelling waves ``a cos(m lon - w t + phi) exp(-(lat/width)^2)``."""
    lam = np.deg2rad(grid.longitudes)
    out = np.zeros(grid.shape)
    for w in waves:
        env = np.exp(-(grid.latitudes / w.width) ** 2)
        out += w.amplitude * env[:, None] * np.cos(w.wavenumber * lam[None, :] - w.speed * t + w.phase)
    return out


def gen_synthetic(cfg: SynthConfig) -> np.ndarray:
    """``[steps, channels, n_lat, n_lon]`` float64 states."""
    cfg.validate()
    grid = LatLonGrid.regular(cfg.n_lat, cfg.n_lon)
    specs = cfg.wave_specs()
    shape = (cfg.channels, cfg.n_lat, cfg.n_lon)
    rho = cfg.noise_decorrelation
    states = np.empty((cfg.steps,) + shape)
    noise = np.zeros(shape)
    for t in range(cfg.steps):
        eps = stream(cfg.seed, "synth-noise", t).standard_normal(shape)
        if t == 0:
            noise = cfg.noise_amplitude * eps
        else:
            noise = rho * noise + np.sqrt(1 - rho * rho) * cfg.noise_amplitude * eps
        for c in range(cfg.channels):
            states[t, c] = wave_field(specs[c], t, grid) + noise[c]
    return states


@dataclass
class Dataset:
    states: np.ndarray
    grid: LatLonGrid
    train_steps: int
    mean: np.ndarray
    std: np.ndarray
    step_hours: int = STEP_HOURS
    channel_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.channel_names:
            self.channel_names = [f"var{c}" for c in range(self.states.shape[1])]
        if not 2 < self.train_steps <= self.states.shape[0]:
            raise ConfigError(f"train_steps {self.train_steps} invalid for {self.states.shape[0]} steps")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[:, None, None]) / self.std[:, None, None]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std[:, None, None] + self.mean[:, None, None]

    def normalized(self, split: str = "all") -> np.ndarray:
        return self.normalize(self.split(split))

    def split(self, name: str) -> np.ndarray:
        if name == "train":
            return self.states[:self.train_steps]
        if name == "val":
            return self.states[self.train_steps:]
        if name == "all":
            return self.states
        raise ValueError(f"unknown split {name!r}")


def channel_stats(states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = states.mean(axis=(0, 2, 3))
    std = states.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def make_dataset(states: np.ndarray, train_fraction: float = 0.8, grid: LatLonGrid | None = None,
                 meta: dict | None = None) -> Dataset:
    T, _, H, W = states.shape
    grid = grid or LatLonGrid.regular(H, W)
    train_steps = max(3, int(round(train_fraction * T)))
    mean, std = channel_stats(states[:train_steps])
    return Dataset(states, grid, train_steps, mean, std, meta=meta or {})


def write_dataset(path, ds: Dataset, config: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    files = []
    for t in range(ds.n_steps):
        name = f"step_{t:05d}.gt1"
        gt1_write(os.path.join(path, name), ds.states[t])
        files.append(name)
    manifest = {
        "format": "searth-dataset/1",
        "config": config or {},
        "n_steps": ds.n_steps,
        "step_hours": ds.step_hours,
        "train_steps": ds.train_steps,
        "latitudes": ds.grid.latitudes.tolist(),
        "longitudes": ds.grid.longitudes.tolist(),
        "channel_names": ds.channel_names,
        "channel_mean": ds.mean.tolist(),
        "channel_std": ds.std.tolist(),
        "files": files,
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_dataset(path) -> Dataset:
    mpath = os.path.join(path, MANIFEST)
    if not os.path.exists(mpath):
        raise MissingFileError(f"no dataset manifest at {mpath}")
    with open(mpath) as fh:
        try:
            m = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IOFormatError(f"{mpath}: {exc}") from None
    states = np.stack([gt1_read(os.path.join(path, f)) for f in m["files"]]).astype(np.float64)
    grid = LatLonGrid(np.array(m["latitudes"]), np.array(m["longitudes"]))
    return Dataset(states, grid, m["train_steps"], np.array(m["channel_mean"]), np.array(m["channel_std"]),
                   m["step_hours"], m["channel_names"], meta=m.get("config", {}))


def generate_dataset(cfg: SynthConfig) -> Dataset:
    states = gen_synthetic(cfg)
    return make_dataset(states, cfg.train_fraction, meta=cfg.to_dict())
