"""Latitude/longitude grid geometry and Earth-topology attention masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

BLOCK = -1e9


@dataclass(frozen=True)
class LatLonGrid:
    latitudes: np.ndarray
    longitudes: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.latitudes, dtype=np.float64)
        lon = np.asarray(self.longitudes, dtype=np.float64)
        if lat.ndim != 1 or lon.ndim != 1 or lat.size == 0 or lon.size == 0:
            raise ConfigError("latitudes and longitudes must be non-empty 1-D arrays")
        if np.any(np.diff(lat) >= 0):
            raise ConfigError("latitudes must be strictly decreasing from north")
        if np.any(np.abs(lat) > 90):
            raise ConfigError("latitudes must lie within [-90, 90]")
        step = 360.0 / lon.size
        if not np.allclose(np.diff(lon), step):
            raise ConfigError("longitudes must be uniformly spaced over 360 degrees")
        object.__setattr__(self, "latitudes", lat)
        object.__setattr__(self, "longitudes", lon)

    @classmethod
    def regular(cls, n_lat: int, n_lon: int) -> "LatLonGrid":
        """Cell-centred grid: rows from north to south, columns from 0 degrees east."""
        dlat = 180.0 / n_lat
        lat = 90.0 - dlat * (np.arange(n_lat) + 0.5)
        lon = np.arange(n_lon) * (360.0 / n_lon)
        return cls(lat, lon)

    @property
    def n_lat(self) -> int:
        return self.latitudes.size

    @property
    def n_lon(self) -> int:
        return self.longitudes.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_lat, self.n_lon

    def weights(self) -> np.ndarray:
        return latitude_weights(self.latitudes)


def latitude_weights(latitudes) -> np.ndarray:
    """Area weights ``N * cos(phi_i) / sum_j cos(phi_j)``; they sum to N."""
    lat = np.asarray(latitudes, dtype=np.float64)
    if lat.size == 0:
        raise ConfigError("latitude_weights: empty latitude list")
    if np.any(np.abs(lat) > 90):
        raise ConfigError("latitude_weights: latitudes must lie within [-90, 90]")
    c = np.cos(np.deg2rad(lat))
    total = c.sum()
    if total <= 0:
        raise ConfigError("latitude_weights: all latitudes at the poles")
    return lat.size * c / total


QUARTER_SHAPE = (721, 1440)
ONE_DEGREE_SHAPE = (180, 360)


def regrid_quarter_to_one(field: np.ndarray) -> np.ndarray:
    """0.25 degree to 1 degree by 4x4 block means, dropping the southern pole row.

    Accepts ``[721, 1440]`` or ``[C, 721, 1440]`` with rows ordered north to south.
    """
    field = np.asarray(field)
    if field.shape[-2:] != QUARTER_SHAPE or field.ndim not in (2, 3):
        raise ShapeError(f"regrid: expected (..., 721, 1440), got {field.shape}")
    kept = field[..., :720, :]
    lead = kept.shape[:-2]
    blocks = kept.reshape(lead + (180, 4, 360, 4))
    return blocks.mean(axis=(-3, -1))


def regrid_latitudes(latitudes) -> np.ndarray:
    """Latitudes of the regridded rows: block means of the retained source rows."""
    lat = np.asarray(latitudes, dtype=np.float64)
    if lat.shape != (QUARTER_SHAPE[0],):
        raise ShapeError(f"regrid: expected 721 latitudes, got {lat.shape}")
    return lat[:720].reshape(180, 4).mean(axis=1)


def _check_tiling(H: int, W: int, win_h: int, win_w: int) -> None:
    if win_h <= 0 or win_w <= 0 or H % win_h or W % win_w:
        raise ShapeError(f"window ({win_h}, {win_w}) does not tile grid ({H}, {W})")


def window_partition(x: np.ndarray, win_h: int, win_w: int) -> np.ndarray:
    """``[C, H, W]`` to ``[num_windows, win_h * win_w, C]``, windows in row-major order."""
    C, H, W = x.shape
    _check_tiling(H, W, win_h, win_w)
    t = x.reshape(C, H // win_h, win_h, W // win_w, win_w)
    t = t.transpose(1, 3, 2, 4, 0)
    return t.reshape(-1, win_h * win_w, C)


def window_reverse(windows: np.ndarray, H: int, W: int, win_h: int, win_w: int) -> np.ndarray:
    _check_tiling(H, W, win_h, win_w)
    nw, T, C = windows.shape
    if nw != (H // win_h) * (W // win_w) or T != win_h * win_w:
        raise ShapeError(f"window_reverse: {windows.shape} inconsistent with grid ({H}, {W})")
    t = windows.reshape(H // win_h, W // win_w, win_h, win_w, C)
    return t.transpose(4, 0, 2, 1, 3).reshape(C, H, W)


def _check_mask_args(H, W, win_h, win_w, shift_h, shift_w, mode):
    _check_tiling(H, W, win_h, win_w)
    if not (0 <= shift_h < win_h and 0 <= shift_w < win_w):
        raise ConfigError(f"shift ({shift_h}, {shift_w}) must satisfy 0 <= shift < window ({win_h}, {win_w})")
    if mode not in ("earth", "planar"):
        raise ConfigError(f"mask mode must be 'earth' or 'planar', got {mode!r}")


def _bands(n: int, win: int, shift: int) -> np.ndarray:
    band = np.zeros(n, dtype=np.int64)
    band[n - win:n - shift] = 1
    band[n - shift:] = 2
    return band


def region_map(H, W, win_h, win_w, shift_h, shift_w, mode="earth") -> np.ndarray:
    """Region label per post-roll cell; tokens attend only within their region."""
    rows = _bands(H, win_h, shift_h)
    if mode == "earth":
        return np.repeat(rows[:, None], W, axis=1)
    cols = _bands(W, win_w, shift_w)
    return 3 * rows[:, None] + cols[None, :]


def earth_attention_mask(H: int, W: int, win_h: int, win_w: int, shift_h: int, shift_w: int,
                         mode: str = "earth") -> np.ndarray:
    """Additive mask ``[num_windows, T, T]`` for attention on a rolled grid.

    Features are rolled by ``(-shift_h, -shift_w)`` before partitioning. In
    ``earth`` mode longitude wraps freely and only pairs split by the pole
    seam are blocked; ``planar`` mode also blocks the longitude seam.
    """
    _check_mask_args(H, W, win_h, win_w, shift_h, shift_w, mode)
    nw = (H // win_h) * (W // win_w)
    T = win_h * win_w
    if shift_h == 0 and shift_w == 0:
        return np.zeros((nw, T, T))
    regions = region_map(H, W, win_h, win_w, shift_h, shift_w, mode)
    labels = window_partition(regions[None].astype(np.float64), win_h, win_w)[..., 0]
    differ = labels[:, :, None] != labels[:, None, :]
    return np.where(differ, BLOCK, 0.0)


def pole_seam_mask(H: int, W: int, win_h: int, win_w: int, shift_h: int, shift_w: int) -> np.ndarray:
    """Earth-mode mask built pair by pair from the wrap predicate.

    Two tokens in one window are blocked iff exactly one of them crossed the
    pole seam when rolled, i.e. ``(i + shift_h >= H)`` differs between them.
    """
    _check_mask_args(H, W, win_h, win_w, shift_h, shift_w, "earth")
    nww = W // win_w
    nw = (H // win_h) * nww
    T = win_h * win_w
    mask = np.zeros((nw, T, T))
    for w in range(nw):
        r0, c0 = (w // nww) * win_h, (w % nww) * win_w
        for a in range(T):
            ia = r0 + a // win_w
            for b in range(T):
                ib = r0 + b // win_w
                if (ia + shift_h >= H) != (ib + shift_h >= H):
                    mask[w, a, b] = BLOCK
    return mask


def window_token_positions(H: int, W: int, win_h: int, win_w: int) -> np.ndarray:
    """``[num_windows, T, 2]`` post-roll (row, col) of every token."""
    _check_tiling(H, W, win_h, win_w)
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    grid = np.stack([ii, jj])
    return window_partition(grid, win_h, win_w).astype(np.int64)


def default_shift(win: int) -> int:
    return win // 2
