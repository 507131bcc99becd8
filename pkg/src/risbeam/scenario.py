"""Synthetic multipath scenario generation.

Produces paired channel sets for the two-user RIS setup: a "real" set
synthesized from the full path list and a "DT" (digital twin) set from the
strongest few paths of the same list, so their difference is exactly the
truncated tail. Geometry drives the deterministic line-of-sight ray of each
link; scattered rays carry complex Gaussian gains with an exponentially
decaying power profile and uniform angles. All arrays are uniform linear
arrays laid along the global x axis, so a direction with unit vector u has
steering angle asin(u_x) from broadside.

Links (user 2 has no direct BS channel by construction):
    h1   BS  -> user 1   (n_rx x n_tx)
    g1   RIS -> user 1   (n_rx x n_ris)
    g2   RIS -> user 2   (n_rx x n_ris)
    h_br BS  -> RIS      (n_ris x n_tx), shared untruncated by both sets
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import complex_normal

LINK_NAMES = ("h1", "g1", "g2", "h_br")

# expected scattered-path power relative to the line-of-sight ray decays as
# exp(-p * PROFILE_DECAY) for the p-th scattered ray
PROFILE_DECAY = 0.5


@dataclass(frozen=True)
class Grid:
    """Rectangular service region: origin corner, x/y extent, node spacing (m)."""
    origin: tuple[float, float, float]
    extent: tuple[float, float]
    spacing: float = 0.2

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValidationError("grid spacing must be positive")
        if self.extent[0] < 0 or self.extent[1] < 0:
            raise ValidationError("grid extent must be nonnegative")

    def contains(self, pos) -> bool:
        x, y = float(pos[0]), float(pos[1])
        ox, oy, _ = self.origin
        return (
            ox - 1e-9 <= x <= ox + self.extent[0] + 1e-9
            and oy - 1e-9 <= y <= oy + self.extent[1] + 1e-9
        )

    def node_counts(self) -> tuple[int, int]:
        return (
            int(np.floor(self.extent[0] / self.spacing)) + 1,
            int(np.floor(self.extent[1] / self.spacing)) + 1,
        )

    def draw_node(self, rng: np.random.Generator) -> np.ndarray:
        """Uniformly pick one lattice node of the region."""
        nx, ny = self.node_counts()
        ix = int(rng.integers(nx))
        iy = int(rng.integers(ny))
        ox, oy, oz = self.origin
        return np.array([ox + ix * self.spacing, oy + iy * self.spacing, oz])

    def segment_centers(self, nx: int, ny: int) -> list[np.ndarray]:
        """Centers of an nx-by-ny equal partition of the region."""
        ox, oy, oz = self.origin
        out = []
        for iy in range(ny):
            for ix in range(nx):
                out.append(
                    np.array(
                        [
                            ox + (ix + 0.5) * self.extent[0] / nx,
                            oy + (iy + 0.5) * self.extent[1] / ny,
                            oz,
                        ]
                    )
                )
        return out


def _default_bs_grid() -> Grid:
    return Grid(origin=(-8.0, 15.0, 1.5), extent=(16.0, 10.0), spacing=0.2)


def _default_ris_grid() -> Grid:
    return Grid(origin=(20.0, 18.0, 1.5), extent=(12.0, 10.0), spacing=0.2)


@dataclass(frozen=True)
class ScenarioConfig:
    n_tx: int = 16
    n_rx: int = 1
    n_ris: int = 16
    bs_position: tuple[float, float, float] = (0.0, 0.0, 6.0)
    ris_position: tuple[float, float, float] = (25.0, 10.0, 6.0)
    bs_grid: Grid = field(default_factory=_default_bs_grid)
    ris_grid: Grid = field(default_factory=_default_ris_grid)
    element_spacing: float = 0.5  # in wavelengths
    l_real: int = 10
    l_dt: int = 2
    noise_power: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.n_ris) < 1:
            raise ValidationError("antenna/element counts must be >= 1")
        if self.l_dt > self.l_real or self.l_dt < 1:
            raise ValidationError("need 1 <= l_dt <= l_real")
        if self.element_spacing <= 0:
            raise ValidationError("element spacing must be positive")
        if self.noise_power <= 0:
            raise ValidationError("noise power must be positive")


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    aod: float  # departure azimuth, radians from broadside
    aoa: float  # arrival azimuth
    expected_power: float  # variance of the profile slot this ray was drawn from
    los: bool = False

    @property
    def power(self) -> float:
        return float(abs(self.gain) ** 2)


@dataclass(frozen=True)
class ChannelSet:
    h1: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    h_br: np.ndarray
    provenance: str  # 'dt' | 'real'

    def __post_init__(self):
        if self.provenance not in ("dt", "real"):
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        n_rx, n_tx = self.h1.shape
        m = self.h_br.shape[0]
        if self.h_br.shape[1] != n_tx:
            raise ValidationError("h_br column count must match h1")
        if self.g1.shape != (n_rx, m) or self.g2.shape != (n_rx, m):
            raise ValidationError("g1/g2 shapes inconsistent with h1/h_br")

    @property
    def n_tx(self) -> int:
        return self.h1.shape[1]

    @property
    def n_rx(self) -> int:
        return self.h1.shape[0]

    @property
    def n_ris(self) -> int:
        return self.h_br.shape[0]

    def link(self, name: str) -> np.ndarray:
        if name not in LINK_NAMES:
            raise ValidationError(f"unknown link {name!r}")
        return getattr(self, name)


def steering_ula(n: int, angle: float, spacing: float) -> np.ndarray:
    """ULA response a[i] = exp(j 2 pi spacing i sin(angle)), i = 0..n-1."""
    if n < 1:
        raise ValidationError("array size must be >= 1")
    i = np.arange(n)
    return np.exp(2j * np.pi * spacing * i * np.sin(angle))


def synth_channel(
    paths: list[PathComponent], rx_n: int, tx_n: int, spacing: float
) -> np.ndarray:
    """Ray sum H = sum_l gain_l a_rx(aoa_l) a_tx(aod_l)^H."""
    if not paths:
        raise ValidationError("path list must be non-empty")
    h = np.zeros((rx_n, tx_n), dtype=complex)
    for p in paths:
        a_rx = steering_ula(rx_n, p.aoa, spacing)
        a_tx = steering_ula(tx_n, p.aod, spacing)
        h += p.gain * np.outer(a_rx, a_tx.conj())
    return h


def channel_error(real: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Additive approximation error: real - dt."""
    real = np.asarray(real)
    dt = np.asarray(dt)
    if real.shape != dt.shape:
        raise ValidationError(f"shape mismatch {real.shape} vs {dt.shape}")
    return real - dt


def _broadside_angle(from_pos, to_pos) -> float:
    delta = np.asarray(to_pos, dtype=float) - np.asarray(from_pos, dtype=float)
    dist = float(np.linalg.norm(delta))
    if dist == 0:
        raise ValidationError("coincident endpoints have no link geometry")
    ux = float(np.clip(delta[0] / dist, -1.0, 1.0))
    return float(np.arcsin(ux))


@dataclass(frozen=True)
class LinkGeometry:
    rx_n: int
    tx_n: int
    distance: float
    aod: float
    aoa: float
    has_error: bool  # False for the BS->RIS link, which both sets share in full


@dataclass
class ScenarioDraw:
    """One generated instance: sorted path lists per link plus geometry.

    Kept separate from the realized ChannelSets so the weak tail can be
    re-drawn for fresh real-channel realizations around a fixed twin.
    """
    config: ScenarioConfig
    geometry: dict[str, LinkGeometry]
    paths: dict[str, list[PathComponent]]
    amplitudes: dict[str, float]


def _draw_link_paths(
    rng: np.random.Generator, geo: LinkGeometry, amp: float, n_paths: int
) -> list[PathComponent]:
    paths = [
        PathComponent(gain=amp + 0.0j, aod=geo.aod, aoa=geo.aoa, expected_power=amp * amp, los=True)
    ]
    for p in range(1, n_paths):
        var = amp * amp * float(np.exp(-PROFILE_DECAY * p))
        gain = complex(complex_normal(rng, (), np.sqrt(var)))
        aod = float(rng.uniform(-np.pi / 2, np.pi / 2))
        aoa = float(rng.uniform(-np.pi / 2, np.pi / 2))
        paths.append(PathComponent(gain, aod, aoa, expected_power=var))
    paths.sort(key=lambda q: q.power, reverse=True)
    return paths


def draw_paths(
    config: ScenarioConfig,
    user1_pos,
    user2_pos,
    rng: np.random.Generator | None = None,
) -> ScenarioDraw:
    """Draw the full path lists of one scenario instance."""
    if not config.bs_grid.contains(user1_pos):
        raise ValidationError("user 1 position outside the BS service grid")
    if not config.ris_grid.contains(user2_pos):
        raise ValidationError("user 2 position outside the RIS service grid")
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    bs = np.asarray(config.bs_position, dtype=float)
    ris = np.asarray(config.ris_position, dtype=float)
    u1 = np.asarray(user1_pos, dtype=float)
    u2 = np.asarray(user2_pos, dtype=float)

    def link_geo(frm, to, rx_n, tx_n, has_error) -> LinkGeometry:
        return LinkGeometry(
            rx_n=rx_n,
            tx_n=tx_n,
            distance=float(np.linalg.norm(np.asarray(to) - np.asarray(frm))),
            aod=_broadside_angle(frm, to),
            aoa=_broadside_angle(to, frm),
            has_error=has_error,
        )

    geometry = {
        "h1": link_geo(bs, u1, config.n_rx, config.n_tx, True),
        "g1": link_geo(ris, u1, config.n_rx, config.n_ris, True),
        "g2": link_geo(ris, u2, config.n_rx, config.n_ris, True),
        "h_br": link_geo(bs, ris, config.n_ris, config.n_tx, False),
    }
    # normalize so the shortest (strongest) link has a unit-amplitude direct ray
    d_ref = min(geo.distance for geo in geometry.values())
    amplitudes = {name: d_ref / geo.distance for name, geo in geometry.items()}

    paths = {
        name: _draw_link_paths(rng, geometry[name], amplitudes[name], config.l_real)
        for name in LINK_NAMES
    }
    return ScenarioDraw(config=config, geometry=geometry, paths=paths, amplitudes=amplitudes)


def realize(draw: ScenarioDraw) -> tuple[ChannelSet, ChannelSet]:
    """Synthesize the (DT, REAL) channel pair from a draw."""
    cfg = draw.config
    dt_links = {}
    real_links = {}
    for name in LINK_NAMES:
        geo = draw.geometry[name]
        full = draw.paths[name]
        kept = full if not geo.has_error else full[: cfg.l_dt]
        real_links[name] = synth_channel(full, geo.rx_n, geo.tx_n, cfg.element_spacing)
        if geo.has_error:
            dt_links[name] = synth_channel(kept, geo.rx_n, geo.tx_n, cfg.element_spacing)
        else:
            dt_links[name] = real_links[name].copy()
    return (
        ChannelSet(provenance="dt", **dt_links),
        ChannelSet(provenance="real", **real_links),
    )


def generate_scenario(
    config: ScenarioConfig,
    user1_pos,
    user2_pos,
    rng: np.random.Generator | None = None,
) -> tuple[ChannelSet, ChannelSet]:
    """Draw one instance and return its (DT, REAL) channel sets."""
    return realize(draw_paths(config, user1_pos, user2_pos, rng))


def resample_real(
    draw: ScenarioDraw,
    rng: np.random.Generator,
    links: tuple[str, ...] = ("h1",),
) -> ChannelSet:
    """Fresh real-channel realization around the fixed twin of a draw.

    The paths the twin kept stay fixed; the scattered rays of the truncated
    tail are re-drawn (per their profile variances, fresh angles) for the
    named links. Deterministic rays in the tail are kept as-is. Links not
    named, and the BS-RIS link, are returned unchanged.
    """
    cfg = draw.config
    out = {}
    for name in LINK_NAMES:
        geo = draw.geometry[name]
        full = draw.paths[name]
        if not geo.has_error or name not in links:
            out[name] = synth_channel(full, geo.rx_n, geo.tx_n, cfg.element_spacing)
            continue
        kept = list(full[: cfg.l_dt])
        tail = []
        for p in full[cfg.l_dt :]:
            if p.los:
                tail.append(p)
                continue
            gain = complex(complex_normal(rng, (), np.sqrt(p.expected_power)))
            tail.append(
                PathComponent(
                    gain,
                    float(rng.uniform(-np.pi / 2, np.pi / 2)),
                    float(rng.uniform(-np.pi / 2, np.pi / 2)),
                    expected_power=p.expected_power,
                )
            )
        out[name] = synth_channel(kept + tail, geo.rx_n, geo.tx_n, cfg.element_spacing)
    return ChannelSet(provenance="real", **out)


def error_sampler(draw: ScenarioDraw, links: tuple[str, ...] = ("h1",)):
    """Callable rng -> fresh REAL ChannelSet, for Monte-Carlo evaluation."""
    def sample(rng: np.random.Generator) -> ChannelSet:
        return resample_real(draw, rng, links=links)

    return sample


def draw_user_positions(
    config: ScenarioConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One (user1, user2) lattice-node pair from the two service grids."""
    return config.bs_grid.draw_node(rng), config.ris_grid.draw_node(rng)
