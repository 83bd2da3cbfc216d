"""
Indoor laser-OWC geometry and channel model.

Gaussian-beam VCSEL transmitters on the ceiling, angle-diversity receivers
(ADR) on the desk plane. Channel entries are photocurrent per watt of AP
optical power (A/W); intensity modulation keeps them real and nonnegative.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhysicalConstants", "Scenario", "ChannelMatrix", "DisconnectedUserError",
    "rayleigh_distance", "beam_radius", "intensity", "received_power_onaxis",
    "photodiode_radius", "channel_gain", "noise_variance", "build_channel",
    "adr_orientations", "default_ap_positions", "make_scenario",
]

POINTING_MODES = ("steered", "down")


class DisconnectedUserError(ValueError):
    """A user receives no power from any AP on any photodiode."""

    def __init__(self, users):
        self.users = list(users)
        super().__init__(f"disconnected user(s): {self.users}")


@dataclass(frozen=True)
class PhysicalConstants:
    """Transmitter/receiver parameters, with typical indoor laser-OWC defaults.

    ``beam_pointing`` selects how the VCSEL beam axis is placed:
    ``"down"`` points every AP beam vertically at the floor, ``"steered"``
    aims the AP's beam at the receiver so the user sits on the beam axis.
    """
    wavelength: float = 850e-9
    beam_waist: float = 10e-6
    laser_bandwidth: float = 5e9
    responsivity: float = 0.4
    nsd: float = 4.47e-12
    receiver_area_total: float = 15e-6
    fov_half_angle: float = math.radians(45.0)
    num_photodiodes: int = 4
    pd_tilt: float = math.radians(35.0)
    beam_pointing: str = "steered"

    def __post_init__(self):
        for name in ("wavelength", "beam_waist", "laser_bandwidth", "responsivity",
                     "nsd", "receiver_area_total", "fov_half_angle"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        if self.fov_half_angle > math.pi / 2:
            raise ValueError("fov_half_angle must lie in (0, pi/2]")
        if int(self.num_photodiodes) < 1:
            raise ValueError("num_photodiodes must be >= 1")
        if self.beam_pointing not in POINTING_MODES:
            raise ValueError(f"beam_pointing must be one of {POINTING_MODES}")

    @property
    def pd_area(self) -> float:
        """Detection area of a single photodiode, A_rec / M."""
        return self.receiver_area_total / self.num_photodiodes

    @property
    def noise_variance(self) -> float:
        return noise_variance(self.nsd, self.laser_bandwidth)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scenario:
    room: np.ndarray
    ap_positions: np.ndarray
    user_positions: np.ndarray
    pd_orientations: np.ndarray
    demands: np.ndarray
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("room", "ap_positions", "user_positions", "pd_orientations", "demands"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        room, aps, users = self.room, self.ap_positions, self.user_positions
        if room.shape != (3,) or np.any(room <= 0):
            raise ValueError("room must be three positive extents")
        if aps.ndim != 2 or aps.shape[1] != 3 or len(aps) < 1:
            raise ValueError("ap_positions must be an (L, 3) array with L >= 1")
        if users.ndim != 2 or users.shape[1] != 3 or len(users) < 1:
            raise ValueError("user_positions must be a (K, 3) array with K >= 1")
        for label, pts in (("AP", aps), ("user", users)):
            if np.any(pts < 0) or np.any(pts > room):
                raise ValueError(f"{label} position outside the room box")
        K, M = len(users), self.constants.num_photodiodes
        if self.pd_orientations.shape != (K, M, 3):
            raise ValueError(f"pd_orientations must have shape ({K}, {M}, 3)")
        norms = np.linalg.norm(self.pd_orientations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("photodiode orientations must be unit vectors")
        if self.demands.shape != (K,) or np.any(self.demands <= 0):
            raise ValueError("demands must be K strictly positive rates")

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    @property
    def num_aps(self) -> int:
        return len(self.ap_positions)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ChannelMatrix:
    gains: np.ndarray
    selected_pd: np.ndarray
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "gains", _frozen(self.gains))
        sel = np.array(self.selected_pd, dtype=int)
        sel.setflags(write=False)
        object.__setattr__(self, "selected_pd", sel)
        if np.any(self.gains < 0) or not np.all(np.isfinite(self.gains)):
            raise ValueError("channel gains must be finite and nonnegative")
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")

    @property
    def shape(self):
        return self.gains.shape


# -- Gaussian beam optics ------------------------------------------------------

def rayleigh_distance(w0: float, wavelength: float) -> float:
    """Rayleigh range pi * w0^2 / lambda of a Gaussian beam."""
    if w0 <= 0 or wavelength <= 0:
        raise ValueError("beam waist and wavelength must be positive")
    return math.pi * w0 ** 2 / wavelength


def beam_radius(w0, d, d_ra):
    """Beam radius W_d at distance ``d`` from the waist."""
    if w0 <= 0 or d_ra <= 0:
        raise ValueError("beam waist and Rayleigh distance must be positive")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be nonnegative")
    w = w0 * np.sqrt(1.0 + (d / d_ra) ** 2)
    return float(w) if w.ndim == 0 else w


def intensity(r, d, p_t, w_d):
    """Transverse irradiance (W/m^2) at radial offset ``r``.

    ``d`` is carried for signature symmetry with the beam model; the
    distance dependence enters through ``w_d``.
    """
    if p_t < 0 or np.any(np.asarray(w_d) <= 0) or np.any(np.asarray(r) < 0):
        raise ValueError("intensity needs p_t >= 0, w_d > 0, r >= 0")
    r = np.asarray(r, dtype=float)
    out = 2.0 * p_t / (math.pi * w_d ** 2) * np.exp(-2.0 * r ** 2 / w_d ** 2)
    return float(out) if np.ndim(out) == 0 else out


def received_power_onaxis(p_t, r_m, w_d):
    """Power collected by a disc of radius ``r_m`` centred on the beam axis."""
    if p_t < 0 or r_m < 0 or w_d <= 0:
        raise ValueError("received power needs p_t >= 0, r_m >= 0, w_d > 0")
    return p_t * -math.expm1(-2.0 * r_m ** 2 / w_d ** 2)


def photodiode_radius(constants: PhysicalConstants) -> float:
    return math.sqrt(constants.pd_area / math.pi)


def channel_gain(ap, user, pd_normal, constants: PhysicalConstants) -> float:
    """Gain (A/W) from one AP to one photodiode.

    With ``beam_pointing="down"`` the beam axis is vertical: the irradiance
    is point-sampled at the horizontal offset of the photodiode, except
    inside the photodiode radius where the exact on-axis capture is used.
    With ``"steered"`` the user is on the beam axis at the slant distance.
    Both are weighted by cos(psi) and gated by the field of view.
    """
    ap = np.asarray(ap, dtype=float)
    user = np.asarray(user, dtype=float)
    normal = np.asarray(pd_normal, dtype=float)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise ValueError("pd_normal must be a unit vector")
    d_axial = ap[2] - user[2]
    if d_axial <= 0:
        raise ValueError("AP must be strictly above the user")

    to_ap = ap - user
    dist = float(np.linalg.norm(to_ap))
    cos_psi = float(np.dot(normal, to_ap) / dist)
    if cos_psi <= 0 or math.acos(min(cos_psi, 1.0)) > constants.fov_half_angle:
        return 0.0

    d_ra = rayleigh_distance(constants.beam_waist, constants.wavelength)
    r_m = photodiode_radius(constants)
    if constants.beam_pointing == "steered":
        w_d = beam_radius(constants.beam_waist, dist, d_ra)
        power = received_power_onaxis(1.0, r_m, w_d)
    else:
        w_d = beam_radius(constants.beam_waist, d_axial, d_ra)
        r_offset = float(np.hypot(to_ap[0], to_ap[1]))
        if r_offset < r_m:
            power = received_power_onaxis(1.0, r_m, w_d)
        else:
            power = intensity(r_offset, d_axial, 1.0, w_d) * constants.pd_area
    return constants.responsivity * power * cos_psi


def noise_variance(nsd: float, bandwidth: float) -> float:
    """Aggregate receiver noise variance nsd^2 * B (A^2)."""
    if nsd < 0 or bandwidth < 0:
        raise ValueError("nsd and bandwidth must be nonnegative")
    return nsd ** 2 * bandwidth


def build_channel(scenario: Scenario) -> ChannelMatrix:
    """K x L channel using the best photodiode (largest gain sum) per user."""
    c = scenario.constants
    K, L = scenario.num_users, scenario.num_aps
    gains = np.zeros((K, L))
    selected = np.zeros(K, dtype=int)
    dead = []
    for k in range(K):
        per_pd = np.array([
            [channel_gain(ap, scenario.user_positions[k], normal, c)
             for ap in scenario.ap_positions]
            for normal in scenario.pd_orientations[k]
        ])
        totals = per_pd.sum(axis=1)
        best = int(np.argmax(totals))
        if totals[best] <= 0:
            dead.append(k)
            continue
        selected[k] = best
        gains[k] = per_pd[best]
    if dead:
        raise DisconnectedUserError(dead)
    return ChannelMatrix(gains=gains, selected_pd=selected, noise_variance=c.noise_variance)


# -- scenario helpers ----------------------------------------------------------

def adr_orientations(m: int = 4, tilt: float = math.radians(35.0)) -> np.ndarray:
    """Unit normals of an M-element ADR, tilted from vertical at equal azimuths.

    M = 1 yields a single upward-facing photodiode.
    """
    if m == 1:
        return np.array([[0.0, 0.0, 1.0]])
    az = np.radians(45.0) + 2 * np.pi * np.arange(m) / m
    return np.stack([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az),
                     np.full(m, np.cos(tilt))], axis=1)


def default_ap_positions(room=(5.0, 5.0, 3.0)) -> np.ndarray:
    """Uniform 2x2 ceiling grid at the quarter points of the room."""
    x, y, z = room
    return np.array([[x / 4, y / 4, z], [x / 4, 3 * y / 4, z],
                     [3 * x / 4, y / 4, z], [3 * x / 4, 3 * y / 4, z]])


def make_scenario(num_users=6, seed=0, room=(5.0, 5.0, 3.0), ap_positions=None,
                  user_height=0.85, demand_range=(0.5, 2.0),
                  constants: PhysicalConstants | None = None, rng=None) -> Scenario:
    """Scenario with users uniform on the receiver plane and uniform demands."""
    constants = constants or PhysicalConstants()
    rng = rng if rng is not None else np.random.default_rng(seed)
    room = np.asarray(room, dtype=float)
    aps = default_ap_positions(room) if ap_positions is None else np.asarray(ap_positions, float)
    xy = rng.uniform(0.0, 1.0, size=(num_users, 2)) * room[:2]
    users = np.column_stack([xy, np.full(num_users, user_height)])
    demands = rng.uniform(demand_range[0], demand_range[1], size=num_users)
    pds = np.broadcast_to(adr_orientations(constants.num_photodiodes, constants.pd_tilt),
                          (num_users, constants.num_photodiodes, 3))
    return Scenario(room=room, ap_positions=aps, user_positions=users,
                    pd_orientations=pds, demands=demands, constants=constants,
                    rng_seed=int(seed))
