"""Optical channel gains for ceiling LED access points and a steerable mirror array.

Two kinds of path are modelled: the direct line-of-sight (LoS) Lambertian link
from each AP to each photodetector, and the first-order specular path
AP -> mirror -> photodetector through every mirror of the array.

The scalar functions below are the reference definitions. :class:`ChannelModel`
evaluates the same expressions vectorised over all (user, mirror, AP) triples
and is what the environment calls every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MIN_DISTANCE = 1e-6  # metres; anything closer is treated as a degenerate geometry
MIN_HALF_ANGLE = math.radians(1.0)


class GeometryError(ValueError):
    """Raised for degenerate or out-of-domain geometry."""


@dataclass(frozen=True)
class LedAp:
    position: tuple[float, float, float]
    half_power_angle: float = math.radians(60.0)
    normal: tuple[float, float, float] = (0.0, 0.0, -1.0)

    def __post_init__(self):
        if not 0.0 < self.half_power_angle < math.pi / 2:
            raise GeometryError(f"half-power semi-angle {self.half_power_angle} outside (0, pi/2)")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise GeometryError("AP normal must be a unit vector")


@dataclass(frozen=True)
class PhotoDetector:
    position: tuple[float, float, float]
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    area: float = 1e-4
    fov: float = math.radians(85.0)
    responsivity: float = 0.5

    def __post_init__(self):
        if self.area <= 0:
            raise GeometryError("detector area must be positive")
        if not 0.0 < self.fov <= math.pi / 2:
            raise GeometryError(f"field of view {self.fov} outside (0, pi/2]")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise GeometryError("detector normal must be a unit vector")

    def moved_to(self, position) -> "PhotoDetector":
        return PhotoDetector(tuple(float(c) for c in position), self.normal, self.area,
                             self.fov, self.responsivity)


@dataclass(frozen=True)
class MirrorElement:
    center: tuple[float, float, float]
    width: float = 0.25
    height: float = 0.15
    reflectance: float = 0.95
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        # zero is accepted so a mirror can be switched off
        if not 0.0 <= self.reflectance <= 1.0:
            raise GeometryError(f"reflectance {self.reflectance} outside [0, 1]")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("mirror dimensions must be positive")
        for name in ("yaw", "roll"):
            if abs(getattr(self, name)) > math.pi / 2 + 1e-12:
                raise GeometryError(f"mirror {name} outside [-pi/2, pi/2]")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def normal(self) -> np.ndarray:
        return mirror_normal(self.yaw, self.roll)


def detector_normal(azimuth: float, elevation: float) -> tuple[float, float, float]:
    """Unit normal of a photodiode pointing at ``azimuth`` / ``elevation`` (radians).

    Elevation pi/2 points straight up regardless of azimuth.
    """
    ce = math.cos(elevation)
    return (ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation))


def lambertian_order(half_angle: float, min_half_angle: float = MIN_HALF_ANGLE) -> float:
    """Lambertian emission order ``-ln 2 / ln cos(half_angle)``."""
    if not min_half_angle <= half_angle < math.pi / 2:
        raise GeometryError(f"half-power semi-angle {half_angle} rad outside [{min_half_angle}, pi/2)")
    return -math.log(2.0) / math.log(math.cos(half_angle))


def mirror_normal(yaw: float, roll: float) -> np.ndarray:
    return np.array([math.sin(yaw) * math.cos(roll),
                     math.cos(yaw) * math.cos(roll),
                     math.sin(roll)])


def _unit(frm, to) -> tuple[np.ndarray, float]:
    v = np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)
    d = float(np.linalg.norm(v))
    if d < MIN_DISTANCE:
        raise GeometryError(f"degenerate distance {d:.3g} m between {frm} and {to}")
    return v / d, d


def los_gain(ap: LedAp, pd: PhotoDetector, n: float, filter_gain: float = 1.0) -> float:
    """Direct-path DC gain from ``ap`` to ``pd`` (zero outside the receiver FOV)."""
    u, d = _unit(ap.position, pd.position)
    cos_rad = float(np.dot(ap.normal, u))
    cos_inc = float(np.dot(pd.normal, -u))
    if cos_rad < 0.0 or cos_inc < math.cos(pd.fov):
        return 0.0
    return filter_gain * (n + 1) * pd.area * cos_rad**n * cos_inc / (2 * math.pi * d * d)


def cos_irradiance_mirror_user(m: MirrorElement, user_pos) -> float:
    """Cosine of the mirror-to-user irradiance angle for the mirror's current yaw/roll.

    The offset is taken from the user to the mirror, exactly as the
    yaw/roll expansion ``dx sin(yaw) cos(roll) + dy cos(yaw) cos(roll) + dz sin(roll)``.
    """
    xm, ym, zm = m.center
    xk, yk, zk = (float(c) for c in user_pos)
    d = math.sqrt((xm - xk) ** 2 + (ym - yk) ** 2 + (zm - zk) ** 2)
    if d < MIN_DISTANCE:
        raise GeometryError("user coincides with mirror centre")
    return ((xm - xk) / d * math.sin(m.yaw) * math.cos(m.roll)
            + (ym - yk) / d * math.cos(m.yaw) * math.cos(m.roll)
            + (zm - zk) / d * math.sin(m.roll))


def cos_incidence_mirror_ap(m: MirrorElement, ap_pos) -> float:
    u, _ = _unit(m.center, ap_pos)
    return float(np.dot(m.normal, u))


def irs_path_gain(ap: LedAp, m: MirrorElement, pd: PhotoDetector, n: float,
                  filter_gain: float = 1.0) -> float:
    """Gain of the single-bounce path ``ap -> m -> pd``.

    Any negative cosine means the path cannot exist and yields 0, as does an
    incidence angle at the detector beyond its FOV.
    """
    u_lm, d_lm = _unit(ap.position, m.center)
    u_km, d_km = _unit(pd.position, m.center)
    cos_rad_ap = float(np.dot(ap.normal, u_lm))
    cos_inc_mirror = cos_incidence_mirror_ap(m, ap.position)
    cos_irr_mirror = cos_irradiance_mirror_user(m, pd.position)
    cos_inc_pd = float(np.dot(pd.normal, u_km))
    if min(cos_rad_ap, cos_inc_mirror, cos_irr_mirror) < 0.0 or cos_inc_pd < math.cos(pd.fov):
        return 0.0
    num = ((n + 1) * m.reflectance * pd.area * m.area * cos_rad_ap**n
           * cos_inc_mirror * cos_irr_mirror * cos_inc_pd)
    return filter_gain * num / (2 * math.pi**2 * d_lm**2 * d_km**2)


@dataclass
class ChannelGains:
    los: np.ndarray       # (K, L)
    irs: np.ndarray       # (K, M, L)
    combined: np.ndarray  # (K,)


def combine_gains(los: np.ndarray, irs: np.ndarray) -> np.ndarray:
    """Per-user total gain, summed strictly left to right.

    LoS terms in AP order come first, then IRS terms in (mirror, AP) order.
    ``cumsum`` is sequential, so the result is reproducible bit for bit.
    """
    k = los.shape[0]
    flat = np.concatenate([los, irs.reshape(k, -1)], axis=1)
    if flat.shape[1] == 0:
        return np.zeros(k)
    return np.cumsum(flat, axis=1)[:, -1]


@dataclass(frozen=True)
class Scene:
    room: tuple[float, float, float]
    aps: tuple[LedAp, ...]
    mirrors: tuple[MirrorElement, ...]
    users: tuple[tuple[PhotoDetector, ...], ...]
    filter_gain: float = 1.0
    refractive_index: float = 1.5  # stored only; no concentrator gain applied

    def __post_init__(self):
        for p in self._positions():
            if any(c < -1e-9 or c > lim + 1e-9 for c, lim in zip(p, self.room)):
                raise GeometryError(f"device at {p} lies outside the room {self.room}")
        if any(len(u) == 0 for u in self.users):
            raise GeometryError("every user needs at least one photodetector")

    def _positions(self):
        yield from (ap.position for ap in self.aps)
        yield from (m.center for m in self.mirrors)
        yield from (pd.position for u in self.users for pd in u)

    @property
    def lambertian_orders(self) -> np.ndarray:
        return np.array([lambertian_order(ap.half_power_angle) for ap in self.aps])


class ChannelModel:
    """Vectorised gain computation for a fixed set of APs, mirrors and detector types.

    Users carry ``detectors_per_user`` detectors that share the user's position
    and differ in orientation/FOV/area. Per path, the best detector is selected.
    """

    def __init__(self, aps: Sequence[LedAp], mirror_centers: np.ndarray, mirror_areas: np.ndarray,
                 mirror_reflectance: np.ndarray, detectors: Sequence[Sequence[PhotoDetector]],
                 filter_gain: float = 1.0):
        self.ap_pos = np.array([ap.position for ap in aps], dtype=float).reshape(-1, 3)
        self.ap_normal = np.array([ap.normal for ap in aps], dtype=float).reshape(-1, 3)
        self.order = np.array([lambertian_order(ap.half_power_angle) for ap in aps], dtype=float)
        self.mirror_pos = np.asarray(mirror_centers, dtype=float).reshape(-1, 3)
        self.mirror_area = np.asarray(mirror_areas, dtype=float).reshape(-1)
        self.mirror_rho = np.asarray(mirror_reflectance, dtype=float).reshape(-1)
        counts = {len(d) for d in detectors}
        if len(counts) != 1:
            raise GeometryError("all users must carry the same number of detectors")
        self.pd_normal = np.array([[pd.normal for pd in d] for d in detectors], dtype=float)  # (K,P,3)
        self.pd_area = np.array([[pd.area for pd in d] for d in detectors], dtype=float)      # (K,P)
        self.pd_cos_fov = np.cos(np.array([[pd.fov for pd in d] for d in detectors], dtype=float))
        self.filter_gain = float(filter_gain)

    @classmethod
    def from_scene(cls, scene: Scene) -> "ChannelModel":
        ms = scene.mirrors
        return cls(scene.aps, np.array([m.center for m in ms]).reshape(-1, 3),
                   np.array([m.area for m in ms]), np.array([m.reflectance for m in ms]),
                   scene.users, scene.filter_gain)

    @property
    def num_users(self) -> int:
        return self.pd_area.shape[0]

    @property
    def num_aps(self) -> int:
        return self.ap_pos.shape[0]

    @property
    def num_mirrors(self) -> int:
        return self.mirror_pos.shape[0]

    def gains(self, user_pos: np.ndarray, angles: np.ndarray,
              blockage: Optional[np.ndarray] = None) -> ChannelGains:
        """Gains for users at ``user_pos`` (K,3) with mirror angles (M,2) = (yaw, roll).

        ``blockage`` is a boolean (K,L) mask; True removes that LoS link.
        """
        user_pos = np.asarray(user_pos, dtype=float).reshape(-1, 3)
        angles = np.asarray(angles, dtype=float).reshape(-1, 2)
        n = self.order  # (L,)

        # LoS: (K, L)
        v = user_pos[:, None, :] - self.ap_pos[None, :, :]
        d = np.linalg.norm(v, axis=-1)
        if np.any(d < MIN_DISTANCE):
            raise GeometryError("user coincides with an AP")
        u = v / d[..., None]
        cos_rad = np.einsum("kld,ld->kl", u, self.ap_normal)
        cos_inc = -np.einsum("kld,kpd->kpl", u, self.pd_normal)             # (K,P,L)
        ok = (cos_rad[:, None, :] >= 0.0) & (cos_inc >= self.pd_cos_fov[..., None])
        base = (n + 1) * np.clip(cos_rad, 0.0, None) ** n / (2 * np.pi * d**2)  # (K,L)
        per_pd = np.where(ok, self.pd_area[..., None] * base[:, None, :] * cos_inc, 0.0)
        los = self.filter_gain * per_pd.max(axis=1)
        if blockage is not None:
            los = np.where(np.asarray(blockage, dtype=bool), 0.0, los)

        m_count = self.mirror_pos.shape[0]
        if m_count == 0:
            irs = np.zeros((user_pos.shape[0], 0, self.ap_pos.shape[0]))
            return ChannelGains(los, irs, combine_gains(los, irs))

        yaw, roll = angles[:, 0], angles[:, 1]
        mn = np.stack([np.sin(yaw) * np.cos(roll), np.cos(yaw) * np.cos(roll), np.sin(roll)], axis=-1)

        # AP -> mirror leg: (M, L)
        v_lm = self.mirror_pos[:, None, :] - self.ap_pos[None, :, :]
        d_lm = np.linalg.norm(v_lm, axis=-1)
        if np.any(d_lm < MIN_DISTANCE):
            raise GeometryError("mirror coincides with an AP")
        u_lm = v_lm / d_lm[..., None]
        cos_rad_ap = np.einsum("mld,ld->ml", u_lm, self.ap_normal)
        cos_inc_m = -np.einsum("mld,md->ml", u_lm, mn)

        # mirror -> user leg: (K, M), offset taken user -> mirror
        v_km = self.mirror_pos[None, :, :] - user_pos[:, None, :]
        d_km = np.linalg.norm(v_km, axis=-1)
        if np.any(d_km < MIN_DISTANCE):
            raise GeometryError("user coincides with a mirror")
        u_km = v_km / d_km[..., None]
        cos_irr_m = np.einsum("kmd,md->km", u_km, mn)
        cos_inc_pd = np.einsum("kmd,kpd->kpm", u_km, self.pd_normal)        # (K,P,M)

        leg1 = np.where((cos_rad_ap >= 0) & (cos_inc_m >= 0),
                        (n + 1) * np.clip(cos_rad_ap, 0, None) ** n * cos_inc_m / d_lm**2, 0.0)
        leg2 = np.where(cos_irr_m >= 0, cos_irr_m / d_km**2, 0.0)
        pd_ok = cos_inc_pd >= self.pd_cos_fov[..., None]
        pd_term = np.where(pd_ok, self.pd_area[..., None] * cos_inc_pd, 0.0).max(axis=1)  # (K,M)
        scale = self.filter_gain * self.mirror_rho * self.mirror_area / (2 * np.pi**2)      # (M,)
        irs = (scale[None, :, None] * leg2[:, :, None] * pd_term[:, :, None]) * leg1[None, :, :]
        return ChannelGains(los, irs, combine_gains(los, irs))


def channel_matrix(scene: Scene, blockage: Optional[np.ndarray] = None) -> ChannelGains:
    """Gains for every user in ``scene`` using the mirrors' stored yaw/roll.

    Users' detectors are assumed co-located; the first detector's position is
    taken as the user position.
    """
    model = ChannelModel.from_scene(scene)
    pos = np.array([u[0].position for u in scene.users], dtype=float).reshape(-1, 3)
    angles = np.array([(m.yaw, m.roll) for m in scene.mirrors], dtype=float).reshape(-1, 2)
    return model.gains(pos, angles, blockage)


def mirror_array_centers(rows: int, cols: int, center, width: float, height: float,
                         spacing: float, wall: str = "y0") -> np.ndarray:
    """Centres of a ``rows x cols`` mirror grid laid flat on a wall.

    ``wall`` names the plane: ``x0``/``x1`` for x = 0 / x = x_r (grid spans y, z),
    ``y0``/``y1`` for y = 0 / y = y_r (grid spans x, z). The coordinate normal to
    the wall is taken from ``center``. Width runs horizontally, height vertically.
    """
    if wall not in ("x0", "x1", "y0", "y1"):
        raise GeometryError(f"unknown wall {wall!r}")
    c = np.asarray(center, dtype=float)
    h_off = (np.arange(cols) - (cols - 1) / 2) * (width + spacing)
    v_off = (np.arange(rows) - (rows - 1) / 2) * (height + spacing)
    out = []
    for dz in v_off:
        for dh in h_off:
            p = c.copy()
            p[2] += dz
            if wall.startswith("x"):
                p[1] += dh
            else:
                p[0] += dh
            out.append(p)
    return np.array(out).reshape(-1, 3)
