"""Molecule-attached coordinate frame and spherical coordinates in that frame."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

COLLINEAR_EPS = 1e-8
# relative size below which an off-axis component is float noise from the frame construction
SNAP_EPS = 1e-10


class SphericalRecord(NamedTuple):
    d: float
    theta: float
    phi: float


@dataclass(frozen=True, eq=False)
class FrameBasis:
    origin: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rows are the axes, so ``matrix @ v`` expresses v in frame coordinates."""
        return np.stack([self.x, self.y, self.z])

    def to_frame(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.origin) @ self.matrix.T

    def from_frame(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local, dtype=np.float64) @ self.matrix + self.origin


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthogonal_unit(x: np.ndarray) -> np.ndarray:
    # smallest-index basis vector not parallel to x, then Gram-Schmidt
    for e in np.eye(3):
        if np.linalg.norm(np.cross(e, x)) > COLLINEAR_EPS:
            return _normalize(e - np.dot(e, x) * x)
    raise AssertionError("unreachable: x is a unit vector")


def build_frame(coords: np.ndarray, order: Sequence[int]) -> FrameBasis:
    """Frame from the first two ordered atoms and the first atom off their line.

    n = 1 gives the identity frame at the atom. When all atoms are collinear,
    y comes from the smallest-index standard basis vector not parallel to x.
    """
    coords = np.asarray(coords, dtype=np.float64)
    order = list(order)
    origin = coords[order[0]].copy()
    if len(order) == 1:
        return FrameBasis(origin, *np.eye(3))
    offset = coords[order[1]] - origin
    if np.linalg.norm(offset) == 0.0:
        # coincident atoms: no direction defined, fall back to lab axes
        return FrameBasis(origin, *np.eye(3))
    x = _normalize(offset)
    y = None
    for idx in order[2:]:
        c = np.cross(coords[idx] - origin, x)
        if np.linalg.norm(c) > COLLINEAR_EPS:
            y = _normalize(c)
            break
    if y is None:
        y = _orthogonal_unit(x)
    z = np.cross(x, y)
    return FrameBasis(origin, x, y, z)


def to_spherical(coords: np.ndarray, order: Sequence[int], frame: FrameBasis) -> list[SphericalRecord]:
    local = frame.to_frame(np.asarray(coords, dtype=np.float64)[list(order)])
    records = []
    for px, py, pz in local:
        d = float(np.sqrt(px * px + py * py + pz * pz))
        if d == 0.0:
            records.append(SphericalRecord(0.0, 0.0, 0.0))
            continue
        # atan2 form of arccos(pz / d); arccos loses ~1e-8 near the poles
        rho = float(np.hypot(px, py))
        if rho <= SNAP_EPS * d:
            records.append(SphericalRecord(d, 0.0 if pz > 0 else float(np.pi), 0.0))
            continue
        theta = float(np.arctan2(rho, pz))
        if abs(py) <= SNAP_EPS * d:
            # atoms in the x-z half planes (frame atoms, collinear atoms) get exactly 0 or pi
            phi = 0.0 if px > 0 else float(np.pi)
        else:
            phi = float(np.arctan2(py, px))
        records.append(SphericalRecord(d, theta, phi))
    return records


def from_spherical(records: Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.asarray(records, dtype=np.float64).reshape(-1, 3)
    d, theta, phi = arr[:, 0], arr[:, 1], arr[:, 2]
    sin_t = np.sin(theta)
    return np.stack([d * sin_t * np.cos(phi), d * sin_t * np.sin(phi), d * np.cos(theta)], axis=1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation matrix (det +1)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
