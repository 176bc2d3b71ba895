"""Synthetic paired structural / tensor volumes with known fiber geometry."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .errors import InfeasibleFA
from .field import Domain, ScalarField, TensorField, resample_trilinear


def solve_axisym_eigs(fa, md):
    """Eigenvalues ``(parallel, perpendicular)`` of the axially symmetric
    tensor with the given FA and mean diffusivity."""
    if not 0.0 <= fa < 1.0:
        raise InfeasibleFA(f"FA {fa} has no positive axially symmetric solution (need 0 <= FA < 1)")
    if md <= 0.0:
        raise InfeasibleFA(f"mean diffusivity must be positive, got {md}")
    # eigenvalues (md + 2d, md - d, md - d) give FA = 3d / sqrt(3 md^2 + 6 d^2)
    d = md * fa * math.sqrt(3.0 / (9.0 - 6.0 * fa * fa))
    return md + 2.0 * d, md - d


@dataclass
class Bundle:
    """A tube of radius ``radius`` voxels around a line or a circular arc.

    Lines use ``point`` and ``direction``. Arcs use ``center``, two in-plane
    unit axes ``u``/``v``, ``arc_radius`` and the angle range ``angles``.
    """

    kind: str = "line"
    radius: float = 5.0
    fa: float = 0.8
    md: float = 1.0
    point: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (1.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)
    u: tuple = (1.0, 0.0, 0.0)
    v: tuple = (0.0, 1.0, 0.0)
    arc_radius: float = 10.0
    angles: tuple = (0.0, math.pi)

    def nearest(self, pts):
        """Distance to the centerline and unit tangent at the nearest point."""
        if self.kind == "line":
            a = np.asarray(self.point, dtype=np.float64)
            d = np.asarray(self.direction, dtype=np.float64)
            d = d / np.linalg.norm(d)
            q = pts - a
            along = q @ d
            perp = q - along[..., None] * d
            dist = np.linalg.norm(perp, axis=-1)
            tangent = np.broadcast_to(d, pts.shape).copy()
            return dist, tangent
        if self.kind == "arc":
            c = np.asarray(self.center, dtype=np.float64)
            u = np.asarray(self.u, dtype=np.float64)
            v = np.asarray(self.v, dtype=np.float64)
            q = pts - c
            theta = np.arctan2(q @ v, q @ u)
            lo, hi = self.angles
            theta = np.clip(theta, lo, hi)
            cos, sin = np.cos(theta)[..., None], np.sin(theta)[..., None]
            near = self.arc_radius * (cos * u + sin * v)
            dist = np.linalg.norm(q - near, axis=-1)
            tangent = -sin * u + cos * v
            return dist, tangent
        raise ValueError(f"unknown bundle kind {self.kind!r}")


def default_bundles(dims=(48, 48, 48)):
    nx, ny, nz = dims
    return [
        Bundle("line", radius=5.0, fa=0.8, md=1.0, point=(0.0, 0.3 * ny, 0.3 * nz), direction=(1.0, 0.0, 0.0)),
        Bundle("line", radius=5.0, fa=0.8, md=1.0, point=(0.7 * nx, 0.0, 0.7 * nz), direction=(0.0, 1.0, 0.0)),
        Bundle("arc", radius=4.0, fa=0.6, md=1.0, center=(0.5 * nx, 0.5 * ny, 0.5 * nz),
               u=(1.0, 0.0, 0.0), v=(0.0, 1.0, 0.0), arc_radius=0.3 * nx, angles=(0.0, math.pi)),
    ]


@dataclass
class PhantomSpec:
    dims: tuple = (48, 48, 48)
    seed: int = 0
    bundles: list = field(default_factory=default_bundles)
    background_md: float = 1.0
    background_intensity: float = 0.3
    bundle_intensity: float = 0.8
    noise_sigma: float = 0.02
    spacing: tuple = (1.0, 1.0, 1.0)
    lr_factor: int = 2

    def validate(self):
        for b in self.bundles:
            solve_axisym_eigs(b.fa, b.md)
        if self.background_md <= 0:
            raise InfeasibleFA("background mean diffusivity must be positive")
        if any(d % self.lr_factor for d in self.dims):
            raise ValueError(f"dims {self.dims} must be divisible by lr_factor {self.lr_factor}")


@dataclass
class Phantom:
    x_hr: ScalarField
    y_hr: TensorField
    y_lr: TensorField
    labels: np.ndarray  # 0 background, i + 1 for bundle i


def _voxel_grid(dims):
    idx = np.indices(dims, dtype=np.float64)
    return np.moveaxis(idx, 0, -1)


def generate(spec=None):
    """Build ``(x_HR, y_HR, y_LR)``; the LR tensors come from tangent-space
    downsampling of the HR tensors by ``spec.lr_factor``."""
    spec = spec or PhantomSpec()
    spec.validate()
    dims = tuple(spec.dims)
    pts = _voxel_grid(dims)
    labels = np.zeros(dims, dtype=np.int64)
    best = np.full(dims, np.inf)
    tangents = np.zeros(dims + (3,))
    for i, b in enumerate(spec.bundles):
        dist, tan = b.nearest(pts)
        rel = dist / b.radius
        inside = (rel <= 1.0) & (rel < best)
        labels[inside] = i + 1
        best[inside] = rel[inside]
        tangents[inside] = tan[inside]

    y = spd.identity(dims) * spec.background_md
    for i, b in enumerate(spec.bundles):
        sel = labels == i + 1
        if not sel.any():
            continue
        lpar, lperp = solve_axisym_eigs(b.fa, b.md)
        t = tangents[sel]
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        # lperp * I + (lpar - lperp) * t t^T
        outer = np.stack([t[:, i0] * t[:, j0] for i0, j0 in spd.SIX_INDEX], axis=-1)
        y[sel] = spd.identity(()) * lperp + (lpar - lperp) * outer

    rng = np.random.default_rng(spec.seed)
    x = np.where(labels > 0, spec.bundle_intensity, spec.background_intensity)
    x = np.clip(x + spec.noise_sigma * rng.standard_normal(dims), 0.0, 1.0)

    x_hr = ScalarField(x, spec.spacing)
    y_hr = TensorField(y, spec.spacing, Domain.MANIFOLD)
    y_lr = resample_trilinear(y_hr.to_tangent(), 1.0 / spec.lr_factor).to_manifold()
    return Phantom(x_hr, y_hr, y_lr, labels)
