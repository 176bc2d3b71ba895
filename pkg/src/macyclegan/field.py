"""Volumetric scalar / tensor fields, resampling, patching and the TFV format."""
import enum
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import spd
from .errors import CoverageGap, DomainError, FormatError, PatchTooLarge, ShapeError


class Domain(enum.Enum):
    MANIFOLD = "manifold"
    TANGENT = "tangent"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real intensities on a ``(nx, ny, nz)`` grid; ``data[i, j, k]``."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"scalar field needs 3 dims, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("scalar field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self):
        return self.data.shape

    def with_data(self, data, spacing=None):
        return ScalarField(data, self.spacing if spacing is None else spacing)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Packed symmetric tensors on a grid; ``data`` has shape ``(nx, ny, nz, 6)``.

    ``domain`` says whether the values are SPD tensors (MANIFOLD) or
    log-domain vectors of the tangent plane at identity (TANGENT).
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    domain: Domain = Domain.MANIFOLD
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[-1] != 6:
            raise ShapeError(f"tensor field needs shape (nx, ny, nz, 6), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("tensor field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def dims(self):
        return self.data.shape[:3]

    def with_data(self, data, spacing=None, domain=None):
        return TensorField(data, self.spacing if spacing is None else spacing,
                           self.domain if domain is None else domain, dict(self.metadata))

    def to_tangent(self):
        """Apply ``log_id`` voxelwise. Tangent fields are returned as-is."""
        if self.domain is Domain.TANGENT:
            return self
        return self.with_data(spd.log_id(self.data), domain=Domain.TANGENT)

    def to_manifold(self):
        if self.domain is Domain.MANIFOLD:
            return self
        return self.with_data(spd.exp_id(self.data), domain=Domain.MANIFOLD)

    def as_euclidean(self):
        """Relabel raw values as plain vectors without any projection."""
        return self.with_data(self.data, domain=Domain.TANGENT)

    def check_spd(self):
        return bool(np.all(spd.min_eigenvalue(self.data) > 0.0))


def _is_tensor(vol):
    return isinstance(vol, TensorField)


# ---------------------------------------------------------------------------
# masks and patches


def foreground_mask(x, threshold):
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    return np.asarray(x.data) > threshold


@dataclass(frozen=True, eq=False)
class PatchSet:
    patch_size: int
    stride: int
    origins: list
    patches: np.ndarray  # (n, s, s, s) or (n, s, s, s, 6)
    kind: str = "scalar"
    spacing: tuple = (1.0, 1.0, 1.0)
    domain: Domain = None

    def __len__(self):
        return len(self.origins)


def grid_origins(dims, size, stride):
    axes = [range(0, d - size + 1, stride) for d in dims]
    return [(i, j, k) for i in axes[0] for j in axes[1] for k in axes[2]]


def extract_patches(vol, size, stride, mask=None):
    """Cut cubic patches on an aligned stride grid, keeping those whose
    center voxel ``origin + size // 2`` lies in ``mask``."""
    dims = vol.dims
    if any(size > d for d in dims):
        raise PatchTooLarge(f"patch size {size} exceeds volume dims {dims}")
    if not 1 <= stride <= size:
        raise ValueError(f"stride must be in [1, {size}], got {stride}")
    if mask is None:
        mask = np.ones(dims, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(dims):
        raise ShapeError(f"mask shape {mask.shape} != volume dims {dims}")
    h = size // 2
    origins = [o for o in grid_origins(dims, size, stride) if mask[o[0] + h, o[1] + h, o[2] + h]]
    data = vol.data
    tail = data.shape[3:]
    patches = np.empty((len(origins), size, size, size) + tail)
    for n, (i, j, k) in enumerate(origins):
        patches[n] = data[i:i + size, j:j + size, k:k + size]
    kind = "tensor" if _is_tensor(vol) else "scalar"
    domain = vol.domain if _is_tensor(vol) else None
    return PatchSet(size, stride, origins, patches, kind, vol.spacing, domain)


def accumulate_patches(patches, origins, dims):
    """Sum patches into a volume relative to a per-voxel reference.

    Returns ``(ref, dev, count)`` where ``ref`` holds the first patch value
    seen at each voxel and ``dev`` the summed deviations from it. The mean
    is ``ref + dev / count``; when all patches agree ``dev`` is exactly
    zero, so stitching reproduces the source bit for bit.
    """
    patches = np.asarray(patches, dtype=np.float64)
    size = patches.shape[1]
    tail = patches.shape[4:]
    ref = np.zeros(tuple(dims) + tail)
    dev = np.zeros(tuple(dims) + tail)
    count = np.zeros(tuple(dims), dtype=np.int64)
    for p, (i, j, k) in zip(patches, origins):
        win = (slice(i, i + size), slice(j, j + size), slice(k, k + size))
        fresh = count[win] == 0
        ref[win][fresh] = p[fresh]
        dev[win] += p - ref[win]
        count[win] += 1
    return ref, dev, count


def stitch_patches(ps, dims, allow_gaps=False, fill=None):
    """Average overlapping patches back into a volume.

    Tensor patches must be tangent-domain: averaging happens in log space.
    With ``allow_gaps`` uncovered voxels receive ``fill`` (zeros by default)
    and the coverage mask is recorded under ``metadata["covered"]``.
    """
    if ps.kind == "tensor" and ps.domain is not Domain.TANGENT:
        raise DomainError("tensor patches must be stitched in the tangent domain")
    ref, dev, count = accumulate_patches(ps.patches, ps.origins, dims)
    covered = count > 0
    if not covered.all() and not allow_gaps:
        raise CoverageGap(np.argwhere(~covered))
    tail = ref.shape[3:]
    denom = np.maximum(count, 1).reshape(tuple(dims) + (1,) * len(tail))
    out = ref + dev / denom
    if not covered.all():
        out[~covered] = 0.0 if fill is None else fill
    if ps.kind == "tensor":
        return TensorField(out, ps.spacing, Domain.TANGENT, {"covered": covered})
    return ScalarField(out, ps.spacing)


# ---------------------------------------------------------------------------
# trilinear resampling


def axis_coords(n_in, n_out, factor):
    """Back-projected coordinates (lo, hi, t) for voxel-center alignment."""
    u = np.arange(n_out, dtype=np.float64)
    x = (u + 0.5) / factor - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    lo = np.floor(x).astype(np.int64)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    t = x - lo
    return lo, hi, t


def axis_matrix(n_in, n_out, factor):
    """Dense ``(n_out, n_in)`` linear interpolation matrix for one axis."""
    lo, hi, t = axis_coords(n_in, n_out, factor)
    w = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(w, (rows, lo), 1.0 - t)
    np.add.at(w, (rows, hi), t)
    return w


def output_dims(dims, factor):
    out = tuple(int(round(d * factor)) for d in dims)
    if any(d < 2 for d in out):
        raise ShapeError(f"factor {factor} maps dims {tuple(dims)} to {out}; every dim must be >= 2")
    return out


def resample_array(a, factor, axes=(0, 1, 2)):
    """Separable linear interpolation of ``a`` along ``axes``.

    Each axis is blended as ``lo + t * (hi - lo)``, which keeps constant
    inputs exactly constant.
    """
    a = np.asarray(a, dtype=np.float64)
    for ax in axes:
        n_in = a.shape[ax]
        n_out = int(round(n_in * factor))
        lo, hi, t = axis_coords(n_in, n_out, factor)
        shape = [1] * a.ndim
        shape[ax] = n_out
        t = t.reshape(shape)
        a_lo = np.take(a, lo, axis=ax)
        a_hi = np.take(a, hi, axis=ax)
        a = a_lo + t * (a_hi - a_lo)
    return a


def resample_trilinear(vol, factor):
    """Trilinear up/down-sampling of a scalar field or a tangent tensor field."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    if _is_tensor(vol) and vol.domain is not Domain.TANGENT:
        raise DomainError("resample tensor fields in the tangent domain (apply log_id first)")
    output_dims(vol.dims, factor)
    data = resample_array(vol.data, factor)
    spacing = tuple(s / factor for s in vol.spacing)
    return vol.with_data(data, spacing=spacing)


# ---------------------------------------------------------------------------
# TFV file format

TFV_MAGIC = b"TFV1"
KIND_SCALAR, KIND_MANIFOLD, KIND_TANGENT = 0, 1, 2
_HEADER = struct.Struct("<4sB3I3d")


def _kind_of(vol):
    if not _is_tensor(vol):
        return KIND_SCALAR
    return KIND_MANIFOLD if vol.domain is Domain.MANIFOLD else KIND_TANGENT


def tfv_bytes(vol):
    dims = vol.dims
    header = _HEADER.pack(TFV_MAGIC, _kind_of(vol), *dims, *vol.spacing)
    data = np.asarray(vol.data, dtype="<f8")
    if _is_tensor(vol):
        payload = data.transpose(2, 1, 0, 3)  # x fastest, 6 components per voxel
    else:
        payload = data.transpose(2, 1, 0)
    return header + np.ascontiguousarray(payload).tobytes()


def tfv_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated TFV header")
    magic, kind, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(buf)
    if magic != TFV_MAGIC:
        raise FormatError(f"bad TFV magic {magic!r}")
    if kind not in (KIND_SCALAR, KIND_MANIFOLD, KIND_TANGENT):
        raise FormatError(f"unknown TFV kind {kind}")
    per = 1 if kind == KIND_SCALAR else 6
    n = nx * ny * nz * per
    body = buf[_HEADER.size:]
    if len(body) != 8 * n:
        raise FormatError(f"TFV payload has {len(body)} bytes, expected {8 * n}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    spacing = (sx, sy, sz)
    if kind == KIND_SCALAR:
        return ScalarField(flat.reshape(nz, ny, nx).transpose(2, 1, 0).copy(), spacing)
    data = flat.reshape(nz, ny, nx, 6).transpose(2, 1, 0, 3).copy()
    domain = Domain.MANIFOLD if kind == KIND_MANIFOLD else Domain.TANGENT
    return TensorField(data, spacing, domain)


def write_tfv(path, vol):
    with open(path, "wb") as fh:
        fh.write(tfv_bytes(vol))


def read_tfv(path):
    with open(path, "rb") as fh:
        return tfv_from_bytes(fh.read())


def pad_to(vol, dims, mode="edge"):
    """Pad a volume at the high end of each axis up to ``dims``."""
    extra = [(0, d - n) for d, n in zip(dims, vol.dims)]
    if _is_tensor(vol):
        extra.append((0, 0))
    return vol.with_data(np.pad(vol.data, extra, mode=mode))


def crop(vol, dims):
    nx, ny, nz = dims
    return vol.with_data(vol.data[:nx, :ny, :nz])


__all__ = [
    "Domain", "ScalarField", "TensorField", "PatchSet", "foreground_mask", "extract_patches",
    "stitch_patches", "resample_trilinear", "resample_array", "axis_matrix", "write_tfv",
    "read_tfv", "tfv_bytes", "tfv_from_bytes",
]
