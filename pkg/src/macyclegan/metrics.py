"""Tensor-derived scalar maps and the evaluation metric suite."""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .errors import DegenerateWarning, DimMismatch, EmptyMask, FormatError
from .field import Domain, TensorField

THRESHOLDS = (0.0, 0.2, 0.5)
DEGENERATE_GAP = 1e-9


def fa_from_eigenvalues(w):
    w = np.asarray(w, dtype=np.float64)
    dev = w - w.mean(axis=-1, keepdims=True)
    num = np.sqrt(np.sum(dev * dev, axis=-1))
    den = np.sqrt(np.sum(w * w, axis=-1))
    safe = np.where(den > 0.0, den, 1.0)
    return np.where(den > 0.0, math.sqrt(1.5) * num / safe, 0.0)


def fractional_anisotropy(p):
    """FA of packed tensors, eigenvalues clamped with the log-map policy."""
    w = spd.eig_sym3(p).eigenvalues
    return fa_from_eigenvalues(spd.clamp_eigenvalues(w))


def mean_diffusivity(p):
    p = np.asarray(p, dtype=np.float64)
    return (p[..., 0] + p[..., 1] + p[..., 2]) / 3.0


def principal_direction(p, warn=True):
    """Unit eigenvector of the largest eigenvalue, first nonzero entry positive.

    Emits :class:`DegenerateWarning` when the top two eigenvalues are closer
    than 1e-9 anywhere in the input.
    """
    w, v = spd.eig_sym3(p)
    if warn and np.any(w[..., 0] - w[..., 1] < DEGENERATE_GAP):
        warnings.warn("principal direction ill-defined: top eigenvalues tie", DegenerateWarning, stacklevel=2)
    return v[..., :, 0]


def _check_pair(gen, gt):
    if tuple(gen.dims) != tuple(gt.dims):
        raise DimMismatch(f"dims differ: {tuple(gen.dims)} vs {tuple(gt.dims)}")


def _masked_mean(values, mask):
    if mask is None:
        sel = values.ravel()
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise DimMismatch(f"mask shape {mask.shape} != field dims {values.shape}")
        sel = values[mask]
    if sel.size == 0:
        raise EmptyMask("mask selects no voxels")
    # np.sum uses pairwise summation: fixed order, independent of threading
    return float(np.sum(sel) / sel.size)


def _abs_cos(a, b):
    return np.abs(np.sum(a * b, axis=-1))


def cosine_similarity_map(gen, gt, thresholds=THRESHOLDS, mask=None, absolute=True):
    """Per-voxel cosine between principal directions.

    Returns ``(per_threshold, voxel_map)`` where ``per_threshold`` maps each FA
    threshold (applied to the ground truth) to ``(mean, voxel_count)``. With
    ``absolute=False`` the signed cosine of the sign-canonicalized vectors is
    used instead of its magnitude.
    """
    _check_pair(gen, gt)
    vg = principal_direction(gen.data, warn=False)
    vt = principal_direction(gt.data, warn=False)
    dots = np.sum(vg * vt, axis=-1)
    cos_map = np.abs(dots) if absolute else dots
    fa_gt = fractional_anisotropy(gt.data)
    base = np.ones(gt.dims, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = {}
    for th in thresholds:
        sel = base & (fa_gt >= th)
        n = int(sel.sum())
        out[float(th)] = (float(np.sum(cos_map[sel]) / n) if n else float("nan"), n)
    return out, cos_map


def fa_mse(gen, gt, mask=None):
    _check_pair(gen, gt)
    d = fractional_anisotropy(gen.data) - fractional_anisotropy(gt.data)
    return _masked_mean(d * d, mask)


def mean_le_distance(gen, gt, mask=None):
    _check_pair(gen, gt)
    return _masked_mean(le_distance_map(gen, gt), mask)


def le_distance_map(gen, gt):
    return spd.frob_norm(_log_data(gen) - _log_data(gt))


def _log_data(f):
    return f.data if f.domain is Domain.TANGENT else spd.log_id(f.data)


@dataclass
class EvalReport:
    fa_mse: float
    mean_log_distance: float
    cosine_by_threshold: dict
    metadata: dict = field(default_factory=dict)

    KEYS = ("fa_mse", "log_dist", "cos_0.0", "cos_0.2", "cos_0.5", "n_0.0", "n_0.2", "n_0.5")

    def as_dict(self):
        d = {"fa_mse": self.fa_mse, "log_dist": self.mean_log_distance}
        for th in THRESHOLDS:
            d[f"cos_{th}"] = self.cosine_by_threshold[th][0]
        for th in THRESHOLDS:
            d[f"n_{th}"] = self.cosine_by_threshold[th][1]
        return d

    def to_text(self):
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"report line {n}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            vals[k.strip()] = v.strip()
        missing = [k for k in cls.KEYS if k not in vals]
        if missing:
            raise FormatError(f"report is missing keys: {missing}")
        cos = {th: (float(vals[f"cos_{th}"]), int(vals[f"n_{th}"])) for th in THRESHOLDS}
        return cls(float(vals["fa_mse"]), float(vals["log_dist"]), cos)


def evaluate(gen, gt, mask=None, absolute=True, metadata=None):
    """FA MSE, mean Log-Euclidean distance and cosine similarity by FA threshold.

    ``mask`` restricts every metric; pass the foreground of the ground truth
    to evaluate brain-like voxels only.
    """
    _check_pair(gen, gt)
    if not isinstance(gen, TensorField) or not isinstance(gt, TensorField):
        raise TypeError("evaluate expects TensorField inputs")
    cos, _ = cosine_similarity_map(gen, gt, THRESHOLDS, mask=mask, absolute=absolute)
    return EvalReport(
        fa_mse=fa_mse(gen, gt, mask),
        mean_log_distance=mean_le_distance(gen, gt, mask),
        cosine_by_threshold=cos,
        metadata=dict(metadata or {}),
    )
