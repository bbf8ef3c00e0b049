"""Domain-specific augmentation for MRI volumes and fMRI sequences.

The MRI pipeline is resize -> rotate -> shift -> intensity scale ->
Gaussian noise (geometry before intensity; the resize fixes the sampling
grid first). fMRI sequences get one shared spatial transform across all
frames so within-scan registration survives, plus a circular temporal
shift and an occasional synthetic motion spike. fMRI volumes keep their
native resolution.

Each augmented copy draws from its own RNG stream seeded by
(policy seed, subject index, copy index), so any copy is reproducible in
isolation and results are independent of scheduling.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySequenceError, ShapeError
from .data import Sample
from .parallel import parallel_map


@dataclass
class AugmentationPolicy:
    """Parameter ranges for the random transforms.

    Magnitudes default to label-preserving values at anatomical scale;
    the resize target matches the standard structural grid.
    """

    target_mri_shape: tuple = (128, 128, 176)
    rotation_max_degrees: float = 10.0
    shift_max_voxels: int = 8
    intensity_scale_range: tuple = (0.9, 1.1)
    noise_sigma: float = 0.02
    temporal_shift_max_frames: int = 3
    motion_artifact_probability: float = 0.2
    copies_per_subject: int = 10
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.intensity_scale_range
        if lo > hi:
            raise ValueError(f"intensity_scale_range must be ordered, got ({lo}, {hi})")
        if not 0.0 <= self.motion_artifact_probability <= 1.0:
            raise ValueError("motion_artifact_probability must be in [0, 1]")
        if self.copies_per_subject < 0:
            raise ValueError("copies_per_subject must be >= 0")
        if self.rotation_max_degrees < 0 or self.shift_max_voxels < 0 \
                or self.noise_sigma < 0 or self.temporal_shift_max_frames < 0:
            raise ValueError("augmentation magnitudes must be >= 0")


def _check_volume(x):
    if x.ndim != 4:
        raise ShapeError(f"expected a [d1,d2,d3,c] volume, got rank {x.ndim}")


def _resample_axis(x, axis, target):
    """Align-corners linear resample of one axis (corners map to corners)."""
    d = x.shape[axis]
    if target == d:
        return x
    coords = np.linspace(0.0, d - 1, target)
    i0 = np.floor(coords).astype(np.int64)
    i0 = np.clip(i0, 0, d - 1)
    i1 = np.minimum(i0 + 1, d - 1)
    w = (coords - i0).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = target
    w = w.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - w) + np.take(x, i1, axis=axis) * w


def resize_volume(x, target):
    """Trilinear resize of the spatial axes onto a new grid."""
    _check_volume(x)
    target = tuple(int(d) for d in target)
    if len(target) != 3 or any(d < 1 for d in target):
        raise ShapeError(f"resize target must be 3 positive extents, got {target}")
    out = x
    for axis in range(3):
        out = _resample_axis(out, axis, target[axis])
    return np.ascontiguousarray(out)


def rotation_matrix(angles_deg):
    """Composed rotation Rz @ Ry @ Rx from per-axis angles in degrees."""
    ax, ay, az = (math.radians(a) for a in angles_deg)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _trilinear_gather(x, src):
    """Sample x at fractional coordinates src [3, d1, d2, d3]; outside -> 0."""
    d = x.shape[:3]
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    out = np.zeros(src.shape[1:] + (x.shape[3],), dtype=np.float64)
    for corner in range(8):
        offs = ((corner >> 2) & 1, (corner >> 1) & 1, corner & 1)
        idx = [i0[a] + offs[a] for a in range(3)]
        weight = np.ones(src.shape[1:], dtype=np.float64)
        valid = np.ones(src.shape[1:], dtype=bool)
        for a in range(3):
            weight = weight * (frac[a] if offs[a] else 1.0 - frac[a])
            valid &= (idx[a] >= 0) & (idx[a] <= d[a] - 1)
        clipped = [np.clip(idx[a], 0, d[a] - 1) for a in range(3)]
        vals = x[clipped[0], clipped[1], clipped[2]]
        out += vals * (weight * valid)[..., None]
    return out.astype(x.dtype)


def rotate_volume(x, angles_deg):
    """Rotate about the volume center, resampling trilinearly (outside -> 0)."""
    _check_volume(x)
    d = x.shape[:3]
    center = np.array([(e - 1) / 2.0 for e in d]).reshape(3, 1, 1, 1)
    grid = np.indices(d, dtype=np.float64)
    rot = rotation_matrix(angles_deg)
    src = np.tensordot(rot.T, grid - center, axes=1) + center
    return _trilinear_gather(x, src)


def shift_volume(x, offsets):
    """Integer voxel shift per axis; vacated regions fill with zero."""
    _check_volume(x)
    offsets = tuple(int(o) for o in offsets)
    out = np.zeros_like(x)
    dst, src = [], []
    for axis in range(3):
        d, o = x.shape[axis], offsets[axis]
        if abs(o) >= d:
            return out
        dst.append(slice(max(o, 0), d + min(o, 0)))
        src.append(slice(max(-o, 0), d + min(-o, 0)))
    out[tuple(dst)] = x[tuple(src)]
    return out


def scale_intensity(x, factor):
    return x * np.float32(factor)


def temporal_shift(x, k):
    """Circular shift of the frame axis: output frame t = input (t-k) mod T."""
    return np.roll(x, k, axis=0)


def random_rotate_3d(x, policy, rng):
    angles = rng.uniform(-policy.rotation_max_degrees, policy.rotation_max_degrees, 3)
    return rotate_volume(x, angles)


def random_shift_3d(x, policy, rng):
    offsets = rng.integers(-policy.shift_max_voxels, policy.shift_max_voxels + 1, 3)
    return shift_volume(x, offsets)


def random_intensity_scale(x, policy, rng):
    lo, hi = policy.intensity_scale_range
    return scale_intensity(x, rng.uniform(lo, hi))


def add_gaussian_noise(x, policy, rng):
    return x + rng.normal(0.0, policy.noise_sigma, x.shape).astype(x.dtype)


def _augment_mri_recorded(x, policy, rng):
    y = resize_volume(x, policy.target_mri_shape)
    angles = rng.uniform(-policy.rotation_max_degrees, policy.rotation_max_degrees, 3)
    y = rotate_volume(y, angles)
    offsets = rng.integers(-policy.shift_max_voxels, policy.shift_max_voxels + 1, 3)
    y = shift_volume(y, offsets)
    factor = rng.uniform(*policy.intensity_scale_range)
    y = scale_intensity(y, factor)
    y = add_gaussian_noise(y, policy, rng)
    record = (f"angles=({angles[0]:.3f},{angles[1]:.3f},{angles[2]:.3f})"
              f";shift=({offsets[0]},{offsets[1]},{offsets[2]})"
              f";scale={factor:.4f};sigma={policy.noise_sigma:g}")
    return y, record


def augment_mri(x, policy, rng):
    """Full structural pipeline: resize, rotate, shift, scale, noise."""
    return _augment_mri_recorded(x, policy, rng)[0]


def _augment_fmri_recorded(x, policy, rng):
    if x.ndim != 5:
        raise ShapeError(f"expected a [T,d1,d2,d3,c] series, got rank {x.ndim}")
    if x.shape[0] < 1:
        raise EmptySequenceError("fMRI series has no frames")
    angles = rng.uniform(-policy.rotation_max_degrees, policy.rotation_max_degrees, 3)
    offsets = rng.integers(-policy.shift_max_voxels, policy.shift_max_voxels + 1, 3)
    k = int(rng.integers(-policy.temporal_shift_max_frames,
                         policy.temporal_shift_max_frames + 1))
    spike = rng.random() < policy.motion_artifact_probability
    if np.any(angles) or np.any(offsets):
        y = np.stack([shift_volume(rotate_volume(f, angles), offsets) for f in x])
    else:
        y = x.copy()
    y = temporal_shift(y, k)
    record = (f"t_angles=({angles[0]:.3f},{angles[1]:.3f},{angles[2]:.3f})"
              f";t_shift=({offsets[0]},{offsets[1]},{offsets[2]});frames={k}")
    if spike:
        t = int(rng.integers(0, x.shape[0]))
        extra = rng.integers(-policy.shift_max_voxels, policy.shift_max_voxels + 1, 3)
        y[t] = shift_volume(y[t], extra)
        record += f";spike_frame={t};spike_shift=({extra[0]},{extra[1]},{extra[2]})"
    return y, record


def augment_fmri(x, policy, rng):
    """Shared spatial transform, circular temporal shift, motion spike."""
    return _augment_fmri_recorded(x, policy, rng)[0]


@dataclass
class Provenance:
    sample_id: str
    source_subject: str
    copy_index: int
    label: int
    transform_params: str


@dataclass
class AugmentedDataset:
    samples: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def write_provenance(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# sample_id\tsource_subject\tcopy_index\tlabel\ttransform_params\n")
            for p in self.provenance:
                fh.write(f"{p.sample_id}\t{p.source_subject}\t{p.copy_index}\t"
                         f"{p.label}\t{p.transform_params}\n")


def _copy_rng(policy, subject_index, copy_index):
    seq = np.random.SeedSequence([policy.seed, subject_index, copy_index])
    return np.random.Generator(np.random.PCG64(seq))


def _expand_one(sample, subject_index, copy_index, policy):
    if copy_index == 0:
        mri = resize_volume(sample.mri, policy.target_mri_shape) if sample.mri is not None else None
        fmri = sample.fmri
        params = "resize-only"
    else:
        rng = _copy_rng(policy, subject_index, copy_index)
        parts = []
        mri = fmri = None
        if sample.mri is not None:
            mri, rec = _augment_mri_recorded(sample.mri, policy, rng)
            parts.append(rec)
        if sample.fmri is not None:
            fmri, rec = _augment_fmri_recorded(sample.fmri, policy, rng)
            parts.append(rec)
        params = ";".join(parts)
    sample_id = sample.subject_id if copy_index == 0 else f"{sample.subject_id}_aug{copy_index:02d}"
    new = Sample(sample_id, mri, fmri, sample.label)
    return new, Provenance(sample_id, sample.subject_id, copy_index, sample.label, params)


def expand_dataset(samples, policy, workers=1):
    """Emit each subject plus copies_per_subject augmented copies.

    Copy 0 is the original (MRI resized to the target grid, fMRI
    untouched); labels are inherited. Output order is subject-major.
    """
    tasks = [(sample, si, ci)
             for si, sample in enumerate(samples)
             for ci in range(policy.copies_per_subject + 1)]
    results = parallel_map(lambda t: _expand_one(t[0], t[1], t[2], policy), tasks, workers)
    out = AugmentedDataset()
    for new_sample, prov in results:
        out.samples.append(new_sample)
        out.provenance.append(prov)
    return out
