"""Volume ingestion, label encoding, manifests, synthetic data.

NIfTI-1 support covers uncompressed single-file volumes: the 348-byte
header (either endianness, detected through sizeof_hdr), voxel datatypes
uint8/int16/float32/float64, and the scl_slope/scl_inter affine. Voxel
data on disk is Fortran-ordered (first index fastest) per the standard;
in memory everything is row-major float32 with a trailing channel extent
of 1, and 4D series carry time as the leading axis.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (FormatError, LabelError, ShapeError, TruncatedFileError,
                     UnsupportedTypeError)
from .models import read_tensor, write_tensor

HEADER_SIZE = 348
SINGLE_FILE_MAGIC = b"n+1\x00"
PAIR_MAGIC = b"ni1\x00"

# NIfTI-1 datatype codes this reader converts to float32.
_DATATYPES = {2: "u1", 4: "i2", 16: "f4", 64: "f8"}

LABELS_3CLASS = ("NCS", "MCI", "AD")
LABELS_4CLASS = ("no impairment", "very mild impairment",
                 "mild impairment", "moderate impairment")
_LABEL_CODES = {name.lower(): code for code, name in enumerate(LABELS_3CLASS)}
_LABEL_CODES_4 = {name: code for code, name in enumerate(LABELS_4CLASS)}


@dataclass
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple
    datatype: int
    bitpix: int
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    byteorder: str  # "<" or ">"

    @classmethod
    def parse(cls, raw):
        if len(raw) < HEADER_SIZE:
            raise TruncatedFileError(f"header is {len(raw)} bytes, need {HEADER_SIZE}")
        for order in ("<", ">"):
            (sizeof_hdr,) = struct.unpack(order + "i", raw[0:4])
            if sizeof_hdr == HEADER_SIZE:
                break
        else:
            raise FormatError("sizeof_hdr is not 348 in either byte order")
        magic = raw[344:348]
        if magic not in (SINGLE_FILE_MAGIC, PAIR_MAGIC):
            raise FormatError(f"bad NIfTI magic {magic!r}")
        dim = struct.unpack(order + "8h", raw[40:56])
        if not 1 <= dim[0] <= 7:
            raise FormatError(f"dim[0] must be 1..7, got {dim[0]}")
        if any(d < 1 for d in dim[1:dim[0] + 1]):
            raise FormatError(f"non-positive extent in dim {dim[:dim[0] + 1]}")
        datatype, bitpix = struct.unpack(order + "2h", raw[70:74])
        vox_offset, scl_slope, scl_inter = struct.unpack(order + "3f", raw[108:120])
        return cls(sizeof_hdr, dim, datatype, bitpix, vox_offset,
                   scl_slope, scl_inter, magic, order)

    @property
    def rank(self):
        return self.dim[0]

    @property
    def extents(self):
        return self.dim[1:self.rank + 1]


def read_nifti(path):
    """Read a single-file NIfTI-1 volume as a float32 tensor.

    Rank-3 files become [d1, d2, d3, 1]; rank-4 files (time last on disk)
    become [T, d1, d2, d3, 1].
    """
    raw = Path(path).read_bytes()
    header = NiftiHeader.parse(raw)
    if header.magic == PAIR_MAGIC:
        raise FormatError("header+image NIfTI pairs are not supported, use single-file n+1")
    if header.rank not in (3, 4):
        raise FormatError(f"only rank-3/4 volumes are supported, got rank {header.rank}")
    if header.datatype not in _DATATYPES:
        raise UnsupportedTypeError(f"unsupported NIfTI datatype code {header.datatype}")
    dtype = np.dtype(header.byteorder + _DATATYPES[header.datatype])
    count = math.prod(header.extents)
    offset = int(header.vox_offset)
    if len(raw) < offset + count * dtype.itemsize:
        raise TruncatedFileError(
            f"file has {len(raw) - offset} data bytes, need {count * dtype.itemsize}")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    volume = flat.reshape(header.extents, order="F").astype(np.float32)
    if header.scl_slope != 0.0:
        volume = volume * np.float32(header.scl_slope) + np.float32(header.scl_inter)
    if header.rank == 3:
        return np.ascontiguousarray(volume)[..., None]
    return np.ascontiguousarray(np.moveaxis(volume, 3, 0))[..., None]


def write_nifti(tensor, path):
    """Write a tensor as an uncompressed single-file float32 NIfTI-1.

    Accepts [d1,d2,d3], [d1,d2,d3,1], or [T,d1,d2,d3,1]; time goes last
    on disk. vox_offset is 352 and scl_slope 0 (no scaling on read-back).
    """
    if tensor.ndim == 4 and tensor.shape[3] == 1:
        spatial = tensor[..., 0]
    elif tensor.ndim == 5 and tensor.shape[4] == 1:
        spatial = np.moveaxis(tensor[..., 0], 0, 3)
    elif tensor.ndim == 3:
        spatial = tensor
    else:
        raise ShapeError(f"cannot write shape {tensor.shape} as a NIfTI volume")
    rank = spatial.ndim
    dim = [rank] + list(spatial.shape) + [1] * (7 - rank)
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, *dim)
    struct.pack_into("<2h", header, 70, 16, 32)          # datatype float32, bitpix
    struct.pack_into("<8f", header, 76, 0.0, *([1.0] * rank + [0.0] * (7 - rank)))  # pixdim
    struct.pack_into("<3f", header, 108, 352.0, 0.0, 0.0)  # vox_offset, scl_slope, scl_inter
    header[344:348] = SINGLE_FILE_MAGIC
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\x00" * 4)  # empty extension flag pads to vox_offset 352
        fh.write(np.asarray(spatial, dtype="<f4").tobytes(order="F"))


def standardize_intensity(x):
    """Per-volume z-score; 4D time series standardize frame by frame."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 5:
        return np.stack([standardize_intensity(frame) for frame in x])
    mean = np.float32(x.mean())
    std = np.float32(x.std())
    return (x - mean) / (std + np.float32(1e-8))


def encode_label(text):
    """Map a diagnosis label to its class index (3- or 4-class sets)."""
    key = text.strip().lower().replace("_", " ")
    if key in _LABEL_CODES:
        return _LABEL_CODES[key]
    if key in _LABEL_CODES_4:
        return _LABEL_CODES_4[key]
    raise LabelError(f"unknown label {text!r}")


@dataclass
class Sample:
    """One subject's data: structural volume, optional time series, class."""
    subject_id: str
    mri: np.ndarray | None
    fmri: np.ndarray | None
    label: int


@dataclass
class ManifestRow:
    subject_id: str
    mri_path: str
    fmri_path: str  # empty string when absent
    label_text: str
    group: str = ""  # source subject for augmented samples


def read_manifest(path):
    """Tab-separated manifest rows; '#' lines and blanks are ignored."""
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise FormatError(f"{path}:{lineno}: expected >= 4 tab-separated fields")
        rows.append(ManifestRow(parts[0], parts[1], parts[2], parts[3],
                                parts[4] if len(parts) > 4 else ""))
    return rows


def write_manifest(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# subject_id\tmri_path\tfmri_path\tlabel\tgroup\n")
        for r in rows:
            fh.write(f"{r.subject_id}\t{r.mri_path}\t{r.fmri_path}\t{r.label_text}\t{r.group}\n")


def save_tensor_file(array, path):
    """Bare tensor container: (u32 rank, u64 extents, little-endian f32)."""
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor_file(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _load_volume(path, standardize):
    path = Path(path)
    if path.suffix == ".nft":
        return load_tensor_file(path)
    volume = read_nifti(path)
    return standardize_intensity(volume) if standardize else volume


def load_samples(manifest_path, standardize=True):
    """Load every manifest row into a Sample.

    NIfTI volumes are intensity-standardized on ingestion (matching the
    preprocessing order: standardization happens before augmentation);
    .nft tensors are stored post-standardization and load as-is.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for row in read_manifest(manifest_path):
        mri = _load_volume(base / row.mri_path, standardize) if row.mri_path else None
        fmri = _load_volume(base / row.fmri_path, standardize) if row.fmri_path else None
        samples.append(Sample(row.subject_id, mri, fmri, encode_label(row.label_text)))
    return samples


def _gaussian_blob(shape, center_frac, width_frac, amplitude):
    grids = np.indices(shape, dtype=np.float32)
    sq = np.zeros(shape, dtype=np.float32)
    for axis, grid in enumerate(grids):
        extent = shape[axis]
        center = center_frac[axis] * (extent - 1)
        width = max(width_frac[axis] * extent, 0.75)
        sq += ((grid - center) / width) ** 2
    return np.float32(amplitude) * np.exp(-0.5 * sq)


def generate_synthetic_dataset(n_per_class, mri_shape=(16, 16, 12),
                               fmri_shape=(6, 8, 8, 4), num_classes=3, seed=0):
    """Class-separable synthetic subjects, deterministic per seed.

    Class k places a Gaussian blob at a class-specific center/width in the
    MRI volume; the fMRI series modulates a blob with a class-specific
    temporal frequency. Per-subject jitter of blob position and amplitude
    plus Gaussian noise keeps subjects distinct but classes separable.
    Samples are emitted class-major: labels [0]*n + [1]*n + ...
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.Generator(np.random.PCG64(seed))
    T = fmri_shape[0]
    samples = []
    denom = max(num_classes - 1, 1)
    for k in range(num_classes):
        center = (0.25 + 0.5 * k / denom, 0.7 - 0.4 * k / denom, 0.5)
        width = 0.10 + 0.05 * k / denom
        for i in range(n_per_class):
            jitter = rng.uniform(-0.04, 0.04, 3)
            c = tuple(np.clip(center + jitter, 0.05, 0.95))
            w = (width * rng.uniform(0.9, 1.1),) * 3
            amp = 2.0 * rng.uniform(0.9, 1.1)
            mri = _gaussian_blob(mri_shape, c, w, amp)
            mri += rng.normal(0.0, 0.1, mri_shape).astype(np.float32)
            blob = _gaussian_blob(fmri_shape[1:], c, w, 1.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            frames = []
            for t in range(T):
                mod = 1.0 + 0.6 * math.sin(2.0 * math.pi * (k + 1) * t / T + phase)
                frame = np.float32(mod) * blob
                frame += rng.normal(0.0, 0.1, fmri_shape[1:]).astype(np.float32)
                frames.append(frame)
            fmri = np.stack(frames)
            samples.append(Sample(f"sub{len(samples):03d}",
                                  mri[..., None], fmri[..., None], k))
    return samples
