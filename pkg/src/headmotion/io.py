"""File formats: NIfTI-1 volumes, tracking-log CSV, dataset manifests.

Volumes are held as unsigned 16-bit integers because the LSB8
preprocessing is defined directly on the integer representation; float
and signed inputs are converted on read with a warning.  Data keeps the
NIfTI native x-fastest ordering and no reorientation is attempted.
"""

from __future__ import annotations

import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError
from .rigid import RigidTransform, SequenceWindow, Trajectory

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "Volume",
    "read_manifest",
    "read_nifti",
    "read_tracking_log",
    "write_manifest",
    "write_nifti",
    "write_tracking_log",
]

MODALITIES = ("T1", "T2", "FLAIR", "synthetic")

TRACKING_HEADER = "t,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz"
MANIFEST_HEADER = (
    "volume,log,window_start,window_end,clock_offset,"
    "motion_score,drift,breathing,noisy,age,split"
)
SPLITS = ("train", "validation", "test")

_HDR_SIZE = 348
_VOX_OFFSET = 352
_DTYPES = {4: "i2", 512: "u2", 16: "f4"}


@dataclass(frozen=True)
class Volume:
    """A 3D image: uint16 intensities plus voxel geometry and modality."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    modality_tag: str = "synthetic"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise FormatError(
                "bad_dims", f"volume data must be 3-D with positive dims, got shape {arr.shape}"
            )
        if arr.dtype != np.uint16:
            if not np.all(np.isfinite(arr)):
                raise FormatError("bad_intensities", "intensities must be finite")
            rounded = np.rint(arr)
            if np.any(rounded != arr) or arr.min() < 0 or arr.max() > 65535:
                raise FormatError(
                    "bad_intensities",
                    "intensities must be integers in [0, 65535]; convert explicitly first",
                )
            arr = rounded.astype(np.uint16)
        vs = tuple(float(v) for v in self.voxel_size)
        if len(vs) != 3 or any(not np.isfinite(v) or v <= 0.0 for v in vs):
            raise FormatError("bad_voxel_size", f"voxel sizes must be positive, got {self.voxel_size!r}")
        if self.modality_tag not in MODALITIES:
            raise FormatError(
                "bad_modality", f"modality must be one of {MODALITIES}, got {self.modality_tag!r}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def with_data(self, data) -> "Volume":
        """Same geometry and modality, new intensities."""
        return Volume(data=data, voxel_size=self.voxel_size, modality_tag=self.modality_tag)


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset row: a volume, its provenance, labels, and split."""

    volume_path: str
    log_path: str | None = None
    window: SequenceWindow | None = None
    motion_score: float | None = None
    drift: float | None = None
    breathing: float | None = None
    noisy: float | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise FormatError("bad_split", f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.volume_path:
            raise FormatError("bad_manifest", "volume path must be non-empty")

    @property
    def supervised(self) -> bool:
        """True when the entry can provide a training label."""
        return self.log_path is not None or self.motion_score is not None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        paths = [e.volume_path for e in entries]
        if len(set(paths)) != len(paths):
            dupe = next(p for p in paths if paths.count(p) > 1)
            raise FormatError("duplicate_volume", f"volume path listed twice: {dupe}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, split: str) -> "DatasetManifest":
        if split not in SPLITS:
            raise FormatError("bad_split", f"split must be one of {SPLITS}, got {split!r}")
        return DatasetManifest(tuple(e for e in self.entries if e.split == split))


def _open_maybe_gzip(path, mode):
    if "r" in mode:
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == b"\x1f\x8b":
            return gzip.open(path, mode)
        return open(path, mode)
    if str(path).endswith(".gz"):
        # pin mtime and omit the embedded name so identical volumes produce
        # identical bytes no matter where they are written
        raw = open(path, mode)
        gz = gzip.GzipFile(fileobj=raw, mode=mode, filename="", mtime=0)
        gz.myfileobj = raw  # hand ownership over so close() also closes raw
        return gz
    return open(path, mode)


def read_nifti(path) -> Volume:
    """Read a single-file NIfTI-1 volume (.nii or .nii.gz) as uint16."""
    with _open_maybe_gzip(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HDR_SIZE:
        raise FormatError("truncated_header", f"file holds {len(raw)} bytes, header needs {_HDR_SIZE}")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == _HDR_SIZE:
            break
    else:
        raise FormatError("bad_header", "sizeof_hdr is not 348 in either byte order")
    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic != b"n+1\x00":
        raise FormatError("bad_magic", f"magic must be b'n+1', got {magic!r}")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError("bad_header", f"dim[0] = {ndim} is outside 1..7")
    if ndim > 3 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise FormatError("unsupported_dims", f"only 3-D volumes are supported, got dim = {dim}")
    shape = tuple(max(int(d), 1) for d in dim[1:4])
    if any(d < 1 for d in dim[1 : min(ndim, 3) + 1]):
        raise FormatError("bad_header", f"non-positive spatial extent in dim = {dim}")
    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise FormatError(
            "unsupported_datatype",
            f"datatype code {datatype} not supported (accepted: 4 int16, 512 uint16, 16 float32)",
        )
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    voxel = pixdim[1:4]
    if any(not np.isfinite(v) or v <= 0.0 for v in voxel):
        raise FormatError("bad_voxel_size", f"pixdim[1..3] must be positive, got {voxel}")
    vox_offset = struct.unpack_from(endian + "f", raw, 108)[0]
    if not np.isfinite(vox_offset) or vox_offset < _HDR_SIZE:
        raise FormatError("bad_header", f"vox_offset {vox_offset} is before the header end")
    slope = struct.unpack_from(endian + "f", raw, 112)[0]
    inter = struct.unpack_from(endian + "f", raw, 116)[0]
    descrip = struct.unpack_from("80s", raw, 148)[0].split(b"\x00", 1)[0].decode("ascii", "replace")

    dt = np.dtype(endian + _DTYPES[datatype])
    count = int(np.prod(shape))
    start = int(vox_offset)
    if len(raw) - start < count * dt.itemsize:
        raise FormatError(
            "truncated_payload",
            f"payload holds {len(raw) - start} bytes, dims {shape} need {count * dt.itemsize}",
        )
    values = np.frombuffer(raw, dtype=dt, count=count, offset=start).astype(np.float64)
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        values = values * slope + inter
    if datatype != 512 or (slope != 0.0 and (slope != 1.0 or inter != 0.0)):
        clipped = np.clip(np.rint(values), 0, 65535)
        if np.any(clipped != values):
            warnings.warn(
                f"{path}: converting datatype {datatype} intensities to uint16 "
                "by rounding and clamping to [0, 65535]",
                stacklevel=2,
            )
        values = clipped
    data = values.astype(np.uint16).reshape(shape, order="F")

    modality = "synthetic"
    if descrip.startswith("modality="):
        tag = descrip.split("=", 1)[1].strip()
        if tag in MODALITIES:
            modality = tag
    return Volume(data=data, voxel_size=tuple(float(v) for v in voxel), modality_tag=modality)


def write_nifti(volume: Volume, path) -> None:
    """Write a Volume as single-file NIfTI-1, uint16, gzipped iff *.gz."""
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    nx, ny, nz = volume.dims
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 512)  # datatype: uint16
    struct.pack_into("<h", hdr, 72, 16)  # bitpix
    vx, vy, vz = volume.voxel_size
    struct.pack_into("<8f", hdr, 76, 1.0, vx, vy, vz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(_VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: millimetres
    descrip = f"modality={volume.modality_tag}".encode("ascii")[:79]
    struct.pack_into("80s", hdr, 148, descrip)
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    payload = volume.data.astype("<u2").tobytes(order="F")
    with _open_maybe_gzip(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * (_VOX_OFFSET - _HDR_SIZE))
        fh.write(payload)


def read_tracking_log(path) -> Trajectory:
    """Parse a tracking-log CSV into a validated Trajectory."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty_log", f"{path}: tracking log has no header") from None
        if [h.strip() for h in header] != TRACKING_HEADER.split(","):
            raise FormatError(
                "bad_header",
                f"{path}: expected tracking header '{TRACKING_HEADER}', got {','.join(header)!r}",
            )
        samples = []
        for index, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 13:
                raise FormatError("bad_row", f"{path} row {index}: expected 13 fields, got {len(row)}")
            try:
                nums = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError("bad_number", f"{path} row {index}: {exc}") from None
            matrix = np.eye(4)
            matrix[0, :] = nums[1:5]
            matrix[1, :] = nums[5:9]
            matrix[2, :] = nums[9:13]
            try:
                pose = RigidTransform(matrix)
            except FormatError as exc:
                raise FormatError(exc.reason, f"{path} row {index}: {exc}") from None
            samples.append((nums[0], pose))
    if not samples:
        raise FormatError("empty_log", f"{path}: tracking log has no data rows")
    return Trajectory.from_samples(samples)


def write_tracking_log(trajectory: Trajectory, path) -> None:
    """Write a Trajectory as tracking-log CSV; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACKING_HEADER.split(","))
        for t, pose in zip(trajectory.times, trajectory.poses):
            row = [repr(float(t))]
            for i in range(3):
                row.extend(repr(float(v)) for v in pose[i, :4])
            writer.writerow(row)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _parse_optional(cell: str, what: str, row: int):
    cell = cell.strip()
    if not cell:
        return None
    try:
        return float(cell)
    except ValueError:
        raise FormatError("bad_number", f"manifest row {row}: bad {what} value {cell!r}") from None


def read_manifest(path) -> DatasetManifest:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty_manifest", f"{path}: manifest has no header") from None
        if [h.strip() for h in header] != MANIFEST_HEADER.split(","):
            raise FormatError(
                "bad_header",
                f"{path}: expected manifest header '{MANIFEST_HEADER}', got {','.join(header)!r}",
            )
        entries = []
        for index, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 11:
                raise FormatError(
                    "bad_row", f"{path} row {index}: expected 11 fields, got {len(row)}"
                )
            (vol, log, w_start, w_end, offset, score, drift, breathing, noisy, age, split) = row
            start = _parse_optional(w_start, "window_start", index)
            end = _parse_optional(w_end, "window_end", index)
            clock = _parse_optional(offset, "clock_offset", index)
            if (start is None) != (end is None):
                raise FormatError(
                    "bad_window", f"{path} row {index}: window needs both start and end"
                )
            window = None
            if start is not None:
                window = SequenceWindow(start=start, end=end, clock_offset=clock or 0.0)
            age_value = _parse_optional(age, "age", index)
            entries.append(
                ManifestEntry(
                    volume_path=vol.strip(),
                    log_path=log.strip() or None,
                    window=window,
                    motion_score=_parse_optional(score, "motion_score", index),
                    drift=_parse_optional(drift, "drift", index),
                    breathing=_parse_optional(breathing, "breathing", index),
                    noisy=_parse_optional(noisy, "noisy", index),
                    covariates={"age": age_value} if age_value is not None else {},
                    split=split.strip(),
                )
            )
    return DatasetManifest(tuple(entries))


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER.split(","))
        for e in manifest:
            window = e.window
            writer.writerow(
                [
                    e.volume_path,
                    e.log_path or "",
                    _fmt(window.start) if window else "",
                    _fmt(window.end) if window else "",
                    _fmt(window.clock_offset) if window else "",
                    _fmt(e.motion_score),
                    _fmt(e.drift),
                    _fmt(e.breathing),
                    _fmt(e.noisy),
                    _fmt(e.covariates.get("age")) if e.covariates else "",
                    e.split,
                ]
            )
