"""ONHSEG v1 (labelled volumes) and ONHPC v1 (point clouds) file formats.

ONHSEG v1::

    ONHSEG v1\\n
    {"class_label": ..., "dims": [B, A, Z], "eye_side": ..., "scan_id": ...,
     "spacing_um": [dy, dx, dz], "subject_id": ...}\\n
    B*A*Z raw label bytes, row-major (B-scan, A-scan, axial)

ONHPC v1::

    ONHPC v1\\n
    {"class_label": ..., "point_count": N, "scan_id": ..., "subject_id": ...,
     "units": "um", "frame": [[...]], "origin": [...]}\\n
    N rows of "x y z thickness tissue_code side_code"
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import OnhPointCloud, SegmentedVolume

SEG_MAGIC = b"ONHSEG v1\n"
PC_MAGIC = "ONHPC v1"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_volume(vol: SegmentedVolume) -> bytes:
    header = {
        "dims": list(vol.labels.shape),
        "spacing_um": list(vol.spacing),
        "eye_side": vol.eye_side,
        "subject_id": vol.subject_id,
        "scan_id": vol.scan_id,
        "class_label": vol.class_label,
    }
    return SEG_MAGIC + _dumps(header).encode() + b"\n" + np.ascontiguousarray(vol.labels, dtype=np.uint8).tobytes()


def decode_volume(blob: bytes) -> SegmentedVolume:
    if not blob.startswith(SEG_MAGIC):
        raise InputError("not an ONHSEG v1 file")
    end = blob.find(b"\n", len(SEG_MAGIC))
    if end < 0:
        raise InputError("ONHSEG header line is unterminated")
    try:
        header = json.loads(blob[len(SEG_MAGIC):end].decode())
        dims = tuple(int(d) for d in header["dims"])
        raw = blob[end + 1:]
        if len(raw) != int(np.prod(dims)):
            raise InputError(f"ONHSEG payload has {len(raw)} bytes, header promises {int(np.prod(dims))}")
        labels = np.frombuffer(raw, dtype=np.uint8).reshape(dims).copy()
        return SegmentedVolume(labels, tuple(header["spacing_um"]), header["eye_side"], header["subject_id"],
                               header["scan_id"], header.get("class_label", "unlabeled"))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed ONHSEG header: {exc}") from exc


def write_volume(path, vol: SegmentedVolume) -> None:
    Path(path).write_bytes(encode_volume(vol))


def read_volume(path) -> SegmentedVolume:
    return decode_volume(Path(path).read_bytes())


def encode_cloud(cloud: OnhPointCloud) -> str:
    header = {
        "subject_id": cloud.subject_id,
        "scan_id": cloud.scan_id,
        "class_label": cloud.class_label,
        "point_count": len(cloud),
        "units": "um",
        "frame": cloud.frame.tolist(),
        "origin": cloud.origin.tolist(),
    }
    lines = [PC_MAGIC, _dumps(header)]
    for (x, y, z), t, tis, side in zip(cloud.xyz.tolist(), cloud.thickness.tolist(), cloud.tissue.tolist(),
                                       cloud.side.tolist()):
        lines.append(f"{x!r} {y!r} {z!r} {t!r} {tis} {side}")
    return "\n".join(lines) + "\n"


def decode_cloud(text: str) -> OnhPointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != PC_MAGIC:
        raise InputError("not an ONHPC v1 file")
    try:
        header = json.loads(lines[1])
        n = int(header["point_count"])
        rows = [ln.split() for ln in lines[2:2 + n]]
        if len(rows) != n or any(len(r) != 6 for r in rows):
            raise InputError("ONHPC row count or row width does not match the header")
        arr = np.array(rows, dtype=np.float64).reshape(n, 6)
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed ONHPC file: {exc}") from exc
    return OnhPointCloud(arr[:, :3], arr[:, 3], arr[:, 4].astype(np.int64), arr[:, 5].astype(np.int64),
                         header.get("subject_id", ""), header.get("scan_id", ""),
                         header.get("class_label", "unlabeled"), np.array(header.get("frame", np.eye(3))),
                         np.array(header.get("origin", np.zeros(3))))


def write_cloud(path, cloud: OnhPointCloud) -> None:
    Path(path).write_text(encode_cloud(cloud))


def read_cloud(path) -> OnhPointCloud:
    return decode_cloud(Path(path).read_text())


def list_files(directory, suffix: str) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.name.endswith(suffix))
