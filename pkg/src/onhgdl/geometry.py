"""From a tissue-labelled OCT volume to an aligned, cropped, thickness-annotated point cloud.

Coordinates are micrometres. In scanner space x runs along the A-scans of a
B-scan (lateral), y across B-scans and z along each A-scan (posterior
positive). After alignment the BMO centre is the origin and the BMO plane
normal is +z.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ExtractionError, FitError, InputError

CROP_RADIUS_UM = 1750.0


class TissueLabel(enum.IntEnum):
    BACKGROUND = 0
    RNFL_PLT = 1
    GCL_IPL = 2
    ORL = 3
    RPE_BM = 4
    CHOROID = 5
    SCLERA = 6
    LC = 7

    @classmethod
    def parse(cls, name: str | int) -> "TissueLabel":
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        key = str(name).strip().upper().replace("+", "_").replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise InputError(f"unknown tissue {name!r}") from None


TISSUES = tuple(t for t in TissueLabel if t is not TissueLabel.BACKGROUND)
POSTERIOR_TISSUES = (TissueLabel.SCLERA, TissueLabel.LC)
ANTERIOR, POSTERIOR = 0, 1

CLASS_LABELS = ("non-glaucoma", "glaucoma", "unlabeled")


@dataclass
class SegmentedVolume:
    """labels[b, a, z]: B-scan, A-scan, axial pixel. spacing = (B-scan, A-scan, axial) in um."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (80.0, 40.0, 7.8)
    eye_side: str = "left"
    subject_id: str = ""
    scan_id: str = ""
    class_label: str = "unlabeled"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.labels.ndim != 3:
            raise InputError(f"labels must be 3-D, got shape {self.labels.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise InputError(f"spacing must be three positive values, got {self.spacing}")
        if self.labels.size and self.labels.max() > max(TissueLabel):
            raise InputError("label codes must lie in 0..7")
        if self.class_label not in CLASS_LABELS:
            raise InputError(f"class label must be one of {CLASS_LABELS}")


@dataclass
class Polyline:
    """Boundary points of one tissue and side, ordered by (B-scan, A-scan)."""

    bscan: np.ndarray  # (n,) int
    ascan: np.ndarray  # (n,) int
    xyz: np.ndarray    # (n, 3) um

    def __len__(self) -> int:
        return len(self.bscan)

    def in_bscan(self, b: int) -> np.ndarray:
        return np.nonzero(self.bscan == b)[0]


def _empty_polyline() -> Polyline:
    return Polyline(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 3)))


@dataclass
class BoundarySet:
    anterior: dict[TissueLabel, Polyline] = field(default_factory=dict)
    posterior: dict[TissueLabel, Polyline] = field(default_factory=dict)

    def side(self, tissue: TissueLabel, side: int) -> Polyline:
        table = self.anterior if side == ANTERIOR else self.posterior
        return table.get(tissue, _empty_polyline())


@dataclass
class BmoLandmarks:
    points: np.ndarray  # (M, 3)
    center: np.ndarray  # (3,)
    normal: np.ndarray  # (3,) unit

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise FitError("BMO plane normal must be a unit vector")


@dataclass
class OnhPointCloud:
    """Boundary points with per-point thickness, tissue and side.

    ``frame`` and ``origin`` record the rigid pose of the scanner frame in the
    current coordinates (p_current = frame @ p_scanner + origin); every rigid
    transform of the cloud updates them, which keeps alignment pose-invariant.
    """

    xyz: np.ndarray
    thickness: np.ndarray
    tissue: np.ndarray
    side: np.ndarray
    subject_id: str = ""
    scan_id: str = ""
    class_label: str = "unlabeled"
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.thickness = np.asarray(self.thickness, dtype=np.float64).reshape(n)
        self.tissue = np.asarray(self.tissue, dtype=np.int64).reshape(n)
        self.side = np.asarray(self.side, dtype=np.int64).reshape(n)
        self.frame = np.asarray(self.frame, dtype=np.float64).reshape(3, 3)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.class_label not in CLASS_LABELS:
            raise InputError(f"class label must be one of {CLASS_LABELS}")

    def __len__(self) -> int:
        return len(self.xyz)

    def features(self) -> np.ndarray:
        """(N, 4): x, y, z, thickness in um."""
        return np.column_stack([self.xyz, self.thickness])

    def subset(self, mask_or_index) -> "OnhPointCloud":
        idx = np.asarray(mask_or_index)
        return replace(self, xyz=self.xyz[idx], thickness=self.thickness[idx], tissue=self.tissue[idx],
                       side=self.side[idx])

    def only_tissue(self, tissue: TissueLabel | None) -> "OnhPointCloud":
        if tissue is None:
            return self
        return self.subset(self.tissue == int(tissue))


# ---------------------------------------------------------------- volume steps

def flip_to_left_eye(vol: SegmentedVolume) -> SegmentedVolume:
    """Mirror right eyes along the A-scan axis; left eyes pass through untouched."""
    side = str(vol.eye_side).lower()
    if side == "left":
        return vol
    if side != "right":
        raise InputError(f"unknown eye side {vol.eye_side!r}")
    return replace(vol, labels=np.ascontiguousarray(vol.labels[:, ::-1, :]), eye_side="left")


def extract_boundaries(vol: SegmentedVolume) -> BoundarySet:
    """First and last voxel of each tissue along every A-scan, converted to um.

    An A-scan holding several runs of one label contributes the first voxel of
    the first run and the last voxel of the last run.
    """
    dy, dx, dz = vol.spacing
    nz = vol.labels.shape[2]
    bounds = BoundarySet()
    for t in TISSUES:
        mask = vol.labels == t
        present = mask.any(axis=2)
        b, a = np.nonzero(present)  # row-major: ordered by (b, a)
        if b.size == 0:
            bounds.anterior[t] = _empty_polyline()
            bounds.posterior[t] = _empty_polyline()
            continue
        cols = mask[b, a]
        first = cols.argmax(axis=1)
        last = nz - 1 - cols[:, ::-1].argmax(axis=1)
        x, y = a * dx, b * dy
        bounds.anterior[t] = Polyline(b, a, np.column_stack([x, y, first * dz]))
        bounds.posterior[t] = Polyline(b.copy(), a.copy(), np.column_stack([x, y, last * dz]))
    return bounds


def _nearest_in_plane(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per src point: distance to and index of the nearest dst point in the (x, z) plane."""
    dxm = src[:, None, 0] - dst[None, :, 0]
    dzm = src[:, None, 2] - dst[None, :, 2]
    d = np.sqrt(dxm * dxm + dzm * dzm)
    j = d.argmin(axis=1)
    return d[np.arange(len(src)), j], j


@dataclass
class Thickness:
    anterior: np.ndarray
    anterior_missing: np.ndarray
    posterior: np.ndarray
    posterior_missing: np.ndarray


def compute_thickness(bounds: BoundarySet) -> dict[TissueLabel, Thickness]:
    """Local thickness per boundary point, searched within each B-scan.

    Anterior points take the distance to the nearest posterior point of the
    same tissue; posterior points inherit the thickness of their nearest
    anterior point. Points whose opposite boundary is missing in their B-scan
    get 0 and a flag.
    """
    out = {}
    for t in TISSUES:
        ant, post = bounds.side(t, ANTERIOR), bounds.side(t, POSTERIOR)
        ta = np.zeros(len(ant))
        tp = np.zeros(len(post))
        ma = np.ones(len(ant), dtype=bool)
        mp = np.ones(len(post), dtype=bool)
        for b in np.unique(np.concatenate([ant.bscan, post.bscan])):
            ia, ip = ant.in_bscan(b), post.in_bscan(b)
            if ia.size == 0 or ip.size == 0:
                continue
            d, _ = _nearest_in_plane(ant.xyz[ia], post.xyz[ip])
            ta[ia] = d
            ma[ia] = False
            _, j = _nearest_in_plane(post.xyz[ip], ant.xyz[ia])
            tp[ip] = d[j]
            mp[ip] = False
        out[t] = Thickness(ta, ma, tp, mp)
    return out


def detect_bmo(source: SegmentedVolume | BoundarySet) -> BmoLandmarks:
    """BMO points are the RPE/BM terminations flanking the widest interior gap of each B-scan.

    The point sits on the posterior (Bruch's membrane) side of the terminating
    A-scan. Raises :class:`ExtractionError` if no B-scan shows a gap.
    """
    bounds = extract_boundaries(source) if isinstance(source, SegmentedVolume) else source
    rpe = bounds.side(TissueLabel.RPE_BM, POSTERIOR)
    if len(rpe) == 0:
        raise ExtractionError("no RPE/BM layer in the scan")
    pts = []
    for b in np.unique(rpe.bscan):
        idx = rpe.in_bscan(b)
        a = rpe.ascan[idx]
        steps = np.diff(a)
        gaps = np.nonzero(steps > 1)[0]
        if gaps.size == 0:
            continue
        g = gaps[np.argmax(steps[gaps])]
        pts.append(rpe.xyz[idx[g]])
        pts.append(rpe.xyz[idx[g + 1]])
    if not pts:
        raise ExtractionError("no RPE gap found in any B-scan: scan does not cover the optic disc")
    pts = np.array(pts)
    center, normal = fit_plane_least_squares(pts)
    return BmoLandmarks(pts, center, normal)


# ---------------------------------------------------------------- plane / alignment

def fit_plane_least_squares(points) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and unit normal minimising the summed squared orthogonal distances.

    The normal is the singular vector of the smallest singular value of the
    centred points, signed so its z component is non-negative.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or len(p) < 3:
        raise FitError("plane fit needs at least 3 points in 3-D")
    centroid = p.mean(axis=0)
    _, s, vt = np.linalg.svd(p - centroid, full_matrices=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise FitError("points are collinear or coincident")
    n = vt[-1]
    return centroid, _sign_fix(n / np.linalg.norm(n))


def _sign_fix(n: np.ndarray) -> np.ndarray:
    for c in (n[2], n[1], n[0]):
        if c != 0:
            return n if c > 0 else -n
    return n


def plane_residual(points, centroid, normal) -> float:
    d = (np.asarray(points, dtype=np.float64) - centroid) @ normal
    return float(d @ d)


def rotation_to_z(n) -> np.ndarray:
    """The minimal rotation taking unit vector ``n`` onto +z (180 deg about x when anti-parallel)."""
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    c = float(n @ z)
    v = np.cross(n, z)
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]) / s
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rigid_transform(cloud: OnhPointCloud, rotation, translation) -> OnhPointCloud:
    """p -> R p + t applied to the points and the recorded pose."""
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    return replace(cloud, xyz=cloud.xyz @ R.T + t, frame=R @ cloud.frame, origin=R @ cloud.origin + t)


def transform_landmarks(lm: BmoLandmarks, rotation, translation) -> BmoLandmarks:
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    return BmoLandmarks(lm.points @ R.T + t, R @ lm.center + t, R @ lm.normal)


def align_to_bmo(cloud: OnhPointCloud, lm: BmoLandmarks) -> OnhPointCloud:
    """Centre on the BMO centre and rotate the BMO normal onto +z.

    The rotation is the minimal one taking the normal (expressed in the
    scanner frame) to the axial direction, so the lateral/B-scan axes keep
    their scanner meaning whatever pose the cloud arrives in.
    """
    F, o = cloud.frame, cloud.origin
    p_scan = (cloud.xyz - o) @ F
    c_scan = F.T @ (lm.center - o)
    n_scan = _sign_fix(F.T @ lm.normal)
    M = rotation_to_z(n_scan)
    xyz = (p_scan - c_scan) @ M.T
    return replace(cloud, xyz=xyz, frame=M, origin=-(M @ c_scan))


def cylindrical_crop(cloud: OnhPointCloud, radius: float = CROP_RADIUS_UM) -> OnhPointCloud:
    """Keep points with sqrt(x^2 + y^2) <= radius, in their original order."""
    x, y = cloud.xyz[:, 0], cloud.xyz[:, 1]
    keep = np.sqrt(x * x + y * y) <= radius
    if not keep.any():
        raise ExtractionError("cylindrical crop left no points")
    return cloud.subset(keep)


def auto_ascan_stride(spacing) -> int:
    """A-scan decimation giving roughly isotropic lateral point spacing."""
    dy, dx, _ = spacing
    return max(1, int(round(dy / dx)))


def scanner_cloud(vol: SegmentedVolume, ascan_stride: int | None = None) -> tuple[OnhPointCloud, BmoLandmarks]:
    """Unaligned boundary cloud in scanner coordinates plus its BMO landmarks.

    Points: anterior boundaries of all seven tissues plus posterior boundaries
    of sclera and LC. Thickness and BMO use every A-scan; the emitted points
    keep every ``ascan_stride``-th A-scan (default: isotropic lateral spacing).
    """
    vol = flip_to_left_eye(vol)
    bounds = extract_boundaries(vol)
    thick = compute_thickness(bounds)
    lm = detect_bmo(bounds)
    stride = auto_ascan_stride(vol.spacing) if ascan_stride is None else int(ascan_stride)
    parts = []
    for t in TISSUES:
        sides = [(ANTERIOR, thick[t].anterior)]
        if t in POSTERIOR_TISSUES:
            sides.append((POSTERIOR, thick[t].posterior))
        for side, th in sides:
            line = bounds.side(t, side)
            keep = line.ascan % stride == 0
            n = int(keep.sum())
            parts.append((line.xyz[keep], th[keep], np.full(n, int(t)), np.full(n, side)))
    xyz = np.concatenate([p[0] for p in parts])
    cloud = OnhPointCloud(xyz, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]),
                          np.concatenate([p[3] for p in parts]), vol.subject_id, vol.scan_id, vol.class_label)
    return cloud, lm


def build_point_cloud(vol: SegmentedVolume, radius: float = CROP_RADIUS_UM,
                      ascan_stride: int | None = None) -> OnhPointCloud:
    """flip -> boundaries -> thickness -> BMO -> align -> crop."""
    cloud, lm = scanner_cloud(vol, ascan_stride)
    return cylindrical_crop(align_to_bmo(cloud, lm), radius)
