"""Parametric synthetic optic-nerve-head volumes with a controllable glaucoma signal.

Layers are built as smooth depth surfaces over the scan footprint and
rasterised into a label grid. Every eye has an RNFL that is thickest at the
superior and inferior poles. Glaucomatous eyes get RNFL thinning weighted
toward those poles (sin^2 of the azimuth), a deeper cup
and a posteriorly displaced lamina cribrosa. Each subject's anatomy is drawn
once; scans of the same subject differ only by pose and small jitter.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, GenerationError
from .geometry import SegmentedVolume, TissueLabel

Range = tuple[float, float]


@dataclass
class SynthConfig:
    seed: int = 0
    dims: tuple[int, int, int] = (48, 96, 192)           # B-scans, A-scans, axial px
    spacing_um: tuple[float, float, float] = (80.0, 40.0, 7.8)
    bmo_radius_um: Range = (700.0, 900.0)
    bmo_aspect: Range = (1.0, 1.15)                      # vertical / horizontal disc radius
    rnfl_margin_um: Range = (150.0, 200.0)               # RNFL thickness at the disc margin
    rnfl_far_um: Range = (50.0, 75.0)                    # ... far from the disc
    rnfl_decay_um: Range = (500.0, 700.0)
    rnfl_pole_gain: Range = (0.6, 0.9)                   # superior/inferior thickening (ISNT pattern)
    rnfl_nasal_gain: Range = (0.0, 0.1)
    gcl_ipl_um: Range = (60.0, 90.0)
    orl_um: Range = (130.0, 160.0)
    rpe_bm_um: Range = (24.0, 36.0)
    choroid_um: Range = (150.0, 220.0)
    sclera_um: Range = (180.0, 250.0)
    lc_depth_um: Range = (260.0, 380.0)                  # anterior LC below the BMO plane
    lc_thickness_um: Range = (120.0, 180.0)
    lc_bow_um: Range = (20.0, 50.0)
    cup_depth_um: Range = (100.0, 220.0)
    bowl_per_um: Range = (0.0, 1e-5)                     # z += bowl * r^2
    # glaucoma effect
    rnfl_thinning: Range = (0.25, 0.45)
    cup_deepening_um: Range = (60.0, 120.0)
    lc_shift_um: Range = (40.0, 90.0)
    # per-scan jitter
    center_jitter_um: float = 60.0
    tilt_slope: float = 0.02
    depth_jitter_um: float = 20.0
    thickness_jitter: float = 0.02
    surface_jitter_um: float = 3.0
    top_um: float = 620.0                                # nominal BMO depth in the scan

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_um = tuple(float(s) for s in self.spacing_um)
        for name, value in asdict(self).items():
            if isinstance(value, (tuple, list)) and name not in ("dims", "spacing_um"):
                lo, hi = value
                if lo > hi or lo < 0:
                    raise ConfigError(f"{name}: range must be non-empty and non-negative, got {value}")
                setattr(self, name, (float(lo), float(hi)))
        if not self.rnfl_thinning[1] < 1.0:
            raise ConfigError("rnfl_thinning must lie in [0, 1)")
        if min(self.dims) < 1 or min(self.spacing_um) <= 0:
            raise ConfigError("dims and spacing must be positive")

    def with_null_effect(self) -> "SynthConfig":
        return replace(self, rnfl_thinning=(0.0, 0.0), cup_deepening_um=(0.0, 0.0), lc_shift_um=(0.0, 0.0))

    def rnfl_only(self) -> "SynthConfig":
        """Glaucoma signal confined to RNFL thinning."""
        return replace(self, cup_deepening_um=(0.0, 0.0), lc_shift_um=(0.0, 0.0))

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Anatomy:
    """Per-subject shape parameters (um unless noted)."""

    bmo_radius: float
    bmo_aspect: float
    rnfl_margin: float
    rnfl_far: float
    rnfl_decay: float
    rnfl_pole_gain: float
    rnfl_nasal_gain: float
    gcl_ipl: float
    orl: float
    rpe_bm: float
    choroid: float
    sclera: float
    lc_depth: float
    lc_thickness: float
    lc_bow: float
    cup_depth: float
    bowl: float
    thinning: float = 0.0
    cup_deepening: float = 0.0
    lc_shift: float = 0.0


@dataclass
class ScanPose:
    center_x: float
    center_y: float
    slope_x: float
    slope_y: float
    depth: float
    thickness_scale: float
    noise_phases: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((4, 3)))


@dataclass
class SynthSample:
    volume: SegmentedVolume
    truth: dict
    class_label: str


def _u(rng: np.random.Generator, r: Range) -> float:
    lo, hi = r
    return float(lo if hi == lo else rng.uniform(lo, hi))


def sample_anatomy(cfg: SynthConfig, glaucoma: bool, rng: np.random.Generator) -> Anatomy:
    a = Anatomy(
        bmo_radius=_u(rng, cfg.bmo_radius_um), bmo_aspect=_u(rng, cfg.bmo_aspect),
        rnfl_margin=_u(rng, cfg.rnfl_margin_um), rnfl_far=_u(rng, cfg.rnfl_far_um),
        rnfl_decay=_u(rng, cfg.rnfl_decay_um), rnfl_pole_gain=_u(rng, cfg.rnfl_pole_gain),
        rnfl_nasal_gain=_u(rng, cfg.rnfl_nasal_gain), gcl_ipl=_u(rng, cfg.gcl_ipl_um), orl=_u(rng, cfg.orl_um),
        rpe_bm=_u(rng, cfg.rpe_bm_um), choroid=_u(rng, cfg.choroid_um), sclera=_u(rng, cfg.sclera_um),
        lc_depth=_u(rng, cfg.lc_depth_um), lc_thickness=_u(rng, cfg.lc_thickness_um),
        lc_bow=_u(rng, cfg.lc_bow_um), cup_depth=_u(rng, cfg.cup_depth_um), bowl=_u(rng, cfg.bowl_per_um),
    )
    # glaucoma draws always happen so both classes consume the same random stream
    thinning = _u(rng, cfg.rnfl_thinning)
    deepening = _u(rng, cfg.cup_deepening_um)
    shift = _u(rng, cfg.lc_shift_um)
    if glaucoma:
        a.thinning, a.cup_deepening, a.lc_shift = thinning, deepening, shift
    return a


def sample_pose(cfg: SynthConfig, rng: np.random.Generator) -> ScanPose:
    nb, na, _ = cfg.dims
    dy, dx, _ = cfg.spacing_um
    j = cfg.center_jitter_um
    return ScanPose(
        center_x=(na - 1) * dx / 2 + rng.uniform(-j, j),
        center_y=(nb - 1) * dy / 2 + rng.uniform(-j, j),
        slope_x=rng.uniform(-cfg.tilt_slope, cfg.tilt_slope),
        slope_y=rng.uniform(-cfg.tilt_slope, cfg.tilt_slope),
        depth=cfg.top_um + rng.uniform(-cfg.depth_jitter_um, cfg.depth_jitter_um),
        thickness_scale=1.0 + rng.uniform(-cfg.thickness_jitter, cfg.thickness_jitter),
        noise_phases=rng.uniform(0, 2 * np.pi, size=(4, 3)),
    )


def surfaces(cfg: SynthConfig, an: Anatomy, pose: ScanPose) -> dict[str, np.ndarray]:
    """Analytic boundary depths (um) on the (B-scan, A-scan) grid, left-eye frame."""
    nb, na, _ = cfg.dims
    dy, dx, _ = cfg.spacing_um
    y, x = np.meshgrid(np.arange(nb) * dy, np.arange(na) * dx, indexing="ij")
    u, v = x - pose.center_x, y - pose.center_y
    r = np.hypot(u, v)
    theta = np.arctan2(v, u)
    rx, ry = an.bmo_radius, an.bmo_radius * an.bmo_aspect
    rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    inside = rho < 1.0
    margin_r = np.where(r > 0, r / np.maximum(rho, 1e-12), rx)      # disc radius along this azimuth

    def noise(k):
        ph = pose.noise_phases[k]
        return cfg.surface_jitter_um * (np.sin(x / 430.0 + ph[0]) + np.sin(y / 370.0 + ph[1])
                                        + np.sin((x + y) / 290.0 + ph[2])) / 3.0

    ts = pose.thickness_scale
    zref = pose.depth + pose.slope_x * u + pose.slope_y * v + an.bowl * r * r
    pole = np.sin(theta) ** 2
    radial = np.exp(-np.maximum(r - margin_r, 0.0) / an.rnfl_decay)
    rnfl = (an.rnfl_far + (an.rnfl_margin - an.rnfl_far) * radial)
    rnfl = rnfl * (1.0 + an.rnfl_pole_gain * pole + an.rnfl_nasal_gain * np.cos(theta))
    rnfl = rnfl * (1.0 - an.thinning * pole) * ts
    gcl, orl = an.gcl_ipl * ts, an.orl * ts

    rpe_ant = zref + noise(0)
    orl_ant = rpe_ant - orl
    gcl_ant = orl_ant - gcl
    rho_c = np.minimum(rho, 1.0)
    cup = (an.cup_depth + an.cup_deepening) * (1.0 - rho_c ** 2) ** 2
    ilm = gcl_ant - rnfl + noise(1) + np.where(inside, cup, 0.0)
    rpe_post = rpe_ant + an.rpe_bm
    ch_post = rpe_post + an.choroid * ts + noise(2)
    sc_post = ch_post + an.sclera
    lc_ant = zref + an.lc_depth + an.lc_shift + an.lc_bow * (1.0 - rho_c ** 2) + noise(3)
    lc_post = lc_ant + an.lc_thickness
    return {"inside": inside, "ilm": ilm, "gcl_ant": gcl_ant, "orl_ant": orl_ant, "rpe_ant": rpe_ant,
            "rpe_post": rpe_post, "choroid_post": ch_post, "sclera_post": sc_post, "lc_ant": lc_ant,
            "lc_post": lc_post, "rho": rho, "theta": theta}


def layer_intervals(s: dict) -> list[tuple[TissueLabel, np.ndarray, np.ndarray, np.ndarray]]:
    """(tissue, top, bottom, where) per layer, top/bottom as depths in um."""
    out_ = ~s["inside"]
    ins = s["inside"]
    return [
        (TissueLabel.RNFL_PLT, s["ilm"], s["gcl_ant"], out_),
        (TissueLabel.GCL_IPL, s["gcl_ant"], s["orl_ant"], out_),
        (TissueLabel.ORL, s["orl_ant"], s["rpe_ant"], out_),
        (TissueLabel.RPE_BM, s["rpe_ant"], s["rpe_post"], out_),
        (TissueLabel.CHOROID, s["rpe_post"], s["choroid_post"], out_),
        (TissueLabel.SCLERA, s["choroid_post"], s["sclera_post"], out_),
        (TissueLabel.RNFL_PLT, s["ilm"], s["lc_ant"], ins),
        (TissueLabel.LC, s["lc_ant"], s["lc_post"], ins),
    ]


def _check_layers(cfg: SynthConfig, s: dict) -> bool:
    dz = cfg.spacing_um[2]
    depth = cfg.dims[2] * dz
    min_gap = 2 * dz
    for _, top, bot, where in layer_intervals(s):
        if np.any((bot - top)[where] < min_gap):
            return False
        if np.any(top[where] < dz) or np.any(bot[where] > depth - dz):
            return False
    return True


def rasterize(cfg: SynthConfig, s: dict) -> np.ndarray:
    nz = cfg.dims[2]
    dz = cfg.spacing_um[2]
    # voxel k is centred at k*dz; it takes the layer holding its far face (k + 1/2)*dz,
    # so the first voxel of a layer lies within dz/2 of the layer's top surface
    faces = (np.arange(nz) + 0.5) * dz
    labels = np.zeros(cfg.dims, dtype=np.uint8)
    for tissue, top, bot, where in layer_intervals(s):
        m = (faces >= top[..., None]) & (faces < bot[..., None]) & where[..., None]
        labels[m] = tissue
    return labels


def _mirror(s: dict) -> dict:
    return {k: v[:, ::-1] for k, v in s.items()}


def generate_onh(cfg: SynthConfig, class_label: str, seed: int, eye_side: str = "left",
                 subject_id: str = "", scan_id: str = "", anatomy: Anatomy | None = None) -> SynthSample:
    """One synthetic scan; deterministic in (cfg, class_label, seed, eye_side, anatomy)."""
    if class_label not in ("glaucoma", "non-glaucoma"):
        raise ConfigError(f"class label must be glaucoma or non-glaucoma, got {class_label!r}")
    glaucoma = class_label == "glaucoma"
    for attempt in range(10):
        sub = np.random.default_rng([cfg.seed, seed, attempt])
        an = anatomy if anatomy is not None else sample_anatomy(cfg, glaucoma, sub)
        pose = sample_pose(cfg, sub)
        s = surfaces(cfg, an, pose)
        if _check_layers(cfg, s):
            break
    else:
        raise GenerationError("layers self-intersect after 10 attempts")
    labels = rasterize(cfg, s)
    if eye_side == "right":
        labels = np.ascontiguousarray(labels[:, ::-1, :])
        s = _mirror(s)
    vol = SegmentedVolume(labels, cfg.spacing_um, eye_side, subject_id, scan_id, class_label)
    truth = {"anatomy": asdict(an), "pose": {k: v for k, v in asdict(pose).items() if k != "noise_phases"},
             "surfaces": s}
    return SynthSample(vol, truth, class_label)


def generate_dataset(cfg: SynthConfig, n_subjects: int, scans_per_subject: int = 1, class_balance: float = 0.5,
                     seed: int | None = None) -> list[SynthSample]:
    """Subjects with shared anatomy across their scans.

    The first round(class_balance * n_subjects) subjects in a seeded shuffle
    are glaucomatous. Subject ids are ``S0000``...; scan ids ``S0000_0``...
    """
    if n_subjects < 1:
        raise ConfigError("n_subjects must be >= 1")
    if scans_per_subject < 1:
        raise ConfigError("scans_per_subject must be >= 1")
    if not 0.0 <= class_balance <= 1.0:
        raise ConfigError("class_balance must lie in [0, 1]")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 7919])
    n_glaucoma = int(round(class_balance * n_subjects))
    is_glaucoma = np.zeros(n_subjects, dtype=bool)
    is_glaucoma[rng.permutation(n_subjects)[:n_glaucoma]] = True
    sides = np.where(rng.random(n_subjects) < 0.5, "left", "right")
    samples = []
    for i in range(n_subjects):
        label = "glaucoma" if is_glaucoma[i] else "non-glaucoma"
        sid = f"S{i:04d}"
        an = None
        for attempt in range(10):
            sub = np.random.default_rng([seed, i, attempt])
            cand = sample_anatomy(cfg, bool(is_glaucoma[i]), sub)
            if _check_layers(cfg, surfaces(cfg, cand, sample_pose(cfg, sub))):
                an = cand
                break
        if an is None:
            raise GenerationError(f"subject {sid}: no valid anatomy in 10 attempts")
        for j in range(scans_per_subject):
            samples.append(generate_onh(cfg, label, seed=(seed * 1_000_003 + i) * 101 + j, eye_side=str(sides[i]),
                                        subject_id=sid, scan_id=f"{sid}_{j}", anatomy=an))
    return samples
