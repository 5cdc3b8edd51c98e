"""Critical points of the global max pool, pooled density maps and quadrant statistics.

CSV schemas
-----------
critical_points.csv : scan_id, index, x_um, y_um, z_um, tissue, channel_count
density.csv         : scan_id, index, x_um, y_um, z_um, tissue, density
enface.csv          : x_um, y_um, density   (one row per pooled point, pooled order)
sagittal.csv        : x_um, z_um, density

Projection PNGs colour each grid bin by the largest per-point density inside
it (empty bins are blank); the JSON sidecar records colormap, bin size,
extent and radius.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, InputError, ModelError
from .geometry import OnhPointCloud, TissueLabel
from .models.base import PointCloudModel
from .training.augment import eval_input

DENSITY_RADIUS_UM = 75.0
QUADRANTS = ("superior", "inferior", "nasal", "temporal")


@dataclass
class CriticalPointSet:
    scan_id: str
    index: np.ndarray     # rows of the source cloud
    xyz: np.ndarray       # um, aligned frame
    tissue: np.ndarray
    count: np.ndarray     # pool channels selecting each point

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64)
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.tissue = np.asarray(self.tissue, dtype=np.int64)
        self.count = np.asarray(self.count, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.index)

    @property
    def pool_dim(self) -> int:
        return int(self.count.sum())


@dataclass
class PooledPoints:
    xyz: np.ndarray
    tissue: np.ndarray
    count: np.ndarray
    index: np.ndarray
    scan_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass
class DensityMap:
    points: np.ndarray    # (N, 3) um
    density: np.ndarray   # neighbours within radius, self included
    radius: float = DENSITY_RADIUS_UM


def extract_critical_points(model: PointCloudModel, cloud: OnhPointCloud, n_points: int | None = None,
                            seed: int = 0) -> CriticalPointSet:
    """Points picked by at least one channel of the global max pool, with channel multiplicity.

    The cloud goes through the evaluation path (fixed per-scan subsample of
    ``n_points`` and normalisation); reported coordinates are the source
    cloud's micrometres.
    """
    if not isinstance(model, PointCloudModel):
        raise ModelError(f"expected a point-cloud model, got {type(model).__name__}")
    x, src = eval_input(cloud, n_points, seed)
    # canonical row order: pool ties (e.g. channels that are zero everywhere) go to the
    # first row, so a fixed order keeps the selection independent of the file order
    order = np.lexsort(x.T[::-1])
    x, src = x[order], src[order]
    try:
        res = model.forward(x[None], training=False)
    except (DimensionError, ContractError) as exc:
        raise ModelError(f"model is incompatible with the input: {exc}") from exc
    rows = res.pool_argmax[0]
    uniq, counts = np.unique(rows, return_counts=True)
    idx = src[uniq]
    return CriticalPointSet(cloud.scan_id, idx, cloud.xyz[idx], cloud.tissue[idx], counts)


def pool_critical_points(sets: Sequence[CriticalPointSet]) -> PooledPoints:
    if not sets:
        return PooledPoints(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    return PooledPoints(
        np.concatenate([s.xyz for s in sets]),
        np.concatenate([s.tissue for s in sets]),
        np.concatenate([s.count for s in sets]),
        np.concatenate([s.index for s in sets]),
        [s.scan_id for s in sets for _ in range(len(s))],
    )


def density(points, radius: float = DENSITY_RADIUS_UM, chunk: int = 512) -> DensityMap:
    """Neighbour counts within ``radius`` (inclusive), self included."""
    if radius <= 0:
        raise InputError("radius must be positive")
    p = np.asarray(points.xyz if isinstance(points, PooledPoints) else points, dtype=np.float64).reshape(-1, 3)
    r2 = radius * radius
    out = np.empty(len(p), dtype=np.int64)
    for s in range(0, len(p), chunk):
        d2 = ((p[s:s + chunk, None, :] - p[None, :, :]) ** 2).sum(-1)
        out[s:s + chunk] = (d2 <= r2).sum(1)
    return DensityMap(p, out, float(radius))


def quadrant_of(xyz) -> np.ndarray:
    """Quadrant names by azimuth: 90 degree sectors centred on +y, -y, +x and -x."""
    p = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    az = np.degrees(np.arctan2(p[:, 1], p[:, 0]))
    out = np.full(len(p), "temporal", dtype=object)
    out[(az >= -45.0) & (az < 45.0)] = "nasal"
    out[(az >= 45.0) & (az < 135.0)] = "superior"
    out[(az >= -135.0) & (az < -45.0)] = "inferior"
    return out


def quadrant_stats(dmap: DensityMap) -> dict[str, dict]:
    q = quadrant_of(dmap.points)
    return {name: {"count": int((q == name).sum()), "density_sum": int(dmap.density[q == name].sum())}
            for name in QUADRANTS}


def hourglass_ratio(stats: dict[str, dict]) -> float:
    """(superior + inferior) / (nasal + temporal) point counts."""
    vert = stats["superior"]["count"] + stats["inferior"]["count"]
    horiz = stats["nasal"]["count"] + stats["temporal"]["count"]
    return float("inf") if horiz == 0 else vert / horiz


def grid_max(u: np.ndarray, v: np.ndarray, values: np.ndarray, bin_um: float) -> tuple[np.ndarray, list[float]]:
    """Largest value per (u, v) bin; bins aligned to multiples of ``bin_um``; empty bins are 0.

    Returns the grid indexed [v_bin, u_bin] and the extent [u0, u1, v0, v1].
    """
    u0, v0 = np.floor(u.min() / bin_um) * bin_um, np.floor(v.min() / bin_um) * bin_um
    iu = np.floor((u - u0) / bin_um).astype(np.int64)
    iv = np.floor((v - v0) / bin_um).astype(np.int64)
    grid = np.zeros((iv.max() + 1, iu.max() + 1), dtype=np.int64)
    np.maximum.at(grid, (iv, iu), values)
    extent = [float(u0), float(u0 + grid.shape[1] * bin_um), float(v0), float(v0 + grid.shape[0] * bin_um)]
    return grid, extent


def _fmt(v: float) -> str:
    return repr(float(v))


def write_projection_csv(path, u: np.ndarray, v: np.ndarray, d: np.ndarray, names: tuple[str, str]) -> None:
    lines = [f"{names[0]},{names[1]},density"]
    lines += [f"{_fmt(a)},{_fmt(b)},{int(c)}" for a, b, c in zip(u, v, d)]
    Path(path).write_text("\n".join(lines) + "\n")


def export_projections(dmap: DensityMap, out_dir, bin_um: float = 100.0, colormap: str = "viridis",
                       png: bool = True) -> dict:
    """En-face (x, y) and sagittal (x, z) CSVs, PNGs and JSON sidecars."""
    if len(dmap.points) == 0:
        raise InputError("density map is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y, z = dmap.points.T
    views = {"enface": (x, y, ("x_um", "y_um")), "sagittal": (x, z, ("x_um", "z_um"))}
    result = {}
    for name, (u, v, cols) in views.items():
        write_projection_csv(out / f"{name}.csv", u, v, dmap.density, cols)
        grid, extent = grid_max(u, v, dmap.density, bin_um)
        sidecar = {"view": name, "axes": list(cols), "colormap": colormap, "bin_um": bin_um, "extent_um": extent,
                   "radius_um": dmap.radius, "point_count": int(len(u)), "vmax": int(grid.max()),
                   "binning": "max per-point density in each bin; empty bins blank"}
        if png:
            _render(grid, extent, cols, colormap, out / f"{name}.png", invert_v=name == "sagittal")
        (out / f"{name}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        result[name] = {"grid": grid, "extent": extent, "sidecar": sidecar}
    return result


def _render(grid, extent, cols, colormap, path, invert_v=False) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    masked = np.ma.masked_equal(grid, 0)
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100, layout="constrained")
    im = ax.imshow(masked, origin="lower", extent=extent, cmap=colormap, interpolation="nearest",
                   vmin=1, vmax=max(int(grid.max()), 1))
    if invert_v:
        ax.invert_yaxis()   # depth increases downward
    ax.set_xlabel(cols[0])
    ax.set_ylabel(cols[1])
    fig.colorbar(im, ax=ax, label="density")
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def critical_rows(sets: Sequence[CriticalPointSet]) -> list[str]:
    lines = ["scan_id,index,x_um,y_um,z_um,tissue,channel_count"]
    for s in sets:
        for i, p, t, c in zip(s.index, s.xyz, s.tissue, s.count):
            lines.append(f"{s.scan_id},{int(i)},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{TissueLabel(t).name},{int(c)}")
    return lines


def density_rows(pooled: PooledPoints, dmap: DensityMap) -> list[str]:
    lines = ["scan_id,index,x_um,y_um,z_um,tissue,density"]
    for sid, i, p, t, d in zip(pooled.scan_ids, pooled.index, pooled.xyz, pooled.tissue, dmap.density):
        lines.append(f"{sid},{int(i)},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{TissueLabel(t).name},{int(d)}")
    return lines
