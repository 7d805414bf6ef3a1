"""Analysis of the latent plane: density, WOE segmentation, trajectories.

The posterior density of the encodings is estimated with a Gaussian
kernel on a lattice of cell centers and compared against the standard
isotropic normal through the weight-of-evidence log ratio. Cells where
|WOE| clears a threshold at non-negligible density are grouped into
connected exceptional regions. Per-family trajectories order the
encodings by information entropy; branch structure follows the sign of
the skewness.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .distgen import N_FAMILIES

DEFAULT_DENSITY_RESOLUTION = 100
DEFAULT_W_STAR = 2.5
DEFAULT_P_MIN = 0.025
DENSITY_FLOOR = 1e-12


@dataclass
class DensityField:
    """Gridded density estimate on a 1D or 2D lattice of cell centers."""

    bounds: list                 # [(lo, hi)] per dimension
    density: np.ndarray          # (nx,) or (nx, ny), nonnegative
    bandwidth: tuple

    @property
    def ndim(self) -> int:
        return len(self.bounds)

    @property
    def resolution(self) -> tuple:
        return self.density.shape

    def centers(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        n = self.density.shape[axis]
        step = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * step

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for axis, (lo, hi) in enumerate(self.bounds):
            vol *= (hi - lo) / self.density.shape[axis]
        return vol

    def integral(self) -> float:
        return float(self.density.sum() * self.cell_volume)


@dataclass
class WoeField:
    """WOE values over a density lattice plus exceptional-region labels.

    ``segments`` is 0 for common cells and k > 0 for the k-th connected
    exceptional component; ``valid`` marks cells above the density
    floor where WOE was evaluated.
    """

    bounds: list
    density: np.ndarray
    woe: np.ndarray
    valid: np.ndarray
    segments: np.ndarray | None = None
    w_star: float | None = None
    p_min: float | None = None

    def centers(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        n = self.density.shape[axis]
        step = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * step

    def segment_name(self, index) -> str:
        if self.segments is None:
            raise ValueError("segments not computed; call segment() first")
        label = int(self.segments[index])
        return "common" if label == 0 else f"exceptional-{label}"


def silverman_bandwidth(z: np.ndarray) -> tuple:
    """Normal-reference bandwidth per dimension: sd * (4/(d+2))^(1/(d+4)) * n^(-1/(d+4))."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    factor = (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))
    sd = z.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return tuple(float(s * factor) for s in sd)


def _as_points(points) -> np.ndarray:
    z = getattr(points, "z", points)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    return z


def estimate_density(points, resolution: int = DEFAULT_DENSITY_RESOLUTION,
                     bandwidth: tuple | None = None, bounds=None,
                     chunk: int = 50000) -> DensityField:
    """Gaussian-kernel density of the points on a lattice of cell centers.

    The estimate is renormalized so it integrates to exactly 1 over the
    lattice. Default bounds are the data range padded by 5 percent, and
    the default bandwidth is the normal-reference rule.
    """
    z = _as_points(points)
    n, d = z.shape
    if n < 100:
        raise ValueError(f"density estimation needs at least 100 points, got {n}")
    if d not in (1, 2):
        raise ValueError("density estimation supports 1 or 2 dimensions")
    if bounds is None:
        bounds = []
        for j in range(d):
            lo, hi = float(z[:, j].min()), float(z[:, j].max())
            pad = 0.05 * (hi - lo) if hi > lo else 1.0
            bounds.append((lo - pad, hi + pad))
    bounds = [tuple(map(float, b)) for b in bounds]
    if bandwidth is None:
        bandwidth = silverman_bandwidth(z)

    axes = []
    for j, (lo, hi) in enumerate(bounds):
        step = (hi - lo) / resolution
        axes.append(lo + (np.arange(resolution) + 0.5) * step)

    if d == 1:
        h = bandwidth[0]
        total = np.zeros(resolution)
        for start in range(0, n, chunk):
            pts = z[start:start + chunk, 0]
            total += np.exp(-0.5 * ((axes[0][:, None] - pts[None, :]) / h) ** 2).sum(axis=1)
        density = total / (n * np.sqrt(2.0 * np.pi) * h)
    else:
        hx, hy = bandwidth
        density = np.zeros((resolution, resolution))
        for start in range(0, n, chunk):
            px = z[start:start + chunk, 0]
            py = z[start:start + chunk, 1]
            kx = np.exp(-0.5 * ((axes[0][:, None] - px[None, :]) / hx) ** 2)
            ky = np.exp(-0.5 * ((axes[1][:, None] - py[None, :]) / hy) ** 2)
            density += kx @ ky.T
        density /= n * 2.0 * np.pi * hx * hy

    field = DensityField(bounds=bounds, density=density, bandwidth=tuple(bandwidth))
    mass = field.integral()
    if mass <= 0:
        raise ValueError("density estimate collapsed to zero mass")
    field.density = density / mass
    return field


def standard_normal_logpdf(field: DensityField) -> np.ndarray:
    """Log density of the standard isotropic normal at the lattice centers."""
    d = field.ndim
    if d == 1:
        r2 = field.centers(0) ** 2
    else:
        cx = field.centers(0)[:, None]
        cy = field.centers(1)[None, :]
        r2 = cx ** 2 + cy ** 2
    return -0.5 * d * np.log(2.0 * np.pi) - 0.5 * r2


def woe_map(field: DensityField, density_floor: float = DENSITY_FLOOR) -> WoeField:
    """Weight of evidence: log of estimated density over the standard normal.

    Cells below the density floor are flagged invalid and carry NaN
    rather than a diverging log.
    """
    valid = field.density >= density_floor
    woe = np.full(field.density.shape, np.nan)
    with np.errstate(divide="ignore"):
        woe[valid] = np.log(field.density[valid]) - standard_normal_logpdf(field)[valid]
    return WoeField(bounds=list(field.bounds), density=field.density.copy(),
                    woe=woe, valid=valid)


def segment(woe_field: WoeField, w_star: float = DEFAULT_W_STAR,
            p_min: float = DEFAULT_P_MIN) -> WoeField:
    """Label connected exceptional regions of the WOE lattice.

    A cell is exceptional when |WOE| > w_star and its density is at
    least p_min; 4-connected components get labels 1..k and everything
    else is common (0).
    """
    with np.errstate(invalid="ignore"):
        exceptional = woe_field.valid & (np.abs(woe_field.woe) > w_star) \
            & (woe_field.density >= p_min)
    labels, _ = ndimage.label(exceptional)
    return replace(woe_field, segments=labels.astype(np.int32),
                   w_star=float(w_star), p_min=float(p_min))


@dataclass(frozen=True)
class Waypoint:
    entropy: float
    z: np.ndarray
    count: int
    spread: float


@dataclass(frozen=True)
class Trajectory:
    family_id: int
    branch: str
    waypoints: list


def trajectories(points, n_entropy_bins: int = 20, min_count: int = 20,
                 minor_branch_frac: float = 0.10) -> list:
    """Per-family latent paths ordered by increasing information entropy.

    Points split into branches by skewness sign; a branch holding less
    than minor_branch_frac of the family folds into the dominant one.
    Within a branch, points are entropy-sorted and grouped into
    equal-count bins (at most n_entropy_bins, each at least min_count
    when possible); waypoints carry the bin's mean entropy, mean latent
    position, size, and RMS spread around the mean. Bins that do not
    strictly advance in entropy merge into their predecessor.
    """
    z = _as_points(points)
    labels = np.asarray(points.labels)
    ent = np.asarray(points.entropy, dtype=np.float64)
    skw = np.asarray(points.skewness, dtype=np.float64)
    out = []
    for family_id in np.unique(labels):
        fam = np.flatnonzero(labels == family_id)
        neg = fam[skw[fam] < 0]
        pos = fam[skw[fam] >= 0]
        if min(neg.size, pos.size) < minor_branch_frac * fam.size:
            dominant = "skew_pos" if pos.size >= neg.size else "skew_neg"
            branches = [(dominant, fam)]
        else:
            branches = [("skew_neg", neg), ("skew_pos", pos)]
        for name, idx in branches:
            if idx.size == 0:
                continue
            order = idx[np.argsort(ent[idx], kind="stable")]
            n_bins = max(1, min(n_entropy_bins, order.size // max(1, min_count)))
            groups = [g for g in np.array_split(order, n_bins) if g.size]
            # fold bins whose mean entropy fails to strictly advance; the
            # epsilon absorbs float noise in means of tied entropy values
            merged: list[np.ndarray] = []
            for g in groups:
                merged.append(g)
                while len(merged) > 1 and (
                        ent[merged[-1]].mean() <= ent[merged[-2]].mean() + 1e-9):
                    last = merged.pop()
                    merged[-1] = np.concatenate([merged[-1], last])
            waypoints = []
            for g in merged:
                mean_z = z[g].mean(axis=0)
                spread = float(np.sqrt(np.mean(np.sum((z[g] - mean_z) ** 2, axis=1))))
                waypoints.append(Waypoint(float(ent[g].mean()), mean_z, int(g.size), spread))
            out.append(Trajectory(int(family_id), name, waypoints))
    return out


def class_map(latent_model, bounds, resolution: int = 75, chunk: int = 4096) -> np.ndarray:
    """Arg-max family id on an inclusive lattice over the bounds.

    Returns an array of shape (resolution,) in 1D or
    (resolution, resolution) in 2D, indexed [i] or [i, j] along the
    latent axes.
    """
    from .betavae import latent_lattice

    lattice = latent_lattice(bounds, resolution)
    preds = np.empty(lattice.shape[0], dtype=np.int64)
    for start in range(0, lattice.shape[0], chunk):
        preds[start:start + chunk] = np.argmax(
            latent_model.predict_proba(lattice[start:start + chunk]), axis=1)
    if len(bounds) == 1:
        return preds
    return preds.reshape(resolution, resolution)


def overlap_matrix(points, n_families: int = N_FAMILIES) -> np.ndarray:
    """Nearest-foreign-neighbor association rates between families.

    Entry (i, j) is the fraction of family-i points whose nearest
    neighbor among all points of other families belongs to family j.
    Rows of present families sum to 1; absent families leave zero rows.
    """
    z = _as_points(points)
    labels = np.asarray(points.labels, dtype=np.int64)
    scores = np.zeros((n_families, n_families), dtype=np.float64)
    for family_id in np.unique(labels):
        own = labels == family_id
        other_idx = np.flatnonzero(~own)
        if other_idx.size == 0 or not own.any():
            continue
        tree = cKDTree(z[other_idx])
        _, nearest = tree.query(z[own], k=1)
        neighbor_labels = labels[other_idx[nearest]]
        counts = np.bincount(neighbor_labels, minlength=n_families)
        scores[family_id] = counts / own.sum()
    return scores
