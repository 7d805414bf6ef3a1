"""Seeded synthesis of the 13-family labeled training corpus.

Each family couples a parameter-draw rule with a sampler built on the
uniform stream of a seeded generator: inverse-CDF transforms where a
closed form exists, Box-Muller normals, and Marsaglia-Tsang gammas
(with the alpha < 1 power boost) for the gamma/beta/chi group. A
(spec, seed) pair therefore always reproduces the identical series,
and a whole corpus is a pure function of one master seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cdfcodec import GridShape, encode_cdf, signed_ks

M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

MIN_SAMPLE_SIZE = 35
MAX_SAMPLE_SIZE = 1000

DEFAULT_GRID = GridShape()

# shared range of the randomized shape parameters
_SHAPE_LO, _SHAPE_HI = 0.1, 9.0


class InvalidFamilyError(ValueError):
    """Raised for a family id outside 0..12."""


class InvalidParameterError(ValueError):
    """Raised when parameters fall outside their family's ranges."""


def mix64(*parts: int) -> int:
    """Mix integers into one 64-bit child seed.

    Absorbs each part with a golden-ratio increment and applies the
    splitmix64 finalizer, so nearby (seed, family, index) tuples land
    on unrelated streams without storing per-entry seeds.
    """
    h = 0
    for part in parts:
        h = (h + _GOLDEN + (int(part) & M64)) & M64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & M64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & M64
        h ^= h >> 31
    return h


# ---------------------------------------------------------------------------
# primitive draws (all reduce to rng.random / rng.integers)

def _uniform_open(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms strictly inside (0, 1); safe under log and tan."""
    u = rng.random(n)
    return np.maximum(u, 2.0 ** -53)


def _standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Box-Muller pairs from the uniform stream."""
    m = (n + 1) // 2
    u1 = _uniform_open(rng, m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    t = 2.0 * np.pi * u2
    return np.concatenate([r * np.cos(t), r * np.sin(t)])[:n]


def _standard_gamma(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    """Marsaglia-Tsang rejection sampler; alpha < 1 via the power boost."""
    if alpha <= 0:
        raise InvalidParameterError(f"gamma shape must be positive, got {alpha}")
    if alpha < 1.0:
        g = _standard_gamma(rng, alpha + 1.0, n)
        u = _uniform_open(rng, n)
        return g * u ** (1.0 / alpha)
    d = alpha - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n, dtype=np.float64)
    pending = np.arange(n)
    while pending.size:
        z = _standard_normal(rng, pending.size)
        u = _uniform_open(rng, pending.size)
        v = (1.0 + c * z) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (v > 0.0) & (np.log(u) < 0.5 * z * z + d - d * v + d * np.log(v))
        out[pending[ok]] = d * v[ok]
        pending = pending[~ok]
    return out


# ---------------------------------------------------------------------------
# family samplers; params are the dicts produced by draw_params

def _sample_beta(rng, p, n):
    g1 = _standard_gamma(rng, p["alpha"], n)
    g2 = _standard_gamma(rng, p["beta"], n)
    s = g1 + g2
    r = np.where(s > 0.0, g1 / np.where(s > 0.0, s, 1.0), 0.5)
    # keep the open (0, 1) support; only values indistinguishable at
    # float precision from the endpoints are nudged
    return np.clip(r, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


def _sample_cauchy(rng, p, n):
    u = _uniform_open(rng, n)
    return p["loc"] + p["scale"] * np.tan(np.pi * (u - 0.5))


def _sample_exponential(rng, p, n):
    u = rng.random(n)
    return p["loc"] + p["scale"] * -np.log1p(-u)


def _sample_gamma(rng, p, n):
    return _standard_gamma(rng, p["alpha"], n)


def _sample_lognormal(rng, p, n):
    return np.exp(p["s"] * _standard_normal(rng, n))


def _sample_normal(rng, p, n):
    return p["loc"] + p["scale"] * _standard_normal(rng, n)


def _sample_uniform(rng, p, n):
    return p["loc"] + p["scale"] * rng.random(n)


def _sample_supnormal(rng, p, n):
    pick = rng.random(n) < p["w"]
    z = _standard_normal(rng, n)
    first = p["loc1"] + p["scale1"] * z
    second = p["loc2"] + p["scale2"] * z
    return np.where(pick, first, second)


def _sample_weibull(rng, p, n):
    u = rng.random(n)
    return (-np.log1p(-u)) ** (1.0 / p["alpha"])


def _sample_chi(rng, p, n):
    return np.sqrt(2.0 * _standard_gamma(rng, p["df"] / 2.0, n))


def _sample_bernoulli(rng, p, n):
    return (rng.random(n) < p["p"]).astype(np.float64)


def _sample_gumbel_l(rng, p, n):
    u = rng.random(n)
    return p["loc"] + p["scale"] * np.log(-np.log1p(-u))


def _sample_gumbel_r(rng, p, n):
    u = _uniform_open(rng, n)
    return p["loc"] - p["scale"] * np.log(-np.log(u))


# ---------------------------------------------------------------------------
# parameter draws

def _fixed_loc_scale(rng):
    return {"loc": 0.0, "scale": 1.0}


def _draw_beta(rng):
    return {"alpha": rng.uniform(_SHAPE_LO, _SHAPE_HI), "beta": rng.uniform(_SHAPE_LO, _SHAPE_HI)}


def _draw_shape(rng):
    return {"alpha": rng.uniform(_SHAPE_LO, _SHAPE_HI)}


def _draw_lognormal(rng):
    return {"s": 1.0 / rng.uniform(_SHAPE_LO, _SHAPE_HI)}


def _draw_supnormal(rng):
    return {
        "loc1": 0.0,
        "scale1": 1.0,
        "loc2": rng.uniform(0.0, 1.0),
        "scale2": rng.uniform(_SHAPE_LO, _SHAPE_HI),
        "w": rng.uniform(0.1, 0.9),
    }


def _draw_chi(rng):
    return {"df": int(rng.integers(1, 10))}


def _draw_bernoulli(rng):
    return {"p": rng.uniform(0.001, 0.999)}


@dataclass(frozen=True)
class Family:
    family_id: int
    name: str
    # count of randomized parameters, used to order families by simplicity
    varying_params: int
    draw: Callable[[np.random.Generator], dict]
    sample: Callable[[np.random.Generator, dict, int], np.ndarray]


FAMILIES: dict[int, Family] = {
    f.family_id: f
    for f in [
        Family(0, "beta", 2, _draw_beta, _sample_beta),
        Family(1, "cauchy", 0, _fixed_loc_scale, _sample_cauchy),
        Family(2, "exponential", 0, _fixed_loc_scale, _sample_exponential),
        Family(3, "gamma", 1, _draw_shape, _sample_gamma),
        Family(4, "lognormal", 1, _draw_lognormal, _sample_lognormal),
        Family(5, "normal", 0, _fixed_loc_scale, _sample_normal),
        Family(6, "uniform", 0, _fixed_loc_scale, _sample_uniform),
        Family(7, "supnormal", 5, _draw_supnormal, _sample_supnormal),
        Family(8, "weibull", 1, _draw_shape, _sample_weibull),
        Family(9, "chi", 1, _draw_chi, _sample_chi),
        Family(10, "bernoulli", 1, _draw_bernoulli, _sample_bernoulli),
        Family(11, "gumbel_l", 0, _fixed_loc_scale, _sample_gumbel_l),
        Family(12, "gumbel_r", 0, _fixed_loc_scale, _sample_gumbel_r),
    ]
}

N_FAMILIES = len(FAMILIES)
FAMILY_NAMES = [FAMILIES[i].name for i in range(N_FAMILIES)]


def _require_family(family_id: int) -> Family:
    try:
        return FAMILIES[int(family_id)]
    except (KeyError, TypeError, ValueError):
        raise InvalidFamilyError(f"unknown family id {family_id!r}") from None


def _check_range(params, key, lo, hi, family):
    value = params.get(key)
    if value is None or not (lo <= value <= hi):
        raise InvalidParameterError(f"{family}: {key}={value!r} outside [{lo}, {hi}]")


def validate_params(family_id: int, params: dict) -> None:
    """Raise InvalidParameterError if params violate the family's ranges."""
    family = _require_family(family_id).name
    if family == "beta":
        _check_range(params, "alpha", _SHAPE_LO, _SHAPE_HI, family)
        _check_range(params, "beta", _SHAPE_LO, _SHAPE_HI, family)
    elif family in ("gamma", "weibull"):
        _check_range(params, "alpha", _SHAPE_LO, _SHAPE_HI, family)
    elif family == "lognormal":
        _check_range(params, "s", 1.0 / _SHAPE_HI, 1.0 / _SHAPE_LO, family)
    elif family == "chi":
        df = params.get("df")
        if df not in range(1, 10):
            raise InvalidParameterError(f"chi: df={df!r} not in 1..9")
    elif family == "bernoulli":
        _check_range(params, "p", 0.001, 0.999, family)
    elif family == "supnormal":
        _check_range(params, "loc1", 0.0, 0.0, family)
        _check_range(params, "scale1", 1.0, 1.0, family)
        _check_range(params, "loc2", 0.0, 1.0, family)
        _check_range(params, "scale2", _SHAPE_LO, _SHAPE_HI, family)
        _check_range(params, "w", 0.1, 0.9, family)
    else:
        _check_range(params, "loc", 0.0, 0.0, family)
        _check_range(params, "scale", 1.0, 1.0, family)


@dataclass(frozen=True)
class DistSpec:
    """One generation recipe: family, parameters, and draw count."""

    family_id: int
    params: dict
    sample_size: int

    def __post_init__(self) -> None:
        validate_params(self.family_id, self.params)
        if not (MIN_SAMPLE_SIZE <= self.sample_size <= MAX_SAMPLE_SIZE):
            raise InvalidParameterError(
                f"sample_size={self.sample_size} outside [{MIN_SAMPLE_SIZE}, {MAX_SAMPLE_SIZE}]"
            )

    @property
    def family_name(self) -> str:
        return FAMILIES[self.family_id].name


@dataclass(frozen=True)
class RawSeries:
    """A sampled series together with the recipe and seed that made it."""

    values: np.ndarray
    spec: DistSpec
    seed: int


def draw_params(family_id: int, rng: np.random.Generator) -> dict:
    """Draw one parameter set inside the family's ranges."""
    return _require_family(family_id).draw(rng)


def draw_spec(family_id: int, rng: np.random.Generator) -> DistSpec:
    """Draw parameters, then a sample size uniform on [35, 1000]."""
    params = draw_params(family_id, rng)
    size = int(rng.integers(MIN_SAMPLE_SIZE, MAX_SAMPLE_SIZE + 1))
    return DistSpec(family_id=int(family_id), params=params, sample_size=size)


def sample_variable(spec: DistSpec, seed: int) -> RawSeries:
    """Sample spec.sample_size values; pure in (spec, seed)."""
    family = _require_family(spec.family_id)
    validate_params(spec.family_id, spec.params)
    rng = np.random.default_rng(int(seed) & M64)
    values = family.sample(rng, spec.params, spec.sample_size)
    return RawSeries(values=values, spec=spec, seed=int(seed))


# ---------------------------------------------------------------------------
# corpus construction and cache

@dataclass
class LabeledDataset:
    """Column-oriented corpus of encoded grids with labels and statistics.

    ``grids`` rows are x-bin-major flattened CDF grids in float32, the
    storage precision of the binary cache; training code upcasts.
    """

    grid_shape: GridShape
    grids: np.ndarray        # (n, x_bins * y_levels) float32
    labels: np.ndarray       # (n,) int32 family ids
    entropy: np.ndarray      # (n,) float32
    skewness: np.ndarray     # (n,) float32
    ks_uniform: np.ndarray   # (n,) float32
    sample_sizes: np.ndarray  # (n,) int32
    master_seed: int
    per_family_count: int

    def __len__(self) -> int:
        return int(self.grids.shape[0])


def build_doe(per_family_count: int, grid_shape: GridShape | None = None,
              master_seed: int = 0) -> LabeledDataset:
    """Generate per_family_count variables per family and encode them.

    Entry seeds derive from (master_seed, family_id, index) through
    mix64 with separate sub-streams for the parameter draw and the
    sampling, so any entry can be regenerated in isolation.
    """
    if per_family_count < 1:
        raise ValueError("per_family_count must be >= 1")
    grid_shape = grid_shape or GridShape()
    n = N_FAMILIES * per_family_count
    grids = np.empty((n, grid_shape.n_cells), dtype=np.float32)
    labels = np.empty(n, dtype=np.int32)
    ent = np.empty(n, dtype=np.float32)
    skw = np.empty(n, dtype=np.float32)
    ks = np.empty(n, dtype=np.float32)
    sizes = np.empty(n, dtype=np.int32)
    row = 0
    for family_id in range(N_FAMILIES):
        for index in range(per_family_count):
            spec_rng = np.random.default_rng(mix64(master_seed, family_id, index, 0))
            spec = draw_spec(family_id, spec_rng)
            series = sample_variable(spec, mix64(master_seed, family_id, index, 1))
            grids[row] = encode_cdf(series.values, grid_shape).flat()
            stats = signed_ks(series.values, n_bins=grid_shape.x_bins)
            labels[row] = family_id
            ent[row] = stats.entropy
            skw[row] = stats.skewness
            ks[row] = stats.ks_uniform
            sizes[row] = spec.sample_size
            row += 1
    return LabeledDataset(
        grid_shape=grid_shape, grids=grids, labels=labels, entropy=ent,
        skewness=skw, ks_uniform=ks, sample_sizes=sizes,
        master_seed=int(master_seed), per_family_count=int(per_family_count),
    )


_CACHE_MAGIC = b"CDFC"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIQIIQI")


def save_cache(dataset: LabeledDataset, path) -> None:
    """Write the corpus as a little-endian binary cache."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(
            _CACHE_MAGIC, _CACHE_VERSION, len(dataset),
            dataset.grid_shape.x_bins, dataset.grid_shape.y_levels,
            dataset.master_seed & M64, dataset.per_family_count,
        ))
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.sample_sizes, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.entropy, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.skewness, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.ks_uniform, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.grids, dtype="<f4").tobytes())


def load_cache(path) -> LabeledDataset:
    """Read a binary cache written by save_cache."""
    with open(path, "rb") as fh:
        head = fh.read(_CACHE_HEADER.size)
        if len(head) < _CACHE_HEADER.size:
            raise ValueError(f"{path}: truncated cache header")
        magic, version, n, x_bins, y_levels, master_seed, per_family = _CACHE_HEADER.unpack(head)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a dataset cache")
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        shape = GridShape(x_bins, y_levels)

        def block(dtype, count):
            raw = fh.read(np.dtype(dtype).itemsize * count)
            if len(raw) != np.dtype(dtype).itemsize * count:
                raise ValueError(f"{path}: truncated cache body")
            return np.frombuffer(raw, dtype=dtype).copy()

        labels = block("<i4", n)
        sizes = block("<i4", n)
        ent = block("<f4", n)
        skw = block("<f4", n)
        ks = block("<f4", n)
        grids = block("<f4", n * shape.n_cells).reshape(n, shape.n_cells)
    return LabeledDataset(
        grid_shape=shape, grids=grids, labels=labels, entropy=ent, skewness=skw,
        ks_uniform=ks, sample_sizes=sizes, master_seed=int(master_seed),
        per_family_count=int(per_family),
    )


def parse_dataset_spec(obj: dict) -> tuple[int, int, GridShape]:
    """Validate a dataset spec dict -> (master_seed, per_family_count, grid)."""
    if not isinstance(obj, dict):
        raise ValueError("dataset spec must be a JSON object")
    try:
        master_seed = int(obj["master_seed"])
        per_family = int(obj["per_family_count"])
        grid = obj.get("grid", {})
        shape = GridShape(int(grid.get("x_bins", DEFAULT_GRID.x_bins)),
                          int(grid.get("y_levels", DEFAULT_GRID.y_levels)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed dataset spec: {exc}") from exc
    if per_family < 1:
        raise ValueError("per_family_count must be >= 1")
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    return master_seed, per_family, shape
