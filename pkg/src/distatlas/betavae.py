"""Beta-weighted variational autoencoder over CDF grid images.

Encoder trunk 650-512-64 with linear mean/log-variance heads, decoder
64-512-650 with sigmoid output. The loss is binary cross entropy
summed over the grid cells plus beta times the closed-form KL pull
toward a standard isotropic normal, both averaged over the batch.
The latent map coordinate of a grid is the encoder mean, which keeps
encoding deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdfcodec import GridShape
from .distgen import LabeledDataset, mix64
from .neuralcore import (
    DenseNet,
    LayerSpec,
    ShapeMismatchError,
    TrainConfig,
    TrainingDivergedError,
    binary_cross_entropy,
    binary_cross_entropy_grad,
    layer_specs_from_json,
    layer_specs_to_json,
    load_checkpoint,
    make_optimizer,
    restore_net,
    save_checkpoint,
    split_indices,
    train_config_from_json,
    train_config_to_json,
)

LOGVAR_LIMIT = 10.0

ENCODER_WIDTHS = (512, 64)
DECODER_WIDTHS = (64, 512)


def kl_term(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Closed-form KL divergence from N(mu, diag exp(logvar)) to N(0, I).

    -0.5 * sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)); zero exactly
    when mu = 0 and logvar = 0, positive otherwise.
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(-0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar)))


def kl_per_example(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL for a batch of latent parameters."""
    return -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=1)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps with eps an external normal draw."""
    return mu + np.exp(0.5 * np.asarray(logvar, dtype=np.float64)) * eps


@dataclass
class LatentPoints:
    """Column-oriented latent encodings with the per-series statistics."""

    z: np.ndarray          # (n, latent_dim) encoder means
    sigma: np.ndarray      # (n, latent_dim)
    labels: np.ndarray     # (n,)
    entropy: np.ndarray
    skewness: np.ndarray
    ks_uniform: np.ndarray

    def __len__(self) -> int:
        return int(self.z.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.z.shape[1])


class VaeModel:
    """Encoder/decoder pair with the beta weight and latent size."""

    def __init__(self, grid_shape: GridShape, beta: float = 3.0, latent_dim: int = 2,
                 seed: int = 0):
        if latent_dim not in (1, 2):
            raise ValueError("latent_dim must be 1 or 2")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.grid_shape = grid_shape
        self.beta = float(beta)
        self.latent_dim = int(latent_dim)
        d = grid_shape.n_cells
        w1, w2 = ENCODER_WIDTHS
        self.trunk = DenseNet(
            [LayerSpec(d, w1, "relu"), LayerSpec(w1, w2, "relu")], seed=mix64(seed, 1))
        self.mu_head = DenseNet([LayerSpec(w2, latent_dim, "identity")], seed=mix64(seed, 2))
        self.logvar_head = DenseNet([LayerSpec(w2, latent_dim, "identity")], seed=mix64(seed, 3))
        self.decoder = DenseNet(
            [LayerSpec(latent_dim, DECODER_WIDTHS[0], "relu"),
             LayerSpec(DECODER_WIDTHS[0], DECODER_WIDTHS[1], "relu"),
             LayerSpec(DECODER_WIDTHS[1], d, "sigmoid")], seed=mix64(seed, 4))

    @property
    def params(self) -> list:
        return (self.trunk.params + self.mu_head.params
                + self.logvar_head.params + self.decoder.params)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.grid_shape.n_cells:
            raise ShapeMismatchError(
                f"expected grids of {self.grid_shape.n_cells} cells, got {x.shape[1]}")
        return x

    def encode(self, grids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic (mu, sigma) for a batch of flattened grids."""
        x = self._check_input(grids)
        h = self.trunk(x)
        mu = self.mu_head(h)
        logvar = np.clip(self.logvar_head(h), -LOGVAR_LIMIT, LOGVAR_LIMIT)
        return mu, np.exp(0.5 * logvar)

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Decoded intensity grids, every cell strictly inside (0, 1)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.latent_dim:
            raise ShapeMismatchError(
                f"expected latent vectors of size {self.latent_dim}, got {z.shape[1]}")
        return self.decoder(z)

    def loss_parts(self, x: np.ndarray, eps: np.ndarray) -> tuple[float, float]:
        """(mean BCE, mean KL) of the batch at the given eps draw."""
        x = self._check_input(x)
        h = self.trunk(x)
        mu = self.mu_head(h)
        logvar = np.clip(self.logvar_head(h), -LOGVAR_LIMIT, LOGVAR_LIMIT)
        decoded = self.decoder(reparameterize(mu, logvar, eps))
        bce = binary_cross_entropy(decoded, x)
        kl = float(np.mean(kl_per_example(mu, logvar)))
        return bce, kl

    def loss(self, x: np.ndarray, eps: np.ndarray) -> float:
        bce, kl = self.loss_parts(x, eps)
        return bce + self.beta * kl

    def loss_gradients(self, x: np.ndarray, eps: np.ndarray):
        """Analytic parameter gradients of loss() at fixed eps.

        Returns (grads, bce, kl) with grads ordered like ``params``.
        The clip on the log-variance head is flat outside its band, so
        its gradient mask is applied exactly.
        """
        x = self._check_input(x)
        n = x.shape[0]
        trunk_cache = self.trunk.forward(x)
        h = trunk_cache.output
        mu_cache = self.mu_head.forward(h)
        logvar_cache = self.logvar_head.forward(h)
        mu = mu_cache.output
        logvar_raw = logvar_cache.output
        logvar = np.clip(logvar_raw, -LOGVAR_LIMIT, LOGVAR_LIMIT)
        sigma = np.exp(0.5 * logvar)
        z = mu + sigma * eps
        dec_cache = self.decoder.forward(z)
        decoded = dec_cache.output

        bce = binary_cross_entropy(decoded, x)
        kl = float(np.mean(kl_per_example(mu, logvar)))

        dec_grads, dz = self.decoder.backward(dec_cache, binary_cross_entropy_grad(decoded, x))
        dmu = dz + self.beta * mu / n
        dlogvar = dz * eps * 0.5 * sigma + self.beta * 0.5 * (np.exp(logvar) - 1.0) / n
        dlogvar_raw = dlogvar * ((logvar_raw > -LOGVAR_LIMIT) & (logvar_raw < LOGVAR_LIMIT))
        mu_grads, dh_mu = self.mu_head.backward(mu_cache, dmu)
        logvar_grads, dh_logvar = self.logvar_head.backward(logvar_cache, dlogvar_raw)
        trunk_grads, _ = self.trunk.backward(trunk_cache, dh_mu + dh_logvar)
        grads = trunk_grads + mu_grads + logvar_grads + dec_grads
        return grads, bce, kl


@dataclass(frozen=True)
class VaeEpoch:
    epoch: int
    train_loss: float
    train_bce: float
    train_kl: float
    test_bce: float
    test_kl: float


def _dataset_eval(model: VaeModel, grids: np.ndarray, chunk: int = 1024):
    """Mean (BCE, KL) with the decoder driven by the encoder mean."""
    total_bce = 0.0
    total_kl = 0.0
    n = grids.shape[0]
    for start in range(0, n, chunk):
        x = grids[start:start + chunk].astype(np.float64)
        mu, sigma = model.encode(x)
        decoded = model.decode(mu)
        total_bce += binary_cross_entropy(decoded, x) * x.shape[0]
        total_kl += float(np.sum(kl_per_example(mu, 2.0 * np.log(sigma))))
    return total_bce / n, total_kl / n


def train_bvae(dataset: LabeledDataset, beta: float = 3.0, latent_dim: int = 2,
               config: TrainConfig | None = None):
    """Train the autoencoder on a 67/33 split of the dataset.

    Returns (model, history); history row 0 is the pre-training
    evaluation, rows 1..epochs the post-epoch state. Test metrics are
    computed at the encoder mean, so they are deterministic per epoch.
    """
    config = config or TrainConfig(epochs=100)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = VaeModel(dataset.grid_shape, beta=beta, latent_dim=latent_dim,
                     seed=mix64(config.rng_seed, 11))
    train_idx, test_idx = split_indices(len(dataset), config.rng_seed)
    x_train = dataset.grids[train_idx].astype(np.float64)
    x_test = dataset.grids[test_idx].astype(np.float64)
    params = model.params
    optimizer = make_optimizer(params, config)
    shuffle_rng = np.random.default_rng(mix64(config.rng_seed, 12))
    eps_rng = np.random.default_rng(mix64(config.rng_seed, 13))

    def snapshot(epoch: int, loss: float, bce: float, kl: float) -> VaeEpoch:
        test_bce, test_kl = _dataset_eval(model, x_test)
        return VaeEpoch(epoch, loss, bce, kl, test_bce, test_kl)

    bce0, kl0 = _dataset_eval(model, x_train)
    history = [snapshot(0, bce0 + model.beta * kl0, bce0, kl0)]
    n = x_train.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        losses = []
        bces = []
        kls = []
        for start in range(0, n, config.batch_size):
            batch = x_train[perm[start:start + config.batch_size]]
            eps = eps_rng.standard_normal((batch.shape[0], model.latent_dim))
            grads, bce, kl = model.loss_gradients(batch, eps)
            loss = bce + model.beta * kl
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            optimizer.step(params, grads)
            losses.append(loss)
            bces.append(bce)
            kls.append(kl)
        history.append(snapshot(epoch, float(np.mean(losses)),
                                float(np.mean(bces)), float(np.mean(kls))))
    return model, history


def encode_dataset(model: VaeModel, dataset: LabeledDataset,
                   indices: np.ndarray | None = None, chunk: int = 2048) -> LatentPoints:
    """Encode dataset grids (optionally a subset) into LatentPoints."""
    if indices is None:
        indices = np.arange(len(dataset))
    mus = []
    sigmas = []
    for start in range(0, indices.shape[0], chunk):
        idx = indices[start:start + chunk]
        mu, sigma = model.encode(dataset.grids[idx].astype(np.float64))
        mus.append(mu)
        sigmas.append(sigma)
    return LatentPoints(
        z=np.concatenate(mus) if mus else np.empty((0, model.latent_dim)),
        sigma=np.concatenate(sigmas) if sigmas else np.empty((0, model.latent_dim)),
        labels=dataset.labels[indices].astype(np.int64),
        entropy=dataset.entropy[indices].astype(np.float64),
        skewness=dataset.skewness[indices].astype(np.float64),
        ks_uniform=dataset.ks_uniform[indices].astype(np.float64),
    )


def default_latent_bounds(z: np.ndarray, expand: float = 0.10) -> list:
    """Per-dimension 1st..99th percentile box expanded by a margin."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    bounds = []
    for j in range(z.shape[1]):
        lo, hi = np.percentile(z[:, j], [1.0, 99.0])
        pad = (hi - lo) * expand if hi > lo else 1.0
        bounds.append((float(lo - pad), float(hi + pad)))
    return bounds


def latent_lattice(bounds, resolution: int) -> np.ndarray:
    """Row-major inclusive lattice over the bounds; shape (res^d, d)."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    if len(axes) == 1:
        return axes[0][:, None]
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def generate_latent_grid(model: VaeModel, bounds, resolution: int = 50):
    """Decode a lattice of latent points; returns (lattice, decoded grids)."""
    lattice = latent_lattice(bounds, resolution)
    if lattice.shape[1] != model.latent_dim:
        raise ShapeMismatchError("bounds dimensionality does not match latent_dim")
    return lattice, model.decode(lattice)


def vae_grad_check(model: VaeModel, batch: np.ndarray, eps: np.ndarray,
                   h: float = 1e-5, n_samples: int = 200, seed: int = 0) -> float:
    """Finite-difference audit of the full loss, reparameterization included."""
    grads, _, _ = model.loss_gradients(batch, eps)
    params = model.params
    sizes = [p.size for p in params]
    total = int(np.sum(sizes))
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    count = min(total, max(n_samples, 200))
    worst = 0.0
    for flat in rng.choice(total, size=count, replace=False):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        inner = int(flat - offsets[which])
        p = params[which]
        orig = p.flat[inner]
        p.flat[inner] = orig + h
        up = model.loss(batch, eps)
        p.flat[inner] = orig - h
        down = model.loss(batch, eps)
        p.flat[inner] = orig
        numeric = (up - down) / (2.0 * h)
        a = grads[which].flat[inner]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


# ---------------------------------------------------------------------------
# checkpoints

def save_vae(path, model: VaeModel, config: TrainConfig | None = None) -> None:
    header = {
        "kind": "bvae",
        "beta": model.beta,
        "latent_dim": model.latent_dim,
        "grid": {"x_bins": model.grid_shape.x_bins, "y_levels": model.grid_shape.y_levels},
        "trunk": layer_specs_to_json(model.trunk.layers),
        "mu_head": layer_specs_to_json(model.mu_head.layers),
        "logvar_head": layer_specs_to_json(model.logvar_head.layers),
        "decoder": layer_specs_to_json(model.decoder.layers),
        "train_config": train_config_to_json(config) if config else None,
    }
    save_checkpoint(path, header, model.params)


def load_vae(path) -> tuple[VaeModel, dict]:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "bvae":
        raise ValueError(f"{path}: not an autoencoder checkpoint")
    grid = GridShape(int(header["grid"]["x_bins"]), int(header["grid"]["y_levels"]))
    model = VaeModel(grid, beta=float(header["beta"]),
                     latent_dim=int(header["latent_dim"]), seed=0)
    offset = 0
    for attr in ("trunk", "mu_head", "logvar_head", "decoder"):
        net, offset = restore_net(header[attr], arrays, offset)
        expected = [s.activation for s in getattr(model, attr).layers]
        if [s.activation for s in net.layers] != expected:
            raise ValueError(f"{path}: unexpected {attr} architecture")
        setattr(model, attr, net)
    return model, header


def load_train_config(header: dict) -> TrainConfig | None:
    raw = header.get("train_config")
    return train_config_from_json(raw) if raw else None
