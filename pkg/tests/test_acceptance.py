"""Acceptance suite: one test per release criterion.

Each test prints a single PASS/FAIL line (visible with pytest -s).
Heavy artifacts (the 1000-per-family corpus, trained models) are
module-scoped fixtures shared across criteria; every run is fully
seeded, so the suite is reproducible end to end.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from distatlas import betavae, cdfrepair, classifier, distgen, latentlab
from distatlas.cdfcodec import GridShape, entropy, signed_ks
from distatlas.cli import main as cli_main
from distatlas.neuralcore import DenseNet, TrainConfig, grad_check, one_hot, split_indices

DESK_SEED = 1
DESK_PER_FAMILY = 1000
CLASSIFIER_EPOCHS = 50
VAE_EPOCHS = 60
VAE_SEEDS = (1, 2, 3)


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {number:2d}] {name}: {status}  {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def desk_dataset():
    return distgen.build_doe(DESK_PER_FAMILY, master_seed=DESK_SEED)


def train_desk_classifier(dataset, seed):
    start = time.perf_counter()
    model, history = classifier.train_classifier(
        dataset, TrainConfig(epochs=CLASSIFIER_EPOCHS, rng_seed=seed))
    elapsed = time.perf_counter() - start
    _, test_idx = split_indices(len(dataset), seed)
    matrix = classifier.evaluate(model, dataset.grids[test_idx], dataset.labels[test_idx])
    return model, matrix, elapsed


@pytest.fixture(scope="module")
def primary_classifier(desk_dataset):
    return train_desk_classifier(desk_dataset, seed=1)


@pytest.fixture(scope="module")
def vae_runs(desk_dataset):
    runs = []
    for seed in VAE_SEEDS:
        model, history = betavae.train_bvae(
            desk_dataset, beta=3.0, latent_dim=2,
            config=TrainConfig(epochs=VAE_EPOCHS, rng_seed=seed))
        points = betavae.encode_dataset(model, desk_dataset)
        runs.append((seed, model, history, points))
    return runs


def test_criterion_01_classifier_accuracy(desk_dataset, primary_classifier):
    """Desk-scale corpus: overall >= 0.65, bernoulli/uniform recall >= 0.95."""

    def passes(matrix):
        return (matrix.overall_accuracy >= 0.65
                and matrix.per_class_recall[10] >= 0.95
                and matrix.per_class_recall[6] >= 0.95)

    def describe(matrix, elapsed):
        return (f"acc={matrix.overall_accuracy:.4f} "
                f"bernoulli={matrix.per_class_recall[10]:.4f} "
                f"uniform={matrix.per_class_recall[6]:.4f} train={elapsed:.0f}s")

    _, matrix, elapsed = primary_classifier
    details = [describe(matrix, elapsed)]
    verdicts = [passes(matrix)]
    assert elapsed < 1200, f"training exceeded the 20 minute budget: {elapsed:.0f}s"
    if not verdicts[0]:
        # majority over two alternate seeds decides
        for seed in (2, 3):
            _, alt, alt_elapsed = train_desk_classifier(desk_dataset, seed)
            details.append(describe(alt, alt_elapsed))
            verdicts.append(passes(alt))
    ok = sum(verdicts) > len(verdicts) / 2
    report(1, "classifier accuracy", ok, "; ".join(details))


def test_criterion_02_gradient_correctness(desk_dataset):
    """Backprop matches central differences at h=1e-5 on both architectures."""
    rng = np.random.default_rng(2024)
    take = rng.choice(len(desk_dataset), size=16, replace=False)
    batch = desk_dataset.grids[take].astype(np.float64)
    targets = one_hot(desk_dataset.labels[take].astype(np.int64), distgen.N_FAMILIES)

    net = DenseNet(classifier.grid_classifier_layers(650), seed=11)
    err_classifier = grad_check(net, batch, targets, loss="cce", h=1e-5, seed=12)

    model = betavae.VaeModel(GridShape(), beta=3.0, latent_dim=2, seed=13)
    eps = rng.standard_normal((16, 2))
    err_vae = betavae.vae_grad_check(model, batch, eps, h=1e-5, seed=14)

    ok = err_classifier < 1e-4 and err_vae < 1e-4
    report(2, "gradient correctness", ok,
           f"classifier={err_classifier:.3e} bvae={err_vae:.3e} (tolerance 1e-4)")


def test_criterion_03_kl_closed_form():
    """Closed-form KL vs a 1e6-sample Monte-Carlo estimate within 1 percent."""
    exact_zero = betavae.kl_term(np.zeros(2), np.zeros(2))
    mu = np.array([0.5, -1.0])
    sigma = np.array([0.7, 1.3])
    logvar = 2.0 * np.log(sigma)
    analytic = betavae.kl_term(mu, logvar)
    rng = np.random.default_rng(3)
    z = mu + sigma * rng.standard_normal((1_000_000, 2))
    log_q = -0.5 * np.sum(((z - mu) / sigma) ** 2, axis=1) - np.log(sigma).sum()
    log_p = -0.5 * np.sum(z ** 2, axis=1)
    estimate = float(np.mean(log_q - log_p))
    rel = abs(analytic - estimate) / abs(estimate)
    ok = exact_zero == 0.0 and rel < 0.01
    report(3, "KL closed form", ok,
           f"analytic={analytic:.5f} monte-carlo={estimate:.5f} rel={rel:.4%} kl(0,0)={exact_zero}")


def test_criterion_04_entropy_reference_points():
    """Equal 26-bin split -> 1; one bin -> 0; two equal bins -> 1/log2(26)."""
    equal = entropy(np.arange(26) / 25.0)
    single = entropy(np.full(64, 3.0))
    two_bins = entropy(np.array([0.0, 0.0, 1.0, 1.0]))
    expected_two = 1.0 / np.log2(26)
    ok = (abs(equal - 1.0) < 1e-12 and single == 0.0
          and abs(two_bins - expected_two) < 1e-12)
    report(4, "entropy reference points", ok,
           f"equal={equal!r} single={single!r} two={two_bins!r} (expect {expected_two!r})")


def test_criterion_05_signed_ks_skewness():
    """Exponential skews positive, left gumbel negative; mirroring is exact."""
    n_runs = 200
    exp_spec = distgen.DistSpec(family_id=2, params={"loc": 0.0, "scale": 1.0},
                                sample_size=1000)
    gl_spec = distgen.DistSpec(family_id=11, params={"loc": 0.0, "scale": 1.0},
                               sample_size=1000)
    exp_pos = 0
    gl_neg = 0
    mirror_exact = True
    for i in range(n_runs):
        exp_values = distgen.sample_variable(exp_spec, distgen.mix64(5, 0, i)).values
        gl_values = distgen.sample_variable(gl_spec, distgen.mix64(5, 1, i)).values
        s_exp = signed_ks(exp_values)
        s_gl = signed_ks(gl_values)
        exp_pos += s_exp.skewness > 0
        gl_neg += s_gl.skewness < 0
        mirrored = signed_ks(-exp_values)
        mirror_exact &= (mirrored.skewness == -s_exp.skewness
                         and mirrored.ks_uniform == s_exp.ks_uniform)
    ok = exp_pos >= 0.99 * n_runs and gl_neg >= 0.90 * n_runs and mirror_exact
    report(5, "signed K-S skewness", ok,
           f"exponential positive {exp_pos}/{n_runs} (need 198), "
           f"gumbel_l negative {gl_neg}/{n_runs} (need 180), mirror exact={mirror_exact}")


def brute_force_isotonic(y):
    """Independent oracle: exhaustive consecutive-block partition search."""
    n = y.shape[0]
    best = None
    best_sse = np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        edges = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        candidate = np.empty(n)
        for a, b in zip(edges, edges[1:]):
            candidate[a:b] = y[a:b].mean()
        if np.any(np.diff(candidate) < 0):
            continue
        sse = float(np.sum((candidate - y) ** 2))
        if sse < best_sse:
            best_sse = sse
            best = candidate
    return best


def test_criterion_06_isotonic_repair():
    """PAVA equals the brute-force projection on 1000 random curves."""
    rng = np.random.default_rng(6)
    worst_gap = 0.0
    monotone = idempotent = mean_preserved = True
    for _ in range(1000):
        y = rng.random(8)
        fit = cdfrepair.isotonic_fit(y)
        worst_gap = max(worst_gap, float(np.max(np.abs(fit - brute_force_isotonic(y)))))
        monotone &= bool(np.all(np.diff(fit) >= 0.0))
        idempotent &= bool(np.array_equal(cdfrepair.isotonic_fit(fit), fit))
        mean_preserved &= abs(fit.mean() - y.mean()) < 1e-12
    ok = worst_gap <= 1e-6 and monotone and idempotent and mean_preserved
    report(6, "isotonic repair", ok,
           f"max gap to oracle {worst_gap:.2e} monotone={monotone} "
           f"idempotent={idempotent} mean-preserving={mean_preserved}")


def test_criterion_07_woe_reference():
    """Standard-normal draws stay inside |WOE| < 0.25; analytic input gives 0."""
    rng = np.random.default_rng(7)
    draws = rng.standard_normal((100_000, 2))
    field = latentlab.estimate_density(draws, resolution=100)
    woe = latentlab.woe_map(field)
    heavy = woe.valid & (field.density >= 0.025)
    worst_estimated = float(np.nanmax(np.abs(woe.woe[heavy])))

    analytic = latentlab.DensityField(
        bounds=[(-5.0, 5.0), (-5.0, 5.0)], density=np.zeros((101, 101)),
        bandwidth=(1.0, 1.0))
    analytic.density = np.exp(latentlab.standard_normal_logpdf(analytic))
    woe_exact = latentlab.woe_map(analytic)
    worst_analytic = float(np.nanmax(np.abs(woe_exact.woe[woe_exact.valid])))

    ok = worst_estimated < 0.25 and worst_analytic <= 1e-3
    report(7, "WOE reference", ok,
           f"max |WOE| estimated={worst_estimated:.4f} (< 0.25 over {int(heavy.sum())} cells), "
           f"analytic={worst_analytic:.2e} (<= 1e-3)")


def test_criterion_08_latent_structure(vae_runs):
    """Qualitative latent structure, each property by majority over 3 seeds."""
    details = []
    bern_votes = []
    central_votes = []
    bce_votes = []
    for seed, model, history, points in vae_runs:
        z = points.z
        labels = points.labels
        centroids = {f: z[labels == f].mean(axis=0) for f in range(distgen.N_FAMILIES)}
        bern = z[labels == 10]
        spread = float(np.sqrt(np.mean(np.sum((bern - centroids[10]) ** 2, axis=1))))
        nearest = min(float(np.linalg.norm(centroids[f] - centroids[10]))
                      for f in range(distgen.N_FAMILIES) if f != 10)
        global_centroid = z.mean(axis=0)
        uniform_r = float(np.linalg.norm(centroids[6] - global_centroid))
        cauchy_r = float(np.linalg.norm(centroids[1] - global_centroid))
        ratio = history[-1].test_bce / history[0].test_bce
        bern_votes.append(nearest > 2.0 * spread)
        central_votes.append(uniform_r < cauchy_r)
        bce_votes.append(ratio <= 0.6)
        details.append(
            f"seed {seed}: bern {nearest:.2f}/{spread:.2f}={nearest / spread:.2f}x, "
            f"uniform_r={uniform_r:.2f} vs cauchy_r={cauchy_r:.2f}, bce ratio={ratio:.3f}")
    majority = len(vae_runs) / 2
    bern_ok = sum(bern_votes) > majority
    central_ok = sum(central_votes) > majority
    bce_ok = sum(bce_votes) > majority
    ok = bern_ok and central_ok and bce_ok
    report(8, "latent structure", ok,
           f"bernoulli isolation {sum(bern_votes)}/3, "
           f"uniform-central {sum(central_votes)}/3, "
           f"bce ratio {sum(bce_votes)}/3 :: " + " | ".join(details))


def test_criterion_09_trajectories(vae_runs):
    """Exponential rides one branch, weibull at least two, entropy increases."""
    _, _, _, points = vae_runs[0]
    trajs = latentlab.trajectories(points, n_entropy_bins=20, min_count=20)
    by_family = {}
    for t in trajs:
        by_family.setdefault(t.family_id, []).append(t)
    n_exponential = len(by_family.get(2, []))
    n_weibull = len(by_family.get(8, []))
    strictly_increasing = all(
        all(a.entropy < b.entropy for a, b in zip(t.waypoints, t.waypoints[1:]))
        for t in trajs)
    ok = n_exponential == 1 and n_weibull >= 2 and strictly_increasing
    report(9, "entropy trajectories", ok,
           f"exponential branches={n_exponential} (need 1), weibull={n_weibull} (need >=2), "
           f"strict entropy increase={strictly_increasing}")


def test_criterion_10_cli_determinism(tmp_path):
    """generate and train reruns produce byte-identical manifests and histories."""
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli_main(["generate", "--per-family", "8", "--seed", "17",
                         "--out-dir", str(out)]) == 0
        assert cli_main(["train", "classifier", "--dataset", f"{out}/dataset.bin",
                         "--epochs", "3", "--seed", "17", "--out-dir", str(out)]) == 0
        assert cli_main(["train", "bvae", "--dataset", f"{out}/dataset.bin",
                         "--epochs", "2", "--seed", "17", "--out-dir", str(out)]) == 0
    manifests = [Path(out / "dataset_manifest.json").read_bytes() for out in outs]
    clf_histories = [Path(out / "classifier_history.csv").read_bytes() for out in outs]
    vae_histories = [Path(out / "bvae_history.csv").read_bytes() for out in outs]
    ok = (manifests[0] == manifests[1]
          and clf_histories[0] == clf_histories[1]
          and vae_histories[0] == vae_histories[1])
    report(10, "command determinism", ok,
           "manifest, classifier history, and autoencoder history byte-identical across reruns")
