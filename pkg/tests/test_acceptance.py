"""End-to-end acceptance gate.

Each test prints one "[criterion NN] PASS/FAIL" line directly to the
terminal (bypassing capture) and then asserts at the stated tolerance.
Criteria 07 and 08 train full benchmark models and dominate the runtime;
everything else finishes in seconds.
"""

import json
import os
import time

import numpy as np
import pytest

import test_ica
import test_loss
import test_model
import test_spectral
from latentdyn.cli import main as cli_main
from latentdyn.diffcore import SeededRng, Tape, Tensor, concat, reparam_sample
from latentdyn.evaluate import (
    model_decoder,
    subtask_correlation,
    traversal_spatial_maps,
)
from latentdyn.ica import amari_index, fit_ica, ica_factors_and_maps
from latentdyn.loss import kl_to_standard_normal, objective, total_correlation
from latentdyn.model import Model, ModelConfig, baseline_params, count_parameters
from latentdyn.signal import bandpass, canonical_hrf, reference_timecourses
from latentdyn.spectral import (
    ClusterAssignment,
    cluster_mesh,
    patchify,
    spectral_cluster_hemisphere,
    unpatchify,
)
from latentdyn.surface import geodesic_distances, structural_adjacency
from latentdyn.synth import SynthConfig, generate
from latentdyn.trainer import TrainConfig, train


def _report(capsys, number, label, ok, detail):
    line = (f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'} "
            f"{label}: {detail}")
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


# -- benchmark plumbing shared by criteria 07, 08, 09 ---------------------

BENCH_MODEL = dict(n_factors=16, encoder_output=64, k_clusters=32,
                   embed_dim=64, encoder_feature_sizes=(64, 32, 16, 8, 4, 1),
                   decoder_feature_sizes=(4, 8, 16, 32, 64, 64),
                   gru_hidden=64, patch_hidden=64)
BENCH_TRAIN = dict(batch_size=2, adam_eps=1e-4, epochs=80)
BENCH_SEEDS = (0, 1, 2)


def _cluster_k32(ds):
    adj = {h: structural_adjacency(geodesic_distances(ds.mesh, h),
                                   ds.mesh.vertex_ids(h))
           for h in ("L", "R")}
    return cluster_mesh(ds.mesh, adj["L"], adj["R"], 32, "structural", 0)


def _test_subtask_corr(ds, factor_fn):
    """Mean best |corr| between subject-averaged factor timecourses on the
    test split and the band-limited sub-task regressors.
    """
    mus = [factor_fn(s.data) for s in ds.subjects if s.split == "test"]
    factors = np.mean(mus, axis=0)
    refs = reference_timecourses(ds.design)
    _, mean_abs = subtask_correlation(factors, refs,
                                      names=list(ds.design.subtasks))
    return mean_abs


def _train_point(ds, ca, beta, seed):
    model = Model(ModelConfig(beta=beta, **BENCH_MODEL), ca, seed=seed)
    train(ds.split_arrays("train"), ds.split_arrays("val"), model,
          TrainConfig(seed=seed, **BENCH_TRAIN))
    corr = _test_subtask_corr(
        ds, lambda x: model.forward(x, sample=False)[0].mu.data)
    return model, corr


@pytest.fixture(scope="module")
def linear_benchmark():
    ds = generate(SynthConfig())  # 642x2 vertices, 5 sources, noise 0.5
    return ds, _cluster_k32(ds)


@pytest.fixture(scope="module")
def linear_runs(linear_benchmark):
    ds, ca = linear_benchmark
    return {(beta, seed): _train_point(ds, ca, beta, seed)
            for beta in (1.0, 0.0) for seed in BENCH_SEEDS}


@pytest.fixture(scope="module")
def tanh_benchmark():
    ds = generate(SynthConfig(mixing="tanh"))
    return ds, _cluster_k32(ds)


# -- 01: gradient integrity ----------------------------------------------


def _op_sweep():
    """One finite-difference check per differentiable op family."""
    from conftest import check_grads
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 3))
    c = rng.standard_normal((3, 4))

    def build(ta, tb, tc_):
        y = ta.matmul(tb)                        # matmul
        y = (y + 0.3) * y - y / 2.0              # add, mul, div, const mix
        y = y.tanh() + y.sigmoid() + y.elu()     # pointwise nonlinearities
        y = (y * 0.1).exp()                      # exp
        y = y.clamp(-4.0, 4.0)                   # clamp away from bounds
        row = y.slice_axis(0, 0, 2)              # slice
        padded = row.pad_axis(1, 1, 0)           # pad
        wide = concat([padded, padded], axis=1)  # concat
        took = wide.take_cols([0, 2, 2, 5])      # gather with repeats
        flat = took.reshape(1, took.size)
        pool = flat.expand_axis(0, 3)            # broadcast rows
        mixed = pool.permute(1, 0)               # transpose
        s = mixed.logsumexp(axis=0).sum()        # logsumexp, sum
        eps = SeededRng(0, "sweep")
        z = reparam_sample(ta, tc_, eps)         # reparameterization
        return s + z.mean() + ta.mean(axis=0).sum()

    check_grads(build, [a, b, c], rtol=1e-3, atol=1e-6)


def _tiny_model_setup():
    # V=40 split 20/20, k=4 per hemisphere, round-robin assignment
    hemi = np.array(["L"] * 20 + ["R"] * 20)
    assignment = np.concatenate([np.arange(20) % 4, np.arange(20) % 4])
    ca = ClusterAssignment(4, assignment, "structural", 0, hemi)
    cfg = ModelConfig(n_factors=3, encoder_output=8, k_clusters=4,
                      embed_dim=8, encoder_feature_sizes=(4, 2),
                      decoder_feature_sizes=(4, 8), gru_hidden=8,
                      patch_hidden=4, beta=1.0)
    model = Model(cfg, ca, seed=1)
    x = SeededRng(2, "x").standard_normal((6, 40))
    return model, x


def test_criterion_01_gradient_integrity(capsys):
    start = time.time()
    _op_sweep()
    model, x = _tiny_model_setup()

    def loss_value():
        factors, xhat = model.forward(x, rng=SeededRng(0, "fd"))
        return objective(Tensor(x), xhat, factors, 1.0)[0].item()

    with Tape() as tape:
        factors, xhat = model.forward(x, rng=SeededRng(0, "fd"))
        total, _ = objective(Tensor(x), xhat, factors, 1.0)
    tape.backward(total)

    h = 1e-5
    worst = 0.0
    n_checked = 0
    for name, p in model.params.items():
        analytic = p.grad
        assert analytic is not None, name
        numeric = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_value()
            flat[i] = orig - h
            lo = loss_value()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * h)
        scaled = np.abs(analytic - numeric) / (1e-6 + 1e-3 * np.abs(numeric))
        worst = max(worst, float(scaled.max()))
        n_checked += flat.size
    elapsed = time.time() - start
    ok = worst < 1.0 and elapsed < 60.0
    _report(capsys, 1, "gradient integrity", ok,
            f"{n_checked} parameters end-to-end at V=40/k=4/T=6, worst "
            f"scaled err {worst:.3f} (<1 means rel err < 1e-3), "
            f"op sweep passed, {elapsed:.1f}s (< 60s)")


# -- 02: loss analytics ----------------------------------------------------


def test_criterion_02_loss_analytics(capsys):
    kl = kl_to_standard_normal(Tensor(np.ones((1, 1))),
                               Tensor(np.zeros((1, 1)))).item()
    single = total_correlation(
        Tensor(np.zeros((64, 1))), Tensor(np.zeros((64, 1))),
        Tensor(SeededRng(0, "z").standard_normal((64, 1)))).item()
    t = 64
    factorized = [total_correlation(
        Tensor(np.zeros((t, 2))), Tensor(np.zeros((t, 2))),
        Tensor(SeededRng(s, "z").standard_normal((t, 2)))).item()
        for s in range(20)]
    correlated = []
    for seed in range(20):
        rng = SeededRng(seed, "tccorr")
        a = rng.standard_normal((t, 1))
        mu = np.concatenate([a, a], axis=1)
        ls = np.full((t, 2), np.log(0.1))
        z = mu + np.exp(ls) * rng.standard_normal((t, 2))
        correlated.append(total_correlation(Tensor(mu), Tensor(ls),
                                            Tensor(z)).item())
    ok = (kl == 0.5 and single == 0.0
          and abs(np.mean(factorized)) < 0.05 and np.mean(correlated) > 0.2)
    _report(capsys, 2, "loss analytics", ok,
            f"KL(N(1,1)||N(0,1))={kl}, single-factor TC={single}, "
            f"factorized TC mean {np.mean(factorized):.2e} (<0.05), "
            f"correlated TC mean {np.mean(correlated):.3f} (>0.2)")


# -- 03: decomposition identity --------------------------------------------


def test_criterion_03_decomposition_identity(capsys):
    mu, sig = test_loss.correlated_posteriors()
    lhs, mi, tc, dimkl = test_loss.brute_force_decomposition(mu, sig)
    rel = abs(lhs - (mi + tc + dimkl)) / lhs
    ok = rel < 0.02 and tc > 0 and mi > 0 and dimkl >= 0
    _report(capsys, 3, "KL decomposition identity", ok,
            f"E[KL]={lhs:.4f} vs MI+TC+dimKL={mi + tc + dimkl:.4f}, "
            f"relative gap {rel:.4f} (< 0.02)")


# -- 04: planted partitions and patch round-trip ---------------------------


def test_criterion_04_spectral_clustering(capsys):
    # two cliques
    a = np.zeros((8, 8))
    a[:4, :4] = 0.9
    a[4:, 4:] = 0.9
    np.fill_diagonal(a, 0.0)
    cliq = spectral_cluster_hemisphere(test_spectral._adj(a), 2, seed=0)
    ari_cliques = test_spectral._adjusted_rand(
        np.repeat([0, 1], 4), cliq)

    # three blobs chained on a line graph
    rng = np.random.default_rng(2)
    n, g = 30, 10
    truth = np.repeat([0, 1, 2], g)
    b = np.where(truth[:, None] == truth[None, :], 0.9, 0.05)
    b = b + rng.uniform(0, 0.01, (n, n))
    b = 0.5 * (b + b.T)
    np.fill_diagonal(b, 0.0)
    blobs = spectral_cluster_hemisphere(test_spectral._adj(np.clip(b, 0, 1)),
                                        3, seed=1)
    ari_blobs = test_spectral._adjusted_rand(truth, blobs)

    # exact patch round-trip on a real clustering, both hemispheres
    ds = generate(SynthConfig(vertices_per_hemisphere=42, n_subjects=3,
                              seed=5))
    ca = _cluster_small(ds)
    x = SeededRng(1, "p").standard_normal(84)
    out = np.zeros(84)
    for hemi in ("L", "R"):
        unpatchify(patchify(x, ca, hemi), ca, hemi, out=out)
    roundtrip = np.array_equal(out, x)

    ok = (ari_cliques == pytest.approx(1.0)
          and ari_blobs == pytest.approx(1.0) and roundtrip)
    _report(capsys, 4, "planted partitions", ok,
            f"ARI cliques {ari_cliques:.3f}, ARI blobs {ari_blobs:.3f} "
            f"(both 1.0), patch round-trip exact: {roundtrip}")


def _cluster_small(ds):
    adj = {h: structural_adjacency(geodesic_distances(ds.mesh, h),
                                   ds.mesh.vertex_ids(h))
           for h in ("L", "R")}
    return cluster_mesh(ds.mesh, adj["L"], adj["R"], 4, "structural", 0)


# -- 05: ICA separation -----------------------------------------------------


def test_criterion_05_ica_separation(capsys):
    a2 = np.array([[2.0, 1.0], [1.0, 1.0]])
    x2, _ = test_ica.laplacian_mixture(4000, a2, seed=0)
    m2 = fit_ica(x2, 2, seed=1)
    amari2 = amari_index(m2.unmixing @ m2.whitening.matrix @ a2)

    rng = np.random.default_rng(7)
    a8 = rng.normal(size=(8, 8))
    x8, _ = test_ica.laplacian_mixture(8000, a8, seed=8)
    m8 = fit_ica(x8, 8, seed=1)
    amari8 = amari_index(m8.unmixing @ m8.whitening.matrix @ a8)

    ds = generate(SynthConfig(vertices_per_hemisphere=162, noise_sigma=0.0,
                              n_subjects=12, seed=3))
    tcs, _ = ica_factors_and_maps(ds, n_components=5, seed=0)
    refs = reference_timecourses(ds.design)
    per_subject = []
    for i in range(len(ds.subjects)):
        best = []
        for ref in refs:
            rc = ref - ref.mean()
            cs = []
            for j in range(tcs.shape[2]):
                tj = tcs[i, :, j] - tcs[i, :, j].mean()
                cs.append(abs(float(rc @ tj))
                          / (np.linalg.norm(rc) * np.linalg.norm(tj)))
            best.append(max(cs))
        per_subject.append(np.mean(best))
    ceiling = float(np.mean(per_subject))

    ok = amari2 < 0.05 and amari8 < 0.15 and ceiling >= 0.95
    _report(capsys, 5, "ICA separation", ok,
            f"Amari 2-source {amari2:.4f} (<0.05), 8-source {amari8:.4f} "
            f"(<0.15), clean-data mean |corr| {ceiling:.4f} (>=0.95)")


# -- 06: parameter counts ----------------------------------------------------


def test_criterion_06_parameter_counts(capsys):
    cfg = ModelConfig()
    ca = test_model.paper_scale_assignment()
    mixer = Model(cfg, ca, seed=0).count_parameters()
    dense = count_parameters(baseline_params(5500, 5500, cfg))
    ratio = dense / mixer
    ok = (abs(mixer - 4.15e5) <= 0.2 * 4.15e5
          and abs(dense - 3.2e6) <= 0.2 * 3.2e6 and ratio >= 7.0)
    _report(capsys, 6, "parameter counts", ok,
            f"mixer {mixer} (4.15e5 +-20%), dense {dense} (3.2e6 +-20%), "
            f"ratio {ratio:.1f}x (>=7)")


# -- 07: beta trend on the standard benchmark -------------------------------


def test_criterion_07_beta_trend(capsys, linear_runs):
    high = [linear_runs[(1.0, s)][1] for s in BENCH_SEEDS]
    low = [linear_runs[(0.0, s)][1] for s in BENCH_SEEDS]
    gap = float(np.mean(high) - np.mean(low))
    ok = gap >= 0.05
    _report(capsys, 7, "temporal independence helps", ok,
            f"beta=1.0 mean |corr| {np.mean(high):.4f} "
            f"(seeds {[round(v, 3) for v in high]}), beta=0.0 "
            f"{np.mean(low):.4f} (seeds {[round(v, 3) for v in low]}), "
            f"gap {gap:.4f} (>= 0.05)")


# -- 08: model vs ICA on nonlinear data --------------------------------------


def test_criterion_08_model_beats_ica_on_tanh(capsys, tanh_benchmark):
    ds, ca = tanh_benchmark
    model_scores = [_train_point(ds, ca, 1.0, seed)[1]
                    for seed in BENCH_SEEDS]
    tcs, _ = ica_factors_and_maps(ds, n_components=16, seed=0)
    test_idx = [i for i, s in enumerate(ds.subjects) if s.split == "test"]
    refs = reference_timecourses(ds.design)
    _, ica_score = subtask_correlation(tcs[test_idx].mean(axis=0), refs,
                                       names=list(ds.design.subtasks))
    model_mean = float(np.mean(model_scores))
    ok = model_mean >= ica_score
    _report(capsys, 8, "sequential model vs ICA on tanh mixing", ok,
            f"model beta=1.0 mean |corr| {model_mean:.4f} "
            f"(seeds {[round(v, 3) for v in model_scores]}) vs ICA "
            f"{ica_score:.4f}")


# -- 09: traversal maps -------------------------------------------------------


def test_criterion_09_traversal_maps(capsys, linear_benchmark, linear_runs):
    # analytic oracle: linear decoder z -> z W rows give maps prop to W[:,j]^2
    rng = np.random.default_rng(3)
    w = rng.uniform(0.3, 1.0, size=(4, 9)) * rng.choice([-1, 1], size=(4, 9))
    maps = traversal_spatial_maps(lambda z: z @ w, 4, threshold=0.0)
    expected = w ** 2 / (w ** 2).max(axis=1, keepdims=True)
    analytic_err = float(np.abs(maps - expected).max())

    # trained-model maps against the planted sources
    ds, _ = linear_benchmark
    model = linear_runs[(1.0, 0)][0]
    learned = traversal_spatial_maps(model_decoder(model),
                                     model.cfg.n_factors)
    planted = ds.ground_truth.maps
    jaccards = []
    for s in range(planted.shape[0]):
        truth = planted[s] >= 0.1
        best = 0.0
        for j in range(learned.shape[0]):
            got = learned[j] > 0
            inter = float(np.logical_and(truth, got).sum())
            union = float(np.logical_or(truth, got).sum())
            if union > 0:
                best = max(best, inter / union)
        jaccards.append(best)
    mean_jaccard = float(np.mean(jaccards))

    ok = analytic_err < 1e-8 and mean_jaccard > 0.5
    _report(capsys, 9, "traversal maps", ok,
            f"linear-decoder oracle max err {analytic_err:.2e} (<1e-8), "
            f"best-factor Jaccard per source "
            f"{[round(v, 3) for v in jaccards]}, mean {mean_jaccard:.3f} "
            f"(> 0.5)")


# -- 10: HRF and band-pass ----------------------------------------------------


def test_criterion_10_hrf_and_bandpass(capsys):
    dt = 0.1
    h = canonical_hrf(dt)
    peak_t = float(np.argmax(h) * dt)
    t = np.arange(h.size) * dt
    undershoot = float(h[(t >= 10.0) & (t <= 20.0)].min())

    frames = np.arange(200) * 1.0
    inband = np.sin(2 * np.pi * 0.05 * frames)
    outband = np.sin(2 * np.pi * 0.30 * frames)
    pass_gain = float(np.abs(bandpass(inband, tr=1.0)).max())
    stop_gain = float(np.abs(bandpass(outband, tr=1.0)).max())

    ok = (abs(peak_t - 5.0) <= 0.2 and undershoot < 0.0
          and 0.95 <= pass_gain <= 1.0 + 1e-9 and stop_gain <= 0.05)
    _report(capsys, 10, "hemodynamics and band-pass", ok,
            f"peak {peak_t:.2f}s (5.0 +- 0.2), undershoot {undershoot:.4f} "
            f"(<0), pass gain {pass_gain:.4f} (>=0.95), stop gain "
            f"{stop_gain:.4f} (<=0.05)")


# -- 11: pipeline determinism -------------------------------------------------


def _pipeline(root, train_config):
    ds, cl, tr, ev = (os.path.join(root, name)
                      for name in ("ds", "cl", "tr", "ev"))
    assert cli_main(["synth", "--out", ds, "--seed", "42",
                     "--subjects", "6", "--vertices", "42"]) == 0
    assert cli_main(["cluster", "--dataset", ds, "--out", cl,
                     "--k", "8", "--seed", "0"]) == 0
    assert cli_main(["train", "--dataset", ds, "--clusters", cl,
                     "--out", tr, "--seed", "42",
                     "--config", train_config]) == 0
    assert cli_main(["eval", "--dataset", ds, "--clusters", cl,
                     "--checkpoint", os.path.join(tr, "checkpoint.svae"),
                     "--out", ev]) == 0
    files = {}
    for sub in ("ds", "cl", "tr", "ev"):
        base = os.path.join(root, sub)
        for name in sorted(os.listdir(base)):
            if name.endswith((".svae", ".csv", ".fts")):
                with open(os.path.join(base, name), "rb") as f:
                    files[f"{sub}/{name}"] = f.read()
    return files


def test_criterion_11_pipeline_determinism(capsys, tmp_path):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({
        "n_factors": 4, "encoder_output": 16, "embed_dim": 16,
        "encoder_feature_sizes": [8, 4, 2, 1, 1, 1],
        "decoder_feature_sizes": [1, 1, 2, 4, 8, 16],
        "gru_hidden": 16, "patch_hidden": 16,
        "batch_size": 2, "epochs": 2}))
    first = _pipeline(str(tmp_path / "a"), str(config))
    second = _pipeline(str(tmp_path / "b"), str(config))
    same = sorted(name for name in first if first[name] == second[name])
    diff = sorted(name for name in first if first[name] != second[name])
    ok = set(first) == set(second) and not diff
    _report(capsys, 11, "pipeline determinism", ok,
            f"{len(same)} checkpoint/CSV/timeseries artifacts "
            f"bitwise-identical across two seed-42 runs"
            + (f"; differing: {diff}" if diff else ""))
