"""Acceptance suite: one PASS/FAIL line per criterion, then the assertion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are repeated in the terminal summary either way.
"""
import os
import time

import numpy as np
import pytest

from mmgr.consensus import ScoreMatrix, aggregate, predict_label
from mmgr.fusion import FusionSpec, PipelineConfig, StreamScore, fuse_scores, pipeline_predict
from mmgr.layers import conv2d, conv3d, fully_connected, maxpool3d
from mmgr.metrics import PredictionSet, accuracy, change_analysis
from mmgr.optim import OptimizerState, clip_gradient, sgd_step
from mmgr.streams import StreamConfig, StreamModel
from mmgr.tensor import l2_norm
from mmgr.video import make_samples

from gradcheck import LAYER_KINDS, check_cross_entropy, check_kind
from oracles import conv_nd_loops, dense_loops, maxpool_loops
from workflow import full_workflow

CASES = 20
ORACLE_CONFIGS = 50
TRIALS = 1000


# -- 1: gradients ----------------------------------------------------------------

def test_gradients_match_finite_differences(f64, report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {k: max(check_kind(k, rng) for _ in range(CASES)) for k in LAYER_KINDS}
    worst["cross_entropy"] = max(check_cross_entropy(rng) for _ in range(CASES))
    elapsed = time.perf_counter() - t0
    kind, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-5 and elapsed < 120
    report(1, "analytic vs finite-difference gradients", ok,
           f"{len(worst)} kinds x {CASES} shapes, worst {kind} rel err {err:.2e}, {elapsed:.1f}s")
    assert ok, worst


# -- 2: kernel oracles -------------------------------------------------------------

def _conv_case(rng, nd):
    C, K = (int(v) for v in rng.integers(1, 4, 2))
    k = tuple(int(v) for v in rng.integers(1, 4, nd))
    s = tuple(int(v) for v in rng.integers(1, 3, nd))
    p = tuple(int(v) for v in rng.integers(0, 2, nd))
    # pick the output extent, then the input size that yields it exactly
    sp = []
    for ki, si, pi in zip(k, s, p):
        o = int(rng.integers(1, 5))
        while (o - 1) * si + ki - 2 * pi < 1:
            o += 1
        sp.append((o - 1) * si + ki - 2 * pi)
    sp = tuple(sp)
    x = rng.standard_normal((C,) + sp)
    w = rng.standard_normal((K, C) + k)
    b = rng.standard_normal(K)
    fn = conv2d if nd == 2 else conv3d
    return np.max(np.abs(fn(x, w, b, s, p) - conv_nd_loops(x, w, b, s, p)))


def _pool_case(rng):
    window = tuple(int(v) for v in rng.integers(1, 4, 3))
    sp = tuple(int(w * rng.integers(1, 3) + rng.integers(0, 2)) for w in window)
    x = rng.standard_normal((int(rng.integers(1, 4)),) + sp)
    return np.max(np.abs(maxpool3d(x, window) - maxpool_loops(x, window)))


def _dense_case(rng):
    n_in, n_out = (int(v) for v in rng.integers(1, 40, 2))
    x, w, b = rng.standard_normal(n_in), rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out)
    return np.max(np.abs(fully_connected(x, w, b) - dense_loops(x, w, b)))


def test_kernels_match_loop_oracles(f64, report):
    rng = np.random.default_rng(202)
    cases = {"conv2d": lambda: _conv_case(rng, 2), "conv3d": lambda: _conv_case(rng, 3),
             "maxpool3d": lambda: _pool_case(rng), "fully_connected": lambda: _dense_case(rng)}
    t0 = time.perf_counter()
    worst = {name: max(fn() for _ in range(ORACLE_CONFIGS)) for name, fn in cases.items()}
    elapsed = time.perf_counter() - t0
    err = max(worst.values())
    ok = err < 1e-6 and elapsed < 60
    report(2, "kernels vs nested-loop oracles", ok,
           f"{ORACLE_CONFIGS} configs each, max abs err {err:.2e}, {elapsed:.1f}s")
    assert ok, worst


# -- 3: update rule ------------------------------------------------------------------

def _sgd_examples():
    errs = []
    theta, st = np.array([1.0]), OptimizerState([np.zeros(1)], momentum=0.0, base_lr=0.1)
    sgd_step([theta], [np.array([0.5])], st)
    errs += [abs(st.velocities[0][0] + 0.05), abs(theta[0] - 0.95)]

    theta, st = np.array([1.0]), OptimizerState([np.array([-0.1])], momentum=0.9, base_lr=3.7)
    sgd_step([theta], [np.zeros(1)], st)
    errs += [abs(st.velocities[0][0] + 0.09), abs(theta[0] - 0.91)]

    theta = np.array([1.0])
    st = OptimizerState([np.zeros(1)], momentum=0.0, base_lr=0.1, weight_decay=0.1)
    sgd_step([theta], [np.zeros(1)], st)
    errs.append(abs(theta[0] - 0.99))
    return max(errs)


def _clip_error(rng):
    worst = 0.0
    for _ in range(TRIALS):
        grads = [rng.standard_normal(tuple(rng.integers(1, 5, rng.integers(1, 4)))) *
                 10 ** rng.uniform(-2, 2) for _ in range(int(rng.integers(1, 5)))]
        c = float(10 ** rng.uniform(-1, 2))
        before = np.sqrt(sum(l2_norm(g) ** 2 for g in grads))
        after = np.sqrt(sum(l2_norm(g) ** 2 for g in clip_gradient(grads, c)))
        worst = max(worst, abs(after - min(before, c)))
    return worst


def test_update_rule_exactness(f64, report):
    sgd_err = _sgd_examples()
    clip_err = _clip_error(np.random.default_rng(303))
    ok = sgd_err < 1e-12 and clip_err < 1e-6
    report(3, "sgd_step closed forms and clip norm", ok,
           f"sgd max err {sgd_err:.1e}, clip max err {clip_err:.1e} over {TRIALS} draws")
    assert ok


# -- 4: consensus properties ------------------------------------------------------------

def _prob_matrix(rng):
    l, T = int(rng.integers(2, 10)), int(rng.integers(1, 12))
    m = rng.random((l, T)) + 1e-3
    return m / m.sum(axis=0, keepdims=True)


def _consensus_trial(rng):
    m = _prob_matrix(rng)
    l, T = m.shape
    failures = []
    perm = rng.permutation(T)
    for h in ("max", "mean"):
        if not np.allclose(aggregate(m[:, perm], h), aggregate(m, h), atol=1e-12):
            failures.append(f"permutation/{h}")
        if predict_label(aggregate(m[:, perm], h)) != predict_label(aggregate(m, h)):
            failures.append(f"permuted label/{h}")
    dup = np.column_stack([m, m[:, rng.integers(T, size=int(rng.integers(1, 4)))]])
    if not np.array_equal(aggregate(dup, "max"), aggregate(m, "max")):
        failures.append("duplication/max")
    if not np.allclose(aggregate(np.hstack([m] * int(rng.integers(2, 4))), "mean"),
                       aggregate(m, "mean"), atol=1e-12):
        failures.append("duplication/mean")
    col = m[:, :1]
    if not (np.array_equal(aggregate(col, "max"), col[:, 0]) and
            np.allclose(aggregate(col, "mean"), col[:, 0], atol=1e-15)):
        failures.append("T=1")
    mean = aggregate(ScoreMatrix(m), "mean")
    if abs(mean.sum() - 1) > 1e-4 or mean.min() < 0:
        failures.append("mean not a probability vector")
    # a tie at the top must resolve to the lowest tied index
    v = rng.random(l)
    tied = np.sort(rng.choice(l, size=int(rng.integers(2, l + 1)), replace=False))
    v[tied] = v.max() + 1
    if predict_label(v) != tied[0]:
        failures.append("tie-break")
    return failures


def test_consensus_properties(report):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    failures = [f for _ in range(TRIALS) for f in _consensus_trial(rng)]
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 30
    report(4, "consensus aggregation properties", ok,
           f"{TRIALS} trials, {len(failures)} violations, {elapsed:.1f}s")
    assert ok, failures[:5]


# -- 5: fusion properties ------------------------------------------------------------------

def _fusion_trial(rng):
    k, n, l = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(2, 8))
    ids = [f"v{i}" for i in range(n)]
    rows = rng.standard_normal((k, n, l)) * 3
    streams = [StreamScore(f"s{i}", ids, rows[i]) for i in range(k)]
    tags = [s.tag for s in streams]
    w = rng.uniform(0.1, 5, k)
    failures = []
    base = fuse_scores(streams, FusionSpec(tags, w))
    scaled = fuse_scores(streams, FusionSpec(tags, w * float(10 ** rng.uniform(-2, 2))))
    if not np.allclose(base.scores, scaled.scores, atol=1e-9) or base.predictions() != scaled.predictions():
        failures.append("rescaling")
    if np.any(base.scores < rows.min(axis=0) - 1e-12) or np.any(base.scores > rows.max(axis=0) + 1e-12):
        failures.append("convex hull")
    j = int(rng.integers(k))
    one_hot = np.zeros(k)
    one_hot[j] = 1.0
    if not np.array_equal(fuse_scores(streams, FusionSpec(tags, one_hot)).scores, rows[j]):
        failures.append("single-stream reduction")
    one_hot[j] = float(rng.uniform(0.1, 5))
    if not np.allclose(fuse_scores(streams, FusionSpec(tags, one_hot)).scores, rows[j],
                       rtol=0, atol=1e-12):
        failures.append("single-stream reduction, scaled weight")
    return failures


def test_fusion_properties(f64, report):
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    failures = [f for _ in range(TRIALS) for f in _fusion_trial(rng)]
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 30
    report(5, "late fusion properties", ok,
           f"{TRIALS} trials, {len(failures)} violations, {elapsed:.1f}s")
    assert ok, failures[:5]


# -- 6: 3D depth stream learns ------------------------------------------------------------------

@pytest.mark.slow
def test_depth_stream_learns(report):
    train = make_samples(8, 25, 32, 64, seed=3, split="train")
    test = make_samples(8, 5, 32, 64, seed=3, split="test")
    cfg = StreamConfig(modality="depth", num_classes=8, input_size=64, hflip_votes=False,
                       lr=0.01, epochs=30, batch_size=8)
    model = StreamModel(cfg)
    seen = {}

    def stop(epoch, stats):
        if epoch % 3 and epoch != cfg.epochs:
            return False
        seen.update(epoch=epoch, train=model.accuracy(train), test=model.accuracy(test))
        return seen["train"] >= 0.95 and seen["test"] >= 0.80

    t0 = time.perf_counter()
    model.fit(train, stop=stop)
    elapsed = time.perf_counter() - t0
    ok = seen["train"] >= 0.95 and seen["test"] >= 0.80 and elapsed < 1800
    report(6, "3D depth stream end-to-end learning", ok,
           f"epoch {seen['epoch']}: train {seen['train']:.3f}, held-out {seen['test']:.3f}, "
           f"{elapsed / 60:.1f} min on {_cores()} core(s)")
    assert ok, seen


def _cores():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


# -- 7: flow consensus beats a single centre frame ----------------------------------------------

@pytest.mark.slow
def test_flow_consensus_beats_centre_frame(report):
    train = make_samples(8, 15, 32, 32, seed=1, split="train")
    test = make_samples(8, 5, 32, 32, seed=1, split="test")
    budget = dict(num_classes=8, input_size=32, hflip_votes=False, lr=0.01, lr_step=10 ** 6,
                  epochs=15, batch_size=8, seed=0)
    flow = StreamModel(StreamConfig(modality="flow", segments=5, agg="max", flow_iters=100, **budget))
    rgb = StreamModel(StreamConfig(modality="rgb", segments=1, sampling="centre", **budget))
    acc = {}
    t0 = time.perf_counter()
    for name, model in (("flow", flow), ("rgb", rgb)):
        for s in train + test:
            model.prepare(s)
        model.fit(train)
        acc[name] = {h: model.accuracy(test, h) for h in ("max", "mean")}
    elapsed = time.perf_counter() - t0
    gap = acc["flow"]["max"] - acc["rgb"]["max"]
    ok = gap >= 0.15
    report(7, "flow K=5 voting vs centre-frame rgb", ok,
           f"flow max/mean {acc['flow']['max']:.3f}/{acc['flow']['mean']:.3f}, "
           f"rgb {acc['rgb']['max']:.3f}, gap {100 * gap:.1f} pp, {elapsed / 60:.1f} min")
    assert ok, acc


# -- 8: fusion helps -------------------------------------------------------------------------------

@pytest.mark.slow
def test_fusion_helps(report):
    kw = dict(frames=32, size=32, rgb_noise=0.3)
    train = make_samples(8, 20, seed=5, split="train", **kw)
    test = make_samples(8, 5, seed=5, split="test", **kw)
    models = {}
    t0 = time.perf_counter()
    for modality, epochs in (("rgb", 10), ("depth", 20), ("saliency", 20)):
        cfg = StreamConfig(modality=modality, num_classes=8, input_size=32, lr=0.01,
                           lr_step=10 ** 6, hflip_votes=False, epochs=epochs, seed=0)
        models[modality] = StreamModel(cfg)
        models[modality].fit(train)
    truth = {s.sample_id: s.label for s in test}
    results = [pipeline_predict(s, models, PipelineConfig()) for s in test]

    def as_set(labels):
        return PredictionSet.from_mappings(truth, dict(zip(truth, labels)), 8)

    fused = as_set([r.label for r in results])
    single = {m: as_set([predict_label(r.streams[m]) for r in results]) for m in models}
    acc = {m: accuracy(p) for m, p in single.items()}
    change = change_analysis(single["rgb"], fused)
    ok = accuracy(fused) >= max(acc.values()) and change.total_correct >= change.total_error
    per = ", ".join(f"{m} {a:.3f}" for m, a in acc.items())
    report(8, "fusion vs single streams", ok,
           f"fused {accuracy(fused):.3f} vs {per}; changes vs rgb: "
           f"{change.total_correct} corrected, {change.total_error} broken, "
           f"{(time.perf_counter() - t0) / 60:.1f} min")
    assert ok


# -- 9: determinism --------------------------------------------------------------------------------

def _artifacts(root):
    files = full_workflow(root)
    return {f.relative_to(root): f.read_bytes() for f in files
            if f.suffix in (".csv", ".ckpt")}


def test_cli_workflow_is_byte_identical(tmp_path, monkeypatch, report):
    monkeypatch.setenv("MMGR_THREADS", "1")
    a = _artifacts(tmp_path / "a")
    b = _artifacts(tmp_path / "b")
    monkeypatch.setenv("MMGR_THREADS", "2")
    c = _artifacts(tmp_path / "c")
    differ = sorted(str(p) for p in a if a[p] != b.get(p) or a[p] != c.get(p))
    ok = a.keys() == b.keys() == c.keys() and not differ
    n_ckpt = sum(p.suffix == ".ckpt" for p in a)
    report(9, "repeated CLI workflow is byte-identical", ok,
           f"{len(a)} files ({n_ckpt} checkpoints) over 3 runs, 1 and 2 threads, "
           f"{len(differ)} differ")
    assert ok, differ
