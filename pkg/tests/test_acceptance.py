"""Acceptance criteria, one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Timers cover the criterion's computation; fixture-weight generation
happens in untimed setup.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import (
    batchnorm_oracle,
    conv2d_oracle,
    layernorm_oracle,
    maxpool_oracle,
    png_bytes,
    service_toy_net,
    tiny_gap_net,
)

from cxrkit.evalmetrics import CLASS_LABELS, ManifestEntry, binary_auc, per_class_metrics, stratified_split
from cxrkit.explain import (
    ActivationStack,
    cam_combine,
    gap_head_weights,
    gap_input_layer,
    heatmap_to_png,
    render_heatmap,
    score_cam_weights,
)
from cxrkit.fixtures import random_weight_store, write_fixture
from cxrkit.imagecore import ClaheParams, NormalizationStats, decode_image, inference_preprocess
from cxrkit.models import build_convnext_tiny, build_resnet18
from cxrkit.nn import (
    batchnorm,
    conv2d,
    count_flops,
    count_params,
    graph_execute,
    layernorm,
    linear,
    load_weights,
    maxpool,
    save_weights,
    softmax,
)
from cxrkit.service import ServiceSettings, create_app, model_from_store


def report(name, elapsed, bound):
    print(f"ACCEPTANCE PASS: {name} ({elapsed:.2f}s < {bound:.0f}s)")
    assert elapsed < bound, f"{name} exceeded its {bound}s runtime bound"


@pytest.fixture(scope="module")
def resnet1000():
    g = build_resnet18(1000)
    return g, random_weight_store(g, 7, "resnet18")


@pytest.fixture(scope="module")
def convnext1000():
    g = build_convnext_tiny(1000)
    return g, random_weight_store(g, 7, "convnext_tiny")


def test_published_split_counts_reproduced():
    """Stratified split reproduces every cell of the published count grid,
    for any seed, in under a second."""
    entries = []
    for label, n in zip(CLASS_LABELS, (838, 858, 816, 833)):
        entries.extend(ManifestEntry(path=f"{label}/{i}", label=label) for i in range(n))
    started = time.perf_counter()
    for seed in (0, 7, 123456789):
        train, val, test = stratified_split(entries, ratios=(0.8, 0.1, 0.1), seed=seed)

        def counts(rows):
            return tuple(sum(1 for e in rows if e.label == lb) for lb in CLASS_LABELS)

        assert counts(train) == (670, 686, 652, 666)
        assert counts(val) == (83, 85, 81, 83)
        assert counts(test) == (85, 87, 83, 84)
        assert (len(train), len(val), len(test)) == (2674, 332, 339)
    report("published split counts reproduced (exact, seed-independent)",
           time.perf_counter() - started, 1.0)


def test_published_parameter_counts(resnet1000, convnext1000):
    g1, s1 = resnet1000
    g2, s2 = convnext1000
    started = time.perf_counter()
    resnet_params = count_params(g1, s1)
    convnext_params = count_params(g2, s2)
    assert resnet_params == 11_689_512
    assert abs(convnext_params - 28.6e6) <= 0.01 * 28.6e6
    report(f"published parameter counts (resnet18={resnet_params}, "
           f"convnext_tiny={convnext_params})", time.perf_counter() - started, 1.0)


def test_published_flops(resnet1000, convnext1000):
    g1, _ = resnet1000
    g2, _ = convnext1000
    started = time.perf_counter()
    f1 = count_flops(g1)
    f2 = count_flops(g2)
    assert abs(f1 - 1.81e9) / 1.81e9 < 0.03
    assert abs(f2 - 4.46e9) / 4.46e9 < 0.03
    report(f"published FLOPs (resnet18={f1 / 1e9:.3f}G, convnext_tiny={f2 / 1e9:.3f}G, "
           "MAC-as-1-FLOP)", time.perf_counter() - started, 1.0)


def test_published_accuracy_not_reproducible_at_desk_scale():
    """The published 88.20% accuracy / 0.9218 AUC / 0.8824 F1 and the
    training-loss curves need the original non-public mycoplasma images and
    trained weights; the operator/metric/explainability property suites
    below stand in for them."""
    print("ACCEPTANCE NOTE: the published accuracy/AUC/F1 and loss curves are out "
          "of desk-scale reach (non-public data and weights); property suites "
          "substitute.")


def test_operator_oracle_suite():
    rng = np.random.default_rng(100)
    started = time.perf_counter()

    def rel_ok(a, b, tol=1e-5):
        return (np.abs(a - b) / np.maximum(np.abs(b), 1e-3)).max() <= tol

    for _ in range(100):
        groups = int(rng.choice([1, 1, 2]))
        cg, ocg = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.choice([1, 2, 3]))
        stride, pad = int(rng.choice([1, 2])), int(rng.choice([0, 1]))
        h, w = int(rng.integers(k, 7)), int(rng.integers(k, 7))
        x = rng.normal(size=(1, cg * groups, h, w)).astype(np.float32)
        wt = rng.normal(size=(ocg * groups, cg, k, k)).astype(np.float32)
        assert rel_ok(conv2d(x, wt, stride=stride, padding=pad, groups=groups),
                      conv2d_oracle(x, wt, stride=stride, padding=pad, groups=groups))

    for _ in range(100):
        k = int(rng.choice([1, 2, 3]))
        s, p = int(rng.choice([1, 2])), int(rng.choice([0, 1]))
        h, w = int(rng.integers(max(k - 2 * p, 1), 7)), int(rng.integers(max(k - 2 * p, 1), 7))
        x = rng.normal(size=(1, 2, h, w)).astype(np.float32)
        assert (maxpool(x, k, s, p) == maxpool_oracle(x, k, s, p)).all()

    for _ in range(100):
        x = rng.normal(size=(1, 3, 2, 2)).astype(np.float32)
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        mean, var = rng.normal(size=3), rng.uniform(0.1, 2, size=3)
        assert np.abs(batchnorm(x, gamma, beta, mean, var)
                      - batchnorm_oracle(x, gamma, beta, mean, var, 1e-5)).max() < 1e-5

    for _ in range(100):
        x = rng.normal(size=(1, 4, 2, 2)).astype(np.float32)
        gamma, beta = rng.normal(size=4), rng.normal(size=4)
        assert np.abs(layernorm(x, gamma, beta)
                      - layernorm_oracle(x, gamma, beta, 1e-6)).max() < 1e-5

    for _ in range(100):
        x = rng.normal(size=6).astype(np.float32)
        wt = rng.normal(size=(3, 6)).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        manual = np.array([sum(float(wt[i, j]) * float(x[j]) for j in range(6)) + float(b[i])
                           for i in range(3)])
        assert rel_ok(linear(x, wt, b), manual)

    # depthwise equivalence
    c = 5
    x = rng.normal(size=(1, c, 6, 6)).astype(np.float32)
    wt = rng.normal(size=(c, 1, 3, 3)).astype(np.float32)
    grouped = conv2d(x, wt, stride=1, padding=1, groups=c)
    for ci in range(c):
        assert rel_ok(grouped[:, ci:ci + 1], conv2d(x[:, ci:ci + 1], wt[ci:ci + 1], padding=1))

    report("operator oracle suite (conv/maxpool/batchnorm/layernorm/linear, "
           "100 random tensors each, depthwise equivalence)",
           time.perf_counter() - started, 30.0)


def test_metrics_oracle_suite():
    rng = np.random.default_rng(101)
    started = time.perf_counter()

    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n).astype(bool)
        if labels.all() or not labels.any():
            labels[0], labels[-1] = True, False
        scores = rng.integers(0, 10, size=n) / 4.0
        pos = [Fraction(int(s * 4), 4) for s, l in zip(scores, labels) if l]
        neg = [Fraction(int(s * 4), 4) for s, l in zip(scores, labels) if not l]
        total = sum((Fraction(1) if sp > sn else Fraction(1, 2) if sp == sn else Fraction(0))
                    for sp in pos for sn in neg)
        assert binary_auc(scores, labels) == float(total / (len(pos) * len(neg)))

    for _ in range(100):
        n = int(rng.integers(4, 40))
        labels = rng.integers(0, 2, size=n).astype(bool)
        if labels.all() or not labels.any():
            labels[0] = ~labels[0]
        scores = rng.normal(size=n)
        base = binary_auc(scores, labels)
        assert binary_auc(np.exp(scores), labels) == base
        assert binary_auc(5 * scores - 3, labels) == base

    for _ in range(200):
        cm = rng.integers(0, 12, size=(4, 4)).astype(np.int64)
        for c in range(4):
            m = per_class_metrics(cm, c)
            if m.precision + m.recall > 0:
                tp = cm[c, c]
                fp = cm[:, c].sum() - tp
                fn = cm[c].sum() - tp
                assert math.isclose(m.f1, 2 * tp / (2 * tp + fp + fn), rel_tol=1e-12)

    report("metrics oracle suite (exact pairwise AUC x1000, monotone invariance, "
           "F1 dual form)", time.perf_counter() - started, 10.0)


def test_explainability_suite():
    rng = np.random.default_rng(102)
    started = time.perf_counter()

    for _ in range(100):
        k = int(rng.integers(1, 6))
        stack = ActivationStack("l", rng.normal(size=(k, 4, 4)).astype(np.float32))
        from cxrkit.explain import CamWeights

        raw = cam_combine(stack, CamWeights(0, rng.normal(size=k), "x"))
        assert (raw >= 0).all()
        heat = render_heatmap(raw, 9, 9)
        assert heat.min() >= 0 and heat.max() <= 1
        if raw.max() > 0:
            assert heat.max() == 1.0

    g, store = tiny_gap_net()
    layer = gap_input_layer(g)
    x = rng.normal(size=(3, 14, 14)).astype(np.float32)
    _, acts = graph_execute(g, store, x, capture={layer})
    maps = acts[layer][0].astype(np.float64)
    head_w = store.tensors["fc.weight"].astype(np.float64)
    head_b = store.tensors["fc.bias"].astype(np.float64)
    eps = 1e-3
    for cls in range(4):
        w = gap_head_weights(g, store, cls)
        for k in range(maps.shape[0]):
            plus, minus = maps.copy(), maps.copy()
            plus[k, 0, 0] += eps
            minus[k, 0, 0] -= eps
            fd = ((head_w[cls] @ plus.mean(axis=(1, 2)) + head_b[cls])
                  - (head_w[cls] @ minus.mean(axis=(1, 2)) + head_b[cls])) / (2 * eps)
            assert abs(w.alpha[k] - fd) / max(abs(fd), 1e-6) < 1e-3

    full = score_cam_weights(g, store, x, layer, 1)
    capped = score_cam_weights(g, store, x, layer, 1, top_k=len(full.alpha))
    assert (full.alpha == capped.alpha).all()

    report("explainability suite (CAM non-negativity, analytic-vs-finite-difference "
           "GAP weights, Score-CAM top_k completeness, heatmap bounds)",
           time.perf_counter() - started, 60.0)


def test_pipeline_determinism(tmp_path):
    started = time.perf_counter()
    rng = np.random.default_rng(103)
    img = np.clip(rng.normal(120, 40, size=(180, 220)), 0, 255).astype(np.uint8)
    png = png_bytes(img)

    a = inference_preprocess(decode_image(png), ClaheParams(), NormalizationStats())
    b = inference_preprocess(decode_image(png), ClaheParams(), NormalizationStats())
    assert (a == b).all()

    path = tmp_path / "resnet18.cxrw"
    write_fixture("resnet18", seed=7, path=path)
    store = load_weights(path)
    g = build_resnet18(4)

    def end_to_end():
        gray = decode_image(png)
        tensor = inference_preprocess(gray, ClaheParams(), NormalizationStats())
        layer = gap_input_layer(g)
        logits, acts = graph_execute(g, store, tensor, capture={layer})
        probs = softmax(logits)
        weights = gap_head_weights(g, store, int(np.argmax(probs)))
        raw = cam_combine(ActivationStack(layer, acts[layer][0]), weights)
        heat = render_heatmap(raw, gray.shape[0], gray.shape[1])
        return probs.tobytes(), heatmap_to_png(heat)

    probs1, png1 = end_to_end()
    probs2, png2 = end_to_end()
    assert probs1 == probs2
    assert png1 == png2

    # CXRW round trip is bit-exact at both the array and file level
    path2 = tmp_path / "resnet18-2.cxrw"
    save_weights(store, path2)
    assert path.read_bytes() == path2.read_bytes()

    report("pipeline determinism (preprocess bitwise, end-to-end image->probs->"
           "heatmap PNG bitwise, CXRW round trip bit-exact)",
           time.perf_counter() - started, 10.0)


def test_service_integration():
    import jsonschema

    from test_service import CLASSIFY_SCHEMA, EXPLAIN_SCHEMA, HEALTH_SCHEMA, MODEL_SCHEMA

    started = time.perf_counter()
    g, store = service_toy_net()
    app = create_app(model_from_store(g, store), ServiceSettings())
    rng = np.random.default_rng(104)
    img = np.clip(rng.normal(110, 35, size=(100, 90)), 0, 255).astype(np.uint8)
    png = png_bytes(img)

    with TestClient(app) as client:
        r = client.post("/v1/classify", files={"image": ("x.png", png, "image/png")})
        assert r.status_code == 200
        jsonschema.validate(r.json(), CLASSIFY_SCHEMA)

        r = client.post("/v1/explain", files={"image": ("x.png", png, "image/png")},
                        data={"method": "score_cam"})
        assert r.status_code == 200
        jsonschema.validate(r.json(), EXPLAIN_SCHEMA)

        jsonschema.validate(client.get("/v1/model").json(), MODEL_SCHEMA)
        jsonschema.validate(client.get("/healthz").json(), HEALTH_SCHEMA)

        serial = client.post("/v1/classify", files={"image": ("x.png", png, "image/png")}).json()
        serial.pop("latency_ms")

        def one(_):
            body = client.post("/v1/classify",
                               files={"image": ("x.png", png, "image/png")}).json()
            body.pop("latency_ms")
            return body

        with ThreadPoolExecutor(max_workers=32) as pool:
            assert all(r == serial for r in pool.map(one, range(32)))

        r = client.post("/v1/classify", files={"image": ("x.png", png, "image/png")},
                        data={"clahe_clip": "0"})
        assert r.status_code == 400 and r.json()["error"] == "override_out_of_range"

    report("service integration (schema goldens on all four endpoints, 32-way "
           "concurrency equals serial, invalid override -> 400)",
           time.perf_counter() - started, 60.0)
