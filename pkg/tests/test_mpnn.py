"""Label thresholds, forward/backward correctness, training behaviour."""

import math

import numpy as np
import pytest

from nettwin import mpnn
from nettwin.telemetry import FeatureBundle


def random_bundle(rng, n_vertices=5, n_edges=8, bidirectional=False):
    if bidirectional:
        pairs = set()
        while len(pairs) < n_edges // 2:
            u = int(rng.integers(0, n_vertices))
            v = int(rng.integers(0, n_vertices))
            if u != v:
                pairs.add((min(u, v), max(u, v)))
        edges = sorted(pairs | {(v, u) for u, v in pairs})
    else:
        edges = []
        while len(edges) < n_edges:
            u = int(rng.integers(0, n_vertices))
            v = int(rng.integers(0, n_vertices))
            if u != v:
                edges.append((u, v))
    idx = np.array([[e[0] for e in edges], [e[1] for e in edges]])
    return FeatureBundle(
        vertex_ids=list(range(n_vertices)),
        edge_list=[tuple(e) for e in edges],
        x_vertices=rng.uniform(0, 100, (n_vertices, 3)),
        x_edges=rng.uniform(0, 100, (len(edges), 3)),
        edge_index=idx)


class TestLabelOracle:
    @pytest.mark.parametrize("pct,expected", [
        (80.0, 1), (75.0, 1), (100.0, 1),
        (74.999, 2), (50.0, 2), (60.0, 2),
        (49.999, 3), (25.0, 3), (30.0, 3),
        (24.999, 4), (0.0, 4), (10.0, 4),
    ])
    def test_thresholds(self, pct, expected):
        assert int(mpnn.label_oracle(pct)) == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            mpnn.label_oracle(-0.1)
        with pytest.raises(ValueError):
            mpnn.label_oracle(100.1)


class TestForward:
    def test_logit_shape(self):
        rng = np.random.default_rng(0)
        bundle = random_bundle(rng, n_vertices=5, n_edges=14)
        params = mpnn.init_params(seed=1)
        assert mpnn.forward(params, bundle).shape == (14, 4)

    def test_empty_in_neighbourhood_aggregates_to_zero(self):
        # vertex 0 sends on both edges but never receives: its aggregated
        # message is the zero vector, so its update only sees its own state
        bundle = FeatureBundle(
            vertex_ids=[0, 1, 2],
            edge_list=[(0, 1), (0, 2), (1, 2)],
            x_vertices=np.arange(9, dtype=float).reshape(3, 3),
            x_edges=np.arange(9, dtype=float).reshape(3, 3),
            edge_index=np.array([[0, 0, 1], [1, 2, 2]]))
        params = mpnn.init_params(seed=2)
        _, ctx = mpnn._forward_cached(params, bundle)
        cache = ctx["caches"][0]
        agg_v0 = cache["u_in"][0, 3:]
        assert np.allclose(agg_v0, 0.0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        bundle = random_bundle(rng, n_vertices=6, n_edges=12, bidirectional=True)
        params = mpnn.init_params(seed=4)
        logits = mpnn.forward(params, bundle)

        perm = rng.permutation(6)
        inv = {int(old): int(new) for old, new in enumerate(perm)}
        order = sorted(range(len(bundle.edge_list)),
                       key=lambda i: (inv[bundle.edge_list[i][0]],
                                      inv[bundle.edge_list[i][1]]))
        p_edges = [(inv[bundle.edge_list[i][0]], inv[bundle.edge_list[i][1]])
                   for i in order]
        p_xv = np.empty_like(bundle.x_vertices)
        for old, new in inv.items():
            p_xv[new] = bundle.x_vertices[old]
        p_bundle = FeatureBundle(
            vertex_ids=list(range(6)),
            edge_list=p_edges,
            x_vertices=p_xv,
            x_edges=bundle.x_edges[order],
            edge_index=np.array([[e[0] for e in p_edges], [e[1] for e in p_edges]]))
        p_logits = mpnn.forward(params, p_bundle)
        assert np.allclose(p_logits, logits[order], atol=1e-10)

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(5)
        bundle = random_bundle(rng)
        bundle.x_edges = bundle.x_edges[:-1]
        with pytest.raises(ValueError, match="edge features"):
            mpnn.forward(mpnn.init_params(seed=0), bundle)


class TestLoss:
    def test_uniform_logits(self):
        e = 10
        logits = np.zeros((e, 4))
        labels = np.ones(e, dtype=int)
        assert mpnn.loss(logits, labels) == pytest.approx(e * math.log(4))

    def test_hand_computed_single_edge(self):
        logits = np.array([[2.0, 0.0, 0.0, -1.0]])
        z = np.exp([2.0, 0.0, 0.0, -1.0])
        expected = -math.log(z[0] / z.sum())
        assert mpnn.loss(logits, [1]) == pytest.approx(expected)

    def test_confident_correct_is_near_zero(self):
        logits = np.full((5, 4), -50.0)
        logits[:, 2] = 50.0
        assert mpnn.loss(logits, [3] * 5) < 1e-6


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for trial in range(4):
            bundle = random_bundle(rng, n_vertices=4, n_edges=6)
            labels = rng.integers(1, 5, 6)
            params = mpnn.init_params(seed=trial)
            grads, _ = mpnn.grad(params, bundle, labels)
            h = 1e-5
            for name, w in params.weights.items():
                flat = w.reshape(-1)
                for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = mpnn.loss(mpnn.forward(params, bundle), labels)
                    flat[i] = orig - h
                    dn = mpnn.loss(mpnn.forward(params, bundle), labels)
                    flat[i] = orig
                    fd = (up - dn) / (2 * h)
                    an = grads[name].reshape(-1)[i]
                    assert abs(fd - an) <= 1e-4 * max(1e-8, abs(fd), abs(an)) + 1e-9

    def test_gradient_step_descends(self):
        rng = np.random.default_rng(12)
        bundle = random_bundle(rng)
        labels = rng.integers(1, 5, len(bundle.edge_list))
        params = mpnn.init_params(seed=3)
        grads, before = mpnn.grad(params, bundle, labels)
        for k, g in grads.items():
            params.weights[k] -= 1e-3 * g
        after = mpnn.loss(mpnn.forward(params, bundle), labels)
        assert after < before


class TestTraining:
    def test_zero_epochs_returns_init(self):
        rng = np.random.default_rng(13)
        sample = mpnn.TrainingSample(bundle=random_bundle(rng),
                                     labels=rng.integers(1, 5, 8))
        params = mpnn.train([sample], epochs=0, seed=9)
        init = mpnn.init_params(seed=9)
        for k in init.weights:
            assert np.array_equal(params.weights[k], init.weights[k])

    def test_overfits_single_sample(self):
        rng = np.random.default_rng(14)
        bundle = random_bundle(rng, n_vertices=5, n_edges=10)
        labels = rng.integers(1, 5, 10)
        sample = mpnn.TrainingSample(bundle=bundle, labels=labels)
        params = mpnn.train([sample], lr=0.02, epochs=500, seed=1)
        final = mpnn.loss(mpnn.forward(params, bundle), labels)
        assert final < 0.01 * 10 * math.log(4)

    def test_deterministic(self):
        rng = np.random.default_rng(15)
        samples = [mpnn.TrainingSample(bundle=random_bundle(rng),
                                       labels=rng.integers(1, 5, 8))
                   for _ in range(3)]
        a = mpnn.train(samples, lr=0.01, epochs=20, seed=5)
        b = mpnn.train(samples, lr=0.01, epochs=20, seed=5)
        for k in a.weights:
            assert np.array_equal(a.weights[k], b.weights[k])
        assert a.history == b.history

    def test_divergence_aborts(self):
        rng = np.random.default_rng(16)
        sample = mpnn.TrainingSample(bundle=random_bundle(rng),
                                     labels=rng.integers(1, 5, 8))
        # gradient ascent drives the loss over the ceiling
        with pytest.raises(RuntimeError, match="diverged"):
            mpnn.train([sample], lr=-50.0, epochs=4000, seed=2)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            mpnn.train([], epochs=1)

    def test_inverse_frequency_weights(self):
        rng = np.random.default_rng(23)
        bundle = random_bundle(rng, n_edges=8)
        labels = np.array([4, 4, 4, 4, 4, 4, 1, 2])
        w = mpnn.inverse_frequency_weights(
            [mpnn.TrainingSample(bundle=bundle, labels=labels)])
        assert w[0] > w[3]  # rare classes weigh more
        assert w.mean() == pytest.approx(1.0)

    def test_weighted_gradients_match_finite_differences(self):
        rng = np.random.default_rng(24)
        bundle = random_bundle(rng, n_vertices=4, n_edges=6)
        labels = rng.integers(1, 5, 6)
        weights = np.array([3.0, 1.5, 1.0, 0.5])
        params = mpnn.init_params(seed=8)
        grads, _ = mpnn.grad(params, bundle, labels, weights)
        h = 1e-5
        w = params.weights["out_w"]
        flat = w.reshape(-1)
        for i in rng.choice(flat.size, size=6, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = mpnn.loss(mpnn.forward(params, bundle), labels, weights)
            flat[i] = orig - h
            dn = mpnn.loss(mpnn.forward(params, bundle), labels, weights)
            flat[i] = orig
            fd = (up - dn) / (2 * h)
            an = grads["out_w"].reshape(-1)[i]
            assert abs(fd - an) <= 1e-4 * max(1e-8, abs(fd), abs(an)) + 1e-9

    def test_balanced_training_changes_weights(self):
        rng = np.random.default_rng(25)
        samples = [mpnn.TrainingSample(bundle=random_bundle(rng),
                                       labels=np.array([4, 4, 4, 4, 4, 4, 1, 2]))
                   for _ in range(2)]
        plain = mpnn.train(samples, lr=0.01, epochs=10, seed=5)
        balanced = mpnn.train(samples, lr=0.01, epochs=10, seed=5,
                              balance_classes=True)
        assert any(not np.array_equal(plain.weights[k], balanced.weights[k])
                   for k in plain.weights)


class TestClassify:
    def test_argmax(self):
        rng = np.random.default_rng(17)
        bundle = random_bundle(rng, n_edges=1)
        params = mpnn.init_params(seed=0)

        def fake_logits(rows):
            return np.array(rows, dtype=float)

        assert int(np.argmax(fake_logits([[0, 0, 0, 5]]))) + 1 == 4
        # exact tie between classes 1 and 4 resolves to 1
        assert int(np.argmax(fake_logits([[5, 0, 0, 5]]))) + 1 == 1
        preds = mpnn.classify(params, bundle)
        assert len(preds) == 1
        assert all(isinstance(p, mpnn.CongestionClass) for p in preds)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(18)
        bundle = random_bundle(rng)
        params = mpnn.init_params(seed=6)
        base = mpnn.classify(params, bundle)
        shifted = params.copy()
        shifted.weights["out_b"] = shifted.weights["out_b"] + 3.7
        assert mpnn.classify(shifted, bundle) == base


def test_weights_json_round_trip():
    params = mpnn.init_params(seed=21)
    text = mpnn.params_to_json(params)
    back = mpnn.params_from_json(text)
    assert back.layers == params.layers
    for k in params.weights:
        assert np.allclose(back.weights[k], params.weights[k])
    assert mpnn.params_to_json(back) == text


def test_samples_json_round_trip():
    rng = np.random.default_rng(22)
    samples = [mpnn.TrainingSample(bundle=random_bundle(rng),
                                   labels=rng.integers(1, 5, 8),
                                   provenance={"model": "manual", "n": 5})]
    back = mpnn.samples_from_json(mpnn.samples_to_json(samples))
    assert len(back) == 1
    assert np.array_equal(back[0].labels, samples[0].labels)
    assert back[0].provenance == samples[0].provenance
    assert np.allclose(back[0].bundle.x_edges, samples[0].bundle.x_edges)
