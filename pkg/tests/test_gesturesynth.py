"""Gesture channel tests: shapes, determinism, and information-presence probes."""
import math

import numpy as np
import pytest

from gestnav import gesturesynth as gs


def wrap_pi(x):
    return math.atan2(math.sin(x), math.cos(x))


class TestReferencingGesture:
    def test_shape_and_bounds(self):
        an = gs.GestureAnatomy(0)
        seq = gs.referencing_gesture(0.7, an, 5, 0.05)
        assert seq.shape == (gs.STEPS, gs.FEATURES) == (100, 95)
        assert np.all(np.isfinite(seq))
        assert np.max(np.abs(seq)) <= 1.0 + 5 * 0.05 + 1e-12

    def test_noiseless_determinism(self):
        an = gs.GestureAnatomy(3)
        a = gs.referencing_gesture(-1.2, an, 9, 0.0)
        b = gs.referencing_gesture(-1.2, an, 9, 0.0)
        np.testing.assert_array_equal(a, b)

    def test_noisy_determinism_given_seeds(self):
        an = gs.GestureAnatomy(3)
        a = gs.referencing_gesture(0.4, an, 11, 0.05)
        b = gs.referencing_gesture(0.4, an, 11, 0.05)
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            gs.referencing_gesture(0.0, gs.GestureAnatomy(0), 0, -0.1)

    def test_anatomy_reproducible(self):
        a, b = gs.GestureAnatomy(42), gs.GestureAnatomy(42)
        np.testing.assert_array_equal(a.w, b.w)
        np.testing.assert_array_equal(a.b, b.b)
        c = gs.GestureAnatomy(43)
        assert not np.array_equal(a.w, c.w)

    def test_envelope_phases(self):
        env = gs._ENVELOPE
        assert env[0] == 0.0
        assert env[29] == 1.0
        np.testing.assert_array_equal(env[30:70], np.ones(40))
        assert env[70] == 1.0
        assert env[99] == 0.0
        assert np.all((env >= 0.0) & (env <= 1.0))

    def test_style_amplitude_bound(self):
        for seed in range(20):
            s = gs._style(seed)
            assert s.shape == (gs.STEPS, gs.FEATURES)
            assert np.max(np.abs(s)) <= 0.1

    def test_probe_mae_under_10_degrees(self):
        # 1000 draws at the default noise, 80/20 split, fit hold-phase ridge
        an = gs.GestureAnatomy(0)
        rng = np.random.default_rng(0)
        bearings = rng.uniform(-math.pi, math.pi, 1000)
        feats = np.stack([
            gs.hold_phase_mean(gs.referencing_gesture(b, an, 10_000 + i, 0.05))
            for i, b in enumerate(bearings)])
        coef = gs.fit_bearing_probe(feats[:800], bearings[:800])
        errs = []
        for i in range(800, 1000):
            f = np.append(feats[i], 1.0)
            c, s = f @ coef
            pred = math.atan2(s, c)
            errs.append(abs(wrap_pi(pred - bearings[i])))
        mae_deg = math.degrees(float(np.mean(errs)))
        assert mae_deg < 10.0, f"probe MAE {mae_deg:.2f} deg"

    def test_eight_sector_probe_accuracy(self):
        an = gs.GestureAnatomy(1)
        rng = np.random.default_rng(1)
        bearings = rng.uniform(-math.pi, math.pi, 1000)
        feats = np.stack([
            gs.hold_phase_mean(gs.referencing_gesture(b, an, 20_000 + i, 0.05))
            for i, b in enumerate(bearings)])
        coef = gs.fit_bearing_probe(feats[:800], bearings[:800])

        def sector(b):
            return int((b + math.pi) / (2 * math.pi) * 8) % 8

        hits = 0
        for i in range(800, 1000):
            f = np.append(feats[i], 1.0)
            c, s = f @ coef
            hits += sector(math.atan2(s, c)) == sector(bearings[i])
        assert hits / 200 > 0.9, f"sector accuracy {hits / 200:.3f}"


class TestInterventionGesture:
    def test_determinism_and_bounds(self):
        an = gs.GestureAnatomy(0)
        for idx in range(gs.NUM_TEMPLATES):
            a = gs.intervention_gesture(idx, an)
            b = gs.intervention_gesture(idx, an)
            np.testing.assert_array_equal(a, b)
            assert a.shape == (100, 95)
            assert np.max(np.abs(a)) <= 1.0 + 1e-12

    def test_index_out_of_range(self):
        an = gs.GestureAnatomy(0)
        with pytest.raises(gs.IndexOutOfRange):
            gs.intervention_gesture(10, an)
        with pytest.raises(gs.IndexOutOfRange):
            gs.intervention_gesture(-1, an)

    def test_pairwise_distances(self):
        an = gs.GestureAnatomy(0)
        temps = [gs.intervention_gesture(i, an) for i in range(10)]
        for i in range(10):
            for j in range(i + 1, 10):
                d = np.linalg.norm(temps[i] - temps[j])
                assert d > 1.0, f"templates {i},{j} too close: {d:.3f}"
        rng = np.random.default_rng(2)
        for k in range(100):
            ref = gs.referencing_gesture(rng.uniform(-math.pi, math.pi), an,
                                         30_000 + k, 0.05)
            for i, t in enumerate(temps):
                d = np.linalg.norm(ref - t)
                assert d > 1.0, f"template {i} within {d:.3f} of a referencing draw"


class TestZeroGesture:
    def test_shape_sum_and_readonly(self):
        z = gs.zero_gesture()
        assert z.shape == (100, 95)
        assert z.sum() == 0.0
        assert z is gs.zero_gesture()
        with pytest.raises(ValueError):
            z[0, 0] = 1.0


class TestSeparability:
    def test_linear_classifier_over_99(self):
        # least squares on hold-phase means, labels -1 (referencing) / +1
        an = gs.GestureAnatomy(0)
        rng = np.random.default_rng(3)
        X, y = [], []
        for i in range(500):
            b = rng.uniform(-math.pi, math.pi)
            X.append(gs.hold_phase_mean(gs.referencing_gesture(b, an, 40_000 + i, 0.05)))
            y.append(-1.0)
        for i in range(500):
            X.append(gs.hold_phase_mean(gs.intervention_gesture(int(rng.integers(10)), an)))
            y.append(1.0)
        X = np.hstack([np.stack(X), np.ones((1000, 1))])
        y = np.asarray(y)
        order = rng.permutation(1000)
        tr, te = order[:800], order[800:]
        w, *_ = np.linalg.lstsq(X[tr], y[tr], rcond=None)
        acc = np.mean(np.sign(X[te] @ w) == y[te])
        assert acc > 0.99, f"separability {acc:.4f}"


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        an = gs.GestureAnatomy(5)
        recs = [
            (gs.referencing_gesture(0.3, an, 1, 0.05), gs.KIND_REFERENCING, 0.3, -1.0),
            (gs.intervention_gesture(4, an), gs.KIND_INTERVENTION, 0.0, 4.0),
        ]
        p = tmp_path / "g.bin"
        gs.write_gesture_dataset(p, recs)
        out = gs.read_gesture_dataset(p)
        assert len(out) == 2
        for (seq, kind, bearing, tidx), (oseq, okind, obearing, otidx) in zip(recs, out):
            np.testing.assert_array_equal(seq, oseq)
            assert (kind, bearing, tidx) == (okind, obearing, otidx)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTAMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError):
            gs.read_gesture_dataset(p)

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            gs.write_gesture_dataset(tmp_path / "x.bin",
                                     [(np.zeros((10, 5)), 0.0, 0.0, -1.0)])
