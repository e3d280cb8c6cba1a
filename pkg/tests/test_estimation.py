import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linbpi.errors import InsufficientDataError
from linbpi.estimation import (
    CovariatesState,
    SubspaceProjection,
    TraceWriter,
    batch_state,
    lse,
    min_eigenvalue,
    projected_lse,
    pseudo_inverse,
    update,
    weighted_norm_sq,
)
from linbpi.glr import StoppingConfig
from linbpi.harness import run_active
from linbpi.instances import passive_example
from linbpi.model import ContextDistribution, FeatureMap, Instance, Observation


def feats2():
    return FeatureMap(np.eye(2)[None])


def noiseless(inst, pairs):
    return [Observation(t, x, a, float(inst.features.phi[x, a] @ inst.theta)) for t, (x, a) in enumerate(pairs, 1)]


class TestUpdate:
    def test_single_observation(self):
        st_ = update(CovariatesState.empty(feats2()), Observation(1, 0, 0, 2.0), feats2())
        np.testing.assert_array_equal(st_.A, np.diag([1.0, 0.0]))
        np.testing.assert_array_equal(st_.b, [2.0, 0.0])
        assert st_.t == 1 and st_.counts.tolist() == [[1, 0]]

    def test_matches_batch(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 4, 3)))
        obs = [Observation(t, int(rng.integers(3)), int(rng.integers(4)), float(rng.normal())) for t in range(100)]
        inc = CovariatesState.empty(fm)
        for o in obs:
            update(inc, o, fm)
        bat = batch_state(obs, fm)
        np.testing.assert_allclose(inc.A, bat.A, atol=1e-10)
        np.testing.assert_allclose(inc.b, bat.b, atol=1e-10)
        np.testing.assert_allclose(inc.A_ctx, bat.A_ctx, atol=1e-10)
        np.testing.assert_array_equal(inc.counts, bat.counts)

    def test_order_invariant(self, rng):
        fm = FeatureMap(rng.normal(size=(2, 3, 2)))
        obs = [Observation(t, int(rng.integers(2)), int(rng.integers(3)), float(rng.normal())) for t in range(30)]
        a, b = batch_state(obs, fm), batch_state(obs[::-1], fm)
        np.testing.assert_allclose(a.A, b.A, atol=1e-12)
        np.testing.assert_allclose(a.b, b.b, atol=1e-12)

    def test_copy_is_independent(self):
        s = CovariatesState.empty(feats2())
        c = s.copy()
        c.add(np.array([1.0, 0.0]), 0, 0, 1.0)
        assert s.t == 0 and s.A.sum() == 0


class TestLSE:
    def test_empty_state(self):
        with pytest.raises(InsufficientDataError):
            lse(CovariatesState.empty(feats2()))

    def test_rank_one_projection(self):
        inst = Instance(feats2(), ContextDistribution([1.0]), [3.0, 7.0])
        s = batch_state(noiseless(inst, [(0, 0)]), inst.features)
        np.testing.assert_allclose(lse(s), [3.0, 0.0], atol=1e-12)

    def test_exact_recovery(self, rng):
        phi = rng.normal(size=(2, 3, 4))
        inst = Instance(FeatureMap(phi), ContextDistribution([0.5, 0.5]), rng.normal(size=4))
        s = batch_state(noiseless(inst, [(x, a) for x in range(2) for a in range(3)]), inst.features)
        np.testing.assert_allclose(lse(s), inst.theta, atol=1e-9)

    def test_consistency_under_forced_exploration(self, tmp_path):
        # estimate after 500 rounds is closer to theta than after 50 in most runs
        rng = np.random.default_rng(3)
        phi = rng.normal(size=(2, 3, 3))
        inst = Instance(FeatureMap(phi), ContextDistribution([0.5, 0.5]), [1.0, -0.5, 0.3])
        cfg = StoppingConfig(0.1, 0.1)
        better = 0
        for i in range(200):
            path = tmp_path / f"r{i}.csv"
            run_active(inst, cfg, seed=11, run_index=i, max_rounds=500, check_every=0, trace_path=str(path))
            with open(path) as fh:
                rows = list(csv.DictReader(fh))
            obs = [Observation(int(r["round"]), int(r["context"]), int(r["action"]), float(r["reward"]))
                   for r in rows]
            e50 = np.linalg.norm(lse(batch_state(obs[:50], inst.features)) - inst.theta)
            e500 = np.linalg.norm(lse(batch_state(obs, inst.features)) - inst.theta)
            better += e500 < e50
        assert better >= 180


class TestProjectedLSE:
    def test_exact_in_subspace(self):
        inst = passive_example()
        proj = SubspaceProjection(np.eye(3)[:2])
        theta_u = np.array([1.0, 1.0, 0.0])
        inst_u = Instance(inst.features, inst.context_dist, theta_u)
        s = batch_state(noiseless(inst_u, [(0, 0), (1, 0), (2, 0)]), inst.features)
        np.testing.assert_allclose(projected_lse(s, proj), proj.P @ theta_u, atol=1e-9)

    def test_identity_matches_lse(self, rng):
        fm = FeatureMap(rng.normal(size=(1, 4, 3)))
        obs = [Observation(t, 0, t % 4, float(rng.normal())) for t in range(12)]
        s = batch_state(obs, fm)
        np.testing.assert_allclose(projected_lse(s, SubspaceProjection.identity(3)), lse(s), atol=1e-10)

    def test_matches_batch_regression_on_projected_features(self, rng):
        inst = passive_example()
        proj = SubspaceProjection(np.eye(3)[:2])
        xs = rng.integers(0, 3, 60)
        obs = [Observation(t, int(x), 0, float(inst.features.phi[x, 0] @ inst.theta + rng.normal()))
               for t, x in enumerate(xs)]
        s = batch_state(obs, inst.features)
        F = inst.features.phi[xs, 0] @ proj.P.T
        ref, *_ = np.linalg.lstsq(F, np.array([o.r for o in obs]), rcond=None)
        np.testing.assert_allclose(projected_lse(s, proj), ref, atol=1e-9)

    def test_singular(self):
        s = CovariatesState.empty(feats2())
        s.add(np.array([1.0, 0.0]), 0, 0, 1.0)
        with pytest.raises(InsufficientDataError):
            projected_lse(s, SubspaceProjection.identity(2))


class TestLinearAlgebra:
    def test_non_symmetric_rejected(self):
        with pytest.raises(ValueError):
            pseudo_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            min_eigenvalue(np.ones((2, 3)))

    def test_pinv_of_zero(self):
        np.testing.assert_array_equal(pseudo_inverse(np.zeros((2, 2))), np.zeros((2, 2)))

    @settings(max_examples=50)
    @given(arrays(float, (5, 3), elements=st.floats(-3, 3)))
    def test_penrose_conditions(self, X):
        M = X.T @ X
        G = pseudo_inverse(M)
        scale = max(1.0, np.abs(M).max()) ** 2
        np.testing.assert_allclose(M @ G @ M, M, atol=1e-7 * scale)
        np.testing.assert_allclose(G, G.T, atol=1e-9 * scale)

    def test_matches_numpy(self, rng):
        X = rng.normal(size=(2, 4))
        M = X.T @ X
        np.testing.assert_allclose(pseudo_inverse(M), np.linalg.pinv(M, hermitian=True), atol=1e-9)

    def test_weighted_norm(self):
        assert weighted_norm_sq([1, 2], np.diag([3.0, 0.5])) == pytest.approx(5.0)


class TestSubspaceProjection:
    def test_orthonormal_required(self):
        with pytest.raises(ValueError):
            SubspaceProjection([[1.0, 1.0]])

    def test_contains(self):
        p = SubspaceProjection(np.eye(3)[:2])
        assert p.contains([1, 2, 0]) and not p.contains([0, 0, 1])
        assert (p.r, p.d) == (2, 3)


def test_trace_writer(tmp_path):
    path = tmp_path / "t.csv"
    with TraceWriter(path) as tw:
        tw.write(1, 0, 2, 0.5, 0.0)
    rows = list(csv.reader(open(path)))
    assert rows == [list(TraceWriter.header), ["1", "0", "2", "0.5", "0.0"]]
