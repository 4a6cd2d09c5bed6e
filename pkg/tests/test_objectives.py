import numpy as np
import pytest

from graphfm import autograd as ag
from graphfm.errors import ConfigError
from graphfm.graph import build_csr, sbm_generate
from graphfm.methods import MethodConfig, build_method
from graphfm.objectives import (AugmentationSpec, augment, bgrl_loss, cca_ssg_loss, degree_drop_weights, drop_edges,
                                gbt_loss, gca_infonce_loss, graphmae_loss, mask_edges, mask_feature_columns,
                                mask_nodes, s2gae_loss)
from graphfm.runner import Trial
from graphfm.space import METHODS

from helpers import small_experiment, small_method
from oracles import assert_grad_close, central_difference

# two standardized, uncorrelated columns
ORTHO = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])


def loss_grad_check(loss_fn, *arrays):
    params = [ag.parameter(a.copy()) for a in arrays]
    ag.backward(loss_fn(*params))
    for p in params:
        def f():
            with ag.no_grad():
                return loss_fn(*params).item()
        assert_grad_close(p.grad, central_difference(f, p.value, 1e-5))


class TestAugment:
    def test_identity_spec(self, rng):
        g = build_csr([(0, 1), (1, 2)], 3)
        x = rng.normal(size=(3, 4))
        g2, x2 = augment(g, x, AugmentationSpec(), rng)
        assert g2.num_edges == 2
        np.testing.assert_array_equal(x2, x)

    def test_drop_everything(self, rng):
        g = build_csr([(0, 1), (1, 2)], 3)
        g2, x2 = augment(g, np.ones((3, 4)), AugmentationSpec(1.0, 1.0), rng)
        assert g2.num_edges == 0 and g2.num_nodes == 3
        assert not x2.any()

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            AugmentationSpec(drop_edge_p=1.5)

    def test_kept_edge_fraction(self, rng):
        b = sbm_generate(2, 200, 0.1, 0.01, feat_dim=2, feat_noise=0.0, seed=0)
        m = b.graph.num_edges
        kept = drop_edges(b.graph, 0.3, rng).num_edges
        assert abs(kept - 0.7 * m) <= 3 * np.sqrt(m * 0.21)
        e_all = set(map(tuple, b.graph.edge_array().tolist()))
        assert set(map(tuple, drop_edges(b.graph, 0.3, rng).edge_array().tolist())) <= e_all

    def test_feature_columns_masked_whole(self, rng):
        x = rng.normal(size=(20, 50)) + 5
        out = mask_feature_columns(x, 0.5, rng)
        zero_cols = ~out.any(axis=0)
        np.testing.assert_array_equal(out[:, ~zero_cols], x[:, ~zero_cols])

    def test_degree_weights_capped(self):
        g = build_csr([(0, i) for i in range(1, 8)] + [(1, 2)], 8)
        w = degree_drop_weights(g, 0.6)
        assert np.all(w <= 0.7) and np.all(w >= 0)


class TestClosedForms:
    def test_gbt_identical_views(self):
        assert gbt_loss(ORTHO, ORTHO).item() == pytest.approx(0.0, abs=1e-12)

    def test_gbt_negated_views(self):
        # C = -I, so every diagonal term is (−1 − 1)^2
        assert gbt_loss(ORTHO, -ORTHO).item() == pytest.approx(4 * 2, abs=1e-6)

    def test_gbt_needs_two_nodes(self):
        with pytest.raises(ValueError):
            gbt_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_cca_invariance_only(self, rng):
        z = rng.normal(size=(30, 4))
        assert cca_ssg_loss(z, z, lam=0.0).item() == pytest.approx(0.0, abs=1e-12)
        # standardized, uncorrelated columns: the decorrelation term vanishes too
        assert cca_ssg_loss(ORTHO, ORTHO, lam=1.0).item() == pytest.approx(0.0, abs=1e-6)
        with pytest.raises(ValueError):
            cca_ssg_loss(z, z, lam=-1.0)

    def test_bgrl_extremes(self, rng):
        p = rng.normal(size=(6, 3))
        assert bgrl_loss(p, p, p, p).item() == pytest.approx(0.0, abs=1e-12)
        assert bgrl_loss(p, -p, p, -p).item() == pytest.approx(8.0, abs=1e-12)

    def test_gca_two_nodes(self):
        e = np.eye(2)
        assert gca_infonce_loss(e, e, tau=1.0).item() == pytest.approx(-np.log(np.e / (np.e + 2)), abs=1e-9)
        with pytest.raises(ValueError):
            gca_infonce_loss(e, e, tau=0.0)

    @pytest.mark.parametrize("alpha", [1, 2, 3])
    def test_graphmae_values(self, rng, alpha):
        t = rng.normal(size=(5, 4))
        assert graphmae_loss(t, t, alpha).item() == pytest.approx(0.0, abs=1e-12)
        assert graphmae_loss(t, -t, alpha).item() == pytest.approx(2.0 ** alpha, abs=1e-12)
        ortho = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        assert graphmae_loss(*ortho, alpha).item() == pytest.approx(1.0, abs=1e-12)

    def test_graphmae_rejects(self):
        with pytest.raises(ValueError):
            graphmae_loss(np.ones((2, 2)), np.ones((2, 2)), 0.5)
        with pytest.raises(ValueError):
            graphmae_loss(np.ones((0, 2)), np.ones((0, 2)))

    def test_s2gae_zero_logits(self):
        assert s2gae_loss(np.zeros((4, 1)), np.zeros((4, 1))).item() == pytest.approx(np.log(2), abs=1e-12)


class TestMasking:
    def test_mask_nodes_count(self, rng):
        x = rng.normal(size=(10, 3)) + 3
        masked, idx, targets = mask_nodes(x, 0.5, rng)
        assert len(idx) == 5
        np.testing.assert_array_equal(targets, x[idx])
        assert not masked.value[idx].any()
        rest = np.setdiff1d(np.arange(10), idx)
        np.testing.assert_array_equal(masked.value[rest], x[rest])

    def test_mask_nodes_extremes(self, rng):
        x = np.ones((7, 2))
        assert len(mask_nodes(x, 0.0, rng)[1]) == 0
        assert len(mask_nodes(x, 1.0, rng)[1]) == 7
        with pytest.raises(ValueError):
            mask_nodes(x, 1.2, rng)

    def test_mask_edges_partition(self, rng):
        g = build_csr([(i, i + 1) for i in range(10)], 11)
        vis, masked = mask_edges(g, 0.5, rng)
        assert len(masked) == 5 and vis.num_edges == 5
        union = set(map(tuple, vis.edge_array().tolist())) | set(map(tuple, masked.tolist()))
        assert union == set(map(tuple, g.edge_array().tolist()))

    def test_mask_edges_rejects(self, rng):
        g = build_csr([(0, 1)], 2)
        with pytest.raises(ValueError):
            mask_edges(g, 1.0, rng)
        with pytest.raises(ValueError):
            mask_edges(build_csr([], 2), 0.5, rng)


class TestLossGradients:
    def test_gbt(self, rng):
        loss_grad_check(gbt_loss, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))

    def test_cca(self, rng):
        loss_grad_check(lambda a, b: cca_ssg_loss(a, b, 0.1), rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))

    def test_bgrl_online_side(self, rng):
        t1, t2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        loss_grad_check(lambda p1, p2: bgrl_loss(p1, t2, p2, t1), rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))

    def test_gca(self, rng):
        loss_grad_check(lambda a, b: gca_infonce_loss(a, b, 0.5), rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))

    def test_graphmae(self, rng):
        t = rng.normal(size=(4, 3))
        loss_grad_check(lambda r: graphmae_loss(t, r, 3.0), rng.normal(size=(4, 3)))

    def test_s2gae(self, rng):
        loss_grad_check(s2gae_loss, rng.normal(size=(4, 1)), rng.normal(size=(4, 1)))


class TestPermutationInvariance:
    @pytest.mark.parametrize("fn", [gbt_loss, cca_ssg_loss, lambda a, b: gca_infonce_loss(a, b, 0.5),
                                    lambda a, b: bgrl_loss(a, b, b, a)])
    def test_joint_row_permutation(self, rng, fn):
        a, b = rng.normal(size=(9, 4)), rng.normal(size=(9, 4))
        perm = rng.permutation(9)
        assert fn(a[perm], b[perm]).item() == pytest.approx(fn(a, b).item(), rel=1e-12, abs=1e-12)


NO_AUGMENT = {
    "gbt": dict(p_x=0.0, p_e=0.0),
    "cca_ssg": dict(dfr=0.0, der=0.0),
    "bgrl": dict(drop_edge_p_1=0.0, drop_edge_p_2=0.0, drop_feat_p_1=0.0, drop_feat_p_2=0.0),
    "gca": dict(drop_edge_rate_1=0.0, drop_edge_rate_2=0.0, drop_feature_rate_1=0.0, drop_feature_rate_2=0.0),
    "graphmae": dict(attn_drop=0.0, in_drop=0.0),
}


@pytest.fixture(scope="module")
def tiny_sbm():
    return sbm_generate(2, 50, 0.2, 0.02, feat_dim=8, feat_noise=1.0, seed=3)


class TestMethods:
    @pytest.mark.parametrize("strategy", ["full", "node", "subgraph"])
    @pytest.mark.parametrize("method", METHODS)
    def test_training_steps_finite(self, tiny_sbm, method, strategy):
        ag.get_tape().clear()
        trial = Trial(small_experiment(method, strategy, batch_size=40, num_clusters=3), tiny_sbm, seed=0)
        rng = np.random.default_rng(0)
        losses = []
        for epoch in range(2):
            for batch in trial.batches(epoch, rng):
                v = trial.method.training_step(batch, rng)
                if v is not None:
                    losses.append(v)
        assert losses and np.all(np.isfinite(losses))
        assert trial.method.last_activation_bytes > 0
        h = trial.embed()
        assert h.shape[0] == tiny_sbm.graph.num_nodes and np.all(np.isfinite(h))

    @pytest.mark.parametrize("method", METHODS)
    def test_loss_decreases_full_batch(self, tiny_sbm, method):
        # augmentations off so the objective itself, not view noise, is tracked
        cfg = small_method(method, lr=1e-2, **NO_AUGMENT.get(method, {}))
        trial = Trial(small_experiment(method, method_cfg=cfg), tiny_sbm, seed=1)
        rng = np.random.default_rng(1)
        losses = [trial.method.training_step(b, rng) for e in range(60) for b in trial.batches(e, rng)]
        losses = [v for v in losses if v is not None]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    @pytest.mark.parametrize("method", METHODS)
    def test_same_seed_same_parameters(self, tiny_sbm, method):
        def run():
            trial = Trial(small_experiment(method, "node", batch_size=40), tiny_sbm, seed=5)
            rng = np.random.default_rng(5)
            for e in range(2):
                for b in trial.batches(e, rng):
                    trial.method.training_step(b, rng)
            return trial.method.state_dict()
        a, b = run(), run()
        assert list(a) == list(b)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_state_dict_round_trip(self, tiny_sbm):
        m1 = build_method(small_method("gca"), 8, seed=0)
        m2 = build_method(small_method("gca"), 8, seed=1)
        m2.load_state_dict(m1.state_dict())
        np.testing.assert_array_equal(m1.embed(*_graph(tiny_sbm)), m2.embed(*_graph(tiny_sbm)))
        with pytest.raises(ValueError):
            m2.load_state_dict({})


def _graph(bundle):
    from graphfm.graph import normalize_adjacency
    return normalize_adjacency(bundle.graph), bundle.features


class TestBgrlTarget:
    def test_target_receives_no_gradient_and_tracks_ema(self, tiny_sbm):
        trial = Trial(small_experiment("bgrl", method_cfg=small_method("bgrl", ema_decay=0.5)), tiny_sbm, seed=0)
        m = trial.method
        before_t = {k: v.value.copy() for k, v in m.target.params.items()}
        rng = np.random.default_rng(0)
        m.training_step(next(trial.batches(0, rng)), rng)
        for k, t in m.target.params.items():
            assert t.grad is None
            online = m.encoder.params["enc" + k[len("target"):]].value
            np.testing.assert_allclose(t.value, 0.5 * before_t[k] + 0.5 * online, atol=1e-12)

    def test_ema_extremes(self, tiny_sbm):
        m = build_method(small_method("bgrl"), 8, seed=0)
        for p in m.encoder.parameters():
            p.value += 1.0
        frozen = {k: v.value.copy() for k, v in m.target.params.items()}
        m.ema_update(1.0)
        for k, t in m.target.params.items():
            np.testing.assert_array_equal(t.value, frozen[k])
        m.ema_update(0.0)
        for k, t in m.target.params.items():
            np.testing.assert_array_equal(t.value, m.encoder.params["enc" + k[len("target"):]].value)
        with pytest.raises(ValueError):
            m.ema_update(1.5)


class TestMethodConfig:
    def test_unknown_method_and_key(self):
        with pytest.raises(ConfigError):
            MethodConfig("dgi")
        with pytest.raises(ConfigError, match="bogus"):
            MethodConfig("gbt", params={"bogus": 1})

    def test_mask_rate_error_cites_search_set(self):
        with pytest.raises(ConfigError, match=r"\{0.4, 0.5, 0.6, 0.7, 0.8\}"):
            MethodConfig("graphmae", params={"mask_rate": 1.5})

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            build_method(MethodConfig("graphmae", params={"num_hidden": 10, "num_heads": 4}), 5)

    def test_replace_rate_warns(self):
        with pytest.warns(UserWarning):
            build_method(small_method("graphmae", replace_rate=0.1), 5)
