import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topo_pretrain.checkpoint import checkpoint_bytes
from topo_pretrain.encoder import EncoderConfig, ViewLearner, build_model
from topo_pretrain.graphs import Graph, batch_graphs, generate_corpus, generate_er
from topo_pretrain.numerics import Tensor
from topo_pretrain.numerics.gradcheck import analytic_grads, numeric_grad, relative_error
from topo_pretrain.pretrain import (
    PretrainConfig,
    PretrainError,
    TrainLog,
    concrete_edge_weights,
    drop_ratio,
    epoch_batches,
    nt_xent,
    random_edge_drop,
    random_node_drop,
    train_adgcl,
    train_graphcl,
)

TOY = EncoderConfig(num_layers=3, hidden_dim=16, projection_dim=16)


def toy_corpus(n=16, seed=1):
    return generate_corpus("er", n // 2, seed=seed) + generate_corpus("trees", n - n // 2, seed=seed)


def snapshot(mod):
    return {name: t.data.tobytes() for name, t in mod.named_parameters()}


class FixedUniform:
    """Stands in for a Generator whose ``random`` returns preset values."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def random(self, n):
        assert n == len(self.values)
        return self.values


# -- nt_xent ---------------------------------------------------------------------

def test_nt_xent_orthogonal_rows():
    z = np.eye(4, dtype=np.float32)
    expected = -math.log(math.e / (math.e + 3))
    assert nt_xent(Tensor(z), Tensor(z), 1.0).item() == pytest.approx(expected, abs=1e-6)
    # log(1 + 3/e); the often-quoted 0.4741 does not follow from this formula
    assert expected == pytest.approx(0.743668, abs=1e-6)


@pytest.mark.parametrize("B", [2, 5, 16, 64])
def test_nt_xent_identical_rows_is_log_b(B):
    z = np.tile(np.random.default_rng(B).normal(size=(1, 8)), (B, 1)).astype(np.float32)
    assert nt_xent(Tensor(z), Tensor(z), 0.2).item() == pytest.approx(math.log(B), abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.floats(0.05, 2.0))
def test_nt_xent_row_scale_invariant_and_nonnegative(seed, B, tau):
    rng = np.random.default_rng(seed)
    z1 = rng.normal(size=(B, 6)).astype(np.float32)
    z2 = rng.normal(size=(B, 6)).astype(np.float32)
    c = rng.uniform(0.1, 10, size=(B, 1)).astype(np.float32)
    base = nt_xent(Tensor(z1), Tensor(z2), tau).item()
    assert base >= 0
    assert nt_xent(Tensor(z1 * c), Tensor(z2), tau).item() == pytest.approx(base, rel=1e-6, abs=1e-6)
    assert nt_xent(Tensor(z1), Tensor(z2 * c), tau).item() == pytest.approx(base, rel=1e-6, abs=1e-6)


def test_nt_xent_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    z1 = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    z2 = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    f = lambda: nt_xent(z1, z2, 0.5)
    for p, g in zip((z1, z2), analytic_grads(f, [z1, z2])):
        assert relative_error(g, numeric_grad(f, p)) < 1e-4


def test_nt_xent_zero_row_is_finite():
    z = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
    z[1] = 0
    assert np.isfinite(nt_xent(Tensor(z), Tensor(z), 0.2).item())


def test_nt_xent_needs_two_rows():
    with pytest.raises(PretrainError):
        nt_xent(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))


# -- augmentations -----------------------------------------------------------------

def test_drop_zero_is_identity():
    g = generate_er(np.random.default_rng(0), n=20, p=0.3)
    rng = np.random.default_rng(1)
    assert random_edge_drop(g, 0.0, rng).edge_set() == g.edge_set()
    kept = random_node_drop(g, 0.0, rng)
    assert kept.n == g.n and kept.edge_set() == g.edge_set()


def test_node_drop_k5_to_k3():
    k5 = Graph(n=5, edges=[(i, j) for i in range(5) for j in range(i + 1, 5)])
    out = random_node_drop(k5, 0.5, FixedUniform([0.9, 0.8, 0.7, 0.1, 0.2]))
    assert out.n == 3
    assert out.edge_set() == {(0, 1), (0, 2), (1, 2)}


def test_node_drop_redraws_when_all_die():
    draws = iter([np.zeros(4), np.array([0.0, 0.9, 0.0, 0.0])])

    class Seq:
        def random(self, n):
            return next(draws)

    out = random_node_drop(Graph(n=4, edges=[(0, 1), (1, 2)]), 0.5, Seq())
    assert out.n == 1 and out.num_edges == 0


def test_edge_drop_binomial():
    g = Graph(n=51, edges=[(i, i + 1) for i in range(50)])
    rng = np.random.default_rng(7)
    counts = np.array([random_edge_drop(g, 0.2, rng).num_edges for _ in range(2000)])
    sigma_mean = math.sqrt(50 * 0.2 * 0.8 / 2000)
    assert abs(counts.mean() - 40) < 3 * sigma_mean


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.95))
def test_augmentations_produce_valid_graphs(seed, p):
    rng = np.random.default_rng(seed)
    g = generate_er(rng, n=int(rng.integers(2, 25)), p=0.3)
    for out in (random_edge_drop(g, p, rng), random_node_drop(g, p, rng)):
        out.validate()
        assert 1 <= out.n <= g.n
        assert out.num_edges <= g.num_edges


def test_drop_probability_range():
    g = Graph(n=2, edges=[(0, 1)])
    with pytest.raises(PretrainError):
        random_edge_drop(g, 1.0, np.random.default_rng(0))
    with pytest.raises(PretrainError):
        random_node_drop(g, -0.1, np.random.default_rng(0))


# -- concrete relaxation -----------------------------------------------------------

def test_concrete_saturates():
    rng = np.random.default_rng(0)
    w = concrete_edge_weights(Tensor(np.full(1000, 20.0)), 1.0, rng).data
    assert w.min() > 0.999


def test_concrete_mean_at_zero_logit():
    w = concrete_edge_weights(Tensor(np.zeros(100_000)), 1.0, np.random.default_rng(3)).data
    assert abs(w.mean() - 0.5) < 0.01


def test_concrete_gradient_at_pinned_noise():
    rng = np.random.default_rng(0)
    logits = Tensor(rng.normal(size=12), requires_grad=True)
    u = rng.random(12)
    f = lambda: (concrete_edge_weights(logits, 0.7, None, noise=u) * Tensor(np.arange(12.0))).sum()
    (g,) = analytic_grads(f, [logits])
    assert relative_error(g, numeric_grad(f, logits, h=1e-4)) < 1e-4


def test_concrete_noise_shared_by_orientations():
    b = batch_graphs(generate_corpus("er", 3, seed=2))
    logits = Tensor(np.zeros(b.total_edges))
    w = concrete_edge_weights(logits, 1.0, np.random.default_rng(0), b.undirected_id).data
    np.testing.assert_array_equal(w, w[b.reverse_edge])
    assert len(np.unique(w)) > 1


def test_concrete_fresh_noise_per_call():
    rng = np.random.default_rng(0)
    a = concrete_edge_weights(Tensor(np.zeros(10)), 1.0, rng).data
    b = concrete_edge_weights(Tensor(np.zeros(10)), 1.0, rng).data
    assert not np.array_equal(a, b)


# -- drop ratio ----------------------------------------------------------------------

def test_drop_ratio_extremes():
    b = batch_graphs(generate_corpus("er", 3, seed=0))
    assert drop_ratio(Tensor(np.ones(b.total_edges)), b).item() == 0.0
    assert drop_ratio(Tensor(np.zeros(b.total_edges)), b).item() == pytest.approx(1.0)


def test_drop_ratio_is_graph_mean():
    small = Graph(n=3, edges=[(0, 1), (1, 2)])
    big = Graph(n=7, edges=[(i, i + 1) for i in range(6)])
    b = batch_graphs([small, big])
    w = np.concatenate([np.full(4, 0.75), np.full(12, 0.25)]).astype(np.float32)
    assert drop_ratio(Tensor(w), b).item() == pytest.approx(0.5)
    # edge-weighted mean would be (4 * .25 + 12 * .75) / 16 = 0.625


def test_drop_ratio_skips_edgeless_graphs_and_checks_length():
    b = batch_graphs([Graph(n=2, edges=[(0, 1)]), Graph(n=3)])
    assert drop_ratio(Tensor([0.5, 0.5]), b).item() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        drop_ratio(Tensor(np.ones(3)), b)


# -- training loops ------------------------------------------------------------------

def test_config_validation_lists_every_problem():
    with pytest.raises(PretrainError) as err:
        PretrainConfig(method="nope", temperature=0, drop_prob=1.0).validate()
    msg = str(err.value)
    assert "method" in msg and "temperature" in msg and "drop_prob" in msg


def test_corpus_of_one_graph_rejected():
    with pytest.raises(PretrainError):
        train_graphcl(toy_corpus()[:1], PretrainConfig(method="graphcl_edge", epochs=1), TOY)


def test_epoch_batches_merge_singleton():
    parts = epoch_batches(9, 4, np.random.default_rng(0))
    assert [len(p) for p in parts] == [4, 5]
    assert sorted(np.concatenate(parts)) == list(range(9))


def test_adgcl_alternation_isolation():
    model = build_model(TOY, rng_seed=0)
    view = ViewLearner(TOY, rng_seed=1)
    seen = {"view": 0, "encoder": 0}
    state = {}

    def hook(stage, phase):
        if phase == "before":
            state["model"], state["view"] = snapshot(model), snapshot(view)
            state["buffers"] = [getattr(s, a).tobytes() for _, s, a in model.named_buffers()]
            return
        seen[stage] += 1
        if stage == "view":
            assert snapshot(model) == state["model"]
            assert [getattr(s, a).tobytes() for _, s, a in model.named_buffers()] == state["buffers"]
            assert snapshot(view) != state["view"]
        else:
            assert snapshot(view) == state["view"]
            assert snapshot(model) != state["model"]

    cfg = PretrainConfig(epochs=5, batch_size=4, seed=3)
    train_adgcl(toy_corpus(), cfg, TOY, step_hook=hook, model=model, view=view)
    assert seen == {"view": 20, "encoder": 20}


def test_adgcl_log_and_checkpoint():
    ckpt, log, _, _ = train_adgcl(toy_corpus(), PretrainConfig(epochs=3, batch_size=8), TOY)
    assert log.epochs == [0, 1, 2]
    assert all(0 < k < 1 for k in log.keep_prob)
    assert log.composition == {"random": 8, "trees": 8}
    assert ckpt.view_params is not None and ckpt.method == "adgcl"


def test_graphcl_without_augmentation():
    corpus = toy_corpus(32)
    cfg = PretrainConfig(method="graphcl_edge", epochs=50, batch_size=32, drop_prob=0.0, seed=0)
    model = build_model(TOY, rng_seed=0)
    z = model(batch_graphs([g.without_features() for g in corpus])).graphs
    expected = nt_xent(z, z, cfg.temperature).item()
    _, log, _ = train_graphcl(corpus, cfg, TOY, model=build_model(TOY, rng_seed=0))
    assert log.loss[0] == pytest.approx(expected, rel=1e-4)
    assert log.loss[-1] < log.loss[0]


@pytest.mark.parametrize("method", ["graphcl_edge", "graphcl_node"])
def test_graphcl_one_epoch_descends(method):
    before, after = [], []
    corpus = toy_corpus(64, seed=5)
    for seed in range(5):
        cfg = PretrainConfig(method=method, epochs=1, batch_size=16, seed=seed)
        init = build_model(TOY, rng_seed=seed)
        aug = random_edge_drop if method == "graphcl_edge" else random_node_drop
        rng = np.random.default_rng(seed)
        b1 = batch_graphs([aug(g, 0.2, rng) for g in corpus])
        b2 = batch_graphs([aug(g, 0.2, rng) for g in corpus])
        before.append(nt_xent(init(b1).graphs, init(b2).graphs, 0.2).item())
        _, _, trained = train_graphcl(corpus, cfg, TOY, model=init)
        after.append(nt_xent(trained(b1).graphs, trained(b2).graphs, 0.2).item())
    assert np.mean(after) < np.mean(before)


@pytest.mark.parametrize("method", ["adgcl", "graphcl_edge", "graphcl_node"])
def test_training_is_deterministic(method):
    cfg = PretrainConfig(method=method, epochs=2, batch_size=6, seed=11)
    runs = []
    for _ in range(2):
        if method == "adgcl":
            ckpt, log, _, _ = train_adgcl(toy_corpus(), cfg, TOY)
        else:
            ckpt, log, _ = train_graphcl(toy_corpus(), cfg, TOY)
        runs.append((checkpoint_bytes(ckpt), log))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_trainlog_csv(tmp_path):
    log = TrainLog(0, {"random": 2})
    log.append(0, 1.5, 0.9, 0.01)
    log.append(1, 1.25, 0.8, 0.02)
    with pytest.raises(ValueError):
        log.append(1, 1.0, 0.8, 0.02)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,keep_prob,seconds"
    assert lines[2].startswith("1,1.25,0.8,")
