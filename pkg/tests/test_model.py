import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from socialrec import tensor as T
from socialrec.data import Dataset, InteractionRecord, symmetric_adjacency
from socialrec.graph import build_correlative_graph
from socialrec.data import build_rating_matrix
from socialrec.model import (ITEM, RANKING, RATING, USER, AblationConfig, Graphs, ModelParams, Network,
                             dynamic_rep, export_attention, interaction_embedding, interactional_rep,
                             latent_factor, load_checkpoint, predict, read_attention, relational_agg,
                             save_checkpoint, static_rep)
from socialrec.synthetic import rank_one_ratings, star_fixture
from socialrec.tensor import DimensionError, Tensor


def small_params(d=2, n_users=3, n_items=3, n_ratings=5, seed=0):
    return ModelParams(n_users, n_items, n_ratings, d=d, seed=seed)


def randomize(params, seed=0, scale=0.8):
    """Generic parameters: nonzero biases keep ReLUs away from their kinks."""
    rng = np.random.default_rng(seed)
    for p in params.parameters():
        p.data[...] = rng.uniform(-scale, scale, p.shape)
    return params


def as_lists(layer_list):
    return [(lin.W.data.tolist(), lin.b.data.tolist()) for lin in layer_list.layers]


def att_lists(att):
    return (att.W1.data.tolist(), att.b1.data.tolist(), att.W2.data.tolist(), att.b2.data.tolist(),
            att.W0.data.tolist(), att.b0.data.tolist())


# ---------------------------------------------------------------- interaction embedding

def test_interaction_embedding_zero_network():
    p = small_params()
    p.fill(0.0)
    assert interaction_embedding(USER, 0, 1, p).data.tolist() == [0.0, 0.0]


def test_interaction_embedding_hand_set_weights():
    p = small_params()
    p.fill(0.0)
    p.E.data[2] = [1.0, 0.0]
    p.Q.data[1] = [0.0, 1.0]
    p.mlp_uv.layers[0].W.data[...] = [[1, 2], [0, -1], [3, 0], [1, 1]]
    p.mlp_uv.layers[0].b.data[...] = [0.5, -3]
    p.mlp_uv.layers[1].W.data[...] = [[1, -1], [2, 0]]
    p.mlp_uv.layers[1].b.data[...] = [0.1, 0.2]
    # [1,0,0,1] @ W0 + b0 = [2.5, 0] -> relu -> [2.5, 0] @ W1 + b1 = [2.6, -2.3]
    np.testing.assert_allclose(interaction_embedding(USER, 2, 1, p).data, [2.6, -2.3], atol=1e-15)
    assert oracles.mlp([1.0, 0.0, 0.0, 1.0], as_lists(p.mlp_uv)) == pytest.approx([2.6, -2.3])


def test_interaction_embedding_item_side_uses_user_table():
    p = randomize(small_params(), seed=3)
    got = interaction_embedding(ITEM, 1, 2, p).data
    want = oracles.mlp(p.E.data[1].tolist() + p.P.data[2].tolist(), as_lists(p.mlp_vu))
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_interaction_embedding_shape_at_full_width():
    p = ModelParams(4, 5, 5, d=128, seed=1)
    assert interaction_embedding(USER, 4, 3, p).shape == (128,)


def test_interaction_embedding_range_checks():
    p = small_params()
    with pytest.raises(IndexError):
        interaction_embedding(USER, 0, 3, p)
    with pytest.raises(IndexError):
        interaction_embedding(ITEM, 5, 0, p)


# ---------------------------------------------------------------- dynamic representation

def test_dynamic_empty_sequence_is_zero():
    p = small_params(d=3)
    assert dynamic_rep([], p.lstm_u).data.tolist() == [0.0, 0.0, 0.0]


def test_dynamic_single_step_matches_hand_cell():
    p = small_params()
    W_ih, W_hh, b = p.lstm_u.layers[0]
    W_ih.data[...] = [[0.5, -0.2, 0.1, 0.3, 0.0, 0.4, -0.6, 0.2],
                      [0.1, 0.7, -0.3, 0.2, 0.5, -0.1, 0.3, 0.9]]
    W_hh.data[...] = np.full((2, 8), 0.25)
    b.data[...] = [0.0, 0.1, 1.0, 1.0, -0.2, 0.3, 0.05, -0.05]
    x = [0.8, -1.1]
    want, _ = oracles.lstm_cell(x, [0.0, 0.0], [0.0, 0.0], W_ih.data.tolist(), W_hh.data.tolist(),
                                b.data.tolist())
    np.testing.assert_allclose(dynamic_rep([Tensor(x)], p.lstm_u).data, want, atol=1e-15)


def test_dynamic_matches_oracle_on_longer_sequence():
    p = randomize(small_params(d=3), seed=4)
    xs = np.random.default_rng(0).normal(size=(5, 3))
    W_ih, W_hh, b = (t.data.tolist() for t in p.lstm_v.layers[0])
    np.testing.assert_allclose(dynamic_rep(xs, p.lstm_v).data, oracles.lstm(xs.tolist(), W_ih, W_hh, b),
                               atol=1e-14)


def test_dynamic_zero_weights_give_zero_state():
    p = small_params()
    p.fill(0.0)
    assert dynamic_rep(np.ones((4, 2)), p.lstm_u).data.tolist() == [0.0, 0.0]


def test_dynamic_is_order_sensitive():
    p = randomize(small_params(d=4), seed=8)
    xs = np.random.default_rng(1).normal(size=(4, 4))
    fwd = dynamic_rep(xs, p.lstm_u).data
    rev = dynamic_rep(xs[::-1].copy(), p.lstm_u).data
    assert np.linalg.norm(fwd - rev) > 1e-6


# ---------------------------------------------------------------- static representation

def test_static_single_edge():
    p = randomize(small_params(), seed=5)
    att = p.att_uv
    edge = [0.3, -0.7]
    want = oracles.relu(oracles.vadd(oracles.vecmat(edge, att.W0.data.tolist()), att.b0.data.tolist()))
    np.testing.assert_allclose(static_rep(Tensor([1.0, 2.0]), [Tensor(edge)], att).data, want, atol=1e-15)


def test_static_repeated_edges_equal_single_edge():
    p = randomize(small_params(d=3), seed=6)
    e = Tensor([0.2, -0.4, 0.9])
    c = Tensor([1.0, 0.0, -1.0])
    np.testing.assert_allclose(static_rep(c, [e] * 5, p.att_uv).data, static_rep(c, [e], p.att_uv).data,
                               atol=1e-15)


def test_static_two_edges_match_hand_pass():
    p = small_params()
    att = p.att_vu
    att.W1.data[...] = [[0.5, -0.5], [0.25, 1.0], [1.0, 0.5], [-0.75, 0.25]]
    att.b1.data[...] = [0.1, -0.1]
    att.W2.data[...] = [[1.5], [-0.5]]
    att.b2.data[...] = [0.2]
    att.W0.data[...] = [[1.0, -2.0], [0.5, 0.5]]
    att.b0.data[...] = [0.05, 1.0]
    center, edges = [1.0, -1.0], [[0.5, 2.0], [-1.0, 0.25]]
    want, alpha = oracles.attention(center, edges, *att_lists(att))
    got = static_rep(Tensor(center), [Tensor(e) for e in edges], att)
    np.testing.assert_allclose(got.data, want, atol=1e-15)
    assert sum(alpha) == pytest.approx(1.0)


def test_static_empty_edge_set_is_zero():
    p = small_params(d=3)
    assert static_rep(Tensor(np.ones(3)), [], p.att_uv).data.tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7))
def test_static_is_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    p = randomize(small_params(d=3), seed=seed)
    edges = rng.normal(size=(n, 3))
    center = Tensor(rng.normal(size=3))
    base = static_rep(center, edges, p.att_uu).data
    shuffled = static_rep(center, edges[rng.permutation(n)], p.att_uu).data
    np.testing.assert_allclose(base, shuffled, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- interactional / relational / latent

def test_interactional_examples():
    dyn = Tensor([1.0, 2.0])
    assert interactional_rep(dyn, Tensor([3.0, 4.0])).data.tolist() == [3.0, 8.0]
    assert interactional_rep(dyn, Tensor([1.0, 1.0])).data.tolist() == [1.0, 2.0]
    stat = Tensor([5.0, 6.0])
    assert interactional_rep(dyn, stat, AblationConfig(use_lstm=False)) is stat
    assert interactional_rep(dyn, stat, AblationConfig(use_att=False)) is dyn
    with pytest.raises(DimensionError):
        interactional_rep(dyn, Tensor([1.0, 2.0, 3.0]))


def test_ablation_needs_one_interaction_pathway():
    with pytest.raises(ValueError):
        AblationConfig(use_lstm=False, use_att=False)
    assert AblationConfig.from_name("w/o_SC") == AblationConfig(use_social=False, use_correlative=False)
    for name in ("full", "w/o_LSTM", "w/o_ATT", "w/o_SN", "w/o_CN", "w/o_SC"):
        assert AblationConfig.from_name(name).name == name


def test_relational_disabled_side_is_zero():
    p = randomize(small_params(), seed=1)
    nb = [Tensor([1.0, 1.0])]
    off = AblationConfig(use_social=False)
    assert relational_agg(USER, Tensor([1.0, 0.0]), nb, p, off).data.tolist() == [0.0, 0.0]
    assert relational_agg(ITEM, Tensor([1.0, 0.0]), nb, p, AblationConfig(use_correlative=False)).data.tolist() \
        == [0.0, 0.0]


def test_relational_single_neighbor():
    p = randomize(small_params(), seed=2)
    h = [0.4, -0.9]
    want = oracles.relu(oracles.vadd(oracles.vecmat(h, p.att_uu.W0.data.tolist()), p.att_uu.b0.data.tolist()))
    np.testing.assert_allclose(relational_agg(USER, Tensor([0.0, 1.0]), [Tensor(h)], p).data, want,
                               atol=1e-15)


def test_relational_two_neighbors_match_hand_pass():
    p = randomize(small_params(), seed=9)
    center, nbs = [0.3, 0.6], [[1.0, -0.5], [0.2, 0.8]]
    want, _ = oracles.attention(center, nbs, *att_lists(p.att_vv))
    got = relational_agg(ITEM, Tensor(center), [Tensor(v) for v in nbs], p)
    np.testing.assert_allclose(got.data, want, atol=1e-15)


def test_latent_factor_examples():
    p = small_params()
    p.fill(0.0)
    assert latent_factor(USER, Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), p).data.tolist() == [0.0, 0.0]
    randomize(p, seed=10)
    got = latent_factor(ITEM, Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), p)
    assert got.shape == (2,)
    np.testing.assert_allclose(got.data, oracles.mlp([1.0, 2.0, 3.0, 4.0], as_lists(p.mlp_v)), atol=1e-14)
    with pytest.raises(DimensionError):
        latent_factor(USER, Tensor([1.0]), Tensor([1.0, 2.0]), p)


def test_predict_examples():
    p = small_params()
    p.fill(0.0)
    hu, hv = Tensor([1.0, -1.0]), Tensor([2.0, 0.5])
    assert predict(hu, hv, p, RATING).item() == 0.0
    assert predict(hu, hv, p, RANKING).item() == 0.5
    randomize(p, seed=11)
    want = oracles.mlp([1.0, -1.0, 2.0, 0.5], as_lists(p.head))[0]
    assert predict(hu, hv, p, RATING).item() == pytest.approx(want, abs=1e-14)
    assert predict(hu, hv, p, RANKING).item() == pytest.approx(oracles.sigmoid(want), abs=1e-14)


# ---------------------------------------------------------------- batched forward

def tiny_dataset():
    recs = [InteractionRecord(0, 0, 1 + t % 5, t) for t in range(1, 11)]
    return Dataset.build(recs, [[]], (1, 2, 3, 4, 5), prune=False)


def test_forward_matches_manual_composition():
    ds = tiny_dataset()
    p = randomize(ModelParams(1, 1, 5, d=3, seed=0), seed=12, scale=0.6)
    net = Network(p, ds, Graphs.from_dataset(ds, None))
    got = net.forward([0], [0], [np.inf]).predictions.data[0]

    u_hist, v_hist = ds.user_seqs[0], ds.item_seqs[0]
    xs = [interaction_embedding(USER, r, j, p) for r, j in zip(u_hist.rating_idx, u_hist.counterparts)]
    ys = [interaction_embedding(ITEM, r, i, p) for r, i in zip(v_hist.rating_idx, v_hist.counterparts)]
    h_i = interactional_rep(dynamic_rep(xs, p.lstm_u), static_rep(p.P[0], xs, p.att_uv))
    h_a = interactional_rep(dynamic_rep(ys, p.lstm_v), static_rep(p.Q[0], ys, p.att_vu))
    zero = Tensor(np.zeros(3))
    h_u = latent_factor(USER, h_i, relational_agg(USER, p.P[0], [], p), p)
    h_v = latent_factor(ITEM, h_a, relational_agg(ITEM, p.Q[0], [], p), p)
    assert relational_agg(USER, p.P[0], [], p).data.tolist() == zero.data.tolist()
    want = predict(h_u, h_v, p).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_forward_without_lstm_reduces_to_static_composition():
    ds = tiny_dataset()
    p = randomize(ModelParams(1, 1, 5, d=3, seed=0), seed=13, scale=0.6)
    ab = AblationConfig(use_lstm=False)
    net = Network(p, ds, Graphs.from_dataset(ds, None), ablation=ab)
    got = net.forward([0], [0], [np.inf]).predictions.item()
    u_hist, v_hist = ds.user_seqs[0], ds.item_seqs[0]
    xs = [interaction_embedding(USER, r, j, p) for r, j in zip(u_hist.rating_idx, u_hist.counterparts)]
    ys = [interaction_embedding(ITEM, r, i, p) for r, i in zip(v_hist.rating_idx, v_hist.counterparts)]
    zero = Tensor(np.zeros(3))
    want = predict(p.mlp_u(T.concat([static_rep(p.P[0], xs, p.att_uv), zero])),
                   p.mlp_v(T.concat([static_rep(p.Q[0], ys, p.att_vu), zero])), p).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_forward_handles_entities_without_history():
    ds = tiny_dataset()
    p = randomize(ModelParams(1, 1, 5, d=3, seed=0), seed=14)
    net = Network(p, ds, Graphs.from_dataset(ds, None))
    out = net.forward([0], [0], [0]).predictions.data  # nothing happens before time 0
    assert np.all(np.isfinite(out))


def test_forward_rejects_unknown_ids():
    ds = tiny_dataset()
    net = Network(ModelParams(1, 1, 5, d=2), ds, Graphs.from_dataset(ds, None))
    with pytest.raises(IndexError, match=r"\[0, 1\)"):
        net.forward([1], [0], [np.inf])


def _rating_setup(seed=0, d=4):
    ds = rank_one_ratings(n_users=8, n_items=10, per_user=6, seed=seed)
    corr = build_correlative_graph(build_rating_matrix(ds), 5)
    p = randomize(ModelParams(ds.n_users, ds.n_items, 5, d=d, seed=seed), seed=seed, scale=0.5)
    return ds, corr, p


def test_forward_is_deterministic_given_seed():
    ds, corr, p = _rating_setup()
    net = Network(p, ds, Graphs.from_dataset(ds, corr), neighbor_sample=2, dropout_rate=0.5)
    users, items = np.arange(ds.n_users), np.arange(ds.n_users) % ds.n_items
    a = net.forward(users, items, 5e5, training=True, rng=np.random.default_rng(3)).predictions.data
    b = net.forward(users, items, 5e5, training=True, rng=np.random.default_rng(3)).predictions.data
    assert np.array_equal(a, b)
    c = net.forward(users, items, 5e5).predictions.data
    assert np.array_equal(c, net.forward(users, items, 5e5).predictions.data)


def test_empty_graphs_make_full_model_equal_without_social_and_correlative():
    ds, _, p = _rating_setup(seed=1)
    empty = Graphs([[] for _ in range(ds.n_users)], [[] for _ in range(ds.n_items)])
    full = Network(p, ds, empty)
    wosc = Network(p, ds, empty, ablation=AblationConfig.from_name("w/o_SC"))
    users, items = np.arange(ds.n_users), (np.arange(ds.n_users) * 3) % ds.n_items
    assert np.array_equal(full.forward(users, items, np.inf).predictions.data,
                          wosc.forward(users, items, np.inf).predictions.data)


def test_neighbor_order_does_not_matter():
    ds, corr, p = _rating_setup(seed=2)
    graphs = Graphs.from_dataset(ds, corr)
    rng = np.random.default_rng(0)
    shuffled = Graphs([list(rng.permutation(a)) for a in graphs.social],
                      [list(rng.permutation(a)) for a in graphs.correlative])
    users, items = np.arange(ds.n_users), np.arange(ds.n_users) % ds.n_items
    a = Network(p, ds, graphs).forward(users, items, np.inf).predictions.data
    b = Network(p, ds, shuffled).forward(users, items, np.inf).predictions.data
    assert np.array_equal(a, b)


def test_batching_does_not_change_predictions():
    ds, corr, p = _rating_setup(seed=3)
    net = Network(p, ds, Graphs.from_dataset(ds, corr))
    users = np.arange(ds.n_users)
    items = (users * 7) % ds.n_items
    together = net.forward(users, items, 6e5).predictions.data
    alone = [net.forward([u], [v], 6e5).predictions.item() for u, v in zip(users, items)]
    np.testing.assert_allclose(together, alone, atol=1e-12, rtol=0)


def test_attention_trace_weights_are_normalized():
    ds, corr, p = _rating_setup(seed=4)
    net = Network(p, ds, Graphs.from_dataset(ds, corr))
    out = net.forward(np.arange(ds.n_users), np.arange(ds.n_users) % ds.n_items, np.inf, trace=True)
    blocks = set()
    for block, _, pairs in out.trace.groups():
        w = np.array([x for _, x in pairs])
        blocks.add(block)
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-6
    assert blocks == {"uv", "vu", "uu", "vv"}


# ---------------------------------------------------------------- checkpoint and attention export

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = randomize(ModelParams(4, 6, 5, d=3, lstm_layers=2, seed=0), seed=21)
    save_checkpoint(tmp_path / "m.ckpt", p, {"mode": "rating", "seed": 0})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta["mode"] == "rating" and meta["d"] == 3 and meta["lstm_layers"] == 2
    for (k, a), (k2, b) in zip(p.named_parameters().items(), back.named_parameters().items()):
        assert k == k2 and np.array_equal(a.data, b.data)


def test_export_singleton_neighborhood(tmp_path):
    from socialrec.model import AttentionTrace
    tr = AttentionTrace()
    tr.add("uu", 3, [7], [1.0])
    export_attention(tr, tmp_path / "a.tsv")
    assert (tmp_path / "a.tsv").read_text() == "uu\t3\t7\t1.0\n"


def test_export_uniform_neighborhood(tmp_path):
    p = small_params(d=3)
    e = Tensor([0.5, -0.5, 1.0])
    from socialrec.model import AttentionTrace, _attend_single
    _, w = _attend_single(Tensor([1.0, 1.0, 1.0]), [e] * 4, p.att_uu)
    tr = AttentionTrace()
    tr.add("uu", 0, [1, 2, 3, 4], w)
    export_attention(tr, tmp_path / "a.tsv")
    groups = read_attention(tmp_path / "a.tsv")
    assert [x for _, x in groups[("uu", 0)]] == [0.25] * 4


def test_case_study_dump_layout(tmp_path):
    ds = star_fixture(n_neighbors=10)
    corr = build_correlative_graph(build_rating_matrix(ds), 10)
    p = randomize(ModelParams(ds.n_users, ds.n_items, 5, d=4), seed=0, scale=0.5)
    net = Network(p, ds, Graphs.from_dataset(ds, corr))
    out = net.forward([0], [0], [np.inf], trace=True)
    export_attention(out.trace, tmp_path / "a.tsv")
    groups = read_attention(tmp_path / "a.tsv")
    assert len(groups[("uu", 0)]) == 10 and len(groups[("vv", 0)]) == 10
    for pairs in groups.values():
        assert abs(sum(w for _, w in pairs) - 1.0) < 1e-6
