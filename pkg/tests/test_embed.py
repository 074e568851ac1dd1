import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossrec.data import InteractionSet
from crossrec.embed import (
    EmbeddingSpace,
    EmbedTrainConfig,
    bpr_triplet_grad,
    bpr_triplet_loss,
    cml_triplet_grad,
    cml_triplet_loss,
    distance,
    load_embeddings,
    project_unit_ball,
    save_embeddings,
    train_embeddings,
)
from crossrec.errors import (
    ConfigError,
    DimensionMismatch,
    EmptyDataset,
    NonFiniteInput,
)

# frozen oracle values, computed with mpmath at 30 digits:
#   log(1 + exp(-10)) and log(1 + e)
BPR_LOSS_AT_10 = 4.5398899216864646769e-05
BPR_LOSS_AT_MINUS_1 = 1.313261687518222834


# -- distance and projection ---------------------------------------------

def test_distance_values():
    assert distance([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0, abs=1e-12)
    assert distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert distance([3.0], [-1.0]) == pytest.approx(16.0, abs=1e-12)


def test_distance_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        distance([1.0, 2.0], [1.0])


def test_project_unit_ball_values():
    np.testing.assert_allclose(project_unit_ball([0.3, 0.4]), [0.3, 0.4])
    np.testing.assert_allclose(project_unit_ball([3.0, 4.0]), [0.6, 0.8],
                               atol=1e-12)
    z = project_unit_ball([0.0, 0.0, 0.0])
    np.testing.assert_array_equal(z, [0.0, 0.0, 0.0])


def test_project_unit_ball_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        project_unit_ball([np.nan, 0.0])
    with pytest.raises(NonFiniteInput):
        project_unit_ball([np.inf, 1.0])


@settings(max_examples=80)
@given(arrays(np.float64, st.integers(1, 8),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_projection_is_idempotent_and_non_expansive(x):
    p = project_unit_ball(x)
    assert np.linalg.norm(p) <= 1.0 + 1e-12
    np.testing.assert_allclose(project_unit_ball(p), p, atol=1e-12)
    # never increases the norm
    assert np.linalg.norm(p) <= np.linalg.norm(x) + 1e-12


# -- triplet losses ------------------------------------------------------

def test_cml_triplet_loss_values():
    u = [0.0, 0.0]
    near = [0.1, 0.0]   # d = 0.01
    far = [1.0, 0.0]    # d = 1.0
    # active hinge: 1 + 0.01 - 1.0
    assert cml_triplet_loss(u, near, far, 1.0) == pytest.approx(0.01,
                                                                abs=1e-12)
    # inactive: positive much closer than negative with a small margin
    assert cml_triplet_loss(u, near, far, 0.5) == 0.0
    # zero vectors: loss equals the margin
    assert cml_triplet_loss([0.0], [0.0], [0.0], 1.5) == 1.5


@settings(max_examples=60)
@given(arrays(np.float64, 4, elements=st.floats(-2, 2, allow_nan=False)),
       arrays(np.float64, 4, elements=st.floats(-2, 2, allow_nan=False)),
       arrays(np.float64, 4, elements=st.floats(-2, 2, allow_nan=False)),
       st.floats(0.1, 2.0))
def test_cml_loss_zero_iff_gap_exceeds_margin(u, vp, vn, margin):
    loss = cml_triplet_loss(u, vp, vn, margin)
    gap = distance(u, vn) - distance(u, vp)
    if gap >= margin:
        assert loss == 0.0
    else:
        assert loss == pytest.approx(margin - gap, rel=1e-9, abs=1e-9)


def test_bpr_triplet_loss_frozen_values():
    # score gap of 10
    u = [1.0, 0.0]
    vp = [10.0, 0.0]
    vn = [0.0, 0.0]
    assert bpr_triplet_loss(u, vp, vn) == pytest.approx(BPR_LOSS_AT_10,
                                                        rel=1e-12)
    # score gap of -1
    assert bpr_triplet_loss([1.0], [0.0], [1.0]) == pytest.approx(
        BPR_LOSS_AT_MINUS_1, rel=1e-12)
    # zero gap
    assert bpr_triplet_loss([0.0], [5.0], [5.0]) == pytest.approx(
        np.log(2.0), rel=1e-12)


def test_bpr_loss_is_stable_for_huge_gaps():
    assert bpr_triplet_loss([1.0], [1000.0], [0.0]) == 0.0
    big = bpr_triplet_loss([1.0], [0.0], [1000.0])
    assert big == pytest.approx(1000.0, rel=1e-9)


# -- analytic gradients vs central differences ---------------------------

def _central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_cml_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 25:
        u, vp, vn = rng.normal(size=(3, 5))
        margin = 1.0
        arg = margin + distance(u, vp) - distance(u, vn)
        if abs(arg) < 1e-3:  # keep away from the hinge kink
            continue
        gu, gp, gn = cml_triplet_grad(u, vp, vn, margin)
        fu = _central_diff(lambda x: cml_triplet_loss(x, vp, vn, margin), u)
        fp = _central_diff(lambda x: cml_triplet_loss(u, x, vn, margin), vp)
        fn = _central_diff(lambda x: cml_triplet_loss(u, vp, x, margin), vn)
        for a, b in ((gu, fu), (gp, fp), (gn, fn)):
            np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-7)
        checked += 1


def test_bpr_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(25):
        u, vp, vn = rng.normal(size=(3, 5))
        gu, gp, gn = bpr_triplet_grad(u, vp, vn)
        fu = _central_diff(lambda x: bpr_triplet_loss(x, vp, vn), u)
        fp = _central_diff(lambda x: bpr_triplet_loss(u, x, vn), vp)
        fn = _central_diff(lambda x: bpr_triplet_loss(u, vp, x), vn)
        for a, b in ((gu, fu), (gp, fp), (gn, fn)):
            np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-7)


def test_hinge_subgradient_is_zero_at_the_boundary():
    # arrange an exactly-zero hinge argument: d_pos = 0, d_neg = margin
    u = np.zeros(2)
    vp = np.zeros(2)
    vn = np.array([1.0, 0.0])
    gu, gp, gn = cml_triplet_grad(u, vp, vn, 1.0)
    assert not gu.any() and not gp.any() and not gn.any()


# -- config and space types ----------------------------------------------

def test_embed_config_validation():
    with pytest.raises(ConfigError):
        EmbedTrainConfig(dim=0)
    with pytest.raises(ConfigError):
        EmbedTrainConfig(margin=0.0)
    with pytest.raises(ConfigError):
        EmbedTrainConfig(learning_rate=-0.1)
    with pytest.raises(ConfigError):
        EmbedTrainConfig(l2_reg=-1e-9)


def test_metric_space_rejects_rows_outside_the_ball():
    U = np.array([[0.9, 0.9]])  # norm > 1
    V = np.zeros((1, 2))
    with pytest.raises(ValueError):
        EmbeddingSpace(("u",), ("i",), U, V, "metric")
    # the same rows are fine for an inner-product space
    EmbeddingSpace(("u",), ("i",), U, V, "inner")


def _toy_interactions(n_users=6, n_items=9, per_user=4):
    pairs = [(f"u{a}", f"i{(a * 3 + j) % n_items}")
             for a in range(n_users) for j in range(per_user)]
    return InteractionSet(pairs, items=[f"i{b}" for b in range(n_items)])


# -- training ------------------------------------------------------------

def test_train_embeddings_metric_loss_decreases_and_stays_in_ball():
    data = _toy_interactions()
    cfg = EmbedTrainConfig(dim=8, learning_rate=0.05, epochs=50,
                           batch_size=8, seed=3)
    history = []
    space = train_embeddings(data, cfg, objective="metric",
                             loss_history=history)
    assert len(history) == 50
    assert history[49] < history[0]
    norms = np.linalg.norm(np.vstack([space.U, space.V]), axis=1)
    assert norms.max() <= 1.0 + 1e-6
    assert space.kind == "metric"
    assert space.user_ids == data.user_ids
    assert space.item_ids == data.item_ids


def test_train_embeddings_inner_loss_decreases():
    data = _toy_interactions()
    cfg = EmbedTrainConfig(dim=8, learning_rate=0.05, epochs=50,
                           batch_size=8, l2_reg=0.001, seed=3)
    history = []
    space = train_embeddings(data, cfg, objective="inner",
                             loss_history=history)
    assert history[49] < history[0]
    assert space.kind == "inner"


def test_train_embeddings_is_deterministic():
    data = _toy_interactions()
    cfg = EmbedTrainConfig(dim=4, learning_rate=0.02, epochs=10,
                           batch_size=4, seed=11)
    a = train_embeddings(data, cfg)
    b = train_embeddings(data, cfg)
    np.testing.assert_array_equal(a.U, b.U)
    np.testing.assert_array_equal(a.V, b.V)
    c = train_embeddings(data, EmbedTrainConfig(
        dim=4, learning_rate=0.02, epochs=10, batch_size=4, seed=12))
    assert not np.array_equal(a.U, c.U)


def test_train_embeddings_empty_dataset():
    empty = InteractionSet([], users=["u"], items=["i"])
    with pytest.raises(EmptyDataset):
        train_embeddings(empty, EmbedTrainConfig(dim=2, epochs=1))


def test_negative_sampling_never_hits_observed_pairs():
    # a user holding all items but one forces heavy rejection
    items = [f"i{k}" for k in range(6)]
    pairs = [("u0", i) for i in items[:5]]
    pairs += [(f"u{k}", items[j]) for k in range(1, 4) for j in range(3)]
    data = InteractionSet(pairs, items=items)
    cfg = EmbedTrainConfig(dim=3, learning_rate=0.05, epochs=30,
                           batch_size=4, seed=0)
    space = train_embeddings(data, cfg)  # would loop forever on a bug
    assert space.U.shape == (4, 3)


def test_early_stopping_with_validation_hook():
    data = _toy_interactions()
    calls = []

    def hook(space):
        calls.append(1)
        return float(-len(calls))  # strictly decreasing: never improves

    cfg = EmbedTrainConfig(dim=4, learning_rate=0.02, epochs=200,
                           batch_size=8, patience=5, seed=1)
    space = train_embeddings(data, cfg, validation_hook=hook)
    # first epoch is best, then patience runs out
    assert len(calls) == 6
    # the returned space is the best snapshot, not the last state
    again = train_embeddings(data, EmbedTrainConfig(
        dim=4, learning_rate=0.02, epochs=1, batch_size=8, seed=1))
    np.testing.assert_array_equal(space.U, again.U)


# -- file format ---------------------------------------------------------

def test_embedding_save_load_round_trip(tmp_path):
    data = _toy_interactions()
    cfg = EmbedTrainConfig(dim=5, learning_rate=0.05, epochs=5,
                           batch_size=8, seed=2)
    space = train_embeddings(data, cfg)
    path = tmp_path / "emb.txt"
    save_embeddings(space, path)

    header = path.read_text().splitlines()[0].split()
    assert header == ["K", "5", "users", "6", "items", "9",
                      "kind", "metric"]
    back = load_embeddings(path)
    assert back.kind == space.kind
    assert back.user_ids == space.user_ids
    assert back.item_ids == space.item_ids
    # nine significant digits quantize at <= 5e-9 relative error
    np.testing.assert_allclose(back.U, space.U, rtol=5.1e-9, atol=1e-12)
    np.testing.assert_allclose(back.V, space.V, rtol=5.1e-9, atol=1e-12)

    save_embeddings(back, tmp_path / "emb2.txt")
    assert (tmp_path / "emb2.txt").read_bytes() == path.read_bytes()


def test_load_embeddings_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a header\n")
    with pytest.raises(ValueError):
        load_embeddings(p)
