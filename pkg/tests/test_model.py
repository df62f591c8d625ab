import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from extcontact import autograd as ag
from extcontact.autograd import Tensor
from extcontact.encoders import (ModelConfig, encode_pointcloud, encode_rotation, encode_tactile,
                                 encode_wrench)
from extcontact.errors import DataError, NumericalError
from extcontact.fusion import (ALL, PRESENCE_PATTERNS, ModalityPresence, apply_training_mask,
                               substitute_missing, trunk_forward)
from extcontact.model import (Batch, ContactModel, head_forward, load_checkpoint, predict_frame,
                              save_checkpoint)
from extcontact.synth import SceneConfig, generate_episode
from extcontact.training import _random_batch, small_model_config


@pytest.fixture(scope="module")
def small():
    return ContactModel(small_model_config())


@pytest.fixture(scope="module")
def desk():
    return ContactModel(ModelConfig(dtype="float64"))


@pytest.fixture(scope="module")
def frame():
    return generate_episode(SceneConfig(mode="point", frames=1), 0).frames[0]


# -- encoders -------------------------------------------------------------
def test_encoder_shapes(desk, frame):
    T, D = desk.cfg.tokens, desk.cfg.d_model
    assert encode_tactile(frame.tactile_left, frame.tactile_right, desk).shape == (T, D)
    assert encode_rotation(np.array([1.0, 0, 0, 0]), desk).shape == (T, D)
    assert encode_wrench(np.zeros(6), desk).shape == (T, D)
    assert encode_pointcloud(frame.cloud, desk).shape == (T, D)
    for out in (encode_rotation(np.array([1.0, 0, 0, 0]), desk), encode_wrench(np.zeros(6), desk)):
        assert np.all(np.isfinite(out))


@pytest.mark.parametrize("hw", [(8, 8), (6, 10), (5, 7)])
def test_tactile_any_resolution(hw):
    cfg = ModelConfig(tactile_h=hw[0], tactile_w=hw[1], dtype="float64")
    m = ContactModel(cfg)
    gh, gw = cfg.patch_grid
    assert m.tactile.num_patches == gh * gw == -(-hw[0] // 4) * -(-hw[1] // 4)
    z = np.random.default_rng(0).normal(size=(*hw, 2))
    assert encode_tactile(z, -z, m).shape == (cfg.tokens, cfg.d_model)
    with pytest.raises(DataError):
        encode_tactile(np.zeros((hw[0] + 1, hw[1], 2)), np.zeros((hw[0] + 1, hw[1], 2)), m)


def test_tactile_zero_input_zero_patch_embedding(desk):
    maps = Tensor(np.zeros((1, 8, 8, 2)))
    desk.tactile.embed.bias.data[...] = 0.0
    assert not desk.tactile.embed_patches(maps).data.any()


def test_tactile_left_right_ordered(desk):
    rng = np.random.default_rng(1)
    l, r = rng.normal(size=(8, 8, 2)), rng.normal(size=(8, 8, 2))
    assert not np.allclose(encode_tactile(l, r, desk), encode_tactile(r, l, desk))


def test_rotation_sign_not_identified(desk):
    q = np.array([0.5, 0.5, 0.5, 0.5])
    assert not np.allclose(encode_rotation(q, desk), encode_rotation(-q, desk))
    with pytest.raises(DataError):
        encode_rotation(np.zeros(4), desk)


def test_wrench_nonlinear_and_finite_check(desk):
    w = np.array([1.0, -2, 3, 0.1, 0.2, -0.3])
    a, b, z = encode_wrench(w, desk), encode_wrench(3 * w, desk), encode_wrench(0 * w, desk)
    assert not np.allclose(b - z, 3 * (a - z))
    with pytest.raises(DataError):
        encode_wrench(np.array([np.inf, 0, 0, 0, 0, 0]), desk)


def test_point_stage_permutation_equivariant(desk):
    x = Tensor(np.random.default_rng(2).normal(size=(1, 1024, 3)))
    perm = np.random.default_rng(3).permutation(1024)
    f = desk.points.point_features(x).data
    fp = desk.points.point_features(Tensor(x.data[:, perm])).data
    np.testing.assert_allclose(fp, f[:, perm], rtol=1e-12)


def test_single_subset_is_global_average():
    m = ContactModel(dataclasses.replace(small_model_config(), tokens=1))
    cloud = np.random.default_rng(0).normal(size=(1, 16, 3))
    x, _ = m.points.normalise(Tensor(cloud))
    feats = m.points.point_features(x)
    want = m.points.project(ag.mean(feats, axis=1)).data
    np.testing.assert_allclose(encode_pointcloud(cloud[0], m), want, rtol=1e-12)


def test_identical_points_identical_tokens(desk):
    cloud = Tensor(np.tile([[0.1, 0.2, 0.6]], (1, 1024, 1)))
    x, _ = desk.points.normalise(cloud)
    feats = desk.points.point_features(x).data
    assert np.all(feats == feats[:, :1])
    pooled = desk.points.pool @ feats[0]
    np.testing.assert_allclose(pooled, np.broadcast_to(pooled[:1], pooled.shape), rtol=1e-12)


def test_subsets_partition_points(desk):
    idx = np.concatenate(desk.points.subsets)
    assert sorted(idx.tolist()) == list(range(1024))
    with pytest.raises(DataError):
        encode_pointcloud(np.zeros((100, 3)), desk)


# -- fusion -----------------------------------------------------------------
def _tokens(B=2, T=2, D=8, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(B, 4 * T, D)))


def test_mask_ratio_zero_and_one():
    x, tok = _tokens(), Tensor(np.arange(8.0))
    out, rec = apply_training_mask(x, 0.0, tok, 0)
    np.testing.assert_array_equal(out.data, x.data)
    assert not rec.any()
    out, rec = apply_training_mask(x, 1.0, tok, 0)
    assert rec.all() and np.all(out.data == tok.data)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.floats(0, 1), st.integers(0, 10**6))
def test_mask_counts_and_determinism(B, T, ratio, seed):
    x, tok = _tokens(B, T, 3), Tensor(np.full(3, 7.0))
    out, rec = apply_training_mask(x, ratio, tok, seed)
    k = int(np.floor(ratio * 4 * T + 1e-9))
    assert np.all(rec.sum(axis=1) == k)
    np.testing.assert_array_equal(out.data[rec], np.broadcast_to(tok.data, (rec.sum(), 3)))
    np.testing.assert_array_equal(out.data[~rec], x.data[~rec])
    _, rec2 = apply_training_mask(x, ratio, tok, seed)
    np.testing.assert_array_equal(rec, rec2)


def test_half_ratio_masks_eight_of_sixteen():
    _, rec = apply_training_mask(_tokens(1, 4, 8), 0.5, Tensor(np.zeros(8)), 5)
    assert rec.sum() == 8


def test_substitute_missing_slots():
    T, D = 2, 3
    toks = {m: Tensor(np.full((1, T, D), float(i + 1))) for i, m in
            enumerate(("pointcloud", "rotation", "wrench", "tactile"))}
    tok = Tensor(np.full(D, -5.0))
    full = substitute_missing(toks, ALL, tok).data
    np.testing.assert_array_equal(full, np.concatenate([toks[m].data for m in toks], axis=1))
    out = substitute_missing(toks, ModalityPresence(tactile=False), tok).data
    assert out.shape == (1, 4 * T, D)
    assert np.all(out[:, 3 * T:] == -5.0) and np.array_equal(out[:, :3 * T], full[:, :3 * T])
    out = substitute_missing(toks, ModalityPresence(tactile=False, wrench=False), tok).data
    assert np.all(out[:, 2 * T:] == -5.0) and np.array_equal(out[:, :2 * T], full[:, :2 * T])
    with pytest.raises(ValueError):
        ModalityPresence(False, False, False, False)


def test_substitution_equals_masking_those_slots(small):
    batch = _random_batch(small.cfg, 2, np.random.default_rng(0))
    T = small.cfg.tokens
    seq_sub, _, _ = small.fused_sequence(batch, ModalityPresence(wrench=False))
    seq_all, _, _ = small.fused_sequence(batch, ALL)
    manual = seq_all.data.copy()
    manual[:, 2 * T:3 * T] = small.mask_token.data
    np.testing.assert_array_equal(seq_sub.data, manual)


def test_trunk_output_and_pooling_symmetry(small):
    T, D = small.cfg.tokens, small.cfg.d_model
    seq = np.random.default_rng(0).normal(size=(4 * T, D))
    g = trunk_forward(seq, small)
    assert g.shape == (D,)
    embedded = seq + small.trunk.slot_embed.data
    perm = np.random.default_rng(1).permutation(4 * T)
    with ag.no_grad():
        a = small.trunk.body(Tensor(embedded[None])).data
        b = small.trunk.body(Tensor(embedded[perm][None])).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        trunk_forward(seq[:-1], small)


def test_trunk_nan_fails_fast(small):
    seq = np.full((4 * small.cfg.tokens, small.cfg.d_model), np.nan)
    with pytest.raises(NumericalError):
        trunk_forward(seq, small)


def test_eval_equals_zero_ratio_training_forward(small):
    batch = _random_batch(small.cfg, 2, np.random.default_rng(0))
    with ag.no_grad():
        plain = small(batch).data
        seq, origin, rec = small.fused_sequence(batch, ALL, np.random.default_rng(0), mask_ratio=0.0)
        assert rec is None
    np.testing.assert_array_equal(small.predict(batch), plain)


def test_trunk_input_length_for_every_pattern(small):
    batch = _random_batch(small.cfg, 3, np.random.default_rng(0))
    for p in [*PRESENCE_PATTERNS.values(), ModalityPresence(pointcloud=False)]:
        seq, _, _ = small.fused_sequence(batch, p)
        assert seq.shape == (3, 4 * small.cfg.tokens, small.cfg.d_model)


def test_dropping_tactile_changes_only_tactile_rows(small):
    batch = _random_batch(small.cfg, 1, np.random.default_rng(4))
    T = small.cfg.tokens
    a = small.fused_sequence(batch, ALL)[0].data
    b = small.fused_sequence(batch, ModalityPresence(tactile=False))[0].data
    np.testing.assert_array_equal(a[:, :3 * T], b[:, :3 * T])
    assert not np.allclose(a[:, 3 * T:], b[:, 3 * T:])


def test_nomask_zero_feeds_absent_modalities():
    m = ContactModel(dataclasses.replace(small_model_config(), variant="nomask", mask_ratio=0.0))
    batch = _random_batch(m.cfg, 1, np.random.default_rng(4))
    T = m.cfg.tokens
    seq = m.fused_sequence(batch, ModalityPresence(tactile=False))[0].data
    z = np.zeros_like(batch.tactile_left)
    with ag.no_grad():
        want = m.tactile(Tensor(z), Tensor(z)).data
    np.testing.assert_allclose(seq[:, 3 * T:], want, rtol=1e-12)


def test_visual_ignores_wrench_and_tactile():
    m = ContactModel(dataclasses.replace(small_model_config(), variant="visual", mask_ratio=0.0))
    rng = np.random.default_rng(5)
    a = _random_batch(m.cfg, 2, rng)
    b = dataclasses.replace(a, wrench=rng.normal(size=a.wrench.shape),
                            tactile_left=rng.normal(size=a.tactile_left.shape))
    np.testing.assert_array_equal(m.predict(a), m.predict(b))
    T = m.cfg.tokens
    seq = m.fused_sequence(a, ALL)[0].data
    assert np.all(seq[:, 2 * T:] == m.mask_token.data)


def test_mask_token_receives_gradient(small):
    batch = _random_batch(small.cfg, 2, np.random.default_rng(0))
    small.zero_grad()
    out = small(batch, mask_rng=np.random.default_rng(0))
    ag.mean(ag.square(out - Tensor(batch.labels))).backward()
    assert np.abs(small.mask_token.grad).sum() > 0


# -- head ------------------------------------------------------------------
def test_predict_frame_range(desk, frame):
    for p in PRESENCE_PATTERNS.values():
        out = predict_frame(frame, p, desk)
        assert out.shape == (1024,)
        assert np.all(np.isfinite(out)) and np.all(np.abs(out) < 1)


def test_head_equivariance_and_independence(small):
    rng = np.random.default_rng(0)
    g = rng.normal(size=small.cfg.d_model)
    pts = rng.normal(0, 0.05, (20, 3))
    base = head_forward(g, pts, small)
    perm = rng.permutation(20)
    np.testing.assert_allclose(head_forward(g, pts[perm], small), base[perm], rtol=1e-12)
    edited = pts.copy()
    edited[5] += 0.3
    out = head_forward(g, edited, small)
    keep = np.arange(20) != 5
    np.testing.assert_array_equal(out[keep], base[keep])
    dup = np.vstack([pts[:3], pts[:1]])
    o = head_forward(g, dup, small)
    assert o[0] == o[3]
    with pytest.raises(DataError):
        head_forward(np.full(small.cfg.d_model, np.nan), pts, small)
    with pytest.raises(DataError):
        head_forward(g, np.zeros((0, 3)), small)


def test_query_points_do_not_change_encoder_input(desk, frame):
    rng = np.random.default_rng(0)
    queries = frame.cloud[:50].astype(float) + rng.normal(0, 0.001, (50, 3))
    a = predict_frame(frame, ALL, desk, sample_points=queries)
    queries[10] += 0.05
    b = predict_frame(frame, ALL, desk, sample_points=queries)
    keep = np.arange(50) != 10
    np.testing.assert_array_equal(a[keep], b[keep])


# -- checkpoints --------------------------------------------------------------
@pytest.mark.parametrize("dtype", ["float32", "float64"])
def test_checkpoint_round_trip(tmp_path, dtype, frame):
    m = ContactModel(ModelConfig(dtype=dtype, seed=3))
    save_checkpoint(m, tmp_path / "m.ckpt", extra={"note": 1})
    m2, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": 1} and m2.cfg == m.cfg
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    np.testing.assert_array_equal(predict_frame(frame, ALL, m), predict_frame(frame, ALL, m2))


def test_parameter_shapes_identical_across_masked_variants():
    shapes = {v: [(n, p.shape) for n, p in ContactModel(ModelConfig(variant=v)).named_parameters()]
              for v in ("unic", "nomask", "visual")}
    assert shapes["unic"] == shapes["nomask"] == shapes["visual"]


def test_e2e_regresses_points():
    m = ContactModel(dataclasses.replace(small_model_config(), variant="e2e", regression_points=5))
    batch = _random_batch(m.cfg, 2, np.random.default_rng(0))
    assert m.predict(batch).shape == (2, 5, 3)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(mask_ratio=1.5)
    with pytest.raises(ValueError):
        ModelConfig(d_model=0)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"bogus": 1})
