import numpy as np
import pytest

from flowvla import numerics as nx
from flowvla.model import (
    COMPACT,
    DESK,
    TINY,
    ModelConfig,
    SmallPolicy,
    TwoExpertPolicy,
    build_block_mask,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from flowvla.model.checkpoint import dumps, loads
from flowvla.model.small import _modulate
from flowvla.verify import cache_gap, prefix_isolation, random_obs

CFG = TINY.replace(max_images=3, image_size=16, patch_size=4, horizon=6, action_dim=8)


def test_block_mask_examples():
    m = build_block_mask(2, 1, 3)
    assert m.shape == (6, 6)
    np.testing.assert_array_equal(m[0], [1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(m[2], [1, 1, 1, 0, 0, 0])
    assert m[3:].all()


@pytest.mark.parametrize("p,s,a", [(0, 0, 3), (4, 1, 0), (3, 0, 2), (5, 1, 4)])
def test_block_mask_rows_are_unions_of_earlier_blocks(p, s, a):
    m = build_block_mask(p, s, a)
    blocks = np.array([0] * p + [1] * s + [2] * a)
    for i in range(len(blocks)):
        np.testing.assert_array_equal(m[i], blocks <= blocks[i])


def test_block_mask_rejects_multi_token_state():
    with pytest.raises(ValueError):
        build_block_mask(2, 2, 3)


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(num_heads=3, num_kv_heads=2)
    with pytest.raises(ValueError):
        ModelConfig(horizon=0)
    assert DESK.num_kv_heads == 1 and DESK.horizon == 50 and DESK.action_dim == 8


def test_prefix_token_counts():
    model = TwoExpertPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1, cameras=1, tokens=1)
    assert model.embed_prefix(obs).counts[0] == 16 + 1
    obs = random_obs(CFG, np.random.default_rng(0), batch=1, cameras=2, tokens=3)
    assert model.embed_prefix(obs).counts[0] == 2 * 16 + 3


def test_masked_slot_pixels_do_not_matter():
    model = TwoExpertPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1, cameras=2, tokens=2)
    noisy = np.random.default_rng(1).standard_normal((1, CFG.horizon, CFG.action_dim))
    before = model.velocity(obs, noisy, [0.3]).data
    obs.images[:, 2] = 123.0
    np.testing.assert_array_equal(model.velocity(obs, noisy, [0.3]).data, before)


def test_token_out_of_vocab():
    model = TwoExpertPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1)
    obs.tokens[0, 0] = CFG.vocab_size
    with pytest.raises(ValueError, match="vocab"):
        model.embed_prefix(obs)


def test_state_embedding_is_affine():
    model = TwoExpertPolicy.init(CFG, 0)
    model.params["proj.state.b"].data = np.random.default_rng(2).standard_normal(CFG.expert_width)
    q = np.random.default_rng(3).standard_normal((1, CFG.action_dim))
    e0 = model.embed_state(np.zeros_like(q)).data
    np.testing.assert_array_equal(e0[0, 0], model.params["proj.state.b"].data)
    np.testing.assert_allclose(model.embed_state(2 * q).data - e0, 2 * (model.embed_state(q).data - e0), atol=1e-12)
    assert e0.shape == (1, 1, CFG.expert_width)


def test_action_embedding_depends_on_time_and_every_weight():
    model = TwoExpertPolicy.init(CFG, 0)
    a = np.random.default_rng(4).standard_normal((1, CFG.horizon, CFG.action_dim))
    assert not np.allclose(model.embed_action(a, [0.1]).data, model.embed_action(a, [0.9]).data)
    w, d = CFG.expert_width, CFG.action_dim
    shapes = {"w1": (w, d), "w2": (w, 2 * w), "w3": (w, w)}
    base = model.embed_action(a, [0.5]).data
    for k, shape in shapes.items():
        p = model.params[f"proj.action_in.{k}"]
        assert p.shape == shape
        p.data = p.data + 1e-3
        assert not np.array_equal(model.embed_action(a, [0.5]).data, base)
        p.data = p.data - 1e-3


def test_decode_actions_bias_and_linearity():
    model = TwoExpertPolicy.init(CFG, 0)
    model.params["proj.action_out.b"].data = np.arange(CFG.action_dim, dtype=float)
    zero = model.decode_actions(nx.Tensor(np.zeros((1, CFG.horizon, CFG.expert_width)))).data
    np.testing.assert_array_equal(zero[0], np.tile(np.arange(CFG.action_dim), (CFG.horizon, 1)))
    h = np.random.default_rng(5).standard_normal((1, CFG.horizon, CFG.expert_width))
    lin = lambda x: model.decode_actions(nx.Tensor(x)).data - zero  # noqa: E731
    np.testing.assert_allclose(lin(3 * h), 3 * lin(h), atol=1e-12)
    with pytest.raises(ValueError):
        model.decode_actions(nx.Tensor(np.zeros((1, CFG.horizon + 1, CFG.expert_width))))


def test_desk_horizon_output_shape():
    model = TwoExpertPolicy.init(DESK.replace(depth=1), 0)
    obs = random_obs(DESK, np.random.default_rng(0), batch=1, cameras=1, tokens=2)
    out = model.velocity(obs, np.zeros((1, 50, 8)), [0.2])
    assert out.shape == (1, 50, 8)


@pytest.mark.parametrize("seed", range(3))
def test_prefix_outputs_invariant_to_action_expert(seed):
    assert prefix_isolation(seed)


def test_single_token_attention_returns_value_path():
    from flowvla.model.layers import attend

    rng = np.random.default_rng(0)
    q, k, v = (nx.Tensor(rng.standard_normal((1, 1, 2, 1, 4))) for _ in range(3))
    out = attend(q, nx.Tensor(k.data[:, :, :1]), nx.Tensor(v.data[:, :, :1]), None).data
    np.testing.assert_allclose(out, np.broadcast_to(v.data[:, :, :1], out.shape))


@pytest.mark.parametrize("arch", ["two-expert", "small"])
def test_cached_matches_uncached(arch):
    assert cache_gap(arch, 0) < 1e-10


def test_cache_shape_mismatch_and_foreign_observation():
    model = TwoExpertPolicy.init(CFG, 0)
    rng = np.random.default_rng(0)
    obs = random_obs(CFG, rng, batch=2)
    cache = model.build_cache(obs)
    with pytest.raises(ValueError):
        model.velocity(obs, np.zeros((3, CFG.horizon, CFG.action_dim)), np.zeros(3), cache=cache)
    other = random_obs(CFG, rng, batch=2)
    with pytest.raises(ValueError, match="different observation"):
        model.velocity(other, np.zeros((2, CFG.horizon, CFG.action_dim)), np.zeros(2), cache=cache)


def test_cache_prefix_len_and_determinism():
    model = TwoExpertPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1, cameras=2, tokens=3)
    c1, c2 = model.build_cache(obs), model.build_cache(obs)
    assert c1.prefix_len[0] == 2 * 16 + 3 + 1
    for a, b in zip(c1.keys + c1.values, c2.keys + c2.values):
        assert np.array_equal(a, b)


def test_padded_state_dims_permutation_invariant():
    model = TwoExpertPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1, state_dim=3)
    noisy = np.random.default_rng(1).standard_normal((1, CFG.horizon, CFG.action_dim))
    before = model.velocity(obs, noisy, [0.4]).data
    obs.state[:, [5, 6]] = obs.state[:, [6, 5]]
    np.testing.assert_array_equal(model.velocity(obs, noisy, [0.4]).data, before)


def test_parameter_counts_per_expert():
    for cfg in (DESK, COMPACT):
        counts = TwoExpertPolicy.init(cfg, 0).param_counts()
        assert counts["action"] < counts["prefix"]
        assert counts["total"] == counts["prefix"] + counts["action"] + counts["proj"]


def test_small_variant_identity_blocks_at_init():
    model = SmallPolicy.init(CFG, 0)
    obs = random_obs(CFG, np.random.default_rng(0), batch=1)
    enc, valid = model.encode(obs)
    kv = model._cross_kv(enc)
    a = np.random.default_rng(1).standard_normal((1, CFG.horizon, CFG.action_dim))
    out = model.decode(a, [0.3], kv, valid).data
    p = model.params
    x0 = a @ p["decoder.action_in.w"].data.T + p["decoder.action_in.b"].data + p["decoder.pos"].data
    zero = nx.Tensor(np.zeros((1, 1, CFG.expert_width)))
    np.testing.assert_allclose(out, _modulate(nx.Tensor(x0), zero, zero).data, atol=1e-12)
    assert model.velocity(obs, a, [0.3]).shape == (1, CFG.horizon, CFG.action_dim)


def test_small_encoder_ignores_actions():
    model = SmallPolicy.init(CFG, 0)
    for p in model.params.values():
        p.data = p.data + 0.1
    obs = random_obs(CFG, np.random.default_rng(0), batch=1)
    e1, _ = model.encode(obs)
    model.velocity(obs, np.ones((1, CFG.horizon, CFG.action_dim)), [0.5])
    e2, _ = model.encode(obs)
    np.testing.assert_array_equal(e1.data, e2.data)
    assert "decoder" not in {model.group_of(n) for n in model.params if n.startswith("encoder")}


@pytest.mark.parametrize("arch", ["two-expert", "small"])
def test_checkpoint_round_trip_bit_exact(arch, tmp_path):
    model = build_model(CFG, arch, 3)
    save_checkpoint(tmp_path / "m.bin", model, {"note": "x"})
    again, meta = load_checkpoint(tmp_path / "m.bin")
    assert meta == {"note": "x"} and again.variant == model.variant and again.config == model.config
    assert dumps(again, meta) == (tmp_path / "m.bin").read_bytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        loads(b"not a checkpoint")
