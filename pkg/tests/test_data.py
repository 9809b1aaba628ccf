import numpy as np
import pytest

from flowvla.data import (
    Episode,
    Segment,
    gen_episodes,
    mixture_weights,
    read_dataset,
    read_episode,
    sample_batch,
    write_episode,
    write_episodes,
)
from flowvla.data.mixture import batch_rng, chunk_at, dataset_mixture, draw_keys, ordered_batches
from flowvla.data.storage import episode_dir
from flowvla.embodiment import D_MAX, EmbodimentSpec, get, pad_and_mask, register, unpad
from flowvla.sim import ToyEnv, replay
from flowvla.sim.tasks import AT_TOL


def test_registry():
    assert get("arm").action_dim == 3 and get("dual").action_dim == 6 and get("mobile").action_dim == 8
    assert get("arm_1cam").num_cameras == 1
    with pytest.raises(KeyError):
        get("hexapod")
    with pytest.raises(ValueError):
        register(EmbodimentSpec("arm", action_dim=3, state_dim=3, num_cameras=2, control_hz=50))
    with pytest.raises(ValueError):
        EmbodimentSpec("huge", action_dim=D_MAX + 1, state_dim=1, num_cameras=1, control_hz=1)


def test_pad_four_dims():
    obs, chunk = pad_and_mask(np.zeros((2, 16, 16)), np.array([1]), np.ones(4), np.ones((5, 4)))
    np.testing.assert_array_equal(chunk.action_mask, [1, 1, 1, 1, 0, 0, 0, 0])
    assert not chunk.actions[:, 4:].any() and not obs.state[4:].any()
    np.testing.assert_array_equal(obs.image_present, [True, True, False])
    np.testing.assert_array_equal(unpad(chunk.actions, chunk.action_mask), np.ones((5, 4)))


def test_pad_rejects_oversize():
    with pytest.raises(ValueError):
        pad_and_mask(np.zeros((1, 16, 16)), np.array([1]), np.ones(3), np.ones((2, 9)))
    with pytest.raises(ValueError):
        pad_and_mask(np.zeros((4, 16, 16)), np.array([1]), np.ones(3))


def test_mixture_ratio_matches_power_oracle():
    m = mixture_weights({"A": 100, "B": 1000}, 0.43)
    assert m.weight("B") / m.weight("A") == pytest.approx(10**0.43, rel=1e-12)
    assert 10**0.43 == pytest.approx(2.692, abs=1e-3)


def test_mixture_limits():
    counts = {"a": 3, "b": 30, "c": 300}
    np.testing.assert_allclose(mixture_weights(counts, 0.0).weights, np.full(3, 1 / 3))
    np.testing.assert_allclose(mixture_weights(counts, 1.0).weights, np.array([3, 30, 300]) / 333)
    assert abs(mixture_weights(counts).weights.sum() - 1) < 1e-12


def test_mixture_permutation_equivariant():
    a = mixture_weights({"a": 3, "b": 30, "c": 300})
    b = mixture_weights({"c": 300, "a": 3, "b": 30})
    for k in "abc":
        assert a.weight(k) == pytest.approx(b.weight(k), rel=1e-15)


def test_mixture_errors():
    with pytest.raises(ValueError):
        mixture_weights({})
    with pytest.raises(ValueError):
        mixture_weights({"a": 0})


def test_mixture_sampling_frequency():
    m = mixture_weights({"A": 100, "B": 1000}, 0.43)
    keys = draw_keys(m, 10**5, np.random.default_rng(0))
    assert abs(np.mean(keys == m.keys.index("B")) - 2.692 / 3.692) < 0.01


@pytest.fixture(scope="module")
def pick_arm():
    return gen_episodes("arm", "pick_place", 3, np.random.default_rng(0))


def test_episodes_tile_and_dtype(pick_arm):
    for ep in pick_arm:
        ep.validate()
        assert ep.actions.dtype == np.dtype("<f4") and ep.images.shape[1:] == (2, 16, 16)
        assert ep.segments[0].start == 0 and ep.segments[-1].end == len(ep)
        assert np.abs(ep.actions).max() <= 1.0


def test_bad_segments_rejected(pick_arm):
    ep = pick_arm[0]
    with pytest.raises(ValueError):
        Episode(ep.embodiment, ep.task, ep.prompt, ep.images, ep.state, ep.actions, [Segment(0, 2, "x")])


def test_unknown_pair_rejected():
    with pytest.raises(ValueError):
        gen_episodes("mobile", "sort", 1, np.random.default_rng(0))
    with pytest.raises(KeyError):
        gen_episodes("arm", "juggle", 1, np.random.default_rng(0))


def test_reach_final_effector_at_target():
    count = 5
    episodes = gen_episodes("arm", "reach", count, np.random.default_rng(3))
    seeds = np.random.default_rng(3).integers(0, 2**63 - 1, size=(count, 2))
    l1, l2 = 0.55, 0.45
    for ep, (env_seed, _) in zip(episodes, seeds):
        env = ToyEnv("arm", "reach", seed=int(env_seed))
        final = replay("arm", "reach", env.world, ep.actions.astype(np.float64))
        t1, t2 = final.arms[0].angles
        ee = final.shoulder(0) + [l1 * np.cos(t1) + l2 * np.cos(t1 + t2), l1 * np.sin(t1) + l2 * np.sin(t1 + t2)]
        assert np.linalg.norm(ee - final.item("target").pos) <= AT_TOL


def test_mobile_rows_have_eight_dims():
    ep = gen_episodes("mobile", "reach", 1, np.random.default_rng(0))[0]
    assert ep.actions.shape[1] == 8 and ep.images.shape[1] == 3


def test_generation_independent_of_workers():
    a = gen_episodes("arm_1cam", "reach", 4, np.random.default_rng(9), workers=1)
    b = gen_episodes("arm_1cam", "reach", 4, np.random.default_rng(9), workers=3)
    for x, y in zip(a, b):
        assert x.actions.tobytes() == y.actions.tobytes() and x.images.tobytes() == y.images.tobytes()


def test_episode_files_round_trip(pick_arm, tmp_path):
    path = write_episode(tmp_path, pick_arm[0], 0)
    assert path == episode_dir(tmp_path, pick_arm[0], 0)
    assert path.relative_to(tmp_path).parts == ("arm", "pick_place", "00000")
    again = read_episode(path)
    assert again.segments == pick_arm[0].segments and again.prompt == pick_arm[0].prompt
    path2 = write_episode(tmp_path / "copy", again, 0)
    for f in sorted(p.name for p in path.iterdir()):
        assert (path / f).read_bytes() == (path2 / f).read_bytes()


def test_fixed_seed_gives_identical_files(tmp_path):
    for name in ("one", "two"):
        write_episodes(tmp_path / name, gen_episodes("arm_1cam", "reach", 2, np.random.default_rng(5)))
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()


def test_read_dataset_groups_pairs(pick_arm, tmp_path):
    write_episodes(tmp_path, pick_arm)
    found = read_dataset(tmp_path)
    assert list(found) == [("pick_place", "arm")] and len(found[("pick_place", "arm")]) == 3


def test_chunk_repeats_last_action(pick_arm):
    ep = pick_arm[0]
    chunk = chunk_at(ep, len(ep) - 1, 50)
    np.testing.assert_array_equal(chunk, np.repeat(ep.actions[-1:], 50, axis=0))
    np.testing.assert_array_equal(chunk_at(ep, 0, 3), ep.actions[:3])


def test_single_episode_batch_reproduces_data(pick_arm):
    ep = pick_arm[0]
    data = {("pick_place", "arm"): [ep]}
    b = sample_batch(data, dataset_mixture(data), 1, np.random.default_rng(0), horizon=4, annotation_prob=0.0)
    t = b.source[0].t
    np.testing.assert_array_equal(b.actions[0, :, :3], chunk_at(ep, t, 4))
    np.testing.assert_array_equal(b.obs.images[0, :2], ep.images[t])
    np.testing.assert_array_equal(b.obs.state[0, :3], ep.state[t])
    assert b.source[0].language == ep.prompt


def test_batches_zero_on_masked_coordinates():
    data = {("reach", "arm_1cam"): gen_episodes("arm_1cam", "reach", 2, np.random.default_rng(1)),
            ("reach", "mobile"): gen_episodes("mobile", "reach", 2, np.random.default_rng(2))}
    b = sample_batch(data, dataset_mixture(data), 16, np.random.default_rng(0), horizon=5)
    assert not (b.actions * ~b.action_mask[:, None, :]).any()
    assert not (b.obs.state * ~b.obs.state_mask).any()
    assert not (b.obs.images * ~b.obs.image_present[:, :, None, None]).any()
    langs = {s.language for s in b.source}
    assert "reach target" in langs


def test_mixture_must_cover_datasets(pick_arm):
    data = {("pick_place", "arm"): pick_arm, ("x", "arm"): pick_arm}
    with pytest.raises(ValueError):
        sample_batch(data, dataset_mixture({("pick_place", "arm"): pick_arm}), 2, np.random.default_rng(0))


def test_ordered_batches_match_serial():
    make = lambda i: batch_rng(7, i).random()  # noqa: E731
    serial = list(ordered_batches(make, 0, 20, workers=0))
    threaded = list(ordered_batches(make, 0, 20, workers=3))
    assert serial == threaded
