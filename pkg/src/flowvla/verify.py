"""Invariant suites run by ``flowvla verify`` / ``flowvla gradcheck`` and the tests."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .data import gen_episodes, mixture_weights, read_episode, write_episode
from .data.mixture import draw_keys
from .data.storage import records
from .flow import FlowBatch, FlowConfig, fm_loss, integrate, make_flow_sample, sample_tau
from .model import TINY, ModelConfig, ObsBatch, build_model
from .model.checkpoint import dumps as checkpoint_bytes, loads as checkpoint_loads
from .sim import TASKS, ToyEnv, replay, scripted_expert


def random_obs(config: ModelConfig, rng: np.random.Generator, batch: int = 2, cameras: int | None = None,
               tokens: int = 1, state_dim: int | None = None, dtype=np.float64) -> ObsBatch:
    """Random observation batch with ``cameras`` present slots and ``tokens`` words each."""
    c = config
    cameras = c.max_images if cameras is None else cameras
    state_dim = c.action_dim if state_dim is None else state_dim
    present = np.zeros((batch, c.max_images), dtype=bool)
    present[:, :cameras] = True
    images = rng.random((batch, c.max_images, c.image_size, c.image_size)) * present[:, :, None, None]
    mask = np.zeros((batch, c.action_dim), dtype=bool)
    mask[:, :state_dim] = True
    state = rng.standard_normal((batch, c.action_dim)) * mask
    toks = rng.integers(1, c.vocab_size, size=(batch, tokens))
    return ObsBatch(images.astype(dtype), present, toks, np.ones_like(toks, dtype=bool), state.astype(dtype), mask)


def random_flow_batch(config: ModelConfig, rng: np.random.Generator, batch: int = 2, **kw) -> FlowBatch:
    obs = random_obs(config, rng, batch, **kw)
    mask = obs.state_mask
    actions = rng.uniform(-1, 1, (batch, config.horizon, config.action_dim)) * mask[:, None, :]
    eps = rng.standard_normal(actions.shape) * mask[:, None, :]
    return FlowBatch(obs, actions, mask, sample_tau(rng, FlowConfig(), batch), eps)


def model_grad_error(arch: str, seed: int = 0, h: float = 1e-5) -> float:
    """Worst relative error of the flow-matching loss gradient on the tiny config."""
    rng = np.random.default_rng(seed)
    model = build_model(TINY, arch, seed)
    # perturb zero-initialised parameters so every path carries gradient
    for p in model.params.values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    batch = random_flow_batch(TINY, rng, batch=2, cameras=1, tokens=1)
    return nx.grad_check(lambda: fm_loss(model, batch), model.params, h=h)


def prefix_isolation(seed: int) -> bool:
    """Prefix outputs are bit-identical after re-drawing every action-expert weight."""
    rng = np.random.default_rng(seed)
    cfg = TINY.replace(max_images=2, image_size=8, patch_size=4)
    model = build_model(cfg, "two-expert", seed)
    obs = random_obs(cfg, rng, batch=2, cameras=int(rng.integers(1, 3)), tokens=int(rng.integers(1, 4)))
    noisy = rng.standard_normal((2, cfg.horizon, cfg.action_dim))
    tau = rng.random(2)

    def prefix_out():
        with nx.no_grad():
            out, _, _ = model.forward(model.embed_prefix(obs), model.embed_state(obs.state),
                                      model.embed_action(noisy, tau))
        return out.data.copy()

    before = prefix_out()
    for name in model.group_params("action"):
        model.params[name].data = rng.standard_normal(model.params[name].shape)
    for name in ("proj.action_in.w1", "proj.action_in.w2", "proj.action_in.w3", "proj.state.w", "proj.state.b"):
        model.params[name].data = rng.standard_normal(model.params[name].shape)
    return np.array_equal(before, prefix_out())


def cache_gap(arch: str, seed: int) -> float:
    """max |cached - uncached| over one random (model, observation, sampler seed) triple."""
    rng = np.random.default_rng(seed)
    cfg = TINY.replace(max_images=2, image_size=8, patch_size=4, horizon=5)
    model = build_model(cfg, arch, seed)
    for p in model.params.values():
        p.data = p.data + 0.2 * rng.standard_normal(p.shape)
    obs = random_obs(cfg, rng, batch=2, cameras=int(rng.integers(1, 3)), tokens=int(rng.integers(1, 4)),
                     state_dim=int(rng.integers(1, cfg.action_dim + 1)))
    noise = rng.standard_normal((2, cfg.horizon, cfg.action_dim))
    a = integrate(model, obs, None, FlowConfig(), noise=noise, use_cache=True)
    b = integrate(model, obs, None, FlowConfig(), noise=noise, use_cache=False)
    return float(np.max(np.abs(a - b)))


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _tau_check():
    tau = sample_tau(np.random.default_rng(0), FlowConfig(), 100_000)
    mean = float(tau.mean())
    return abs(mean - 0.3996) < 0.01 and float(tau.max()) <= 0.999, f"mean {mean:.4f}, max {tau.max():.5f}"


def _mixture_check():
    mix = mixture_weights({"A": 100, "B": 1000}, 0.43)
    freq = float(np.mean(draw_keys(mix, 100_000, np.random.default_rng(0)) == 1))
    ratio = mix.weights[1] / mix.weights[0]
    return abs(ratio - 10**0.43) < 1e-12 and abs(freq - 0.729) < 0.01, f"ratio {ratio:.4f}, frequency {freq:.4f}"


def _path_check():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 3))
    s1, s0 = make_flow_sample(a, np.random.default_rng(1), 1.0), make_flow_sample(a, np.random.default_rng(1), 0.0)
    ok = np.array_equal(s1.noisy, a) and np.array_equal(s0.noisy, s0.eps)
    return ok, "endpoints exact" if ok else "endpoint mismatch"


def _env_check():
    bad = []
    for name, cls in TASKS.items():
        for emb in cls.embodiments:
            env = ToyEnv(emb, name, seed=3)
            demo = scripted_expert(env, np.random.default_rng(3))
            final = replay(emb, name, demo.world, demo.actions)
            if demo.score != 1.0 or final.fingerprint() != env.world.fingerprint():
                bad.append(f"{name}/{emb}")
    return not bad, "all tasks solved and replayed" if not bad else f"failed: {bad}"


def _checkpoint_check():
    model = build_model(TINY, "two-expert", 1)
    blob = checkpoint_bytes(model, {"k": "v"})
    again = checkpoint_bytes(checkpoint_loads(blob)[0], {"k": "v"})
    return blob == again, f"{len(blob)} bytes"


def _episode_check():
    ep = gen_episodes("arm", "pick_place", 1, np.random.default_rng(0))[0]
    with tempfile.TemporaryDirectory() as d:
        path = write_episode(d, ep, 0)
        back = read_episode(path)
    return records(back) == records(ep) and back.segments == ep.segments, f"{len(ep)} steps"


def suites() -> dict[str, Callable[[], tuple[bool, str]]]:
    def grad(arch):
        def run():
            err = model_grad_error(arch)
            return err < 1e-4, f"max relative error {err:.2e}"
        return run

    def cache(arch):
        def run():
            gap = max(cache_gap(arch, s) for s in range(10))
            return gap < 1e-10, f"max gap {gap:.1e}"
        return run

    return {
        "gradcheck two-expert": grad("two-expert"),
        "gradcheck small": grad("small"),
        "prefix isolation": lambda: (all(prefix_isolation(s) for s in range(5)), "5 random models"),
        "cache soundness two-expert": cache("two-expert"),
        "cache soundness small": cache("small"),
        "timestep sampler": _tau_check,
        "mixture weights": _mixture_check,
        "flow path endpoints": _path_check,
        "env determinism and experts": _env_check,
        "checkpoint round trip": _checkpoint_check,
        "episode file round trip": _episode_check,
    }


def run_suites(names=None) -> list[CheckResult]:
    out = []
    for name, fn in suites().items():
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out

