"""
Where inference time goes
=========================

Sampling a chunk runs the observation tokens through the model once, keeps
their keys and values, and then runs only the action tokens at each of the
10 integration steps. Recomputing everything at every step gives the same
chunk (to ~1e-12) but takes about twice as long at this size.
"""

# %%
import numpy as np

from flowvla.flow import FlowConfig, integrate
from flowvla.inference import profile, profile_csv, time_sampling
from flowvla.model import COMPACT, build_model
from flowvla.sim import ToyEnv

obs = ToyEnv("arm", "pick_place", seed=0).observe()

# %%
for arch in ("two-expert", "small"):
    model = build_model(COMPACT, arch, 0)
    a = integrate(model, obs, np.random.default_rng(0), use_cache=True)
    b = integrate(model, obs, np.random.default_rng(0), use_cache=False)
    fast = time_sampling(model, obs, repeats=5, use_cache=True)
    slow = time_sampling(model, obs, repeats=5, use_cache=False)
    print(f"{arch:>10}: cached {fast:.1f} ms, uncached {slow:.1f} ms, "
          f"max gap {np.abs(a - b).max():.1e}")

# %%
# Per-part breakdown (median of repeats) for the two-expert model.
rows = profile(build_model(COMPACT, "two-expert", 0), obs, FlowConfig(), repeats=5)
print(profile_csv(rows))
