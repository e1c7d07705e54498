"""Train a hover policy for a short while and fly it.

A few tens of thousands of steps is enough to see episode length climb,
though not enough for a reliable policy (that takes a few hundred
thousand). Use ``quadfly train`` for full runs with checkpoints.
"""

import sys

from quadfly.env import EnvConfig
from quadfly.td3 import Td3Config, evaluate, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 30_000
env_cfg = EnvConfig()


def show(rec):
    print(f"step {rec.step:>7}  return {rec.return_mean:8.1f}  length {rec.length_mean:5.1f}"
          f"  (ma10 {rec.length_ma10:5.1f})", flush=True)


res = train(env_cfg, Td3Config(total_steps=steps), seed=0, on_eval=show)
ev = evaluate(res.actor, env_cfg.deployment(), 10, seed=(0, 3))
print(f"final policy: mean length {ev.lengths.mean():.0f} of {env_cfg.max_steps},"
      f" mean xy distance {ev.errors.mean():.3f} m")
