"""How fast is the batched simulator on this machine?

Steps many independent vehicles at once and checks that batching does not
change the numbers.
"""

from quadfly.cli import bench
from quadfly.params import QuadParams

for row in bench(QuadParams(), [1, 64, 1024, 8192], duration=1.0, dt=0.01):
    print(f"N={row['batch']:>5}: {row['steps_per_s']:.3g} steps/s,"
          f" {row['sim_s_per_wall_s']:.3g} simulated s per s, batched==sequential: {row['equivalent']}")
