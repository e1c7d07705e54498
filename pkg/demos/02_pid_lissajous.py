"""Fly the cascaded PID baseline along a figure-eight.

Tracks the 15 s Lissajous reference for four loops in the deployment
environment (rotor lag, disturbances) and reports the tracking error.
Pass a shorter period as the first argument to see where it breaks.
"""

import sys

from quadfly.env import EnvConfig
from quadfly.pid import PidController, PidGains
from quadfly.tasks import LissajousSpec, run_pid_tracking

period = float(sys.argv[1]) if len(sys.argv) > 1 else 15.0
cfg = EnvConfig().deployment()
ctrl = PidController(cfg.params, PidGains())
res = run_pid_tracking(ctrl, cfg, LissajousSpec(period=period), seed=(0, 4))

print(f"period {period:g} s: completed={res.success}, flew {res.t[-1]:.1f} s")
print(f"rmse {res.rmse:.3f} m, horizontal rmse {res.rmse_xy:.3f} m")
res.to_csv("pid_trace.csv")
print("trace written to pid_trace.csv")
