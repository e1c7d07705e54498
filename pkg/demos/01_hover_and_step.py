"""Drop the default quadrotor into the simulator and watch it hover.

Starting from the hover equilibrium with rotors at hover speed, the vehicle
should stay put. Cutting the rotor command shows the first-order motor lag:
rotor speed decays with the motor time constant and the vehicle falls.
"""

import numpy as np

from quadfly import dynamics as dyn
from quadfly.params import QuadParams

params = QuadParams()
w, s = dyn.hover_equilibrium(params)
u_hover = np.full(4, w)
print(f"hover speed {w:.1f} rad/s per rotor")

for _ in range(100):
    s = dyn.step(params, s, u_hover)
print("after 1 s at hover command:", np.round(s[dyn.POS], 9))

# command all rotors to zero and look at the lag
rpm = []
for _ in range(50):
    s = dyn.step(params, s, np.zeros(4))
    rpm.append(s[dyn.RPM][0])
print("rotor 0 speed every 0.1 s after cut:", np.round(rpm[9::10], 1))
print("height after 0.5 s:", round(float(s[2]), 3), "m")
