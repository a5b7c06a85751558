"""Build the transform u for a few coefficients and check its distortion bounds."""
from __future__ import annotations

import numpy as np

from qbsde.transforms import build_u, build_v, indicator, invert_u, piecewise_constant, zero

for f in (zero(), indicator(0.5, 1.0), indicator(2.0, 1.0), piecewise_constant([-1.0, 0.0, 0.5], [0.75, -0.4])):
    t = build_u(f)
    x = np.linspace(-4, 4, 9)
    u, du = t.evaluate(x)
    M = t.mass_constant
    rt = np.max(np.abs(invert_u(t, u) - x))
    print(f"{f.name:<24} M={M:9.4f}  u(1)={t.evaluate(np.array([1.0]))[0][0]: .6f}  "
          f"min u'={du.min():.4f}  max u'={du.max():.4f}  round trip {rt:.1e}")
v = build_v(indicator(0.5, 1.0))
print("v(0.5) =", float(v.evaluate(np.array([0.5]))[0][0]), "closed form", np.exp(0.5) - 1.5)
