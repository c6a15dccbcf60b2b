"""Outlier maps after a fit.

Score distances measure how far a row sits inside the fitted subspace and
orthogonal distances how far it sits from it. The residual cell map points
at individual suspicious entries.
"""

import numpy as np

from scramble import FitConfig, Init, LossFamily, LossSpec, fit
from scramble.diagnostics import Flag, distance_table, residual_cell_map
from scramble.simulation import SimScenario, generate_clean

X = generate_clean(SimScenario(seed=6))
X[3, 9] = 60.0  # one wild cell in a noise column
X[11] = 3 * X[11]  # a row stretched along the structure

res = fit(X, FitConfig(loss=LossSpec(LossFamily.TUKEY), init=Init.RANK))
sd, od, flags, (sd_cut, od_cut) = distance_table(res, X)
print(f"cutoffs: score distance {sd_cut:.3f}, orthogonal distance {od_cut:.3f}")
for i, f in enumerate(flags):
    if f is not Flag.REGULAR:
        print(f"  row {i:2d}: SD {sd[i]:6.2f}  OD {od[i]:7.2f}  {f.value}")

M = residual_cell_map(res, X)
i, j = np.unravel_index(np.argmax(np.abs(M)), M.shape)
print(f"largest standardized residual {M[i, j]:.1f} at row {i}, column {j}")
