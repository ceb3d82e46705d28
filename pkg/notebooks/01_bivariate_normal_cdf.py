# %% [markdown]
# # Bivariate normal CDF
#
# `bvn_cdf` evaluates P(X1 <= a, X2 <= b) for a standard bivariate normal
# with correlation rho. `bvn_logcdf` returns its log and stays accurate far
# into the lower tail, where the probability itself is too small for the
# orthant formula to resolve.

# %%
import json
import math
import pathlib

import numpy as np

from jointreg.numerics import bvn_cdf, bvn_logcdf, norm_cdf

# %% [markdown]
# Closed forms to sanity-check against: independence and the value at the origin.

# %%
print(bvn_cdf(0.3, -0.8, 0.0), norm_cdf(0.3) * norm_cdf(-0.8))
print(bvn_cdf(0.0, 0.0, 0.5), 0.25 + math.asin(0.5) / (2 * math.pi))

# %% [markdown]
# Accuracy against the frozen 2-D quadrature grid used by the tests.

# %%
data = pathlib.Path("../tests/data/bvn_grid_oracle.json")
if data.exists():
    pts = json.loads(data.read_text())["points"]
    a = np.array([[p["x1"], p["x2"], p["rho"], p["p"]] for p in pts])
    err = np.abs(bvn_cdf(a[:, 0], a[:, 1], a[:, 2]) - a[:, 3])
    print(f"{len(pts)} points, max abs error {err.max():.1e}")

# %% [markdown]
# Deep tail: the plain CDF is right only in absolute terms (zero or roundoff
# noise), while the log version keeps full relative accuracy.

# %%
for x in (-4.0, -8.0, -12.0):
    print(x, bvn_cdf(x, x, -0.5), bvn_logcdf(x, x, -0.5))
