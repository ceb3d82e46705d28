# %% [markdown]
# # From business records to a fitted model
#
# Load listing records, build zip/price-tier risk rates, draw a rare-event
# sample of controls and fit both equations. The same pipeline is available
# from the command line.

# %%
import datetime as dt
import pathlib
import subprocess
import sys

from jointreg.datamodel import compute_risk_features, eligible_controls, load_csv

# %%
path = pathlib.Path("../tests/data/businesses10.csv")
loaded = load_csv(path)
print(len(loaded.records), "records,", loaded.n_skipped, "skipped")
feats = compute_risk_features(loaded.records)
for rid, f in list(feats.items())[:4]:
    print(rid, f)

# %%
pool = eligible_controls(loaded.records, dt.date(2011, 1, 1))
print("eligible controls:", [r.id for r in pool])

# %% [markdown]
# Command line: simulate a dataset, then fit the joint probit to it.

# %%
sim = subprocess.run([sys.executable, "-m", "jointreg", "simulate", "--model", "biprobit",
                      "--n", "2000", "--rho", "0.3", "--beta1=0.5,-0.3", "--beta2=-0.2,0.4",
                      "--seed", "5", "--out", "/tmp/sim.csv"], capture_output=True, text=True)
print("exit code", sim.returncode)
fit = subprocess.run([sys.executable, "-m", "jointreg", "fit-biprobit", "--input", "/tmp/sim.csv",
                      "--formula1", "y1 ~ x1_1", "--formula2", "y2 ~ x2_1"], capture_output=True, text=True)
print(fit.stdout)
