# %% [markdown]
# # Joint or separate? AIC comparison and AUC
#
# The joint model adds a single correlation parameter, so AIC prefers it
# only when the log-likelihood gain exceeds one. AUC summarises how well
# fitted probabilities rank the outcome.

# %%
from jointreg.estimators import fit_biprobit, fit_probit, predict_probit
from jointreg.inference import auc, spec_test, t_test
from jointreg.synthetic import GeneratorSpec, gen_biprobit

# %%
for rho in (0.0, 0.3):
    d = gen_biprobit(GeneratorSpec(2000, (0.5, -0.3, 0.2), (-0.2, 0.4, 0.1), rho=rho, seed=11))
    p1, p2 = fit_probit(d.X1, d.y1), fit_probit(d.X2, d.y2)
    res = spec_test(fit_biprobit(d.X1, d.y1, d.X2, d.y2), p1, p2)
    print(f"rho={rho}: preferred {res.preferred}, loglik gain {res.loglik_difference:.2f}")

# %%
print("AUC eq.1", round(auc(predict_probit(p1, d.X1), d.y1), 3))
print("AUC eq.2", round(auc(predict_probit(p2, d.X2), d.y2), 3))

# %% [markdown]
# Coefficient tests with significance markers.

# %%
for b, s in zip(p1.beta, p1.se):
    t = t_test(b, s)
    print(f"{b:+.3f} ({s:.3f}) z={t.statistic:+.2f} {t.marker}")
