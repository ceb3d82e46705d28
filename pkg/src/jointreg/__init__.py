"""Joint estimation of binary and linear equation pairs with correlated errors."""

__version__ = "0.1.0"

from .datamodel import (
    BusinessRecord,
    DataError,
    Dataset,
    RiskFeatures,
    build_design,
    compute_risk_features,
    load_csv,
    sample_controls,
)
from .estimators import (
    BivariateProbitFit,
    OlsFit,
    ProbitFit,
    SureFit,
    biprobit_loglik,
    biprobit_score,
    fit_biprobit,
    fit_ols,
    fit_probit,
    fit_sure,
    predict_probit,
)
from .inference import aic, auc, breusch_pagan, spec_test, std_errors, t_test
from .numerics import OptimizerConfig, OptimResult, bvn_cdf, bvn_logcdf, maximize, mills_conditional, norm_cdf, norm_pdf
from .synthetic import GeneratorSpec, draw_bvn_errors, gen_biprobit, gen_sure
