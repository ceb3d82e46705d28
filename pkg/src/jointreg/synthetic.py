"""
Seeded data generators with known parameters.

Every generator returns the design together with the truth it was drawn
from, so estimator recovery can be checked directly. Streams come from
:func:`jointreg.rng.make_rng` (Philox4x64-10); an identical
:class:`GeneratorSpec` gives a bit-identical dataset.

Regressor layout: each equation gets ``len(beta) - 1`` drawn columns
followed by an intercept column, so the *last* coefficient is the
intercept (``intercept=False`` draws every column instead).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from .datamodel import INTERCEPT, DataError, Dataset
from .rng import make_rng

__all__ = [
    "GeneratorSpec",
    "SyntheticData",
    "draw_bvn_errors",
    "gen_biprobit",
    "gen_sure",
    "write_truth",
    "read_truth",
]

REGRESSOR_LAWS = ("standard_normal", "uniform01", "from_dataset")


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    beta1: Tuple[float, ...]
    beta2: Tuple[float, ...]
    rho: float = 0.0
    sigma1: float = 1.0
    sigma2: float = 1.0
    regressor_law: str = "standard_normal"
    seed: int = 0
    intercept: bool = True
    shared_regressors: bool = False
    noiseless: bool = False
    on_degenerate: str = "error"

    def __post_init__(self):
        object.__setattr__(self, "beta1", tuple(float(b) for b in self.beta1))
        object.__setattr__(self, "beta2", tuple(float(b) for b in self.beta2))
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if not abs(self.rho) < 1.0:
            raise ValueError("|rho| must be < 1")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("sigma1 and sigma2 must be positive")
        if self.regressor_law not in REGRESSOR_LAWS:
            raise ValueError(f"regressor_law must be one of {REGRESSOR_LAWS}")
        if self.on_degenerate not in ("error", "regenerate"):
            raise ValueError("on_degenerate must be 'error' or 'regenerate'")
        if self.shared_regressors and len(self.beta1) != len(self.beta2):
            raise ValueError("shared regressors need equally long coefficient vectors")
        if not self.beta1 or not self.beta2:
            raise ValueError("coefficient vectors must be nonempty")

    def replicate(self, r: int) -> "GeneratorSpec":
        """Same spec, seed shifted by ``r``."""
        return _replace(self, seed=self.seed + int(r))


def _replace(spec, **kw):
    d = asdict(spec)
    d.update(kw)
    return GeneratorSpec(**d)


@dataclass
class SyntheticData:
    dataset: Dataset
    truth: dict
    latent1: Optional[np.ndarray] = field(default=None, repr=False)
    latent2: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def X1(self):
        return self.dataset.regressors[0]

    @property
    def X2(self):
        return self.dataset.regressors[1]

    @property
    def y1(self):
        return self.dataset.outcomes[0]

    @property
    def y2(self):
        return self.dataset.outcomes[1]


def draw_bvn_errors(n: int, rho: float, seed: int, rng: Optional[np.random.Generator] = None):
    """
    ``n`` standard bivariate normal pairs with correlation ``rho``, built as
    ``(z1, rho z1 + sqrt(1 - rho^2) z2)`` from independent normals.

    Returns an ``(n, 2)`` array.
    """
    if not abs(rho) < 1.0:
        raise ValueError("|rho| must be < 1")
    g = make_rng(seed) if rng is None else rng
    z = g.standard_normal((n, 2))
    e2 = rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1]
    return np.column_stack([z[:, 0], e2])


def _draw_columns(g, law, n, m, source: Optional[np.ndarray]):
    if m == 0:
        return np.empty((n, 0))
    if law == "standard_normal":
        return g.standard_normal((n, m))
    if law == "uniform01":
        return g.uniform(size=(n, m))
    if source is None:
        raise ValueError("regressor_law='from_dataset' needs a source matrix")
    source = np.asarray(source, dtype=float)
    if source.ndim != 2 or source.shape[1] < m:
        raise ValueError(f"source matrix needs at least {m} columns")
    rows = g.integers(0, source.shape[0], size=n)
    return source[rows][:, :m]


def _regressors(spec: GeneratorSpec, g, source1=None, source2=None):
    n = spec.n
    m1 = len(spec.beta1) - (1 if spec.intercept else 0)
    m2 = len(spec.beta2) - (1 if spec.intercept else 0)
    if spec.regressor_law == "from_dataset" and source2 is None:
        source2 = source1
    Z1 = _draw_columns(g, spec.regressor_law, n, m1, source1)
    Z2 = Z1.copy() if spec.shared_regressors else _draw_columns(g, spec.regressor_law, n, m2, source2)
    names1 = [f"x1_{j}" for j in range(1, m1 + 1)]
    names2 = [f"x1_{j}" for j in range(1, m2 + 1)] if spec.shared_regressors else [f"x2_{j}" for j in range(1, m2 + 1)]
    if spec.intercept:
        Z1 = np.column_stack([Z1, np.ones(n)])
        Z2 = np.column_stack([Z2, np.ones(n)])
        names1.append(INTERCEPT)
        names2.append(INTERCEPT)
    return Z1, Z2, names1, names2


def _truth(spec: GeneratorSpec, model: str) -> dict:
    d = asdict(spec)
    d["beta1"] = list(spec.beta1)
    d["beta2"] = list(spec.beta2)
    d["model"] = model
    d["athrho"] = math.atanh(spec.rho)
    d["rng"] = "numpy Philox4x64-10"
    return d


def gen_biprobit(spec: GeneratorSpec, source1=None, source2=None, max_attempts: int = 100) -> SyntheticData:
    """
    Two binary outcomes ``y_j = 1[X_j beta_j + e_j > 0]`` with standard
    bivariate normal errors of correlation ``spec.rho``.

    An outcome with a single class raises :class:`DataError` unless
    ``spec.on_degenerate == "regenerate"``, in which case the draw is
    repeated from the same stream (up to ``max_attempts`` times).
    """
    g = make_rng(spec.seed)
    b1 = np.array(spec.beta1)
    b2 = np.array(spec.beta2)
    for _ in range(max_attempts):
        X1, X2, n1, n2 = _regressors(spec, g, source1, source2)
        e = draw_bvn_errors(spec.n, spec.rho, spec.seed, rng=g)
        s1 = X1 @ b1 + e[:, 0]
        s2 = X2 @ b2 + e[:, 1]
        y1 = (s1 > 0).astype(float)
        y2 = (s2 > 0).astype(float)
        degenerate = [j for j, y in ((1, y1), (2, y2)) if y.min() == y.max()]
        if not degenerate:
            break
        if spec.on_degenerate == "error":
            raise DataError(f"generated outcome(s) {degenerate} have a single class; adjust intercepts")
    else:
        raise DataError(f"no non-degenerate draw in {max_attempts} attempts")
    ds = Dataset(["y1", "y2"], [y1, y2], [n1, n2], [X1, X2], [spec.intercept] * 2)
    return SyntheticData(ds, _truth(spec, "biprobit"), s1, s2)


def gen_sure(spec: GeneratorSpec, source1=None, source2=None) -> SyntheticData:
    """
    Two linear equations ``y_j = X_j beta_j + e_j`` with error covariance
    ``[[s1^2, rho s1 s2], [rho s1 s2, s2^2]]``. ``spec.noiseless`` drops the
    error term entirely.
    """
    g = make_rng(spec.seed)
    X1, X2, n1, n2 = _regressors(spec, g, source1, source2)
    e = draw_bvn_errors(spec.n, spec.rho, spec.seed, rng=g)
    if spec.noiseless:
        e[:] = 0.0
    y1 = X1 @ np.array(spec.beta1) + spec.sigma1 * e[:, 0]
    y2 = X2 @ np.array(spec.beta2) + spec.sigma2 * e[:, 1]
    ds = Dataset(["y1", "y2"], [y1, y2], [n1, n2], [X1, X2], [spec.intercept] * 2)
    return SyntheticData(ds, _truth(spec, "sure"))


def write_truth(truth: dict, path) -> None:
    """Sidecar JSON with the generating parameters."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
