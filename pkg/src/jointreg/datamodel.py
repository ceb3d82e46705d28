"""
Business records, derived risk rates, design matrices and control sampling.

The record CSV carries one business per row. Risk rates are group
proportions of closures (``fzrisk``, ``fprisk``) and of deal adoption
(``gzrisk``, ``gprisk``) over the business's zip code and price tier,
computed over the whole population handed in.

Formulas are a deliberately small grammar::

    is_closed ~ fzrisk, fprisk, rate*nreview, nreview, rate
    is_groupon ~ gzrisk, gprisk, rate*nreview, nreview, rate - 1

Terms are comma separated, ``a*b`` is the elementwise product of two
known columns, and a trailing ``-1`` drops the intercept. The intercept,
when present, is always the last column.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .rng import make_rng

logger = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "BusinessRecord",
    "RiskFeatures",
    "Dataset",
    "Formula",
    "LoadResult",
    "DEFAULT_SCHEMA",
    "parse_formula",
    "load_csv",
    "write_records_csv",
    "compute_risk_features",
    "record_columns",
    "design_from_columns",
    "build_design",
    "eligible_controls",
    "sample_controls",
    "rare_event_sample",
    "filter_category",
    "write_dataset_csv",
    "read_dataset_csv",
    "read_numeric_csv",
]

INTERCEPT = "intercept"

# logical field -> CSV header
DEFAULT_SCHEMA: Dict[str, str] = {
    "id": "id",
    "category": "category",
    "zip": "zip",
    "price": "price",
    "rating": "rating",
    "n_reviews": "n_reviews",
    "is_closed": "is_closed",
    "is_groupon": "is_groupon",
    "last_review_date": "last_review_date",
}
_OPTIONAL_FIELDS = {"last_review_date"}

# names accepted in formulas for record-derived columns
_ALIASES = {
    "rate": "rate",
    "rating": "rate",
    "nreview": "nreview",
    "n_reviews": "nreview",
    "reviews": "nreview",
    "price": "price",
    "is_closed": "is_closed",
    "isclosed": "is_closed",
    "is_groupon": "is_groupon",
    "isgroupon": "is_groupon",
    "fzrisk": "fzrisk",
    "fprisk": "fprisk",
    "gzrisk": "gzrisk",
    "gprisk": "gprisk",
}


class DataError(ValueError):
    """Input data is malformed or cannot support the requested model."""


@dataclass(frozen=True)
class BusinessRecord:
    id: str
    category: str
    zip: str
    price: int
    rating: float
    n_reviews: int
    is_closed: int
    is_groupon: int
    last_review_date: Optional[dt.date] = None

    def __post_init__(self):
        problem = self.violation()
        if problem:
            raise DataError(problem)

    def violation(self) -> Optional[str]:
        if self.price not in (1, 2, 3, 4):
            return f"price {self.price} outside {{1,2,3,4}}"
        if not (1.0 <= self.rating <= 5.0):
            return f"rating {self.rating} outside [1, 5]"
        if self.n_reviews < 1:
            return f"n_reviews {self.n_reviews} < 1 (zero-review businesses are dropped)"
        if self.is_closed not in (0, 1):
            return f"is_closed {self.is_closed} not binary"
        if self.is_groupon not in (0, 1):
            return f"is_groupon {self.is_groupon} not binary"
        return None


@dataclass(frozen=True)
class RiskFeatures:
    fzrisk: float
    fprisk: float
    gzrisk: float
    gprisk: float


@dataclass
class Dataset:
    """
    Outcomes plus named regressor matrices, one entry per equation.

    ``outcomes[j]`` pairs with ``regressors[j]``; a single-equation dataset
    simply has lists of length one.
    """

    outcome_names: List[str]
    outcomes: List[np.ndarray]
    regressor_names: List[List[str]]
    regressors: List[np.ndarray]
    has_intercept: List[bool]

    def __post_init__(self):
        if not (len(self.outcomes) == len(self.regressors) == len(self.outcome_names)
                == len(self.regressor_names) == len(self.has_intercept)):
            raise DataError("per-equation lists must have equal length")
        if len(self.outcomes) not in (1, 2):
            raise DataError("a Dataset holds one or two equations")
        n = None
        for y, X, names in zip(self.outcomes, self.regressors, self.regressor_names):
            if y.ndim != 1 or X.ndim != 2:
                raise DataError("outcomes must be vectors and regressors matrices")
            if n is None:
                n = y.shape[0]
            if y.shape[0] != n or X.shape[0] != n or n == 0:
                raise DataError("all columns must share one positive length")
            if X.shape[1] != len(names):
                raise DataError("regressor names do not match matrix width")

    @property
    def n(self) -> int:
        return int(self.outcomes[0].shape[0])

    def column(self, equation: int, name: str) -> np.ndarray:
        idx = self.regressor_names[equation].index(name)
        return self.regressors[equation][:, idx]


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class LoadResult:
    records: List[BusinessRecord]
    skipped: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def _parse_date(text: str) -> Optional[dt.date]:
    text = text.strip()
    if not text:
        return None
    return dt.date.fromisoformat(text)


def _parse_binary(text: str) -> int:
    v = float(text)
    if v not in (0.0, 1.0):
        return int(v) if v.is_integer() else -1
    return int(v)


def load_csv(path, schema: Optional[Mapping[str, str]] = None) -> LoadResult:
    """
    Read business records from a UTF-8 CSV with a header row.

    Rows that violate a record invariant (zero reviews, price outside
    1..4, ...) are skipped; ``LoadResult.skipped`` lists ``(line, reason)``.
    A missing mandatory column or an unparseable field raises
    :class:`DataError` naming the column or line.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    records: List[BusinessRecord] = []
    skipped: List[Tuple[int, str]] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise DataError(f"{path}: missing header row")
        for fld, col in schema.items():
            if fld not in _OPTIONAL_FIELDS and col not in header:
                raise DataError(f"{path}: missing mandatory column {col!r}")
        date_col = schema.get("last_review_date")
        try:
            for row in reader:
                line = reader.line_num
                if None in row or any(v is None for v in row.values()):
                    raise DataError(f"{path}, line {line}: wrong number of fields")
                try:
                    price = float(row[schema["price"]])
                    n_rev = float(row[schema["n_reviews"]])
                    kw = dict(
                        id=row[schema["id"]],
                        category=row[schema["category"]],
                        zip=row[schema["zip"]].strip(),
                        price=int(price) if price.is_integer() else -1,
                        rating=float(row[schema["rating"]]),
                        n_reviews=int(n_rev) if n_rev.is_integer() else -1,
                        is_closed=_parse_binary(row[schema["is_closed"]]),
                        is_groupon=_parse_binary(row[schema["is_groupon"]]),
                        last_review_date=(
                            _parse_date(row[date_col]) if date_col and date_col in row else None
                        ),
                    )
                except ValueError as exc:
                    raise DataError(f"{path}, line {line}: unparseable field ({exc})") from exc
                try:
                    records.append(BusinessRecord(**kw))
                except DataError as exc:
                    skipped.append((line, str(exc)))
        except csv.Error as exc:
            raise DataError(f"{path}, line {reader.line_num}: {exc}") from exc
    if skipped:
        logger.info("%s: skipped %d row(s) violating record invariants", path, len(skipped))
    return LoadResult(records, skipped)


def write_records_csv(records: Iterable[BusinessRecord], path) -> None:
    cols = list(DEFAULT_SCHEMA)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            w.writerow([
                r.id, r.category, r.zip, r.price, repr(float(r.rating)), r.n_reviews,
                r.is_closed, r.is_groupon,
                r.last_review_date.isoformat() if r.last_review_date else "",
            ])


def filter_category(records: Iterable[BusinessRecord], category: str) -> List[BusinessRecord]:
    return [r for r in records if r.category == category]


# ---------------------------------------------------------------------------
# risk rates


def _group_rates(keys: Sequence[str], flags: np.ndarray, leave_one_out: bool) -> np.ndarray:
    total = defaultdict(int)
    hits = defaultdict(int)
    for key, f in zip(keys, flags):
        total[key] += 1
        hits[key] += int(f)
    out = np.empty(len(keys))
    for i, (key, f) in enumerate(zip(keys, flags)):
        if leave_one_out:
            denom = total[key] - 1
            out[i] = (hits[key] - f) / denom if denom > 0 else 0.0
        else:
            out[i] = hits[key] / total[key]
    return out


def compute_risk_features(
    records: Sequence[BusinessRecord], leave_one_out: bool = False
) -> Dict[str, RiskFeatures]:
    """
    Closure and deal-adoption rates within each record's zip and price tier.

    By default a business counts towards its own group's rate. With
    ``leave_one_out=True`` the rate is taken over the other members of the
    group only (0 for a singleton group).
    """
    if not records:
        raise DataError("cannot compute risk rates over an empty population")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("record ids must be unique")
    zips = [r.zip for r in records]
    prices = [str(r.price) for r in records]
    closed = np.array([r.is_closed for r in records])
    deal = np.array([r.is_groupon for r in records])
    fz = _group_rates(zips, closed, leave_one_out)
    fp = _group_rates(prices, closed, leave_one_out)
    gz = _group_rates(zips, deal, leave_one_out)
    gp = _group_rates(prices, deal, leave_one_out)
    return {
        rid: RiskFeatures(float(a), float(b), float(c), float(d))
        for rid, a, b, c, d in zip(ids, fz, fp, gz, gp)
    }


# ---------------------------------------------------------------------------
# formulas and design matrices


@dataclass(frozen=True)
class Formula:
    outcome: Optional[str]
    terms: Tuple[str, ...]
    intercept: bool = True

    @property
    def columns(self) -> List[str]:
        return list(self.terms) + ([INTERCEPT] if self.intercept else [])


def parse_formula(text: str, no_constant: bool = False) -> Formula:
    """
    Parse ``"y ~ a, b, a*b - 1"``. The outcome part is optional.

    >>> parse_formula("y ~ x, z*w - 1")
    Formula(outcome='y', terms=('x', 'z*w'), intercept=False)
    """
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty formula")
    outcome = None
    body = text
    if "~" in text:
        lhs, body = text.split("~", 1)
        outcome = lhs.strip()
        if not outcome or "~" in body:
            raise ValueError(f"malformed formula {text!r}")
    body = body.strip()
    intercept = not no_constant
    m = re.search(r"[-+]\s*1$", body)
    if m:
        intercept = intercept and m.group(0)[0] == "+"
        body = body[:m.start()].rstrip().rstrip(",").rstrip()
    terms = []
    for raw in body.split(",") if body else []:
        t = raw.strip()
        if not t:
            raise ValueError(f"empty term in formula {text!r}")
        parts = [p.strip() for p in t.split("*")]
        if any(not p for p in parts):
            raise ValueError(f"malformed interaction {t!r}")
        terms.append("*".join(parts))
    if not terms and not intercept:
        raise ValueError("formula has no regressors")
    return Formula(outcome, tuple(terms), intercept)


def record_columns(
    records: Sequence[BusinessRecord], features: Mapping[str, RiskFeatures]
) -> Dict[str, np.ndarray]:
    """Flatten records and their risk rates into named float columns."""
    try:
        feats = [features[r.id] for r in records]
    except KeyError as exc:
        raise DataError(f"no risk features for record {exc.args[0]!r}") from None
    return {
        "rate": np.array([r.rating for r in records], dtype=float),
        "nreview": np.array([r.n_reviews for r in records], dtype=float),
        "price": np.array([r.price for r in records], dtype=float),
        "is_closed": np.array([r.is_closed for r in records], dtype=float),
        "is_groupon": np.array([r.is_groupon for r in records], dtype=float),
        "fzrisk": np.array([f.fzrisk for f in feats]),
        "fprisk": np.array([f.fprisk for f in feats]),
        "gzrisk": np.array([f.gzrisk for f in feats]),
        "gprisk": np.array([f.gprisk for f in feats]),
    }


def _lookup(columns: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    if name in columns:
        return np.asarray(columns[name], dtype=float)
    canon = _ALIASES.get(name.lower())
    if canon is not None and canon in columns:
        return np.asarray(columns[canon], dtype=float)
    raise DataError(f"unknown variable {name!r}")


def _collinear_columns(X: np.ndarray, names: Sequence[str], tol: float = 1e-10) -> List[str]:
    """Greedy scan: a column is flagged when it lies in the span of earlier kept columns."""
    flagged = []
    kept: List[np.ndarray] = []
    for j, name in enumerate(names):
        col = X[:, j]
        scale = np.linalg.norm(col)
        if scale == 0.0:
            flagged.append(name)
            continue
        if kept:
            K = np.column_stack(kept)
            coef, *_ = np.linalg.lstsq(K, col, rcond=None)
            resid = col - K @ coef
            if np.linalg.norm(resid) <= tol * scale * math.sqrt(X.shape[0]):
                flagged.append(name)
                continue
        kept.append(col)
    return flagged


def design_from_columns(
    columns: Mapping[str, np.ndarray], formula, no_constant: bool = False
) -> Tuple[Optional[np.ndarray], np.ndarray, List[str]]:
    """
    Build ``(y, X, names)`` for one equation from a mapping of named columns.

    Raises :class:`DataError` for unknown variables and for a rank-deficient
    design, listing the columns that are linear combinations of earlier ones.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula, no_constant=no_constant)
    elif no_constant and formula.intercept:
        formula = Formula(formula.outcome, formula.terms, False)
    cols = []
    for term in formula.terms:
        parts = term.split("*")
        v = _lookup(columns, parts[0]).copy()
        for p in parts[1:]:
            v = v * _lookup(columns, p)
        cols.append(v)
    n = None
    for c in columns.values():
        n = len(c)
        break
    if n is None:
        raise DataError("no data columns")
    if formula.intercept:
        cols.append(np.ones(n))
    X = np.column_stack(cols) if cols else np.empty((n, 0))
    names = formula.columns
    if not np.all(np.isfinite(X)):
        raise DataError("design matrix contains non-finite values")
    if X.shape[1] > X.shape[0] or np.linalg.matrix_rank(X) < X.shape[1]:
        bad = _collinear_columns(X, names)
        raise DataError(f"rank-deficient design; collinear columns: {', '.join(bad) or '(all)'}")
    y = _lookup(columns, formula.outcome) if formula.outcome else None
    return y, X, names


def build_design(
    records: Sequence[BusinessRecord],
    features: Mapping[str, RiskFeatures],
    spec,
    spec2=None,
    no_constant: bool = False,
) -> Dataset:
    """
    Assemble a one- or two-equation :class:`Dataset` from business records.

    ``spec`` (and ``spec2`` for a joint model) are formula strings or
    :class:`Formula` objects whose left-hand side names the outcome.
    """
    columns = record_columns(records, features)
    specs = [spec] if spec2 is None else [spec, spec2]
    outs, xs, names, icpt, onames = [], [], [], [], []
    for s in specs:
        f = parse_formula(s, no_constant=no_constant) if isinstance(s, str) else s
        if f.outcome is None:
            raise DataError("formula must name an outcome (``y ~ ...``)")
        y, X, nm = design_from_columns(columns, f, no_constant=no_constant)
        outs.append(y)
        xs.append(X)
        names.append(nm)
        icpt.append(INTERCEPT in nm)
        onames.append(f.outcome)
    return Dataset(onames, outs, names, xs, icpt)


# ---------------------------------------------------------------------------
# control sampling


def eligible_controls(records: Iterable[BusinessRecord], window_start: dt.date) -> List[BusinessRecord]:
    """
    Non-deal businesses still operating at ``window_start``.

    The last review date stands in for the closing date; a closed business
    without a date is assumed to have closed before the window.
    """
    out = []
    for r in records:
        if r.is_groupon:
            continue
        if r.is_closed:
            if r.last_review_date is None or r.last_review_date < window_start:
                continue
        out.append(r)
    return out


def sample_controls(
    records: Sequence[BusinessRecord], n: int, window_start: dt.date, seed: int
) -> List[BusinessRecord]:
    """Uniform sample of ``n`` eligible controls without replacement, in input order."""
    pool = eligible_controls(records, window_start)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > len(pool):
        raise DataError(f"requested {n} controls but only {len(pool)} are eligible")
    idx = make_rng(seed).choice(len(pool), size=n, replace=False)
    return [pool[i] for i in np.sort(idx)]


def rare_event_sample(
    records: Sequence[BusinessRecord],
    window_start: dt.date,
    seed: int,
    n_controls: Optional[int] = None,
    ratio: float = 1.0,
) -> List[BusinessRecord]:
    """
    All deal-adopting businesses plus a random draw of eligible controls.

    ``n_controls`` defaults to ``round(ratio * #adopters)``, i.e. 1:1.
    """
    treated = [r for r in records if r.is_groupon]
    if n_controls is None:
        n_controls = int(round(ratio * len(treated)))
    return treated + sample_controls(records, n_controls, window_start, seed)


# ---------------------------------------------------------------------------
# dataset export


def write_dataset_csv(dataset: Dataset, path) -> None:
    """
    Write every outcome and regressor column to CSV. Floats are written with
    ``repr`` so :func:`read_dataset_csv` reproduces them bit for bit.

    Headers are ``eq<j>:<name>`` for regressors and ``y<j>:<name>`` for outcomes.
    """
    headers, cols = [], []
    for j, (yname, y, names, X) in enumerate(
        zip(dataset.outcome_names, dataset.outcomes, dataset.regressor_names, dataset.regressors), 1
    ):
        headers.append(f"y{j}:{yname}")
        cols.append(y)
        for k, nm in enumerate(names):
            headers.append(f"eq{j}:{nm}")
            cols.append(X[:, k])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(headers)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def read_dataset_csv(path) -> Dataset:
    header, data = _read_table(path)
    n_eq = max(int(h.split(":", 1)[0][1:]) for h in header if h.startswith("y"))
    onames, outs, rnames, xs, icpt = [], [], [], [], []
    for j in range(1, n_eq + 1):
        yi = [i for i, h in enumerate(header) if h.startswith(f"y{j}:")]
        xi = [i for i, h in enumerate(header) if h.startswith(f"eq{j}:")]
        if len(yi) != 1:
            raise DataError(f"{path}: expected one outcome column for equation {j}")
        onames.append(header[yi[0]].split(":", 1)[1])
        outs.append(data[:, yi[0]].copy())
        nm = [header[i].split(":", 1)[1] for i in xi]
        rnames.append(nm)
        xs.append(data[:, xi].copy())
        icpt.append(INTERCEPT in nm)
    return Dataset(onames, outs, rnames, xs, icpt)


def _read_table(path) -> Tuple[List[str], np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}, line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}, line {reader.line_num}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def read_numeric_csv(path) -> Dict[str, np.ndarray]:
    """
    Load an all-numeric CSV as named columns. Dataset exports are flattened:
    ``eq1:x1`` is available both under its full header and as ``x1``;
    ``y1:name`` likewise under ``name``.
    """
    header, data = _read_table(path)
    cols: Dict[str, np.ndarray] = {}
    for i, h in enumerate(header):
        cols[h] = data[:, i]
    for i, h in enumerate(header):
        if ":" in h:
            short = h.split(":", 1)[1]
            cols.setdefault(short, data[:, i])
    return cols
