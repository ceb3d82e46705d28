"""
Command-line entry point.

    jointreg fit-probit   --input data.csv --formula1 "is_closed ~ fzrisk, fprisk, rate*nreview, nreview, rate"
    jointreg fit-biprobit --input data.csv --formula1 ... --formula2 ...
    jointreg fit-sure     --input data.csv --formula1 ... --formula2 ...
    jointreg spec-test    --input data.csv --formula1 ... --formula2 ...
    jointreg features     --input businesses.csv --out risk.csv
    jointreg sample       --input businesses.csv --seed 7 --window-start 2011-01-01 --out sample.csv
    jointreg simulate     --model biprobit --n 2000 --rho 0.3 --beta1=0.5,-0.3 --beta2=-0.2,0.4 --seed 42 --out sim.csv

``--input`` is either a business-record CSV (risk rates are derived
before the design is built) or an all-numeric table such as the output of
``simulate``, whose columns formulas refer to by name.

Exit status: 0 success, 2 configuration error, 3 data error,
4 non-convergence (the report is still written), 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence

from . import __version__
from .datamodel import (
    DEFAULT_SCHEMA,
    DataError,
    compute_risk_features,
    design_from_columns,
    filter_category,
    load_csv,
    parse_formula,
    rare_event_sample,
    read_numeric_csv,
    record_columns,
    write_dataset_csv,
    write_records_csv,
)
from .estimators import fit_biprobit, fit_probit, fit_sure, predict_probit
from .inference import auc, breusch_pagan, marker, spec_test, t_test
from .numerics import OptimizerConfig
from .synthetic import GeneratorSpec, gen_biprobit, gen_sure, write_truth

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONCONVERGED = 4
EXIT_INTERNAL = 5

COMMANDS = ("fit-probit", "fit-biprobit", "fit-sure", "spec-test", "features", "sample", "simulate")
_TWO_FORMULA = {"fit-biprobit", "fit-sure", "spec-test"}
_SEEDED = {"sample", "simulate"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    input_path: Optional[str] = None
    formula1: Optional[str] = None
    formula2: Optional[str] = None
    seed: Optional[int] = None
    output_path: str = "-"
    output_format: str = "table"
    no_constant: bool = False
    sample_n: Optional[int] = None
    window_start: Optional[str] = None
    category: Optional[str] = None
    leave_one_out: bool = False
    # simulate
    model: str = "biprobit"
    n: Optional[int] = None
    rho: float = 0.0
    beta1: Optional[str] = None
    beta2: Optional[str] = None
    sigma1: float = 1.0
    sigma2: float = 1.0
    regressor_law: str = "standard_normal"
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.output_format not in ("table", "structured"):
            raise ConfigError("--format must be 'table' or 'structured'")
        if self.command in _TWO_FORMULA and not (self.formula1 and self.formula2):
            raise ConfigError(f"{self.command} needs both --formula1 and --formula2")
        if self.command == "fit-probit":
            if not self.formula1:
                raise ConfigError("fit-probit needs --formula1")
            if self.formula2:
                raise ConfigError("fit-probit takes exactly one formula")
        if self.command in _SEEDED and self.seed is None:
            raise ConfigError(f"{self.command} is randomised and needs an explicit --seed")
        if self.sample_n is not None and self.seed is None:
            raise ConfigError("--sample-n draws a random control sample and needs --seed")
        if self.command != "simulate" and not self.input_path:
            raise ConfigError(f"{self.command} needs --input")
        if self.command == "sample" and not self.window_start:
            raise ConfigError("sample needs --window-start")
        if self.command == "simulate":
            if not (self.n and self.beta1 and self.beta2):
                raise ConfigError("simulate needs --n, --beta1 and --beta2")
            if self.model not in ("biprobit", "sure"):
                raise ConfigError("--model must be 'biprobit' or 'sure'")
            if self.output_path == "-":
                raise ConfigError("simulate writes a CSV and needs --out")
        for f in (self.formula1, self.formula2):
            if f:
                try:
                    parse_formula(f)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
        if self.window_start:
            try:
                dt.date.fromisoformat(self.window_start)
            except ValueError:
                raise ConfigError(f"--window-start {self.window_start!r} is not an ISO date") from None


# ---------------------------------------------------------------------------
# data loading


@dataclass
class _Frame:
    columns: dict
    n_rows: int
    digest: str
    kind: str
    skipped: int = 0


def _sha256(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _header(path) -> List[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return next(csv.reader(fh), [])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 ({exc})") from exc


def _is_business_csv(header) -> bool:
    need = [c for k, c in DEFAULT_SCHEMA.items() if k != "last_review_date"]
    return all(c in header for c in need)


def _load_frame(cfg: RunConfig) -> _Frame:
    digest = _sha256(cfg.input_path)
    header = _header(cfg.input_path)
    if _is_business_csv(header):
        loaded = load_csv(cfg.input_path)
        records = loaded.records
        if not records:
            raise DataError(f"{cfg.input_path}: no valid records")
        # rates describe the whole population, so compute before any subsetting
        feats = compute_risk_features(records, leave_one_out=cfg.leave_one_out)
        if cfg.category:
            records = filter_category(records, cfg.category)
            if not records:
                raise DataError(f"no records in category {cfg.category!r}")
        if cfg.sample_n is not None:
            ws = dt.date.fromisoformat(cfg.window_start) if cfg.window_start else dt.date.min
            records = rare_event_sample(records, ws, cfg.seed, n_controls=cfg.sample_n)
        return _Frame(record_columns(records, feats), len(records), digest, "business", loaded.n_skipped)
    if cfg.category or cfg.sample_n is not None:
        raise ConfigError("--category/--sample-n apply to business-record input only")
    cols = read_numeric_csv(cfg.input_path)
    n = len(next(iter(cols.values())))
    return _Frame(cols, n, digest, "numeric")


def _design(frame: _Frame, formula: str, no_constant: bool):
    f = parse_formula(formula, no_constant=no_constant)
    if f.outcome is None:
        raise ConfigError(f"formula {formula!r} must name an outcome: 'y ~ x1, x2'")
    y, X, names = design_from_columns(frame.columns, f)
    return f.outcome, y, X, names


# ---------------------------------------------------------------------------
# report assembly


def _coef_rows(names, beta, se):
    rows = []
    for nm, b, s in zip(names, beta, se):
        if s > 0 and math.isfinite(s):
            tt = t_test(float(b), float(s))
            rows.append({"name": nm, "coef": float(b), "se": float(s), "z": tt.statistic,
                         "p_value": tt.p_value, "marker": marker(tt.p_value)})
        else:
            rows.append({"name": nm, "coef": float(b), "se": float(s), "z": None,
                         "p_value": None, "marker": ""})
    return rows


def _probit_section(outcome, fit, names, X, y):
    return {
        "outcome": outcome,
        "n": fit.n,
        "k": fit.k,
        "loglik": fit.loglik,
        "aic": fit.aic,
        "auc": auc(predict_probit(fit, X), y),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "message": fit.message,
        "coefficients": _coef_rows(names, fit.beta, fit.se),
    }


def _run_fit_probit(cfg, frame, opt):
    outcome, y, X, names = _design(frame, cfg.formula1, cfg.no_constant)
    fit = fit_probit(X, y, opt, names=names)
    return {"probit": _probit_section(outcome, fit, names, X, y)}, fit.converged


def _run_fit_biprobit(cfg, frame, opt):
    o1, y1, X1, n1 = _design(frame, cfg.formula1, cfg.no_constant)
    o2, y2, X2, n2 = _design(frame, cfg.formula2, cfg.no_constant)
    fit = fit_biprobit(X1, y1, X2, y2, opt, names1=n1, names2=n2)
    se = fit.se
    k1 = fit.k1
    ath_t = t_test(fit.athrho, fit.se_athrho) if fit.se_athrho > 0 else None
    rho_t = t_test(fit.rho, fit.se_rho) if fit.se_rho > 0 else None
    out = {
        "biprobit": {
            "outcomes": [o1, o2],
            "n": fit.n,
            "loglik": fit.loglik,
            "aic": fit.aic,
            "converged": fit.converged,
            "boundary": fit.boundary,
            "iterations": fit.iterations,
            "message": fit.message,
            "equation1": _coef_rows(n1, fit.beta1, se[:k1]),
            "equation2": _coef_rows(n2, fit.beta2, se[k1:k1 + fit.k2]),
            "athrho": {"coef": fit.athrho, "se": fit.se_athrho,
                       "z": ath_t.statistic if ath_t else None,
                       "p_value": ath_t.p_value if ath_t else None,
                       "marker": ath_t.marker if ath_t else ""},
            "rho": {"coef": fit.rho, "se": fit.se_rho, "se_method": "delta method from athrho",
                    "z": rho_t.statistic if rho_t else None,
                    "p_value": rho_t.p_value if rho_t else None},
        }
    }
    return out, fit.converged


def _run_fit_sure(cfg, frame, opt):
    o1, y1, X1, n1 = _design(frame, cfg.formula1, cfg.no_constant)
    o2, y2, X2, n2 = _design(frame, cfg.formula2, cfg.no_constant)
    fit = fit_sure(X1, y1, X2, y2, names1=n1, names2=n2)
    bp = breusch_pagan(fit)
    se = fit.se
    out = {
        "sure": {
            "outcomes": [o1, o2],
            "n": fit.n,
            "equation1": _coef_rows(n1, fit.beta1, se[:fit.k1]),
            "equation2": _coef_rows(n2, fit.beta2, se[fit.k1:]),
            "sigma": fit.sigma.tolist(),
            "resid_corr": fit.resid_corr,
            "breusch_pagan": {"statistic": bp.statistic, "p_value": bp.p_value, "df": bp.df,
                              "marker": bp.marker},
        }
    }
    return out, True


def _run_spec_test(cfg, frame, opt):
    o1, y1, X1, n1 = _design(frame, cfg.formula1, cfg.no_constant)
    o2, y2, X2, n2 = _design(frame, cfg.formula2, cfg.no_constant)
    p1 = fit_probit(X1, y1, opt, names=n1)
    p2 = fit_probit(X2, y2, opt, names=n2)
    joint = fit_biprobit(X1, y1, X2, y2, opt, names1=n1, names2=n2)
    st = spec_test(joint, p1, p2)
    out = {
        "spec_test": {
            "outcomes": [o1, o2],
            "n": joint.n,
            "separate": {"k": p1.k + p2.k, "loglik": p1.loglik + p2.loglik, "aic": st.aic_separate},
            "joint": {"k": p1.k + p2.k + 1, "loglik": joint.loglik, "aic": st.aic_joint,
                      "rho": joint.rho},
            "loglik_difference": st.loglik_difference,
            "preferred": st.preferred,
        }
    }
    return out, bool(p1.converged and p2.converged and joint.converged)


# ---------------------------------------------------------------------------
# rendering


def _fmt(v, spec=".3f"):
    if v is None:
        return "-"
    return format(v, spec)


def _coef_block(rows) -> List[str]:
    lines = []
    for r in rows:
        lines.append(f"  {r['name']:<22}{_fmt(r['coef'], '10.3f')}{r['marker']:<3} ({_fmt(r['se'], '.3f')})")
    return lines


def render_table(report: dict) -> str:
    res = report["results"]
    legend = "Significance levels:  † : 10%   * : 5%   ** : 1%"
    lines = [f"jointreg {report['command']}  (n = {report['data']['n_rows']})"]
    if "probit" in res:
        p = res["probit"]
        lines += [f"Dependent variable: {p['outcome']}    AUC = {p['auc']:.3f}",
                  f"{'Variable':<24}{'Coefficient':>10}    (Std. Err.)"]
        lines += _coef_block(p["coefficients"])
        lines += [f"log-likelihood = {p['loglik']:.3f}   AIC = {p['aic']:.2f}   converged = {p['converged']}"]
    if "biprobit" in res:
        b = res["biprobit"]
        lines += ["Bivariate Probit", f"Equation 1 : {b['outcomes'][0]}"]
        lines += _coef_block(b["equation1"])
        lines += [f"Equation 2 : {b['outcomes'][1]}"]
        lines += _coef_block(b["equation2"])
        a, r = b["athrho"], b["rho"]
        lines += ["Equation 3 : Joint",
                  f"  {'athrho':<22}{_fmt(a['coef'], '10.3f')}{a['marker']:<3} ({_fmt(a['se'], '.5f')})",
                  f"  {'rho':<22}{_fmt(r['coef'], '10.3f')}    ({_fmt(r['se'], '.5f')})",
                  f"log-likelihood = {b['loglik']:.3f}   AIC = {b['aic']:.2f}   converged = {b['converged']}"]
        if b["boundary"]:
            lines.append("warning: correlation estimate at the boundary")
    if "sure" in res:
        s = res["sure"]
        lines += ["Seemingly unrelated regressions (two-stage FGLS)", f"Equation 1 : {s['outcomes'][0]}"]
        lines += _coef_block(s["equation1"])
        lines += [f"Equation 2 : {s['outcomes'][1]}"]
        lines += _coef_block(s["equation2"])
        bp = s["breusch_pagan"]
        lines += ["SURE: Breusch-Pagan test of independence",
                  f"  Correlation {s['resid_corr']:.4f}{bp['marker']}   "
                  f"LM = {bp['statistic']:.3f}   p = {bp['p_value']:.4g}"]
    if "spec_test" in res:
        t = res["spec_test"]
        lines += [f"{'Model':<28}{'No. Params':>10}{'AIC':>12}",
                  f"{t['outcomes'][0] + '+' + t['outcomes'][1]:<28}{t['separate']['k']:>10}{t['separate']['aic']:>12.2f}",
                  f"{'Bivariate Probit':<28}{t['joint']['k']:>10}{t['joint']['aic']:>12.2f}",
                  f"log-likelihood difference = {t['loglik_difference']:.3f}",
                  f"preferred: {t['preferred']}"]
    if any(k in res for k in ("probit", "biprobit", "sure")):
        lines.append(legend)
    return "\n".join(lines) + "\n"


def render_structured(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, path: str):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# runner


def _config_echo(cfg: RunConfig) -> dict:
    keys = ["command", "input_path", "formula1", "formula2", "seed", "no_constant",
            "sample_n", "window_start", "category", "leave_one_out",
            "max_iterations", "gradient_tolerance"]
    return {k: getattr(cfg, k) for k in keys}


def _parse_floats(text: str, label: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{label} must be comma-separated numbers") from None


def _run_simulate(cfg: RunConfig) -> int:
    try:
        spec = GeneratorSpec(
            n=cfg.n, beta1=_parse_floats(cfg.beta1, "--beta1"), beta2=_parse_floats(cfg.beta2, "--beta2"),
            rho=cfg.rho, sigma1=cfg.sigma1, sigma2=cfg.sigma2, regressor_law=cfg.regressor_law,
            seed=cfg.seed, intercept=not cfg.no_constant,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = gen_biprobit(spec) if cfg.model == "biprobit" else gen_sure(spec)
    write_dataset_csv(data.dataset, cfg.output_path)
    write_truth(data.truth, cfg.output_path + ".truth.json")
    return EXIT_OK


def _run_features(cfg: RunConfig) -> int:
    loaded = load_csv(cfg.input_path)
    if not loaded.records:
        raise DataError(f"{cfg.input_path}: no valid records")
    feats = compute_risk_features(loaded.records, leave_one_out=cfg.leave_one_out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "fzrisk", "fprisk", "gzrisk", "gprisk"])
    for r in loaded.records:
        f = feats[r.id]
        w.writerow([r.id, repr(f.fzrisk), repr(f.fprisk), repr(f.gzrisk), repr(f.gprisk)])
    _emit(buf.getvalue(), cfg.output_path)
    if loaded.n_skipped:
        logger.warning("skipped %d invalid row(s)", loaded.n_skipped)
    return EXIT_OK


def _run_sample(cfg: RunConfig) -> int:
    loaded = load_csv(cfg.input_path)
    records = loaded.records
    if cfg.category:
        records = filter_category(records, cfg.category)
    ws = dt.date.fromisoformat(cfg.window_start)
    chosen = rare_event_sample(records, ws, cfg.seed, n_controls=cfg.sample_n)
    if cfg.output_path == "-":
        raise ConfigError("sample writes a CSV and needs --out")
    write_records_csv(chosen, cfg.output_path)
    return EXIT_OK


_FITTERS = {
    "fit-probit": _run_fit_probit,
    "fit-biprobit": _run_fit_biprobit,
    "fit-sure": _run_fit_sure,
    "spec-test": _run_spec_test,
}


def run(cfg: RunConfig) -> int:
    """Execute one command. Returns the process exit status."""
    try:
        cfg.validate()
        if cfg.command == "simulate":
            return _run_simulate(cfg)
        if cfg.command == "features":
            return _run_features(cfg)
        if cfg.command == "sample":
            return _run_sample(cfg)
        opt = OptimizerConfig(max_iterations=cfg.max_iterations, gradient_tolerance=cfg.gradient_tolerance)
        frame = _load_frame(cfg)
        results, converged = _FITTERS[cfg.command](cfg, frame, opt)
        report = {
            "tool": "jointreg",
            "version": __version__,
            "command": cfg.command,
            "config": _config_echo(cfg),
            "data": {"sha256": frame.digest, "kind": frame.kind, "n_rows": frame.n_rows,
                     "skipped_rows": frame.skipped},
            "converged": bool(converged),
            "results": results,
        }
        text = render_structured(report) if cfg.output_format == "structured" else render_table(report)
        _emit(text, cfg.output_path)
        return EXIT_OK if converged else EXIT_NONCONVERGED
    except ConfigError as exc:
        print(f"jointreg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"jointreg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"jointreg: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointreg", description="Joint binary and linear equation estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", dest="input_path")
    p.add_argument("--formula1")
    p.add_argument("--formula2")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_path", default="-")
    p.add_argument("--format", dest="output_format", choices=("table", "structured"), default="table")
    p.add_argument("--no-constant", action="store_true")
    p.add_argument("--sample-n", type=int)
    p.add_argument("--window-start")
    p.add_argument("--category")
    p.add_argument("--leave-one-out", action="store_true",
                   help="exclude each business from its own risk rates")
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--gradient-tolerance", type=float, default=1e-6)
    sim = p.add_argument_group("simulate")
    sim.add_argument("--model", choices=("biprobit", "sure"), default="biprobit")
    sim.add_argument("--n", type=int)
    sim.add_argument("--rho", type=float, default=0.0)
    sim.add_argument("--beta1")
    sim.add_argument("--beta2")
    sim.add_argument("--sigma1", type=float, default=1.0)
    sim.add_argument("--sigma2", type=float, default=1.0)
    sim.add_argument("--regressor-law", choices=("standard_normal", "uniform01"), default="standard_normal")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
