"""Command-line front end: ``survext <command> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bayes
from .bma import Scheme, model_average
from .dataset import Arm, BlendError, DataError, Dataset, LongTermAnchor, Source, blend, load_ipd, \
    trim_tail, write_ipd
from .io import (AUC_HEADER, read_digitized, read_lifetable, read_risk_table, resolve_path,
                 write_csv, write_curve, write_lifetable)
from .km import EstimationError, kaplan_meier, life_table
from .metrics import auc_fit, auc_grid, auc_posterior, auc_step
from .nonparametric import extrapolation_unreliable, fit_local_linear, minus2ll, predict
from .parametric import ALL_KINDS, FitError, ModelKind, fit_mle
from .pipeline import DEFAULT_ALPHAS, AucRow, compare_strategies
from .reconstruct import ReconstructionError, lifetable_to_ipd, reconstruct_ipd

COMMANDS = ("km", "fit", "reconstruct", "blend", "bayes", "bma", "report")
ANCHOR_COMMANDS = ("bayes", "bma", "report")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    input: str = "@rct"
    arm: str = "SOC"
    trim: float = 0.0
    join: float | None = None
    horizon: float = 72.0
    seed: int = 1
    out: str = "."
    registry: str | None = None
    registry_lifetable: str | None = None
    curve: str | None = None
    risk: str | None = None
    lifetable: str | None = None
    width: float | None = None
    models: list[str] = field(default_factory=list)
    model: str = "lognormal"
    alpha: list[float] = field(default_factory=list)
    alpha0: float = 1.0
    anchor_t: float | None = None
    anchor_s: float | None = None
    anchor_var: float | None = None
    chains: int = 4
    warmup: int = 5000
    kept: int = 5000
    thin: int = 1
    scheme: str = "DIC"
    dic_mode: str = "delta"
    nonparametric: bool = False
    plot: bool = True

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def comments(self) -> list[str]:
        return [f"survext {__version__} command={self.command} config={self.digest()} seed={self.seed}"]

    @property
    def anchor(self) -> LongTermAnchor | None:
        vals = (self.anchor_t, self.anchor_s, self.anchor_var)
        if all(v is None for v in vals):
            return None
        return LongTermAnchor(*vals)

    @property
    def mcmc(self) -> bayes.McmcConfig:
        return bayes.McmcConfig(self.chains, self.warmup, self.kept, self.thin, self.seed)


_LIST_KEYS = {"models": str, "alpha": float}
_BOOL_KEYS = ("nonparametric", "plot")


def _coerce(key, value, annotation_default):
    if key in _LIST_KEYS:
        parts = value if isinstance(value, list) else str(value).split(",")
        return [_LIST_KEYS[key](str(p).strip()) for p in parts if str(p).strip()]
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        v = str(value).strip().lower()
        if v not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"config key {key}: expected a boolean, got {value!r}")
        return v in ("1", "true", "yes")
    if value is None:
        return None
    if key in ("seed", "chains", "warmup", "kept", "thin"):
        return int(value)
    if key in ("trim", "join", "horizon", "alpha0", "anchor_t", "anchor_s", "anchor_var", "width"):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; keys are option names."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    valid = set(RunConfig.__dataclass_fields__) - {"command"}
    out = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in valid:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value, None)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="key=value file; command-line flags override it")
    g.add_argument("--input", help="trial IPD CSV (or @rct for the bundled data)")
    g.add_argument("--arm", help="SOC or EXPERIMENTAL")
    g.add_argument("--trim", type=float, help="fraction of follow-up removed from the tail")
    g.add_argument("--join", type=float, help="registry join time in months")
    g.add_argument("--horizon", type=float, help="restricted-AUC horizon in months")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--registry", help="registry IPD CSV")
    g.add_argument("--registry-lifetable", dest="registry_lifetable",
                   help="registry life-table CSV, expanded to pseudo-IPD")
    g.add_argument("--models", help="comma-separated model list")
    b = common.add_argument_group("bayes")
    b.add_argument("--model", help="lognormal or loglogistic")
    b.add_argument("--alpha", type=float, action="append",
                   help="anchor precision power (repeatable)")
    b.add_argument("--alpha0", type=float, help="power-prior weight of the registry")
    b.add_argument("--anchor-t", dest="anchor_t", type=float)
    b.add_argument("--anchor-s", dest="anchor_s", type=float)
    b.add_argument("--anchor-var", dest="anchor_var", type=float)
    b.add_argument("--chains", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--kept", type=int)
    b.add_argument("--thin", type=int)
    b.add_argument("--scheme", help="BMA weights: DIC, AUC or LOCATION")
    b.add_argument("--dic-mode", dest="dic_mode", help="delta (default) or inverse")
    o = common.add_argument_group("other")
    o.add_argument("--curve", help="digitised curve CSV (time,survival)")
    o.add_argument("--risk", help="risk-table CSV (time,n_risk)")
    o.add_argument("--lifetable", help="life-table CSV to expand into pseudo-IPD")
    o.add_argument("--width", type=float, help="life-table interval width")
    o.add_argument("--nonparametric", action="store_const", const=True,
                   help="also fit the local linear model")
    o.add_argument("--no-plot", dest="plot", action="store_const", const=False)

    parser = argparse.ArgumentParser(prog="survext", description="Survival extrapolation toolkit")
    parser.add_argument("--version", action="version", version=f"survext {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "km": "Kaplan-Meier curve, optional life table and restricted AUC",
        "fit": "maximum-likelihood fits of the five parametric models",
        "reconstruct": "pseudo-IPD from a digitised curve or a life table",
        "blend": "append registry records past the join time",
        "bayes": "posterior sampling with power prior and anchor",
        "bma": "model-averaged lognormal and log-logistic posteriors",
        "report": "six-strategy AUC comparison and SVG overlay",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key, v in vars(args).items():
        if key in ("config", "command") or v is None:
            continue
        values[key] = _coerce(key, v, None)
    cfg = RunConfig(command=args.command, **values)
    _check(cfg, explicit=set(values))
    return cfg


def _check(cfg: RunConfig, explicit: set) -> None:
    anchor_keys = {"anchor_t", "anchor_s", "anchor_var"} & explicit
    if anchor_keys and cfg.command not in ANCHOR_COMMANDS:
        raise UsageError(f"anchor options are only valid for {', '.join(ANCHOR_COMMANDS)}")
    if anchor_keys and len(anchor_keys) != 3:
        raise UsageError("an anchor needs all of --anchor-t, --anchor-s and --anchor-var")
    if cfg.alpha and cfg.anchor is None:
        raise UsageError("--alpha needs an anchor (--anchor-t/--anchor-s/--anchor-var)")
    if cfg.registry and cfg.registry_lifetable:
        raise UsageError("give either --registry or --registry-lifetable, not both")
    has_registry = bool(cfg.registry or cfg.registry_lifetable)
    if cfg.command == "blend" and not has_registry:
        raise UsageError("blend needs --registry or --registry-lifetable")
    if "join" in explicit and not has_registry:
        raise UsageError("--join needs a registry input")
    if cfg.command == "reconstruct":
        if not (cfg.lifetable or (cfg.curve and cfg.risk)):
            raise UsageError("reconstruct needs --curve and --risk, or --lifetable")
    if cfg.command == "km" and cfg.width is not None and not cfg.width > 0:
        raise UsageError("--width must be positive")
    for key in ("input", "registry", "registry_lifetable", "curve", "risk", "lifetable"):
        p = getattr(cfg, key)
        if p and not resolve_path(p).exists():
            raise UsageError(f"--{key.replace('_', '-')}: {p} does not exist")
    try:
        Arm(cfg.arm.upper())
    except ValueError:
        raise UsageError(f"unknown arm {cfg.arm!r}") from None
    if cfg.scheme.upper() not in Scheme.__members__:
        raise UsageError(f"unknown BMA scheme {cfg.scheme!r}")


# ---------------------------------------------------------------------------

def _rct(cfg: RunConfig) -> Dataset:
    data = load_ipd(resolve_path(cfg.input)).filter_arm(cfg.arm)
    if not len(data):
        raise DataError(f"no {cfg.arm.upper()} records in {cfg.input}")
    return trim_tail(data, cfg.trim)


def _registry(cfg: RunConfig) -> Dataset | None:
    if cfg.registry:
        return load_ipd(resolve_path(cfg.registry), source=Source.REGISTRY).filter_arm(cfg.arm)
    if cfg.registry_lifetable:
        return lifetable_to_ipd(read_lifetable(cfg.registry_lifetable), arm=cfg.arm)
    return None


def _join(cfg: RunConfig, rct: Dataset) -> float:
    return cfg.join if cfg.join is not None else float(rct.time.max())


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _models(cfg: RunConfig, default):
    names = cfg.models or [k.value for k in default]
    return [ModelKind.parse(m) for m in names]


def cmd_km(cfg: RunConfig) -> list[Path]:
    data = _rct(cfg)
    out = _outdir(cfg)
    curve = kaplan_meier(data)
    files = [out / "km.csv", out / "auc.csv"]
    write_curve(files[0], curve, cfg.comments())
    a = auc_step(curve, cfg.horizon)
    write_csv(files[1], AUC_HEADER,
              [["KM", cfg.arm.upper(), cfg.horizon, a.value, a.se, ";".join(a.flags)]],
              cfg.comments())
    if cfg.width:
        files.append(out / "lifetable.csv")
        write_lifetable(files[-1], life_table(data, cfg.width), cfg.comments())
    return files


FIT_HEADER = ["model", "lam", "lam_se", "p", "p_se", "mu", "mu_se", "sigma", "sigma_se",
              "minus2ll", "aic", "bic", "converged"]


def cmd_fit(cfg: RunConfig) -> list[Path]:
    data = _rct(cfg)
    reg = _registry(cfg)
    if reg is not None:
        data = blend(data, reg, _join(cfg, data))
    out = _outdir(cfg)
    rows, auc_rows = [], []
    for kind in _models(cfg, ALL_KINDS):
        fit = fit_mle(kind, data)
        vals = fit.params.as_dict()
        se = fit.param_se()
        row = [kind.value]
        for name in ("lam", "p", "mu", "sigma"):
            row += [vals.get(name), se.get(name)]
        rows.append(row + [fit.minus2LL, fit.aic, fit.bic, fit.converged])
        a = auc_fit(fit, cfg.horizon)
        auc_rows.append([f"MLE {kind.value}", cfg.arm.upper(), cfg.horizon, a.value, a.se,
                         "" if fit.converged else "not-converged"])
    files = [out / "fit_report.csv", out / "auc.csv"]
    if cfg.nonparametric:
        model = fit_local_linear(kaplan_meier(data))
        grid = np.linspace(0.0, cfg.horizon, 1441)
        flags = "extrapolation-unreliable" if extrapolation_unreliable(model, cfg.horizon) else ""
        auc_rows.append(["local linear", cfg.arm.upper(), cfg.horizon,
                         float(auc_grid(grid, predict(model, grid), cfg.horizon)), math.nan,
                         ";".join(f for f in (flags, "no-variance") if f)])
        files.append(out / "nonparametric.csv")
        write_csv(files[-1], ["bandwidth", "kernel", "minus2ll", "knots", "last_knot"],
                  [[model.bandwidth, model.kernel.value, minus2ll(model), len(model.knot_t),
                    model.t_max]], cfg.comments())
    write_csv(files[0], FIT_HEADER, rows, cfg.comments())
    write_csv(files[1], AUC_HEADER, auc_rows, cfg.comments())
    return files


def cmd_reconstruct(cfg: RunConfig) -> list[Path]:
    out = _outdir(cfg)
    if cfg.lifetable:
        data = lifetable_to_ipd(read_lifetable(cfg.lifetable), arm=cfg.arm)
        path = out / "lifetable_ipd.csv"
    else:
        data = reconstruct_ipd(read_digitized(cfg.curve), read_risk_table(cfg.risk), arm=cfg.arm)
        path = out / "reconstructed_ipd.csv"
    write_ipd(data, path, cfg.comments())
    files = [path]
    if data.n_events:
        files.append(path.with_name(path.stem + "_km.csv"))
        write_curve(files[-1], kaplan_meier(data), cfg.comments())
    return files


def cmd_blend(cfg: RunConfig) -> list[Path]:
    rct = _rct(cfg)
    data = blend(rct, _registry(cfg), _join(cfg, rct))
    path = _outdir(cfg) / "blended_ipd.csv"
    write_ipd(data, path, cfg.comments())
    return [path]


def _alpha_tag(a) -> str:
    return "none" if a is None else format(a, "g")


def _diag_rows(s, alpha):
    names = bayes.param_names(s.kind)
    return [[s.kind.value, _alpha_tag(alpha), n, float(np.mean(s.acceptance)), s.rhat[j], s.ess[j],
             s.dic, s.pd, s.converged] for j, n in enumerate(names)]


DIAG_HEADER = ["model", "alpha", "param", "acceptance", "rhat", "ess", "dic", "pd", "converged"]


def write_draws(path, s, comments) -> None:
    names = bayes.param_names(s.kind)
    pd = s.param_draws()
    k = s.kept_per_chain
    rows = ([c, i, *pd[c * k + i], s.deviance_draws[c * k + i]]
            for c in range(s.chains) for i in range(k))
    write_csv(path, ["chain", "iter", *names, "deviance"], rows, comments)


def cmd_bayes(cfg: RunConfig) -> list[Path]:
    rct = _rct(cfg)
    reg = _registry(cfg)
    hist = None
    if reg is not None:
        from .pipeline import truncated_registry

        hist = truncated_registry(reg, _join(cfg, rct))
    kind = ModelKind.parse(cfg.model)
    out = _outdir(cfg)
    alpha0 = cfg.alpha0 if hist is not None else 0.0
    anchor = cfg.anchor
    if anchor is not None:
        samples = bayes.constrained_fit(kind, rct, anchor, cfg.alpha or list(DEFAULT_ALPHAS),
                                        config=cfg.mcmc, historical=hist, alpha0=alpha0,
                                        horizon=cfg.horizon)
    else:
        samples = [bayes.sample(kind, rct, bayes.PowerPriorSpec(hist, alpha0), config=cfg.mcmc)]
    files, diag, aucs = [], [], []
    for s in samples:
        alpha = s.report.get("alpha")
        path = out / f"draws_{kind.value}_alpha-{_alpha_tag(alpha)}.csv"
        write_draws(path, s, cfg.comments())
        files.append(path)
        diag += _diag_rows(s, alpha)
        a = auc_posterior(s, horizon=cfg.horizon)
        flags = [f"alpha={_alpha_tag(alpha)}"]
        if hist is not None:
            flags.append(f"alpha0={alpha0:g}")
        if anchor is not None:
            flags.append(f"s_obs_mean={s.report['s_obs_mean']:.6g}")
        if not s.converged:
            flags.append("not-converged")
        aucs.append([f"bayes {kind.value}", cfg.arm.upper(), cfg.horizon, a.value, a.se,
                     ";".join(flags)])
    files += [out / "diagnostics.csv", out / "auc.csv"]
    write_csv(files[-2], DIAG_HEADER, diag, cfg.comments())
    write_csv(files[-1], AUC_HEADER, aucs, cfg.comments())
    return files


BMA_HEADER = ["scheme", "dic_mode", "model", "weight", "dic", "auc", "auc_sd", "mu",
              "mixture_auc", "mixture_auc_sd", "horizon"]


def cmd_bma(cfg: RunConfig) -> list[Path]:
    rct = _rct(cfg)
    reg = _registry(cfg)
    hist = None
    if reg is not None:
        from .pipeline import truncated_registry

        hist = truncated_registry(reg, _join(cfg, rct))
    anchor = cfg.anchor
    if anchor is not None:
        anchor = LongTermAnchor(anchor.t_obs, anchor.s_obs, anchor.var_obs,
                                max(cfg.alpha) if cfg.alpha else 1.0)
    spec = bayes.PowerPriorSpec(hist, cfg.alpha0 if hist is not None else 0.0, anchor)
    kinds = _models(cfg, (ModelKind.LOGNORMAL, ModelKind.LOGLOGISTIC))
    samples = [bayes.sample(k, rct, spec, config=cfg.mcmc) for k in kinds]
    res = model_average(samples, cfg.scheme, cfg.horizon, dic_mode=cfg.dic_mode)
    rows = [[res.weights.scheme.value, cfg.dic_mode, k.value, res.weights.w[i], res.dic[i],
             res.auc[i], res.auc_sd[i], res.mu[i], res.mixture_auc, res.mixture_auc_sd, cfg.horizon]
            for i, k in enumerate(kinds)]
    path = _outdir(cfg) / "bma_report.csv"
    write_csv(path, BMA_HEADER, rows, cfg.comments())
    return [path]


def cmd_report(cfg: RunConfig) -> list[Path]:
    from .plot import survival_svg

    rct = _rct(cfg)
    out = _outdir(cfg)
    km = kaplan_meier(rct)
    files = []
    if cfg.models == ["none"]:
        curves = []
        files.append(out / "auc_report.csv")
        a = auc_step(km, cfg.horizon)
        write_csv(files[-1], AUC_HEADER,
                  [AucRow("KM", cfg.arm.upper(), cfg.horizon, a.value, a.se, a.flags).as_list()],
                  cfg.comments())
    else:
        res = compare_strategies(rct, _registry(cfg), _join(cfg, rct), cfg.anchor,
                                 cfg.alpha or DEFAULT_ALPHAS, cfg.alpha0, config=cfg.mcmc,
                                 horizon=cfg.horizon, arm=cfg.arm.upper(), scheme=cfg.scheme,
                                 dic_mode=cfg.dic_mode)
        curves = res.curves
        files.append(out / "auc_report.csv")
        write_csv(files[-1], AUC_HEADER, [r.as_list() for r in res.rows], cfg.comments())
    if cfg.plot:
        files.append(out / "report.svg")
        survival_svg(files[-1], km, curves, cfg.anchor,
                     title=f"{cfg.arm.upper()} arm, config {cfg.digest()}")
    return files


HANDLERS = {
    "km": cmd_km, "fit": cmd_fit, "reconstruct": cmd_reconstruct, "blend": cmd_blend,
    "bayes": cmd_bayes, "bma": cmd_bma, "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except UsageError as exc:
        print(f"survext: usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"survext: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        files = HANDLERS[cfg.command](cfg)
    except (DataError, BlendError, ReconstructionError, FitError, EstimationError,
            bayes.SamplerError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"survext: error: {msg}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
