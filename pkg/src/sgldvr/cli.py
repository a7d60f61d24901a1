"""Command-line entry point: ``sgldvr {run,theory,validate,campaign,oracle}``.

Algorithm parameters come from the JSON config file; execution parameters
(seed, output directory, parallelism, record stride) come from flags, which
take precedence over any seed in the config. Exit status is 0 on success, 1
when a campaign verdict fails and 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dynamics import VARIANTS, SgldVrConfig, run, trial_init
from .errors import SgldVrError
from .experiments import CAMPAIGN_NAMES, campaign_spec, run_campaign
from .objectives import make_objective
from .theory import subset_variance, subset_variance_oracle, theory_report, validate_hyperparams
from .trace import summarize, write_trace

DEFAULT_SEED = 20240601

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def load_config(path) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return cfg


def resolve_seed(args, cfg: dict[str, Any]) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", DEFAULT_SEED))


def _require(cfg: dict[str, Any], key: str, path) -> Any:
    if key not in cfg:
        raise UsageError(f"config {path or '<none>'} is missing '{key}'")
    return cfg[key]


def _emit(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _initial_point(cfg: dict[str, Any], d: int, seed: int) -> np.ndarray:
    if "x0" in cfg:
        x0 = np.asarray(cfg["x0"], dtype=float)
        if x0.shape != (d,):
            raise UsageError(f"x0 must have length {d}")
        return x0
    return trial_init(d, seed, 0, float(cfg.get("init_scale", 0.1)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    obj, meta = make_objective(_require(cfg, "objective", args.config))
    config = SgldVrConfig.from_dict(_require(cfg, "algorithm", args.config))
    variant = cfg.get("variant", "sgld-vr")
    if variant not in VARIANTS:
        raise UsageError(f"variant must be one of {', '.join(VARIANTS)}")
    seed = resolve_seed(args, cfg)
    x0 = _initial_point(cfg, obj.d, seed)
    trace = run(obj, config, x0, seed, args.stride, variant=variant, record_iterates=bool(cfg.get("record_iterates", False)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trace.csv"
    write_trace(trace, path)
    _emit({"trace": str(path), "summary": summarize(trace, cfg.get("levels", []))})
    return EXIT_OK


def cmd_theory(args) -> int:
    cfg = load_config(args.config)
    obj, meta = make_objective(_require(cfg, "objective", args.config))
    config = SgldVrConfig.from_dict(_require(cfg, "algorithm", args.config))
    seed = resolve_seed(args, cfg)
    x0 = _initial_point(cfg, obj.d, seed)
    report = theory_report(
        obj.spec,
        meta,
        obj.d,
        config.schedule,
        config.epoch_length,
        f_x0=obj.full_value(x0),
        f_star=float(cfg.get("f_star", meta.known_min_value or 0.0)),
        horizon=config.horizon,
        beta_tilde=float(cfg.get("beta_tilde", 2.0)),
        delta=float(cfg.get("delta", 0.5)),
        eps=float(cfg.get("eps", 0.1)),
        eps_tilde=float(cfg.get("eps_tilde", 0.1)),
        p_fail=float(cfg.get("p_fail", 0.1)),
        target=cfg.get("target"),
    )
    _emit(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "theory.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    if args.L is not None:
        L = args.L
    elif "L" in cfg:
        L = float(cfg["L"])
    else:
        _, meta = make_objective(_require(cfg, "objective", args.config))
        L = meta.grad_lipschitz
    algo = cfg.get("algorithm", {})
    eta0 = args.eta0 if args.eta0 is not None else algo.get("schedule", {}).get("eta0")
    B_e = args.epoch_length if args.epoch_length is not None else algo.get("epoch_length")
    if eta0 is None or B_e is None:
        raise UsageError("validate needs eta0 and epoch_length (flags or config)")
    beta = args.beta_tilde if args.beta_tilde is not None else float(cfg.get("beta_tilde", 2.0))
    feas = validate_hyperparams(float(eta0), beta, float(L), int(B_e))
    if feas.feasible:
        print(f"feasible: c0 (1/beta + 2 eta0) + eta0 L = {feas.lhs:.17g} < 1, min gamma = {feas.gamma_min:.17g}")
    else:
        print(f"infeasible: {feas.reason}")
    return EXIT_OK


def cmd_campaign(args) -> int:
    overrides = load_config(args.config)
    seed = resolve_seed(args, overrides)
    overrides.pop("seed", None)
    spec = campaign_spec(args.name, overrides)
    result = run_campaign(args.name, spec, seed, jobs=args.jobs)
    csv_path, json_path = result.write(args.out)
    for v in result.verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"{status} {v.metric} {v.comparator} {v.threshold:.6g}: measured {v.measured:.6g} (margin {v.margin:.3g}, n={v.n_trials})")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK if result.passed else EXIT_FAIL


def _parse_values(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    try:
        data = [[float(v) for v in r.split(",")] for r in rows]
    except ValueError:
        raise UsageError(f"values must be numbers separated by ',' (columns) and ';' (rows): {text!r}") from None
    if len({len(r) for r in data}) > 1:
        raise UsageError("every row of --values needs the same number of entries")
    a = np.array(data)
    return a[:, 0] if a.shape[1] == 1 else a


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    if args.values is not None:
        values = _parse_values(args.values)
    else:
        values = np.asarray(_require(cfg, "values", args.config), dtype=float)
    b = args.b if args.b is not None else cfg.get("b")
    sizes = [int(b)] if b is not None else list(range(1, len(values) + 1))
    rows = []
    ok = True
    for size in sizes:
        formula = subset_variance(values, size)
        exact = subset_variance_oracle(values, size)
        rows.append({"b": size, "formula": formula, "enumeration": exact, "abs_diff": abs(formula - exact)})
        ok &= abs(formula - exact) <= 1e-12
    _emit({"n": int(len(values)), "results": rows, "agree": ok})
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with algorithm parameters")
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes for trials")
    common.add_argument("--stride", type=int, default=1, help="record every n-th iteration")

    p = argparse.ArgumentParser(prog="sgldvr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="{run,theory,validate,campaign,oracle}")
    sub.required = True

    sp = sub.add_parser("run", parents=[common], help="run one trajectory and write trace.csv")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("theory", parents=[common], help="print the derived constants as JSON")
    sp.set_defaults(func=cmd_theory, out=None)

    sp = sub.add_parser("validate", parents=[common], help="check hyperparameter feasibility")
    sp.add_argument("--eta0", type=float)
    sp.add_argument("--L", type=float, help="gradient Lipschitz constant")
    sp.add_argument("--epoch-length", type=int)
    sp.add_argument("--beta-tilde", type=float)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("campaign", parents=[common], help="run a Monte Carlo campaign")
    sp.add_argument("name", choices=CAMPAIGN_NAMES)
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("oracle", parents=[common], help="subset-variance formula vs enumeration")
    sp.add_argument("--values", help="rows separated by ';', columns by ','")
    sp.add_argument("--b", type=int, help="subset size (default: every size)")
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) < 1 or getattr(args, "stride", 1) < 1:
        print("sgldvr: error: --jobs and --stride must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (UsageError, SgldVrError, ValueError, KeyError, TypeError) as exc:
        print(f"sgldvr: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
