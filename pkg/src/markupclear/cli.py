"""Command-line entry point: ``markupclear clear | extend | report``.

Every flag of ``clear`` can also be set through an environment variable named
MARKUP_ plus the flag in upper case with dashes as underscores (for example
MARKUP_BALANCE=weak or MARKUP_TIME_LIMIT=60); explicit flags win.

Exit codes:
    0  success
    1  the requested clearing is infeasible (a report row is still written)
    2  usage, configuration, input or output error
    3  a solver limit stopped the run
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .bb import MilpConfig, MilpStatus, solve_milp
from .formulation import ClearingOptions, build_dcopf_milp
from .markup import (MILP, THRESHOLD, InfeasibleClearing, MarkupConfig, NoFeasibleMarkup, run_markup)
from .metrics import (Allocation, ClearingReport, PricingError, budget_and_oversupply, ip_prices, reports_from_csv,
                      reports_from_json, reports_to_csv, reports_to_json, rwl, seller_mwps, welfare)
from .scenario import ScenarioError, extend_to_multiperiod, load_profiles, load_scenario, serialize_scenario
from .synthetic import example, performance_scenario, random_scenario

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_LIMIT = 0, 1, 2, 3
ENV_PREFIX = "MARKUP_"
MODES = ("opt", "markup-threshold", "markup-milp", "ip-price")

log = logging.getLogger("markupclear")


class UsageError(Exception):
    pass


class JsonLogFormatter(logging.Formatter):
    def format(self, record):
        doc = {"ts": round(record.created, 3), "level": record.levelname.lower(),
               "event": getattr(record, "event", record.getMessage())}
        doc.update(getattr(record, "fields", {}))
        if record.exc_info:
            doc["error"] = self.formatException(record.exc_info)
        return json.dumps(doc, default=str, sort_keys=False)


def _setup_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


def _event(name, /, **fields):
    log.info(name, extra={"event": name, "fields": fields})


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _cap(text: str):
    if text.lower() in ("none", "off"):
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'none', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markupclear", description="Day-ahead market clearing with the markup mechanism.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="info", choices=("debug", "info", "warning", "error"))
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("clear", help="clear one scenario and write a report row")
    c.add_argument("--scenario", help="scenario JSON, or example:<name>, synthetic:random, synthetic:performance")
    c.add_argument("--mode", choices=MODES)
    c.add_argument("--balance", choices=("strict", "weak"))
    c.add_argument("--alpha-set", type=_float_list)
    c.add_argument("--delta-set", type=_float_list)
    c.add_argument("--auctioneer-demand", type=float)
    c.add_argument("--oversupply-cap", type=_cap)
    c.add_argument("--allow-alpha-ge-1", action="store_true", default=None)
    c.add_argument("--seed", type=int)
    c.add_argument("--time-limit", type=float)
    c.add_argument("--gap", type=float)
    c.add_argument("--out")
    c.add_argument("--format", choices=("csv", "json"))
    c.add_argument("--jobs", type=int)
    c.add_argument("--prices-out", help="ip-price mode: also write the nodal prices as CSV")

    e = sub.add_parser("extend", help="extend a single-period scenario to 24 hours")
    e.add_argument("--input", required=True)
    e.add_argument("--profiles", required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--base-hour", type=int, default=8)
    e.add_argument("--uptime-threshold", type=float, default=1500.0)

    r = sub.add_parser("report", help="merge report files into one comparison table")
    r.add_argument("files", nargs="+")
    r.add_argument("--out")
    r.add_argument("--format", choices=("table", "csv", "json"), default="table")
    return p


_CLEAR_DEFAULTS = {
    "mode": "markup-threshold", "balance": "strict", "alpha_set": None, "delta_set": None,
    "auctioneer_demand": 0.0, "oversupply_cap": "default", "allow_alpha_ge_1": False, "seed": 0,
    "time_limit": None, "gap": None, "out": None, "format": "csv", "jobs": None,
}
_CONVERTERS = {"alpha_set": _float_list, "delta_set": _float_list, "auctioneer_demand": float,
               "oversupply_cap": _cap, "seed": int, "time_limit": float, "gap": float, "jobs": int,
               "allow_alpha_ge_1": lambda v: v.lower() in ("1", "true", "yes", "on")}


def resolve_config(args: argparse.Namespace, environ=os.environ) -> argparse.Namespace:
    """Fill unset flags from MARKUP_* variables, then from defaults, and validate."""
    cfg = argparse.Namespace(**vars(args))
    for key in ["scenario", *(_CLEAR_DEFAULTS)]:
        if getattr(cfg, key, None) is not None:
            continue
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            conv = _CONVERTERS.get(key, str)
            try:
                setattr(cfg, key, conv(env))
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{ENV_PREFIX}{key.upper()}: {exc}") from None
        else:
            setattr(cfg, key, _CLEAR_DEFAULTS.get(key))
    if not cfg.scenario:
        raise UsageError("--scenario is required")
    if cfg.mode not in MODES:
        raise UsageError(f"unknown mode {cfg.mode!r}")
    if cfg.balance not in ("strict", "weak"):
        raise UsageError(f"unknown balance {cfg.balance!r}")
    if cfg.delta_set is not None and cfg.mode != "markup-threshold":
        raise UsageError("--delta-set only applies to --mode markup-threshold")
    if cfg.alpha_set is not None and not cfg.mode.startswith("markup"):
        raise UsageError("--alpha-set only applies to the markup modes")
    if cfg.auctioneer_demand < 0:
        raise UsageError("--auctioneer-demand must be nonnegative")
    if cfg.auctioneer_demand > 0 and cfg.balance != "weak":
        raise UsageError("--auctioneer-demand needs --balance weak")
    if cfg.oversupply_cap not in ("default", None) and cfg.balance != "weak":
        raise UsageError("--oversupply-cap needs --balance weak")
    if cfg.jobs is None:
        cfg.jobs = os.cpu_count() or 1
    if cfg.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if cfg.time_limit is not None and cfg.time_limit <= 0:
        raise UsageError("--time-limit must be positive")
    return cfg


def _load(spec: str, seed: int):
    if spec.startswith("example:"):
        return example(spec.split(":", 1)[1])
    if spec == "synthetic:random":
        return random_scenario(seed)
    if spec == "synthetic:performance":
        return performance_scenario(seed)
    return load_scenario(spec)


def _options(cfg) -> ClearingOptions:
    kw = {"balance": cfg.balance, "auctioneer_demand": cfg.auctioneer_demand}
    if cfg.oversupply_cap != "default":
        kw["oversupply_cap"] = cfg.oversupply_cap
    return ClearingOptions(**kw)


def _write_atomic(path: str, text: str):
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=".tmp-", suffix=target.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_reports(path: str) -> list:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json") or text.lstrip().startswith(("[", "{")):
        return reports_from_json(text)
    return reports_from_csv(text)


def _emit(reports: list, cfg):
    fmt = cfg.format
    if cfg.out is None:
        sys.stdout.write(reports_to_json(reports) if fmt == "json" else reports_to_csv(reports))
        return
    existing = _read_reports(cfg.out) if os.path.exists(cfg.out) and os.path.getsize(cfg.out) else []
    allr = existing + reports
    _write_atomic(cfg.out, reports_to_json(allr) if fmt == "json" else reports_to_csv(allr))


def _opt_report(s, cfg, name) -> tuple[ClearingReport, int, dict]:
    opts = _options(cfg)
    gap = cfg.gap if cfg.gap is not None else 1e-6
    t0 = time.perf_counter()
    res = solve_milp(build_dcopf_milp(s, opts), MilpConfig(gap_tol=gap, time_limit=cfg.time_limit))
    t1 = time.perf_counter()
    _event("opt-solve", seconds=t1 - t0, status=res.status.value, nodes=res.nodes, gap=res.gap)
    rep = ClearingReport("OPT", opts.balance, scenario=name)
    if res.status == MilpStatus.INFEASIBLE:
        rep.status = "infeasible"
        return rep, EXIT_INFEASIBLE, {}
    if not res.has_incumbent:
        rep.status = "limit"
        rep.runtime = t1 - t0
        return rep, EXIT_LIMIT, {}
    alloc = Allocation.from_vector(res.instance, res.primal)
    prices = ip_prices(s, alloc, opts)
    mwps = seller_mwps(s, alloc, prices)
    deficit, over = budget_and_oversupply(s, alloc, prices, 0.0, mwps)
    t2 = time.perf_counter()
    rep.welfare, rep.supply, rep.demand, rep.oversupply = welfare(alloc, s), alloc.total_supply(), \
        alloc.total_demand(), over
    rep.mwps, rep.budget_deficit, rep.runtime = sum(mwps.values()), deficit, t2 - t0
    rep.timings = {"milp": round(t1 - t0, 4), "pricing": round(t2 - t1, 4)}
    if res.status != MilpStatus.OPTIMAL:
        rep.status = "limit"
        return rep, EXIT_LIMIT, prices
    return rep, EXIT_OK, prices


def _markup_report(s, cfg, name) -> tuple[ClearingReport, int]:
    opts = _options(cfg)
    rounding = THRESHOLD if cfg.mode == "markup-threshold" else MILP
    kw = {"options": opts, "rounding": rounding, "jobs": cfg.jobs, "allow_alpha_ge_1": bool(cfg.allow_alpha_ge_1)}
    if cfg.alpha_set is not None:
        kw["alphas"] = tuple(cfg.alpha_set)
    if cfg.delta_set is not None:
        kw["deltas"] = tuple(cfg.delta_set)
    if cfg.gap is not None or cfg.time_limit is not None:
        kw["milp"] = MilpConfig(gap_tol=cfg.gap if cfg.gap is not None else 1e-4, time_limit=cfg.time_limit)
    try:
        mc = MarkupConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    algorithm = "Threshold" if rounding == THRESHOLD else "MILP Round"
    t0 = time.perf_counter()
    try:
        out = run_markup(s, mc)
    except NoFeasibleMarkup as exc:
        for rec in exc.diagnostics:
            _event("alpha-diagnostic", **vars(rec))
        only_infeasible = all(rec.status == "infeasible" for rec in exc.diagnostics)
        limit = any("limit" in rec.message for rec in exc.diagnostics)
        status = "limit" if limit else ("infeasible" if only_infeasible else "budget")
        rep = ClearingReport(algorithm, opts.balance, scenario=name, status=status,
                             alpha=mc.alphas[-1], delta=mc.deltas[-1] if rounding == THRESHOLD and len(mc.deltas) == 1 else None,
                             runtime=time.perf_counter() - t0)
        if limit:
            return rep, EXIT_LIMIT
        return rep, EXIT_INFEASIBLE
    t1 = time.perf_counter()
    a = out.allocation
    deficit, over = budget_and_oversupply(s, a, out.prices, out.alpha, out.mwps)
    rep = ClearingReport(algorithm, opts.balance, scenario=name, welfare=out.welfare, supply=a.total_supply(),
                         demand=a.total_demand(), oversupply=over, mwps=out.total_mwp, budget_deficit=deficit,
                         alpha=out.alpha, delta=out.delta, runtime=t1 - t0,
                         timings={k: round(v, 4) for k, v in out.timings.items()})
    return rep, EXIT_OK


def cmd_clear(cfg) -> int:
    try:
        s = _load(cfg.scenario, cfg.seed)
    except (OSError, ScenarioError, KeyError) as exc:
        print(f"markupclear: cannot load scenario {cfg.scenario!r}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    name = Path(cfg.scenario).stem if ":" not in cfg.scenario else cfg.scenario
    _event("scenario", name=name, nodes=len(s.network.nodes), sellers=len(s.sellers), buyers=len(s.buyers),
           periods=s.horizon, mode=cfg.mode, balance=cfg.balance)
    try:
        if cfg.mode in ("opt", "ip-price"):
            rep, code, prices = _opt_report(s, cfg, name)
            if cfg.mode == "ip-price" and prices and cfg.prices_out:
                lines = ["node,period,price"] + [f"{v},{t},{p!r}" for (v, t), p in prices.items()]
                _write_atomic(cfg.prices_out, "\n".join(lines) + "\n")
            if cfg.mode == "ip-price":
                rep.algorithm = "IP Price"
        else:
            rep, code = _markup_report(s, cfg, name)
    except UsageError as exc:
        print(f"markupclear: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleClearing as exc:
        print(f"markupclear: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PricingError as exc:
        print(f"markupclear: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _event("report", status=rep.status, welfare=rep.welfare, runtime=rep.runtime, **rep.timings)
    try:
        _emit([rep], cfg)
    except (OSError, ValueError) as exc:
        print(f"markupclear: cannot write report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code


def cmd_extend(args) -> int:
    try:
        s = load_scenario(args.input)
        prof = load_profiles(args.profiles, args.base_hour)
        ext = extend_to_multiperiod(s, prof, args.seed, args.uptime_threshold)
    except (OSError, ScenarioError, ValueError) as exc:
        print(f"markupclear: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _write_atomic(args.out, serialize_scenario(ext))
    except OSError as exc:
        print(f"markupclear: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _event("extend", input=args.input, out=args.out, seed=args.seed, sellers=len(ext.sellers))
    return EXIT_OK


def merge_reports(reports: list) -> list:
    """Group by scenario (first-seen order) and fill RWL from each group's OPT row."""
    groups: dict = {}
    for r in reports:
        groups.setdefault(r.scenario, []).append(r)
    out = []
    for name, rows in groups.items():
        opt = next((r for r in rows if r.algorithm == "OPT" and r.status == "ok" and r.welfare is not None), None)
        for r in rows:
            if r.algorithm != "OPT" and r.welfare is not None and r.rwl is None and opt is not None and opt.welfare:
                r.rwl = rwl(r.welfare, opt.welfare)
        out.append((name, rows))
    return out


def render_table(groups: list) -> str:
    from .metrics import COLUMNS
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for name, rows in groups:
        lines.append(f"| **{name}** |" + " |" * (len(COLUMNS) - 1))
        for r in rows:
            lines.append("| " + " | ".join(r.table_cells()) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    reports = []
    try:
        for path in args.files:
            reports.extend(_read_reports(path))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"markupclear: cannot read reports: {exc}", file=sys.stderr)
        return EXIT_USAGE
    groups = merge_reports(reports)
    merged = [r for _, rows in groups for r in rows]
    if args.format == "csv":
        text = reports_to_csv(merged)
    elif args.format == "json":
        text = reports_to_json(merged)
    else:
        text = render_table(groups)
    if args.out:
        try:
            _write_atomic(args.out, text)
        except OSError as exc:
            print(f"markupclear: cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _setup_logging(args.log_level)
    if args.command == "clear":
        try:
            cfg = resolve_config(args)
        except UsageError as exc:
            print(f"markupclear: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return cmd_clear(cfg)
    if args.command == "extend":
        return cmd_extend(args)
    return cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
