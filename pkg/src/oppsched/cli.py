"""Command-line front end.

    oppsched capacity  --K 10,100,1000 [--simulate]
    oppsched threshold --K 100:1000:100
    oppsched groups    --K 10,20,40
    oppsched queueing  --model model1 --K 2:10:1 --lambda-total 0.3675
    oppsched simulate  --K 20 --lambda-total 0.2 --attempt-prob 0.05
    oppsched validate  [--only 1,3,5]

Every command accepts --config FILE (INI file, one section per command, keys
named like the long flags), --seed, --format {csv,json} and --out. Flags
given on the command line override the file.

Exit codes: 0 success, 1 usage error, 2 model or numerical error,
3 validation failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
import warnings

import numpy as np

from . import qmodel1 as q1
from .channel import ChannelModel, mixture_sf, stationary_state_probs
from .dsched import (distributed_capacity_breakdown, threshold_asymptotic, threshold_exact,
                     threshold_refined_gaussian)
from .errors import ModelError
from .evt import expected_capacity_centralized, expected_capacity_good_only, norm_constants_mixture
from .groups import best_delta, capacity_lower_bound_mode, expected_capacity_by_state, transition_matrix
from .qmodel2 import decoupled_queue, metrics_model2
from .qmodel3 import solve_model3
from .sim import (ArrivalKind, CapacityMode, SimConfig, embedded_switch_probs, estimate_capacity_max,
                  run_slotted)
from .validation import DEFAULT_SEED, run_checks

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_VALIDATION = 0, 1, 2, 3

# column sets are part of the output contract; tests pin them
CAPACITY_COLUMNS = ["K", "p_good", "a_K", "b_K", "centralized", "good_only", "distributed", "ratio",
                    "threshold_exact"]
CAPACITY_SIM_COLUMNS = ["sim_max_mean", "sim_max_se", "sim_distributed", "sim_distributed_hw"]
THRESHOLD_COLUMNS = ["K", "asymptotic", "exact", "refined_gaussian", "users_above_asymptotic",
                     "users_above_exact"]
GROUPS_COLUMNS = ["K", "expected_by_state", "centralized", "lower_bound_mode", "lower_bound_delta",
                  "best_delta", "mode_prob"]
QUEUE_COLUMNS = {
    "model1": ["K", "lambda_total", "lambda", "p", "mean_queue", "time_in_line", "service_time",
               "delay", "success_prob", "success_prob_attempt", "iterations"],
    "model2": ["K", "lambda_total", "lambda", "tau", "p_coll", "p_succ", "service_time", "wait",
               "queue_len", "delay"],
    "model3": ["K", "lambda_total", "lambda", "mu_g", "mu_b", "alpha", "beta", "p_succ", "mean_queue",
               "wait", "pi_g0", "pi_b0", "z0", "attempt_prob"],
}
# analytic column -> simulator metric used for the comparison
QUEUE_SIM_METRICS = {
    "model1": {"mean_queue": "queue_behind_hol", "time_in_line": "time_in_line",
               "service_time": "service_time", "success_prob": "success_prob_nonidle"},
    "model2": {"p_succ": "success_prob", "service_time": "hol_time", "queue_len": "mean_queue_end",
               "delay": "sojourn"},
    "model3": {"p_succ": "success_prob", "mean_queue": "mean_queue", "wait": "sojourn",
               "pi_g0": "empty_good_fraction", "pi_b0": "empty_bad_fraction"},
}
SIMULATE_COLUMNS = ["metric", "mean", "half_width", "n"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_sweep(text: str, kind=float) -> list:
    """'a,b,c' or 'start:stop:step' (stop included when it falls on the grid)."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError
            start, stop, step = (float(x) for x in parts)
            if step <= 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            if n > 100_000:
                raise UsageError(f"sweep {text!r} has {n} points")
            vals = [start + i * step for i in range(n)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse sweep {text!r}") from None
    if not vals:
        raise UsageError("empty sweep")
    if kind is int:
        if any(abs(v - round(v)) > 1e-9 for v in vals):
            raise UsageError(f"sweep {text!r} must contain integers")
        return [int(round(v)) for v in vals]
    return vals


def _channel_args(p):
    g = p.add_argument_group("channel")
    g.add_argument("--alpha", type=float, default=0.1, help="good->bad switch probability per slot")
    g.add_argument("--beta", type=float, default=0.1, help="bad->good switch probability per slot")
    g.add_argument("--mu-g", type=float, default=math.sqrt(2.0))
    g.add_argument("--sigma-g", type=float, default=0.5)
    g.add_argument("--mu-b", type=float, default=0.0)
    g.add_argument("--sigma-b", type=float, default=0.3)


def _sim_args(p, horizon, replications):
    g = p.add_argument_group("simulation")
    g.add_argument("--simulate", action="store_true", help="add simulator columns")
    g.add_argument("--horizon", type=int, default=horizon)
    g.add_argument("--replications", type=int, default=replications)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with a section per command")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", help="output file (default stdout)")

    parser = _Parser(prog="oppsched", description="Opportunistic distributed scheduling models")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("capacity", parents=[common], help="expected best-user capacities per K")
    p.add_argument("--K", default="10,100,1000,10000")
    _channel_args(p)
    _sim_args(p, horizon=2000, replications=1)

    p = sub.add_parser("threshold", parents=[common], help="transmission thresholds per K")
    p.add_argument("--K", default="10,100,1000,10000")
    _channel_args(p)

    p = sub.add_parser("groups", parents=[common], help="population-chain capacity and lower bounds")
    p.add_argument("--K", default="10,20,40")
    p.add_argument("--phi", type=int, default=30, help="group size above which the Gumbel law is used")
    _channel_args(p)

    p = sub.add_parser("queueing", parents=[common], help="analytic queueing models")
    p.add_argument("--model", choices=("model1", "model2", "model3"), default="model1")
    p.add_argument("--K", default="2:10:1")
    p.add_argument("--lambda-total", default=str(math.exp(-1.0) * (1 - 0.001)),
                   help="total arrival rate, split equally over the K users")
    p.add_argument("--p", type=float, default=None, help="model1 attempt probability (default 1/K)")
    p.add_argument("--tau", type=float, default=None, help="model2 exceedance rate per user (default 1/K)")
    p.add_argument("--mu-g-rate", type=float, default=0.7, help="model3 good-state rate, divided by K")
    p.add_argument("--mu-b-rate", type=float, default=0.5, help="model3 bad-state rate, divided by K")
    p.add_argument("--switch-alpha", type=float, default=0.1, help="model3 good->bad rate")
    p.add_argument("--switch-beta", type=float, default=0.1, help="model3 bad->good rate")
    _channel_args(p)
    _sim_args(p, horizon=200_000, replications=10)

    p = sub.add_parser("simulate", parents=[common], help="run the slotted simulator")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--lambda-total", type=float, default=0.2)
    p.add_argument("--attempt-prob", type=float, default=None,
                   help="fixed per-slot attempt probability instead of a capacity threshold")
    p.add_argument("--threshold", choices=("exact", "asymptotic"), default="exact")
    p.add_argument("--arrivals", choices=[a.value for a in ArrivalKind], default="bernoulli")
    p.add_argument("--capacity-mode", choices=[c.value for c in CapacityMode], default="chain")
    p.add_argument("--backlogged", action="store_true")
    p.add_argument("--collision-free", action="store_true", help="all simultaneous transmissions succeed")
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--replications", type=int, default=5)
    _channel_args(p)

    p = sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", default=None, help="comma-separated check numbers")
    return parser


def _apply_config(parser, argv):
    """Parse once to find --config, load the command's section as defaults, parse again."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep keys such as K case-sensitive
    try:
        with open(args.config) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
    if not cp.has_section(args.command):
        return args
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cp.items(args.command):
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown key {key!r} in section [{args.command}]")
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = cp.getboolean(args.command, key)
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw)
            except ValueError:
                raise UsageError(f"bad value {raw!r} for {key!r}") from None
        else:
            if action.choices and raw not in action.choices:
                raise UsageError(f"bad value {raw!r} for {key!r}")
            defaults[dest] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _model(args) -> ChannelModel:
    m = ChannelModel(args.alpha, args.beta, args.mu_g, args.sigma_g, args.mu_b, args.sigma_b)
    if not m.good_tail_dominates:
        print("warning: the bad state has the larger mean; the asymptotic formulas "
              "converge slowly in K for this model", file=sys.stderr)
    return m


def _optional(fn):
    try:
        return fn()
    except ModelError:
        return None


def cmd_capacity(args):
    model = _model(args)
    p_good, _ = stationary_state_probs(model)
    rows = []
    for K in parse_sweep(args.K, int):
        nrm = norm_constants_mixture(K, model)
        cen = expected_capacity_centralized(K, model)
        dist = distributed_capacity_breakdown(K, model).value
        row = {"K": K, "p_good": p_good, "a_K": nrm.a, "b_K": nrm.b, "centralized": cen,
               "good_only": _optional(lambda: expected_capacity_good_only(K, model)),
               "distributed": dist, "ratio": dist / cen, "threshold_exact": threshold_exact(K, model).u}
        if args.simulate:
            mx = estimate_capacity_max(SimConfig(K, model, 0.5, horizon=args.horizon,
                                                 replications=args.replications, seed=args.seed))
            sim = run_slotted(SimConfig(K, model, threshold_asymptotic(K, model), horizon=args.horizon,
                                        warmup=0, replications=max(args.replications, 2), seed=args.seed,
                                        backlogged=True))
            row.update(sim_max_mean=mx.mean, sim_max_se=mx.std_error,
                       sim_distributed=sim["capacity_per_slot"].mean,
                       sim_distributed_hw=sim["capacity_per_slot"].half_width)
        rows.append(row)
    cols = CAPACITY_COLUMNS + (CAPACITY_SIM_COLUMNS if args.simulate else [])
    return cols, rows


def cmd_threshold(args):
    model = _model(args)
    rows = []
    for K in parse_sweep(args.K, int):
        asym, exact = threshold_asymptotic(K, model), threshold_exact(K, model)
        rows.append({"K": K, "asymptotic": asym.u, "exact": exact.u,
                     "refined_gaussian": _optional(lambda: threshold_refined_gaussian(K, model.mu_g, model.sigma_g).u),
                     "users_above_asymptotic": K * float(mixture_sf(asym.u, model)),
                     "users_above_exact": K * float(mixture_sf(exact.u, model))})
    return THRESHOLD_COLUMNS, rows


def cmd_groups(args):
    model = _model(args)
    rows = []
    for K in parse_sweep(args.K, int):
        chain = transition_matrix(K, model.alpha, model.beta)
        delta = _optional(lambda: best_delta(K, model, chain))
        rows.append({"K": K, "expected_by_state": expected_capacity_by_state(K, model, args.phi, chain),
                     "centralized": _optional(lambda: expected_capacity_centralized(K, model)),
                     "lower_bound_mode": _optional(lambda: capacity_lower_bound_mode(K, model, chain)),
                     "lower_bound_delta": delta[1] if delta else None,
                     "best_delta": delta[0] if delta else None,
                     "mode_prob": float(chain.pi[K // 2])})
    return GROUPS_COLUMNS, rows


def _queue_row(args, K, lt):
    lam = lt / K
    if args.model == "model1":
        params = q1.symmetric_params(K, lt, args.p)
        sol = q1.solve_model1(params)
        m = q1.metrics_model1(sol)
        row = {"K": K, "lambda_total": lt, "lambda": lam, "p": params[0].p,
               "mean_queue": float(m.L[0]), "time_in_line": float(m.Wq[0]), "service_time": float(m.Ws[0]),
               "delay": m.system_delay, "success_prob": float(m.p_succ[0]),
               "success_prob_attempt": float(m.p_succ_attempt[0]), "iterations": sol.iterations}
        sim_cfg = dict(threshold=params[0].p, arrivals=ArrivalKind.BERNOULLI)
    elif args.model == "model2":
        tau = args.tau if args.tau is not None else 1.0 / K
        q = decoupled_queue(lam, tau, K)
        s = metrics_model2(q)
        row = {"K": K, "lambda_total": lt, "lambda": lam, "tau": tau, "p_coll": q.p_coll,
               "p_succ": s.success_prob, "service_time": s.service_time, "wait": s.time_in_line,
               "queue_len": s.mean_queue, "delay": s.delay}
        sim_cfg = dict(threshold=tau, arrivals=ArrivalKind.POISSON)
    else:
        mg, mb = args.mu_g_rate / K, args.mu_b_rate / K
        st = solve_model3(K, lam, mg, mb, args.switch_alpha, args.switch_beta)
        row = {"K": K, "lambda_total": lt, "lambda": lam, "mu_g": mg, "mu_b": mb,
               "alpha": args.switch_alpha, "beta": args.switch_beta, "p_succ": st.p_succ,
               "mean_queue": st.mean_queue, "wait": st.wait, "pi_g0": st.pi_g0, "pi_b0": st.pi_b0,
               "z0": st.z0, "attempt_prob": st.attempt_prob}
        sim_cfg = dict(threshold=(-math.expm1(-mg), -math.expm1(-mb)), arrivals=ArrivalKind.POISSON)
    return row, sim_cfg


def cmd_queueing(args):
    cols = list(QUEUE_COLUMNS[args.model])
    pairs = QUEUE_SIM_METRICS[args.model]
    if args.simulate:
        for name in pairs:
            cols += [f"sim_{name}", f"sim_{name}_hw", f"rel_err_{name}"]
    if args.model == "model3":
        a, b = embedded_switch_probs(args.switch_alpha, args.switch_beta)
        chan = ChannelModel(a, b, 1.0, 1.0, 0.0, 1.0)
    else:
        chan = _model(args)
    rows = []
    for K in parse_sweep(args.K, int):
        for lt in parse_sweep(args.lambda_total):
            row, sim_cfg = _queue_row(args, K, lt)
            if args.simulate:
                res = run_slotted(SimConfig(K, chan, sim_cfg["threshold"], lt / K, arrivals=sim_cfg["arrivals"],
                                            horizon=args.horizon, replications=args.replications,
                                            seed=args.seed))
                for name, key in pairs.items():
                    est = res[key]
                    row[f"sim_{name}"] = est.mean
                    row[f"sim_{name}_hw"] = est.half_width
                    row[f"rel_err_{name}"] = (abs(row[name] - est.mean) / abs(est.mean)
                                              if est.mean else None)
            rows.append(row)
    return cols, rows


def cmd_simulate(args):
    model = _model(args)
    K = args.K
    if args.attempt_prob is not None:
        thr = args.attempt_prob
    else:
        thr = (threshold_exact if args.threshold == "exact" else threshold_asymptotic)(K, model)
    cfg = SimConfig(K, model, thr, args.lambda_total / K, arrivals=ArrivalKind(args.arrivals),
                    horizon=args.horizon, warmup=args.warmup, replications=args.replications,
                    seed=args.seed, capacity_mode=CapacityMode(args.capacity_mode),
                    backlogged=args.backlogged, collision_free=args.collision_free)
    res = run_slotted(cfg)
    if args.format == "json":
        return None, res.as_dict()
    rows = [{"metric": k, "mean": v.mean, "half_width": v.half_width, "n": v.n}
            for k, v in res.metrics.items()]
    return SIMULATE_COLUMNS, rows


def _plain(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _fmt(v):
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def render(cols, rows, fmt: str) -> str:
    if fmt == "json":
        payload = rows if cols is None else [{c: _plain(r.get(c)) for c in cols} for r in rows]
        return json.dumps(payload, indent=2, allow_nan=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = {"capacity": cmd_capacity, "threshold": cmd_threshold, "groups": cmd_groups,
            "queueing": cmd_queueing, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.command == "validate":
            only = parse_sweep(args.only, int) if args.only else None
            if only and any(n not in range(1, 12) for n in only):
                raise UsageError("check numbers run from 1 to 11")
            results = run_checks(args.seed, only)
            if args.format == "json":
                text = json.dumps([{"number": r.number, "name": r.name, "passed": r.passed,
                                    "details": r.details} for r in results], indent=2) + "\n"
            else:
                text = "\n".join(r.line for r in results) + "\n"
            _emit(text, args.out)
            return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cols, rows = COMMANDS[args.command](args)
        _emit(render(cols, rows, args.format), args.out)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


__all__ = ["main", "build_parser", "parse_sweep", "render"]
