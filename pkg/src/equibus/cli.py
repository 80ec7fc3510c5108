"""``equibus`` command line.

Subcommands: generate, evaluate, train, optimize, compare, export.  Values
come from command-line flags, then a JSON ``--config`` file, then built-in
defaults.  Output files go to ``--out`` (default ``$EQUIBUS_OUT_DIR`` or
``./equibus-out``).  On failure one JSON line is written to stderr and the
process exits with 2 (validation), 3 (I/O) or 4 (internal).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import optimizers as opt
from . import qnet
from .accessibility import DEFAULT_QUANTILES, AccessibilityReport, accessibility_report
from .errors import CheckpointError, EquibusError, ValidationError
from .eval_stats import ComparisonReport, export_heatmap
from .mdp import LineAssignment, StateEvaluator, random_state
from .territory import city_scenario, load_scenario, save_scenario
from .transit_graph import build_router_graph

log = logging.getLogger("equibus")

OUT_ENV = "EQUIBUS_OUT_DIR"
RESULT_FORMAT = "equibus-result"

DEFAULTS = {
    "scenario": None,
    "out": None,
    "q": 20.0,
    "budget_s": 60.0,
    "max_evals": None,
    "seed": 0,
    "threads": 1,
    "optimizer": "rl",
    "checkpoint": None,
    "stall_limit": 5,
    "seeds": 10,
    "optimizers": "rl,ga",
    "assignment": None,
    "baseline": None,
    "geojson": True,
    # scenario generation
    "width": 12,
    "height": 6,
    "metro_lines": 4,
    "num_lines": 3,
    "spacing_km": 1.0,
    "walk_speed_kmh": 4.5,
    "bus_speed_kmh": 28.0,
    "fleet_per_line": 10,
    "t_max_min": 30.0,
    # learning
    "learning_rate": 1e-3,
    "gamma": 0.95,
    "eps_steps": 200,
    "hidden_n": 32,
    "hidden_m": 16,
    "hidden_n_prime": 32,
    "rounds": 3,
    # genetic algorithm
    "n_pop": 50,
    "n_par": 10,
    "p_mut": 0.05,
    "tournament_size": 3,
}


# --------------------------------------------------------------------------- #
# configuration

def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "scenario": dict(help="scenario JSON file"),
        "out": dict(help=f"output directory (default ${OUT_ENV} or ./equibus-out)"),
        "q": dict(type=float, help="quantile of worst-served centroids, in (0, 100]"),
        "budget_s": dict(type=float, help="wall-clock budget per run, seconds"),
        "max_evals": dict(type=int, help="cap on objective evaluations per run"),
        "seed": dict(type=int, help="master random seed"),
        "threads": dict(type=int, help="worker threads for accessibility evaluation"),
        "optimizer": dict(choices=("rl", "ga", "random")),
        "checkpoint": dict(help="Q-network checkpoint file"),
        "stall_limit": dict(type=int, help="non-improving moves that end an RL episode"),
        "assignment": dict(help="result JSON whose best assignment is used"),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **flags[name])
    p.add_argument("--config", default=None, help="JSON file of option values")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equibus", description="Equity-driven bus line design.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic city scenario")
    _add_common(p, "scenario", "out", "seed")
    for name, kind in (("width", int), ("height", int), ("metro_lines", int),
                       ("num_lines", int), ("spacing_km", float), ("walk_speed_kmh", float),
                       ("bus_speed_kmh", float), ("fleet_per_line", int), ("t_max_min", float)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)

    p = sub.add_parser("evaluate", help="accessibility summary of a network")
    _add_common(p, "scenario", "out", "threads", "assignment")

    p = sub.add_parser("train", help="train the Q-network online")
    _add_common(p, "scenario", "out", "q", "budget_s", "max_evals", "seed", "threads",
                "checkpoint", "stall_limit")

    p = sub.add_parser("optimize", help="run one optimizer")
    _add_common(p, "scenario", "out", "q", "budget_s", "max_evals", "seed", "threads",
                "optimizer", "checkpoint", "stall_limit")

    p = sub.add_parser("compare", help="RL and GA against random search over several seeds")
    _add_common(p, "scenario", "out", "q", "budget_s", "max_evals", "seed", "threads",
                "stall_limit")
    p.add_argument("--seeds", type=int, default=None, help="number of paired trials")
    p.add_argument("--optimizers", default=None, help="comma list from rl,ga")

    p = sub.add_parser("export", help="per-centroid heatmap of an assignment")
    _add_common(p, "scenario", "out", "q", "threads", "assignment")
    p.add_argument("--baseline", default=None,
                   help="result JSON for the baseline (default: network without bus lines)")
    return parser


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} {path} is not valid JSON: {exc}") from exc


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge flags over the ``--config`` file over defaults, then validate."""
    cfg = dict(DEFAULTS)
    if args.config:
        extra = _read_json(args.config, "config file")
        if not isinstance(extra, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = sorted(set(extra) - set(DEFAULTS))
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}")
        cfg.update(extra)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    if not 0 < float(cfg["q"]) <= 100:
        raise ValidationError(f"q must lie in (0, 100], got {cfg['q']}")
    if not float(cfg["budget_s"]) > 0:
        raise ValidationError(f"budget must be > 0, got {cfg['budget_s']}")
    if cfg["max_evals"] is not None and int(cfg["max_evals"]) < 1:
        raise ValidationError("max-evals must be >= 1")
    if int(cfg["threads"]) < 1:
        raise ValidationError("threads must be >= 1")
    if int(cfg["seeds"]) < 1:
        raise ValidationError("seeds must be >= 1")
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUT_ENV) or "equibus-out"
    return cfg


# --------------------------------------------------------------------------- #
# outputs

def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_trajectory(path: Path, result: opt.OptimizerResult) -> None:
    """One JSON record per improvement: wall-clock seconds, evaluations, best value."""
    with open(path, "w", encoding="utf-8") as fh:
        for pt in result.trajectory:
            fh.write(json.dumps({"seconds": pt.seconds, "evaluations": pt.evaluations,
                                 "best": pt.value}, sort_keys=True) + "\n")


def _assignment_doc(st: LineAssignment) -> dict:
    return {"k": st.k, "lines": [list(ln) for ln in st.lines()]}


def _result_doc(result: opt.OptimizerResult, cfg: dict, optimizer: str, **extra) -> dict:
    """Run summary without wall-clock fields, so reruns compare byte for byte."""
    info = {k: v for k, v in result.info.items() if not isinstance(v, float) or math.isfinite(v)}
    doc = {
        "format": RESULT_FORMAT,
        "optimizer": optimizer,
        "q": cfg["q"],
        "seed": cfg["seed"],
        "best_value": result.best_value,
        "evaluations": result.evaluations,
        "best_assignment": _assignment_doc(result.best_assignment),
        "improvements": [[pt.evaluations, pt.value] for pt in result.trajectory],
        "info": info,
    }
    doc.update(extra)
    return doc


def _load_assignment(path, s) -> LineAssignment:
    doc = _read_json(path, "result file")
    try:
        lines = doc["best_assignment"]["lines"] if "best_assignment" in doc else doc["lines"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path} holds no line assignment") from exc
    st = LineAssignment.from_lines(lines)
    if st.stop_ids != s.candidate_ids or st.k != s.num_lines:
        raise ValidationError(f"assignment in {path} does not fit the scenario")
    return st


def _scenario(cfg):
    if not cfg["scenario"]:
        raise ValidationError("--scenario is required")
    return load_scenario(cfg["scenario"])


def _report(s, st: LineAssignment | None, cfg, quantiles) -> AccessibilityReport:
    if st is None:
        g = build_router_graph(s, [])
    else:
        _, g = StateEvaluator(s).realize(st)
    return accessibility_report(g, s, quantiles, threads=int(cfg["threads"]))


def _qnet_config(s, cfg) -> qnet.QNetConfig:
    return qnet.QNetConfig(k=s.num_lines, n=int(cfg["hidden_n"]), m=int(cfg["hidden_m"]),
                           n_prime=int(cfg["hidden_n_prime"]), T=int(cfg["rounds"]),
                           learning_rate=float(cfg["learning_rate"]), gamma=float(cfg["gamma"]),
                           eps_steps=int(cfg["eps_steps"]))


def _ga_config(cfg) -> opt.GaConfig:
    return opt.GaConfig(int(cfg["n_pop"]), int(cfg["n_par"]), float(cfg["p_mut"]),
                        int(cfg["tournament_size"]))


def _run_kwargs(cfg) -> dict:
    return dict(max_evals=None if cfg["max_evals"] is None else int(cfg["max_evals"]),
                threads=int(cfg["threads"]))


# --------------------------------------------------------------------------- #
# subcommands

def cmd_generate(cfg) -> dict:
    s = city_scenario(int(cfg["width"]), int(cfg["height"]), int(cfg["seed"]),
                      metro_lines=int(cfg["metro_lines"]), num_lines=int(cfg["num_lines"]),
                      spacing=float(cfg["spacing_km"]), walk_speed=float(cfg["walk_speed_kmh"]),
                      bus_speed=float(cfg["bus_speed_kmh"]),
                      fleet_per_line=int(cfg["fleet_per_line"]), t_max=float(cfg["t_max_min"]))
    s.validate()
    path = Path(cfg["scenario"]) if cfg["scenario"] else Path(cfg["out"]) / "scenario.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(s, path)
    return {"scenario": str(path), "centroids": len(s.centroids), "pois": len(s.pois),
            "candidate_stops": s.n_candidates, "num_lines": s.num_lines}


def cmd_evaluate(cfg) -> dict:
    s = _scenario(cfg)
    st = _load_assignment(cfg["assignment"], s) if cfg["assignment"] else None
    rep = _report(s, st, cfg, DEFAULT_QUANTILES)
    values = list(rep.per_centroid.values())
    doc = {
        "format": "equibus-evaluation",
        "assignment": None if st is None else _assignment_doc(st),
        "acc_q": {str(q): v for q, v in rep.acc_q.items()},
        "acc_min": min(values),
        "acc_mean": math.fsum(values) / len(values),
        "acc_max": max(values),
        "per_centroid": {str(c): v for c, v in rep.per_centroid.items()},
    }
    _write_json(Path(cfg["out"]) / "evaluation.json", doc)
    return {"acc_q": doc["acc_q"], "acc_min": doc["acc_min"], "acc_mean": doc["acc_mean"],
            "acc_max": doc["acc_max"]}


def _progress_logger(out: Path):
    fh = open(out / "training.jsonl", "w", encoding="utf-8")

    def on_step(record):
        fh.write(json.dumps(record, sort_keys=True) + "\n")

    return fh, on_step


def cmd_train(cfg) -> dict:
    s = _scenario(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = None
    if cfg["checkpoint"] and Path(cfg["checkpoint"]).exists():
        start = qnet.load_checkpoint(cfg["checkpoint"], _qnet_config(s, cfg))
    fh, on_step = _progress_logger(out)
    with fh:
        result, params = opt.train_rl(
            s, float(cfg["q"]), float(cfg["budget_s"]), int(cfg["stall_limit"]), start,
            int(cfg["seed"]), config=_qnet_config(s, cfg), on_step=on_step, **_run_kwargs(cfg))
    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.json"
    qnet.save_checkpoint(params, ckpt)
    _write_json(out / "result.json", _result_doc(result, cfg, "rl-train"))
    _write_trajectory(out / "trajectory.jsonl", result)
    return {"best_value": result.best_value, "evaluations": result.evaluations,
            "checkpoint": str(ckpt)}


def initial_q_values(s, params: qnet.QNetworkParams, seed: int) -> list[list]:
    """Q-values of every admissible move in the greedy rollout's starting state."""
    ev = StateEvaluator(s)
    st = random_state(s, opt.substream(seed, "init"))
    inp = qnet.build_features(s, st, ev.bus_lines(st))
    return [[a.stop, a.target_line, v] for a, v in sorted(qnet.forward(params, inp).items())]


def cmd_optimize(cfg) -> dict:
    s = _scenario(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    q, budget, seed = float(cfg["q"]), float(cfg["budget_s"]), int(cfg["seed"])
    kw = _run_kwargs(cfg)
    extra = {}
    name = cfg["optimizer"]
    if name == "random":
        result = opt.random_search(s, q, budget, seed, **kw)
    elif name == "ga":
        result = opt.genetic_search(s, q, budget, _ga_config(cfg), seed, **kw)
    elif cfg["checkpoint"]:
        params = qnet.load_checkpoint(cfg["checkpoint"])
        if params.config.k != s.num_lines:
            raise CheckpointError(
                f"checkpoint is for k={params.config.k}, scenario has k={s.num_lines}")
        extra["initial_q"] = initial_q_values(s, params, seed)
        result = opt.test_policy(s, q, budget, params, seed, **kw)
        name = "rl-policy"
    else:
        result, params = opt.train_rl(s, q, budget, int(cfg["stall_limit"]), None, seed,
                                      config=_qnet_config(s, cfg), **kw)
        name = "rl-train"
    _write_json(out / "result.json", _result_doc(result, cfg, name, **extra))
    _write_trajectory(out / "trajectory.jsonl", result)
    return {"optimizer": name, "best_value": result.best_value,
            "evaluations": result.evaluations}


def cmd_compare(cfg) -> dict:
    s = _scenario(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    names = [n.strip() for n in str(cfg["optimizers"]).split(",") if n.strip()]
    bad = sorted(set(names) - {"rl", "ga"})
    if bad or not names:
        raise ValidationError(f"--optimizers takes a comma list from rl,ga, got {cfg['optimizers']!r}")
    q, budget, kw = float(cfg["q"]), float(cfg["budget_s"]), _run_kwargs(cfg)
    trials = []
    for i in range(int(cfg["seeds"])):
        seed = int(cfg["seed"]) + i
        row = {"seed": seed, "random": opt.random_search(s, q, budget, seed, **kw).best_value}
        if "rl" in names:
            res, _ = opt.train_rl(s, q, budget, int(cfg["stall_limit"]), None, seed,
                                  config=_qnet_config(s, cfg), **kw)
            row["rl"] = res.best_value
        if "ga" in names:
            row["ga"] = opt.genetic_search(s, q, budget, _ga_config(cfg), seed, **kw).best_value
        trials.append(row)
        log.info("trial %s", row)
    reports = {n: ComparisonReport.from_values([t[n] for t in trials],
                                               [t["random"] for t in trials]).to_dict()
               for n in names}
    doc = {"format": "equibus-comparison", "q": q, "trials": trials, "reports": reports}
    _write_json(out / "comparison.json", doc)
    return {n: {"mean_ratio": r["mean"], "p_greater": r["p_greater"]}
            for n, r in reports.items()}


def cmd_export(cfg) -> dict:
    s = _scenario(cfg)
    if not cfg["assignment"]:
        raise ValidationError("--assignment is required")
    q = float(cfg["q"])
    quantiles = sorted({q, *DEFAULT_QUANTILES})
    base_st = _load_assignment(cfg["baseline"], s) if cfg["baseline"] else None
    baseline = _report(s, base_st, cfg, quantiles)
    improved = _report(s, _load_assignment(cfg["assignment"], s), cfg, quantiles)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    geo = out / "heatmap.geojson" if cfg["geojson"] else None
    rows = export_heatmap(s, baseline, improved, q, out / "heatmap.csv", geojson_path=geo)
    return {"heatmap": str(out / "heatmap.csv"), "centroids": len(rows),
            "acc_q_baseline": baseline.acc_q[q], "acc_q_improved": improved.acc_q[q]}


COMMANDS = {
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "export": cmd_export,
}


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if int(cfg["threads"]) > 1:
            log.warning("threads > 1: wall-clock budgets then admit a different number of "
                        "evaluations, so use --max-evals for reproducible runs")
        started = time.perf_counter()
        summary = COMMANDS[args.command](cfg)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - started)
    except EquibusError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, 3)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        return _fail(exc, 4)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
