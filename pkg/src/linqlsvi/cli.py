"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 environment generation
failure, 3 a deterministic monitor failed (or a verification check failed).
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import statistics
import sys
from pathlib import Path

from . import envgen, verify
from .envgen import EnvFileError, EnvSpec, GenerationError
from .harness import ExperimentConfig, SweepFailure, parallel_sweep, run_experiment
from .mdp import MdpValidationError

EXIT_OK, EXIT_USAGE, EXIT_GENERATION, EXIT_MONITOR = 0, 1, 2, 3
AGENT_NAMES = {"linq": "linq", "baseline": "baseline_lsvi", "oracle": "oracle_greedy", "random": "uniform_random"}
SUMMARY_STATS = ("average_episode_regret", "revisits", "T")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _spec_from_json(text: str) -> EnvSpec:
    """Spec given inline as JSON or as a path to a JSON file."""
    path = Path(text)
    raw = path.read_text() if path.is_file() else text
    try:
        fields = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse spec {text!r}: {exc}") from exc
    if not isinstance(fields, dict):
        raise UsageError("spec must be a JSON object")
    try:
        return EnvSpec(**fields)
    except TypeError as exc:
        raise UsageError(f"bad spec fields: {exc}") from exc


def _load_env(path: str):
    if not Path(path).is_file():
        raise UsageError(f"environment file not found: {path}")
    return envgen.load(path)


def _env_source(text: str):
    """File path to an environment, or a generator spec (inline JSON or a spec file)."""
    path = Path(text)
    if path.is_file():
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and "transition" in doc:
            return envgen.load(path)
    return envgen.generate(_spec_from_json(text))


def cmd_gen(args) -> int:
    if args.spec is not None:
        spec = _spec_from_json(args.spec)
    else:
        missing = [flag for flag in ("kind", "H", "S", "A", "d") if getattr(args, flag) is None]
        if missing:
            raise UsageError("missing " + ", ".join("--" + m.replace("_", "-") for m in missing) + " (or give --spec)")
        spec = EnvSpec(args.kind, args.H, args.S, args.A, args.d, gap_min=args.gap_min, seed=args.seed,
                       max_rejections=args.max_rejections)
    try:
        env = envgen.generate(spec)
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    envgen.save(env, args.out)
    print(f"wrote {args.out}")
    print(f"  kind={env.kind} H={env.H} S={env.S} A={env.A} d={env.d} seed={env.seed}")
    print(f"  certified gap   {env.certified_gap!r}")
    print(f"  fit residual    {env.fit.max_residual:.3e}")
    norms = ", ".join(f"{x:.4f}" for x in env.fit.theta_norms)
    print(f"  |theta_h|       [{norms}] (bound {2 * env.H * env.d ** 0.5:.4f})")
    return EXIT_OK


def _config_from_args(args, seed) -> ExperimentConfig:
    return ExperimentConfig(
        env=args.env,
        agent=AGENT_NAMES[args.agent],
        episodes=args.episodes,
        delta=args.delta,
        c_beta=args.c_beta,
        gap_override=args.gap_override,
        seed=seed,
        monitors=tuple(args.monitor or ()),
        initial_state_mode=args.initial_state_mode,
        initial_state=args.initial_state,
        k_budget=args.k_budget,
    )


def _report(log) -> None:
    s = log.summary()
    print(f"agent={log.agent} N={log.N} K={log.K} revisits={log.revisits} T={log.T} wall_clock={log.wall_clock:.2f}s")
    print(f"  average episode regret {s['average_episode_regret']:.6g}  total {s['total_episode_regret']:.6g}")
    rb = s["revisit_bound"]
    if rb.get("applicable"):
        print(f"  revisits {rb['measured']} <= {rb['bound']}: {'pass' if rb['pass'] else 'FAIL'}")
    for name, verdict in s["monitors"].items():
        if not verdict["pass"]:
            print(f"  monitor {name} FAILED: {verdict.get('first_failure', '')}", file=sys.stderr)
    if s.get("regret_envelope", {}).get("gap_overestimated"):
        print("  warning: gap override exceeds the certified gap; optimism is not guaranteed", file=sys.stderr)


def cmd_run(args) -> int:
    env = _load_env(args.env)
    config = _config_from_args(args, args.seed)
    log = run_experiment(config, env)
    summary_path, series_path = log.write(args.out_prefix)
    _report(log)
    print(f"wrote {summary_path} and {series_path}")
    return EXIT_OK if log.deterministic_pass else EXIT_MONITOR


def cmd_sweep(args) -> int:
    configs, prefixes = [], []
    out_dir = Path(args.out_dir)
    for env_path in args.env:
        _load_env(env_path)  # validate every input before any work starts
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = args.seed_list if args.seed_list else list(range(args.seeds))
    for env_path in args.env:
        for seed in seeds:
            ns = argparse.Namespace(**{**vars(args), "env": env_path})
            configs.append(_config_from_args(ns, seed))
            prefixes.append(out_dir / f"{Path(env_path).stem}_{args.agent}_seed{seed}")
    results = parallel_sweep(configs, workers=args.workers)
    status = EXIT_OK
    for prefix, result in zip(prefixes, results):
        if isinstance(result, SweepFailure):
            print(f"{prefix.name}: {result.error_type}: {result.message}", file=sys.stderr)
            status = max(status, EXIT_USAGE)
            continue
        result.write(prefix)
        mark = "ok" if result.deterministic_pass else "MONITOR FAILURE"
        print(f"{prefix.name}: N={result.N} K={result.K} avg_regret={result.average_episode_regret:.6g} {mark}")
        if not result.deterministic_pass:
            status = EXIT_MONITOR
    return status


def cmd_verify(args) -> int:
    if args.env:
        envs = [_env_source(text) for text in args.env]
        lemma_envs = optimism_envs = envelope_envs = envs
    else:
        lemma_envs, optimism_envs, envelope_envs = verify.LEMMA_SPECS, verify.OPTIMISM_SPECS, verify.ENVELOPE_SPECS
    results = []
    if args.suite in ("lemmas", "all"):
        results += verify.lemma_suite(lemma_envs, seeds=args.seeds)
    if args.suite in ("regret", "all"):
        results += verify.regret_suite(optimism_envs, envelope_envs, seeds=args.seeds)
    print(verify.format_table(results))
    return EXIT_OK if verify.all_passed(results) else EXIT_MONITOR


def _env_key(summary: dict) -> str:
    env = (summary.get("config") or {}).get("env") or {}
    if "file" in env:
        return Path(env["file"]).name
    if "spec" in env:
        return json.dumps(env["spec"], sort_keys=True)
    e = summary.get("environment") or {}
    return f"{e.get('kind')}-H{e.get('H')}-S{e.get('S')}-A{e.get('A')}-d{e.get('d')}-seed{e.get('seed')}"


def cmd_summarize(args) -> int:
    paths = sorted(glob.glob(args.inputs))
    if not paths:
        raise UsageError(f"no files match {args.inputs!r}")
    groups = {}
    for path in paths:
        try:
            summary = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{path}: {exc}") from exc
        key = (summary.get("agent"), _env_key(summary))
        groups.setdefault(key, []).append(summary)
    header = ["agent", "env", "runs"]
    for stat in SUMMARY_STATS:
        header += [f"{stat}_{agg}" for agg in ("mean", "median", "min", "max")]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for (agent, env_key), members in groups.items():
            row = [agent, env_key, len(members)]
            for stat in SUMMARY_STATS:
                values = [float(m[stat]) for m in members]
                row += [repr(statistics.fmean(values)), repr(float(statistics.median(values))),
                        repr(min(values)), repr(max(values))]
            writer.writerow(row)
    print(f"wrote {args.out}: {len(groups)} group(s) from {len(paths)} file(s)")
    return EXIT_OK


def _add_run_flags(p, multi_env: bool) -> None:
    if multi_env:
        p.add_argument("--env", required=True, nargs="+", help="environment JSON files")
    else:
        p.add_argument("--env", required=True, help="environment JSON file")
    p.add_argument("--agent", choices=sorted(AGENT_NAMES), default="linq")
    p.add_argument("--episodes", type=_positive_int, default=200, help="number of episodes N (>= 1)")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--c-beta", type=float, default=8.0)
    p.add_argument("--gap-override", type=float, default=None,
                   help="gap fed to the revisit threshold instead of the certified gap")
    p.add_argument("--monitor", action="append", choices=("optimism", "martingale"),
                   help="enable an opt-in statistical monitor (repeatable)")
    p.add_argument("--initial-state-mode", choices=("fixed", "cycle", "random"), default="fixed")
    p.add_argument("--initial-state", type=int, default=0)
    p.add_argument("--k-budget", type=_positive_int, default=None, help="path budget used to size beta")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linqlsvi", description="LinQ-LSVI-UCB experiments with state revisiting")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a certified environment")
    p.add_argument("--spec", help="generator spec as inline JSON or a JSON file")
    p.add_argument("--kind", choices=envgen.KINDS)
    p.add_argument("--H", type=_positive_int)
    p.add_argument("--S", type=_positive_int)
    p.add_argument("--A", type=_positive_int)
    p.add_argument("--d", type=_positive_int)
    p.add_argument("--gap-min", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rejections", type=_positive_int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run one experiment")
    _add_run_flags(p, multi_env=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run seeds x environments, in parallel when cores allow")
    _add_run_flags(p, multi_env=True)
    p.add_argument("--seeds", type=_positive_int, default=8, help="run seeds 0 .. M-1")
    p.add_argument("--seed-list", type=int, nargs="+", help="explicit seeds (overrides --seeds)")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the verification suites")
    p.add_argument("--suite", choices=("lemmas", "regret", "all"), default="all")
    p.add_argument("--seeds", type=_positive_int, default=5, help="seeds per environment")
    p.add_argument("--env", nargs="+", help="environment files or generator specs (default: built-in set)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("summarize", help="aggregate summary JSON files into one CSV")
    p.add_argument("--inputs", required=True, help="glob matching *.summary.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, EnvFileError, MdpValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
