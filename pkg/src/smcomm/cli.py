"""Command line entry point: ``smcomm run|validate|extract|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import harness
from .errors import SMCError


def _module_of(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(frames):
        path = Path(frame.filename)
        if path.parent.name == "smcomm":
            return path.stem
    return "cli"


def _fail(exc: BaseException, out: Path | None) -> int:
    payload = {"error": type(exc).__name__, "module": _module_of(exc), "message": str(exc)}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return 1


def cmd_run(args) -> int:
    out = None
    try:
        cfg = harness.load_config(args.config)
        out = harness.resolve_output_dir(cfg, args.out)
        seeds = [args.seed] if args.seed is not None else None
        harness.run_scenario(cfg, out, seeds)
    except (SMCError, OSError) as exc:
        return _fail(exc, out)
    print(out)
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = harness.load_config(args.config)
    except (SMCError, OSError) as exc:
        return _fail(exc, None)
    print(f"ok: scenario {cfg['scenario']}, seeds {cfg['seeds']}")
    return 0


def cmd_extract(args) -> int:
    out = Path(args.out)
    try:
        policy, env, radius = harness.load_actors(args.actors_dir)
        if args.radius is not None:
            radius = args.radius
        writer = harness.RunWriter(out)
        result = harness.extract_artifacts(policy, env, radius, writer)
        writer.write("metrics.json", harness.dumps_metrics(result))
        writer.manifest({"scenario": "extract"}, [])
    except (SMCError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(exc, out)
    print(out)
    return 0


def _summarize(metrics: dict) -> list[str]:
    scenario = metrics.get("scenario")
    res = metrics.get("results", {})
    lines = [f"scenario: {scenario}", f"seeds: {metrics.get('seeds')}"]
    if scenario == "lewis_sweep":
        for cell in res.get("cells", []):
            verdicts = [f"{r['classification']}/{'NE' if r['is_nash'] else 'not-NE'}"
                        f"/payoff={r['greedy_payoff']:.4f}" for r in cell["runs"].values()]
            lines.append(f"  types={cell['n_types']} signals={cell['n_signals']} "
                         f"responses={cell['n_responses']} max={cell['brute_force_max_payoff']}: "
                         + ", ".join(verdicts))
    elif scenario == "hetero_sync":
        for name, s in res.get("summary", {}).items():
            lines.append(f"  {name:15s} median mse {s['median_mse']:.5f}  "
                         f"median probe acc {s['median_probe_accuracy']:.3f}")
    elif scenario == "marl_extract":
        s = res.get("summary", {})
        lines.append(f"  median final reward {s.get('median_final_reward')}, "
                     f"ablated {s.get('median_ablated_reward')}, "
                     f"worst fidelity {s.get('max_fidelity')}")
    elif "entropy" in metrics:
        lines = [f"extraction: {metrics['n_sr_nodes']} sr nodes, fidelity {metrics['fidelity']}, "
                 f"graph entropy {metrics['entropy']['graph_entropy_support_bits']} bits"]
    return lines


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        metrics = json.loads((run_dir / "metrics.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(exc, None)
    for line in _summarize(metrics):
        print(line)
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        files = json.loads(manifest.read_text())["files"]
        print(f"files: {len(files)} (see manifest.json)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcomm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the scenario described by a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="run this single seed instead of the config list")
    p.add_argument("--out", help=f"output directory (relative paths honour ${harness.OUTPUT_ROOT_ENV})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config file against the schema")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("extract", help="symbolic extraction from saved actors")
    p.add_argument("actors_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, help="override the merge radius")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("report", help="print a summary of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
