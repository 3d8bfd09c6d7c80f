"""Command-line entry point: ``activetouch explore|replay|ablate|bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness.bench import run_bench
from .harness.config import load_config
from .harness.trial import SUMMARY_FIELDS, replay_trial, run_ablation, run_trial, summarize, write_csv
from .harness.world import load_priors
from .observations import MASKS

log = logging.getLogger("activetouch")


def _common(p):
    p.add_argument("--config", help="YAML experiment config (defaults built in)")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _print_rows(rows, fields):
    print(",".join(fields))
    for r in rows:
        print(",".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in fields))


def _write_results(out, results, name="results.jsonl"):
    out.mkdir(parents=True, exist_ok=True)
    with (out / name).open("w") as fh:
        for r in results:
            fh.write(json.dumps({**r.to_dict(), "hash": r.hash()}, sort_keys=True) + "\n")


def cmd_explore(args):
    cfg = load_config(args.config)
    priors = load_priors(cfg)
    out = Path(args.out) if args.out else None
    results = []
    for seed in range(args.seed, args.seed + args.trials):
        res, rec = run_trial(cfg, seed, args.mask, priors)
        if out is not None:
            rec.save(out / f"trial_{seed:04d}.jsonl")
        log.info("seed %d: class cycle %s, pose cycle %s, %.1fs", seed, res.stable_class_cycle, res.stable_pose_cycle(cfg.world.add_s_threshold), res.elapsed)
        results.append(res)
    rows = summarize(results, cfg.world.add_s_threshold)
    if out is not None:
        _write_results(out, results)
        write_csv(rows, out / "summary.csv")
    _print_rows(rows, SUMMARY_FIELDS)
    return 0


def cmd_replay(args):
    paths = []
    for p in map(Path, args.recordings):
        paths += sorted(p.glob("trial_*.jsonl")) if p.is_dir() else [p]
    if not paths:
        print("no recordings found", file=sys.stderr)
        return 2
    results = [replay_trial(p, args.mask) for p in paths]
    for p, r in zip(paths, results):
        log.info("%s: %s class cycle %s hash %s", p.name, r.mask, r.stable_class_cycle, r.hash())
    rows = summarize(results)
    if args.out:
        out = Path(args.out)
        _write_results(out, results, "replay_results.jsonl")
        write_csv(rows, out / "replay_summary.csv")
    _print_rows(rows, SUMMARY_FIELDS)
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config)
    seeds = range(args.seed, args.seed + args.trials)
    out = Path(args.out) if args.out else None

    def progress(seed, live):
        log.info("seed %d recorded (%.1fs)", seed, live.elapsed)

    res = run_ablation(cfg, seeds, out_dir=out, progress=progress)
    rows = summarize([r for group in res.values() for r in group], cfg.world.add_s_threshold)
    if out is not None:
        write_csv(rows, out / "ablation.csv")
    _print_rows(rows, SUMMARY_FIELDS)
    return 0


def cmd_bench(args):
    rows = run_bench(load_config(args.config), args.seed, trial=not args.no_trial)
    print("name,seconds,calls")
    for name, sec, n in rows:
        print(f"{name},{sec:.6f},{n}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text("name,seconds,calls\n" + "".join(f"{a},{b:.6f},{c}\n" for a, b, c in rows))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="activetouch", description="Tactile object recognition and pose estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="run closed-loop trials and record them")
    _common(p)
    p.add_argument("--mask", default="all", choices=sorted(MASKS))
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("replay", help="replay recordings under a modality mask")
    p.add_argument("recordings", nargs="+", help="recording files or directories of trial_*.jsonl")
    p.add_argument("--mask", default=None, choices=sorted(MASKS))
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("ablate", help="record full-mask trials and replay them under every mask")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="per-module timings")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-trial", action="store_true", help="skip the full-trial timing")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
