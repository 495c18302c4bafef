"""Command-line entry point: ``run``, ``compare`` and ``replay``.

Config keys double as flags, e.g. ``--pool.alpha 0.4`` or
``--augment.enabled=false``. Values are parsed as JSON and fall back to a
plain string. Exit codes: 0 ok, 1 runtime failure, 2 bad config or input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigInvalid, SnapshotError
from .pool import PartitionLayout, PromptPool
from .sim.config import SAMPLERS, RunConfig
from .sim.loop import LIFECYCLE_STAGES, TrainingLoop
from .sim.metrics import DEFAULT_BANDS, frozen_landscape_eval
from .sim.policy import SyntheticPolicy

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(extra: Sequence[str]) -> dict[str, Any]:
    """Turn ``--a.b 1 --c.d=x`` into ``{"a.b": 1, "c.d": "x"}``."""
    out: dict[str, Any] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise UsageError(f"flag --{key} needs a value")
            value = extra[i + 1]
            i += 1
        out[key] = _parse_value(value)
        i += 1
    return out


def load_config(path: str | None, overrides: dict[str, Any], seed: int | None = None) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    for key, value in overrides.items():
        cfg.set(key, value)
    if seed is not None:
        cfg.run.seed = seed
    return cfg.validate()


# -- run ------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace, extra: Sequence[str]) -> int:
    cfg = load_config(args.config, parse_overrides(extra), args.seed)
    loop = TrainingLoop(cfg)
    log = loop.run(audit_every=args.audit_every)
    out = log.write(args.out)
    loop.pool.save(out / "pool.jsonl")
    loop.graph.to_jsonl(out / "lineage.jsonl")
    s = log.summary
    print(
        f"{len(log.steps)} steps -> {out}; final mean reward {s['final_mean_reward']:.4f}, "
        f"eval reward {s['final_eval_reward']:.4f}"
    )
    return EXIT_OK


# -- compare --------------------------------------------------------------------


def _label(cfg: RunConfig, path: str | None) -> str:
    p = cfg.pool
    name = p.sampler if p.sampler != "multiheap" else f"multiheap{p.heaps}"
    if not cfg.augment.enabled:
        name += "-noaug"
    if cfg.lineage.refresh and cfg.augment.enabled:
        name += f"-{cfg.lineage.aggregation}"
    return f"{name}:{Path(path).stem}" if path else name


def _one_run(job: tuple[str, str, int, int, int]) -> dict:
    label, cfg_text, seed, trials, batch = job
    cfg = RunConfig.loads(cfg_text).validate()
    loop = TrainingLoop(cfg, seed)
    log = loop.run()
    shares = log.stage_shares()
    out = {
        "label": label,
        "seed": seed,
        "final_mean_reward": log.summary["final_mean_reward"],
        "final_eval_reward": log.summary["final_eval_reward"],
        "eval_series": log.series("eval_reward"),
        "rollouts": log.series("rollouts"),
        "stage_shares": shares,
        "lifecycle_share": sum(shares[s] for s in LIFECYCLE_STAGES),
        "tokens_per_rollout": cfg.cost.tokens_per_rollout,
    }
    if trials:
        # frozen landscape of this run's final pool under its own sampler
        frozen = loop.pool.copy()
        rng = np.random.Generator(np.random.PCG64(seed))
        land = frozen_landscape_eval(frozen, loop.policy, cfg.pool.sampler, trials, rng, batch)
        out["landscape"] = land.histogram()
        out["medium_mass"] = land.mass_in(0.25, 0.75)
    return out


def _first_reach(series: list[float], target: float) -> int | None:
    for i, v in enumerate(series):
        if v >= target:
            return i
    return None


def cmd_compare(args: argparse.Namespace, extra: Sequence[str]) -> int:
    overrides = parse_overrides(extra)
    configs: list[tuple[str, RunConfig]] = []
    if args.heaps:
        if len(args.configs) > 1:
            raise UsageError("--heaps sweeps a single base config")
        base = load_config(args.configs[0] if args.configs else None, overrides)
        for h in args.heaps:
            cfg = base.replace(**{"pool.sampler": "multiheap" if h > 2 else "boundary", "pool.heaps": h})
            if h > 2:
                cfg.pool.anchored_low = cfg.pool.anchored_high = None
            configs.append((f"H={h}", cfg.validate()))
    else:
        if len(args.configs) < 2:
            raise UsageError("compare needs at least two config files (or --heaps)")
        for path in args.configs:
            cfg = load_config(path, overrides)
            configs.append((_label(cfg, path), cfg))
    labels = [c[0] for c in configs]
    if len(set(labels)) != len(labels):
        labels = [f"{i}:{lab}" for i, lab in enumerate(labels)]
    seeds = list(range(args.seed, args.seed + args.seeds))
    jobs = [
        (lab, cfg.replace(**{"run.log_groups": False}).dumps(), s, args.landscape_trials, args.landscape_batch)
        for s in seeds
        for lab, (_, cfg) in zip(labels, configs)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    by = {(r["label"], r["seed"]): r for r in results}

    base_label = labels[0]
    rows = []
    for s in seeds:
        target = by[(base_label, s)]["eval_series"][-1]
        for lab in labels:
            r = by[(lab, s)]
            step = _first_reach(r["eval_series"], target)
            rows.append(
                {
                    "config": lab,
                    "seed": s,
                    "final_mean_reward": r["final_mean_reward"],
                    "final_eval_reward": r["final_eval_reward"],
                    "steps_to_baseline_final": step,
                    "tokens_to_baseline_final": None if step is None else r["rollouts"][step] * r["tokens_per_rollout"],
                    "lifecycle_share": r["lifecycle_share"],
                    "medium_mass": r.get("medium_mass"),
                }
            )
    per_config = {}
    for lab in labels:
        mine = [by[(lab, s)] for s in seeds]
        entry: dict[str, Any] = {
            "mean_final_eval_reward": float(np.mean([r["final_eval_reward"] for r in mine])),
            "mean_final_mean_reward": float(np.mean([r["final_mean_reward"] for r in mine])),
            "stage_shares": {k: float(np.mean([r["stage_shares"][k] for r in mine])) for k in mine[0]["stage_shares"]},
            "fewer_steps_than_baseline": sum(
                1
                for row in rows
                if row["config"] == lab
                and row["steps_to_baseline_final"] is not None
                and row["steps_to_baseline_final"] < _baseline_steps(rows, base_label, row["seed"])
            ),
        }
        if args.landscape_trials:
            hist = np.mean([[m for _, _, m in r["landscape"]] for r in mine], axis=0)
            entry["landscape"] = [[lo, hi, float(m)] for (lo, hi, _), m in zip(mine[0]["landscape"], hist)]
            entry["medium_mass"] = float(np.mean([r["medium_mass"] for r in mine]))
        per_config[lab] = entry
    if args.landscape_trials:
        ref = per_config[base_label]["medium_mass"]
        for lab in labels:
            per_config[lab]["medium_mass_ratio"] = per_config[lab]["medium_mass"] / ref if ref else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"baseline": base_label, "seeds": seeds, "configs": per_config, "runs": rows}
    (out / "comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for lab, (_, cfg) in zip(labels, configs):
        (out / f"config-{labels.index(lab)}.txt").write_text(cfg.dumps(), encoding="utf-8")
    for lab in labels:
        e = per_config[lab]
        print(f"{lab:28s} final eval {e['mean_final_eval_reward']:.4f}  fewer steps than {base_label}: "
              f"{e['fewer_steps_than_baseline']}/{len(seeds)}")
    return EXIT_OK


def _baseline_steps(rows: list[dict], base_label: str, seed: int) -> int:
    for row in rows:
        if row["config"] == base_label and row["seed"] == seed:
            return row["steps_to_baseline_final"]
    raise KeyError(seed)


# -- replay ---------------------------------------------------------------------


def cmd_replay(args: argparse.Namespace, extra: Sequence[str]) -> int:
    if extra:
        raise UsageError(f"unexpected arguments {list(extra)}")
    if args.sampler not in SAMPLERS:
        raise ConfigInvalid("sampler", f"must be one of {SAMPLERS}")
    layout = PartitionLayout.for_heaps(args.heaps) if args.sampler == "multiheap" else PartitionLayout()
    pool = PromptPool.load(args.snapshot, alpha=args.alpha, layout=layout)
    if len(pool) == 0:
        raise SnapshotError(0, "snapshot holds no poolable records")
    policy = None
    if args.ability is not None:
        policy = SyntheticPolicy(args.ability, args.slope, args.invalid_rate)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    bands = tuple(args.bands) if args.bands else DEFAULT_BANDS
    land = frozen_landscape_eval(pool, policy, args.sampler, args.trials, rng, args.batch_size, bands)
    text = land.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frontierpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulated training job")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--out", default="run_out", help="output directory")
    run.add_argument("--seed", type=int, help="shorthand for --run.seed")
    run.add_argument("--audit-every", type=int, default=0, help="full lifecycle audit period (0 = off)")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="paired-seed comparison of configs")
    cmp_.add_argument("configs", nargs="*", help="config files; the first is the baseline")
    cmp_.add_argument("--seeds", type=int, default=3, help="number of paired seeds")
    cmp_.add_argument("--seed", type=int, default=0, help="first seed")
    cmp_.add_argument("--heaps", type=lambda s: [int(x) for x in s.split(",")], help="sweep heap counts, e.g. 2,5,15")
    cmp_.add_argument("--jobs", type=int, default=1, help="worker processes")
    cmp_.add_argument("--landscape-trials", type=int, default=0, help="frozen-landscape batches per run")
    cmp_.add_argument("--landscape-batch", type=int, default=64)
    cmp_.add_argument("--out", default="compare_out")
    cmp_.set_defaults(func=cmd_compare)

    rep = sub.add_parser("replay", help="frozen reward landscape of a pool snapshot")
    rep.add_argument("snapshot")
    rep.add_argument("--sampler", default="boundary")
    rep.add_argument("--heaps", type=int, default=2)
    rep.add_argument("--alpha", type=float, default=0.5)
    rep.add_argument("--trials", type=int, default=1000)
    rep.add_argument("--batch-size", type=int, default=64)
    rep.add_argument("--ability", type=float, help="frozen policy ability; omit to use stored statistics")
    rep.add_argument("--slope", type=float, default=3.0)
    rep.add_argument("--invalid-rate", type=float, default=0.02)
    rep.add_argument("--bands", type=float, nargs="+", help="band edges")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", help="CSV path (default stdout)")
    rep.set_defaults(func=cmd_replay)
    return parser


def split_dotted(argv: Sequence[str]) -> tuple[list[str], list[str]]:
    """Separate ``--section.key [value]`` flags from the fixed options."""
    fixed: list[str] = []
    dotted: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.partition("=")[0]:
            dotted.append(tok)
            if "=" not in tok and i + 1 < len(argv):
                dotted.append(argv[i + 1])
                i += 1
        else:
            fixed.append(tok)
        i += 1
    return fixed, dotted


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    fixed, dotted = split_dotted(sys.argv[1:] if argv is None else list(argv))
    args, extra = parser.parse_known_args(fixed)
    extra = list(extra) + dotted
    try:
        return args.func(args, extra)
    except (ConfigInvalid, SnapshotError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
