"""The full training loop over the synthetic environment.

Per step: drain verified candidates into the cold queue, recycle the archive
when due, sample a batch, simulate rollout groups, update statistics and the
policy, archive trained records, then optionally augment. Everything that
depends on the seed goes into the deterministic streams; wall-clock timings
are kept apart so two runs with the same seed log identical bytes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ContractViolation
from ..grouprl import make_groups, pool_statistic_update
from ..lineage import LineageGraph, RefreshReport, refresh_pass
from ..pool import SAMPLERS, PartitionLayout, PromptPool
from ..records import QueryRecord, RecordState
from ..recycle import Archive, archive_record, reinsert_batched, should_recycle
from ..textproto import Reject, parse_augment_output, passes_dataset_filters
from .config import FORMAT_VERSION, RunConfig
from .policy import SyntheticPolicy, make_item, synth_augment
from .teacher import TicketStatus, VirtualTeacher

STAGES = ("sampling", "rollout", "reward", "advantage", "update", "augment_gen", "pool_maintenance")
# stages that exist only because of the query-lifecycle machinery
LIFECYCLE_STAGES = ("sampling", "pool_maintenance", "augment_gen")


@dataclass
class StepTiming:
    """Seconds per stage. ``rollout`` includes the modelled generation cost."""

    sampling: float = 0.0
    rollout: float = 0.0
    reward: float = 0.0
    advantage: float = 0.0
    update: float = 0.0
    augment_gen: float = 0.0
    pool_maintenance: float = 0.0
    step_total: float = 0.0

    def stages_sum(self) -> float:
        return sum(getattr(self, s) for s in STAGES)

    def share(self, *stages: str) -> float:
        return sum(getattr(self, s) for s in stages) / self.step_total if self.step_total > 0 else 0.0


@dataclass
class RunLog:
    config: RunConfig
    seed: int
    steps: list[dict] = field(default_factory=list)
    groups: list[dict] = field(default_factory=list)
    pipeline: list[dict] = field(default_factory=list)
    timings: list[StepTiming] = field(default_factory=list)
    refresh_reports: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def series(self, key: str) -> list:
        return [row[key] for row in self.steps]

    def stream_text(self, name: str) -> str:
        rows = getattr(self, name)
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)

    def digest(self) -> str:
        """Hash over the seed-determined outputs (timings excluded)."""
        h = hashlib.sha256()
        for name in ("steps", "groups", "pipeline"):
            h.update(self.stream_text(name).encode())
        h.update(json.dumps(self.summary, sort_keys=True).encode())
        return h.hexdigest()

    def stage_shares(self) -> dict[str, float]:
        total = sum(t.step_total for t in self.timings)
        if total <= 0:
            return {s: 0.0 for s in STAGES}
        return {s: sum(getattr(t, s) for t in self.timings) / total for s in STAGES}

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("steps", "groups", "pipeline"):
            (out / f"{name}.jsonl").write_text(self.stream_text(name), encoding="utf-8")
        (out / "timings.jsonl").write_text(
            "".join(json.dumps(asdict(t)) + "\n" for t in self.timings), encoding="utf-8"
        )
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "config.txt").write_text(self.config.dumps(), encoding="utf-8")
        meta = {"format_version": FORMAT_VERSION, "seed": self.seed}
        (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
        return out


def build_layout(cfg: RunConfig) -> PartitionLayout:
    p = cfg.pool
    if p.heaps == 2 or p.sampler != "multiheap":
        return PartitionLayout()
    if p.anchored_low is None and p.anchored_high is None:
        return PartitionLayout.for_heaps(p.heaps)
    return PartitionLayout.from_scheme(p.heaps, p.anchored_low or 0, p.anchored_high or 0)


def make_seed_records(
    num: int,
    difficulty_low: float,
    difficulty_high: float,
    rng: np.random.Generator,
    start_id: int = 0,
) -> list[QueryRecord]:
    """Arithmetic seed queries with latent difficulty uniform on the given range."""
    latents = rng.uniform(difficulty_low, difficulty_high, size=num)
    out = []
    for i, b in enumerate(latents.tolist()):
        prompt, answer = make_item(rng)
        out.append(QueryRecord(start_id + i, prompt, answer, latent_difficulty=b))
    return out


class TrainingLoop:
    """Stateful runner; ``run_training`` is the one-call wrapper."""

    def __init__(self, cfg: RunConfig, seed: int | None = None) -> None:
        cfg.validate()
        self.cfg = cfg
        self.seed = cfg.run.seed if seed is None else seed
        streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(self.seed).spawn(5)]
        self.rng_sample, self.rng_rollout, self.rng_augment, rng_teacher, rng_init = streams

        p, t = cfg.pool, cfg.train
        self.batch_size = t.batch_size
        self.sampler = SAMPLERS[p.sampler]
        self.cold_first = p.sampler != "uniform"
        self.pool = PromptPool(p.capacity, p.alpha, p.mix_easy_fraction, build_layout(cfg))
        self.archive = Archive(cfg.size_threshold, cfg.reinsert_batch_size)
        self.graph = LineageGraph()
        self.teacher = VirtualTeacher(cfg.teacher.latency_steps, cfg.teacher.accept_rate, rng_teacher, cfg.teacher.error_rate)
        pol = cfg.policy
        self.policy = SyntheticPolicy(pol.ability, pol.slope, pol.invalid_rate, pol.ability_gain)

        d = cfg.data
        seeds = make_seed_records(d.num_seeds, d.difficulty_low, d.difficulty_high, rng_init)
        if len(seeds) > p.capacity:
            keep = np.sort(rng_init.choice(len(seeds), size=p.capacity, replace=False))
            seeds = [seeds[i] for i in keep.tolist()]
        self.num_seed_records = len(seeds)
        self.records: dict[int, QueryRecord] = {}
        self.pending: set[int] = set()
        self._cold_deadline: dict[int, int] = {}
        for rec in seeds:
            self.records[rec.id] = rec
            self.graph.add_node(rec.id)
            self.pool.insert_cold(rec)
        if cfg.run.warm_start:
            lat = np.array([rec.latent_difficulty for rec in seeds])
            means = self.policy.rollout_rewards(lat, t.group_size, rng_init).mean(axis=1).tolist()
            for rec, m in zip(seeds, means):
                rec.last_group_mean = m
                self.pool.promote(rec.id, m)
        self.eval_difficulties = rng_init.uniform(d.difficulty_low, d.difficulty_high, size=d.num_eval)
        self.next_id = d.num_seeds
        self.step = 0
        self.cum_rollouts = 0
        self.log = RunLog(cfg, self.seed)
        self._virtual_rollout_s = cfg.cost.rollout_ms / 1000.0

    # -- helpers ---------------------------------------------------------------

    def eval_reward(self) -> float:
        return float(np.mean(self.policy.expected_reward(self.eval_difficulties)))

    def _source(self, rec: QueryRecord) -> str:
        return "seed" if rec.parent_id is None else "augmented"

    def _drain(self, row: dict) -> None:
        verified = rejected = dropped = 0
        for ticket in self.teacher.drain(self.step):
            rid = ticket.child_id
            rec = self.records[rid]
            self.pending.discard(rid)
            status = ticket.status
            if status is TicketStatus.VERIFIED and not passes_dataset_filters(rec.prompt, ticket.answer or ""):
                status, ticket.reason = TicketStatus.REJECTED, "DatasetFilter"
            if status is TicketStatus.VERIFIED and not self.pool.is_full():
                rec.answer = ticket.answer
                self.pool.insert_cold(rec)
                if self.cold_first:
                    backlog = len(self.pool.cold)
                    self._cold_deadline[rid] = self.step + math.ceil(backlog / self.batch_size) - 1
                verified += 1
                event = "inserted"
            else:
                # rejected or no room: the record is dropped, its lineage edge stays dangling
                del self.records[rid]
                self.graph.discard_node(rid)
                if status is TicketStatus.VERIFIED:
                    dropped += 1
                    event = "dropped_capacity"
                else:
                    rejected += 1
                    event = "rejected"
            if self.cfg.run.log_groups:
                line = ticket.log_line(self.step)
                line["event"] = event
                line["wire"] = ticket.wire
                self.log.pipeline.append(line)
        row.update(verified=verified, rejected_teacher=rejected, dropped_capacity=dropped)

    def _recycle(self, row: dict) -> None:
        moved = 0
        report: RefreshReport | None = None
        if self.cfg.recycle.enabled and should_recycle(self.pool, self.archive, self.batch_size):
            refreshed: dict[int, float | None] = {}
            batch = self.archive.head(self.archive.reinsert_batch_size)
            if self.cfg.lineage.refresh and batch:
                scope = self.graph.descendants(r.id for r in batch)
                if any(r.id in self.graph.children for r in batch):
                    scores = {i: self.records[i].pool_stat for i in scope}
                    new, report = refresh_pass(
                        self.graph,
                        scores,
                        self.cfg.lineage.aggregation,
                        scope=scope,
                        temperature=self.cfg.lineage.temperature,
                    )
                    refreshed = {r.id: new[r.id] for r in batch}
            moved = reinsert_batched(self.pool, self.archive, refreshed)
        row["recycled"] = moved
        if report is not None:
            rep = asdict(report)
            rep["step"] = self.step
            self.log.refresh_reports.append(rep)
            row["refresh_updated"] = report.updated
        else:
            row["refresh_updated"] = 0

    def _augment(self, batch: list[QueryRecord], row: dict) -> None:
        a = self.cfg.augment
        submitted = parse_rejects = 0
        for parent in batch:
            outputs = synth_augment(
                parent.prompt,
                parent.latent_difficulty,
                a.n_aug,
                self.rng_augment,
                a.diff_low,
                a.diff_high,
                a.malformed_fraction,
                a.wrapper_fraction,
            )
            for text, child_latent in outputs:
                cand = parse_augment_output(text, parent.id)
                if isinstance(cand, Reject):
                    parse_rejects += 1
                    if self.cfg.run.log_groups:
                        self.log.pipeline.append(
                            {"step": self.step, "parent_id": parent.id, "event": "parse_rejected", "reason": cand.reason.value}
                        )
                    continue
                rid = self.next_id
                self.next_id += 1
                child = QueryRecord(
                    rid,
                    cand.new_problem,
                    "",
                    difficulty=cand.diff,
                    parent_id=parent.id,
                    state=RecordState.PENDING,
                    latent_difficulty=child_latent,
                )
                self.records[rid] = child
                self.pending.add(rid)
                self.graph.add_node(rid)
                self.graph.add_edge(parent.id, rid, cand.diff)
                ticket = self.teacher.submit(cand, rid, self.step)
                submitted += 1
                if self.cfg.run.log_groups:
                    line = ticket.log_line(self.step)
                    line["event"] = "submitted"
                    self.log.pipeline.append(line)
        row.update(augment_submitted=submitted, augment_parse_rejected=parse_rejects)

    # -- one step ---------------------------------------------------------------

    def run_step(self) -> dict:
        cfg = self.cfg
        clock = time.perf_counter
        timing = StepTiming()
        t_start = clock()
        row: dict[str, Any] = {"step": self.step}

        t0 = clock()
        self._drain(row)
        self._recycle(row)
        t1 = clock()
        timing.pool_maintenance += t1 - t0

        size_before = len(self.pool)
        b_eff = min(self.batch_size, size_before)
        if b_eff < self.batch_size:
            # a short batch delays every queued cold record by one step
            for rid in self._cold_deadline:
                self._cold_deadline[rid] += 1
        cold_head = list(itertools.islice(self.pool.cold, b_eff)) if self.cold_first and cfg.run.check_invariants else None
        ids = self.sampler(self.pool, b_eff, self.rng_sample) if b_eff else []
        batch = [self.pool.release(i) for i in ids]
        t2 = clock()
        timing.sampling = t2 - t1

        if cold_head is not None:
            self._check_cold_first(ids, cold_head)

        n = cfg.train.group_size
        lat = np.array([r.latent_difficulty for r in batch], dtype=float)
        rewards = self.policy.rollout_rewards(lat, n, self.rng_rollout)
        self.cum_rollouts += len(batch) * n
        t3 = clock()
        timing.rollout = t3 - t2 + self._virtual_rollout_s * len(batch) * n

        means = rewards.mean(axis=1) if len(batch) else np.zeros(0)
        t4 = clock()
        timing.reward = t4 - t3

        groups = make_groups(rewards, [rec.id for rec in batch]) if batch else []
        t5 = clock()
        timing.advantage = t5 - t4

        if cfg.run.check_invariants:
            for g in groups:
                if abs(sum(g.advantages)) > 1e-9:
                    raise ContractViolation(f"advantages of query {g.query_id} do not sum to zero")
        mean_abs = float(np.abs(rewards - means[:, None]).mean(axis=1).mean()) if groups else 0.0
        self.policy.learn(mean_abs)
        t6 = clock()
        timing.update = t6 - t5

        seed_groups = 0
        for rec, g in zip(batch, groups):
            if rec.parent_id is None:
                seed_groups += 1
            rec.pool_stat = pool_statistic_update(rec.pool_stat, g.group_mean, cfg.train.ema_coeff)
            rec.last_group_mean = g.group_mean
            rec.times_trained += 1
            self._cold_deadline.pop(rec.id, None)
            if cfg.recycle.enabled:
                archive_record(self.archive, rec)
        if not cfg.recycle.enabled and batch:
            self.pool.insert_scored_many(batch)
        if cfg.run.log_groups:
            for rec, g in zip(batch, groups):
                self.log.groups.append(g.log_line(self.step, self._source(rec)))
        t7 = clock()
        timing.pool_maintenance += t7 - t6

        a = cfg.augment
        if a.enabled and batch and self.step % a.every_k_steps == 0 and size_before < cfg.pool.capacity:
            self._augment(batch, row)
        else:
            row.update(augment_submitted=0, augment_parse_rejected=0)
        t8 = clock()
        timing.augment_gen = t8 - t7

        if cfg.run.check_invariants:
            self._check_step(batch)

        row.update(
            batch=len(batch),
            seed_groups=seed_groups,
            augmented_groups=len(batch) - seed_groups,
            train_reward=float(means.mean()) if len(batch) else None,
            mean_abs_advantage=mean_abs,
            nondegenerate=int(np.count_nonzero((rewards != rewards[:, :1]).any(axis=1))) if groups else 0,
            eval_reward=self.eval_reward(),
            ability=self.policy.ability,
            pool_size=len(self.pool),
            cold=len(self.pool.cold),
            archive=len(self.archive),
            pending=len(self.pending),
            known=len(self.records),
            rollouts=self.cum_rollouts,
        )
        timing.step_total = clock() - t_start + self._virtual_rollout_s * len(batch) * n
        self.log.steps.append(row)
        self.log.timings.append(timing)
        self.step += 1
        return row

    # -- invariants -------------------------------------------------------------

    def _check_cold_first(self, ids: list[int], cold_head: list[int]) -> None:
        if ids[: len(cold_head)] != cold_head:
            raise ContractViolation(f"step {self.step}: batch does not start with the cold queue head")
        # deadline entries exist exactly for inserted children still waiting in the cold queue
        overdue = [rid for rid, due in self._cold_deadline.items() if due < self.step]
        if overdue:
            raise ContractViolation(f"step {self.step}: cold records {overdue[:5]} missed their deadline")

    def _check_step(self, batch: list[QueryRecord]) -> None:
        pool = self.pool
        if len(pool) > pool.capacity:
            raise ContractViolation(f"step {self.step}: pool size {len(pool)} exceeds {pool.capacity}")
        if pool.sampled:
            raise ContractViolation(f"step {self.step}: sampled records were not released")
        held = len(pool) + len(self.archive) + len(self.pending)
        if held != len(self.records):
            raise ContractViolation(f"step {self.step}: {held} records in containers, {len(self.records)} known")
        expected = RecordState.ARCHIVED if self.cfg.recycle.enabled else RecordState.SCORED
        for rec in batch:
            if rec.state is not expected:
                raise ContractViolation(f"step {self.step}: trained record {rec.id} is {rec.state.value}")

    def audit(self) -> None:
        """Full lifecycle check: every known record sits in exactly one container matching its state."""
        seen: dict[int, str] = {}

        def claim(rid: int, where: str) -> None:
            if rid in seen:
                raise ContractViolation(f"record {rid} in both {seen[rid]} and {where}")
            seen[rid] = where

        for rid in self.pool.cold:
            claim(rid, "cold")
        for i, b in enumerate(self.pool.bins):
            for rec in b.records():
                claim(rec.id, f"bin{i}")
                if rec.bin != i:
                    raise ContractViolation(f"record {rec.id} tagged bin {rec.bin} but held in bin {i}")
        for rid in self.pool.sampled:
            claim(rid, "sampled")
        for rid in self.archive.entries:
            claim(rid, "archive")
        for rid in self.pending:
            claim(rid, "pending")
        if set(seen) != set(self.records):
            missing = sorted(set(self.records) - set(seen))[:5]
            extra = sorted(set(seen) - set(self.records))[:5]
            raise ContractViolation(f"lifecycle mismatch: unplaced {missing}, unknown {extra}")
        want = {
            "cold": RecordState.COLD,
            "sampled": RecordState.SAMPLED,
            "archive": RecordState.ARCHIVED,
            "pending": RecordState.PENDING,
        }
        for rid, where in seen.items():
            state = want.get(where, RecordState.SCORED)
            if self.records[rid].state is not state:
                raise ContractViolation(f"record {rid} in {where} has state {self.records[rid].state.value}")
        if len(self.pool) > self.pool.capacity:
            raise ContractViolation("pool over capacity")
        if self.pool.layout.adaptive and self.pool.num_scored:
            low, high = self.pool.bins
            if len(low) != self.pool.low_target():
                raise ContractViolation("low partition size off target")
            if low and high and low.peek_max().sort_key() > high.peek_min().sort_key():
                raise ContractViolation("partition order violated")

    # -- whole run --------------------------------------------------------------

    def run(self, steps: int | None = None, audit_every: int = 0) -> RunLog:
        total = self.cfg.train.steps if steps is None else steps
        for _ in range(total):
            self.run_step()
            if audit_every and self.step % audit_every == 0:
                self.audit()
        self.log.summary = self.summarize()
        return self.log

    def summarize(self) -> dict:
        from .metrics import compute_to_target, steps_to_target

        log = self.log
        rs = self.cfg.run
        w = rs.target_window
        tail = [r for r in log.series("train_reward")[-w:] if r is not None]
        return {
            "final_mean_reward": float(np.mean(tail)) if tail else None,
            "final_eval_reward": log.steps[-1]["eval_reward"] if log.steps else None,
            "final_ability": self.policy.ability,
            "steps": len(log.steps),
            "steps_to_targets": {str(x): steps_to_target(log, x) for x in rs.targets},
            "compute_to_targets": {str(x): compute_to_target(log, x) for x in rs.targets},
            "refresh_reports": log.refresh_reports,
            "source_mix": {
                "seed": sum(r["seed_groups"] for r in log.steps),
                "augmented": sum(r["augmented_groups"] for r in log.steps),
            },
        }


def run_training(cfg: RunConfig, seed: int | None = None) -> RunLog:
    return TrainingLoop(cfg, seed).run()
