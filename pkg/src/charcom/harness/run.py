"""Experiment execution: per-method runs, scaling/ablation/reference sweeps.

Every scene draws its sampling seed from (run seed, story, scene) only, so
competing methods see identical prompts and identical boot noise; differences
in the output come from the adapter plan alone.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..backbone import BackboneParams, FeatureFrame, relax_sample
from ..fusion import (
    FusionCoefficients,
    FusionPlan,
    MissingAdapterError,
    build_plan,
    empty_plan,
    plan_to_updates,
    static_plan,
    with_embedding,
)
from ..lowrank import fuse
from ..metrics import (
    IdentityEmbedder,
    JudgeScores,
    MetricReport,
    default_pair_judge,
    proxy_is,
    proxy_pfs,
    t_ics,
    t_ics_emb,
)
from ..prompts import ScenePrompt, compile_prompt, flat_prompt, scramble_order
from .bench import StoryBenchmark, gen_benchmark
from .world import World, retrain_adapters

METHOD_NAMES = ("vanilla", "static_all", "charcom")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    weight_threshold: Optional[float] = None
    flat_prompt: bool = False
    random_order: bool = False
    no_composition: bool = False

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}")
        if self.name != "charcom" and (
            self.flat_prompt or self.random_order or self.no_composition
        ):
            raise ValueError("ablation flags only apply to charcom")

    @property
    def label(self) -> str:
        if self.flat_prompt:
            return "charcom_flat_prompt"
        if self.random_order:
            return "charcom_random_order"
        if self.no_composition:
            return "charcom_no_composition"
        return self.name

    def coefficients(self, base: FusionCoefficients) -> FusionCoefficients:
        out = base
        if self.alpha is not None:
            out = replace(out, alpha=self.alpha)
        if self.beta is not None:
            out = replace(out, beta=self.beta)
        if self.weight_threshold is not None:
            out = replace(out, weight_threshold=self.weight_threshold)
        return out


@dataclass(frozen=True)
class ExperimentRecord:
    """Full provenance for one (method, story) run: rerunnable from seeds."""

    method: str
    story_id: int
    frames: Tuple[FeatureFrame, ...]
    plans: Tuple[FusionPlan, ...]
    report: MetricReport
    run_seed: int
    scene_seeds: Tuple[int, ...]
    merge_seconds: Tuple[float, ...]
    sample_seconds: Tuple[float, ...]


def scene_seed(run_seed: int, story_id: int, scene_index: int) -> int:
    return int(np.random.SeedSequence(
        [run_seed, story_id, scene_index]
    ).generate_state(1)[0])


def _build_prompt(scene, method: MethodSpec, world: World, sseed: int) -> ScenePrompt:
    if method.flat_prompt:
        prompt = flat_prompt(scene, world.cards)
    elif method.random_order:
        prompt = scramble_order(scene, world.cards, seed=sseed)
    else:
        prompt = compile_prompt(scene, world.cards)
    return with_embedding(prompt, world.embedders.text)


def _plan_for(prompt: ScenePrompt, method: MethodSpec, world: World) -> FusionPlan:
    if method.name == "vanilla":
        return empty_plan(prompt)
    if method.name == "static_all":
        return static_plan(prompt, world.cards)
    plan = build_plan(prompt, world.cards,
                      method.coefficients(world.coeffs), world.embedders)
    if method.no_composition and plan.selected:
        top = max(plan.selected, key=lambda cw: cw[1])
        dropped = tuple(
            (c, w, "not_top_weight") for c, w in plan.selected if c != top[0]
        )
        plan = FusionPlan(prompt_id=plan.prompt_id, selected=(top,),
                          excluded=plan.excluded + dropped)
    return plan


def _merged_backbone(world: World, plan: FusionPlan) -> Tuple[BackboneParams, float]:
    """Fuse the plan's residuals into the two adapted matrices; time just that."""
    t0 = time.perf_counter()
    layer_sets = plan_to_updates(plan, world.adapters)
    merged = BackboneParams(
        w_in=world.backbone.w_in, b_in=world.backbone.b_in,
        w_mid1=fuse(world.backbone.w_mid1, layer_sets[0]),
        b_mid1=world.backbone.b_mid1,
        w_mid2=fuse(world.backbone.w_mid2, layer_sets[1]),
        b_mid2=world.backbone.b_mid2,
        w_out=world.backbone.w_out, b_out=world.backbone.b_out,
    )
    return merged, time.perf_counter() - t0


def run_method(
    bench: StoryBenchmark,
    method: MethodSpec,
    world: World,
    seed: int,
) -> List[ExperimentRecord]:
    """Run one method over the whole benchmark, scoring every story."""
    if method.name != "vanilla":
        for card in world.cards:
            if card.character_id not in world.adapters:
                raise MissingAdapterError(card.character_id)
    embedder = IdentityEmbedder.from_anchors([c.anchor for c in world.cards])
    cards_by_id = world.cards_by_id
    anchors_by_id = {c.character_id: c.anchor for c in world.cards}
    records: List[ExperimentRecord] = []
    for story_id, story in enumerate(bench.stories):
        frames: List[FeatureFrame] = []
        plans: List[FusionPlan] = []
        seeds: List[int] = []
        merge_times: List[float] = []
        sample_times: List[float] = []
        scores: List[JudgeScores] = []
        for scene in story:
            sseed = scene_seed(seed, story_id, scene.scene_index)
            prompt = _build_prompt(scene, method, world, sseed)
            plan = _plan_for(prompt, method, world)
            merged, merge_s = _merged_backbone(world, plan)
            cond = world.condition_for(prompt.text)
            t0 = time.perf_counter()
            values = relax_sample(
                lambda x, s: _denoise_fast(merged, x, s, cond),
                merged.d_feat, world.schedule, sseed,
            )
            sample_times.append(time.perf_counter() - t0)
            frame = FeatureFrame(values=values, scene_index=scene.scene_index,
                                 characters_present=scene.cast)
            # Per-member identity scoring on the cropped view of the frame,
            # the stand-in for judging each character's own region.
            is_score = float(np.mean([
                proxy_is(crop_frame(frame, c, scene.cast, anchors_by_id),
                         cards_by_id[c], embedder)
                for c in scene.cast
            ])) if scene.cast else 1.0
            pfs_score = proxy_pfs(
                frame, [cards_by_id[c].anchor for c in scene.cast], embedder
            )
            scores.append(JudgeScores(is_score=is_score, pfs_score=pfs_score))
            frames.append(frame)
            plans.append(plan)
            seeds.append(sseed)
            merge_times.append(merge_s)
        sequences = story_sequences(story, frames, anchors_by_id)
        if sequences:
            t_emb = t_ics_emb(sequences, embedder)
            t_judged = t_ics(sequences, default_pair_judge(embedder))
        else:
            t_emb = float("nan")
            t_judged = float("nan")
        mean_cast = float(np.mean([len(s.cast) for s in story])) if story else 0.0
        report = MetricReport.from_scores(
            method.label, scores, t_ics_value=t_judged, t_ics_emb_value=t_emb,
            mean_cast_size=mean_cast,
        )
        records.append(ExperimentRecord(
            method=method.label, story_id=story_id, frames=tuple(frames),
            plans=tuple(plans), report=report, run_seed=seed,
            scene_seeds=tuple(seeds), merge_seconds=tuple(merge_times),
            sample_seconds=tuple(sample_times),
        ))
    return records


def _denoise_fast(params: BackboneParams, x, sigma, cond):
    # Single-vector forward pass without per-call validation; the runner has
    # already shaped everything.
    from ..backbone import sigma_embedding

    u = np.concatenate([x, sigma_embedding(sigma), cond])
    h1 = np.tanh(params.w_in @ u + params.b_in)
    h2 = np.tanh(params.w_mid1 @ h1 + params.b_mid1)
    h3 = np.tanh(params.w_mid2 @ h2 + params.b_mid2)
    return params.w_out @ h3 + params.b_out


def crop_frame(
    frame: FeatureFrame, character_id: str, cast: Sequence[str],
    anchors_by_id: Mapping[str, np.ndarray],
) -> FeatureFrame:
    """Face-crop stand-in: remove the co-cast's anchor components from a frame.

    What remains is the tracked character's own contribution plus whatever the
    generator put outside the cast identities, which is exactly what a face
    crop hands the embedding model.
    """
    values = frame.values.copy()
    for other in cast:
        if other == character_id or other not in anchors_by_id:
            continue
        a = anchors_by_id[other]
        values -= (values @ a) * a
    return FeatureFrame(values=values, scene_index=frame.scene_index,
                        characters_present=(character_id,))


def story_sequences(
    story: Sequence, frames: Sequence[FeatureFrame],
    anchors_by_id: Optional[Mapping[str, np.ndarray]] = None,
) -> Dict[str, List[FeatureFrame]]:
    """Per-character cropped frame sequences over the scenes featuring them."""
    sequences: Dict[str, List[FeatureFrame]] = {}
    for scene, frame in zip(story, frames):
        for cid in scene.cast:
            cropped = crop_frame(frame, cid, scene.cast, anchors_by_id) \
                if anchors_by_id else frame
            sequences.setdefault(cid, []).append(cropped)
    return {c: fs for c, fs in sequences.items() if len(fs) >= 2}


@dataclass(frozen=True)
class SummaryRow:
    """One aggregate report row: labels plus mean/std per metric."""

    method: str
    cast_size: Optional[int] = None
    ref_count: Optional[int] = None
    metrics: Mapping[str, Tuple[float, float]] = field(default_factory=dict)


def summarize(records: Sequence[ExperimentRecord], method: str,
              cast_size: Optional[int] = None,
              ref_count: Optional[int] = None) -> SummaryRow:
    is_vals = [s.is_score for r in records for s in r.report.per_scene]
    pfs_vals = [s.pfs_score for r in records for s in r.report.per_scene]
    ics_vals = [v for r in records for v in r.report.ics_per_scene]
    t_vals = [r.report.t_ics for r in records if not math.isnan(r.report.t_ics)]
    te_vals = [r.report.t_ics_emb for r in records
               if not math.isnan(r.report.t_ics_emb)]

    def ms(vals):
        if not vals:
            return (float("nan"), float("nan"))
        return (float(np.mean(vals)), float(np.std(vals)))

    return SummaryRow(
        method=method, cast_size=cast_size, ref_count=ref_count,
        metrics={
            "IS": ms(is_vals), "PFS": ms(pfs_vals), "ICS": ms(ics_vals),
            "T-ICS": ms(t_vals), "T-ICS_Emb": ms(te_vals),
        },
    )


def compare_methods(
    bench: StoryBenchmark,
    world: World,
    seed: int,
    methods: Sequence[MethodSpec] = tuple(MethodSpec(n) for n in METHOD_NAMES),
) -> Tuple[List[SummaryRow], Dict[str, List[ExperimentRecord]]]:
    rows: List[SummaryRow] = []
    all_records: Dict[str, List[ExperimentRecord]] = {}
    for method in methods:
        records = run_method(bench, method, world, seed)
        all_records[method.label] = records
        rows.append(summarize(records, method.label))
    return rows, all_records


def scaling_sweep(
    world: World,
    cast_sizes: Sequence[int] = (1, 2, 3, 4),
    seed: int = 0,
    methods: Sequence[MethodSpec] = tuple(MethodSpec(n) for n in METHOD_NAMES),
    n_stories: int = 10,
    prompts_per: int = 5,
) -> List[SummaryRow]:
    """Fixed-cast-size benchmarks, one per size, every method on each."""
    if max(cast_sizes) > len(world.cards):
        raise ValueError(
            f"cast size {max(cast_sizes)} needs more characters than the "
            f"world's {len(world.cards)}"
        )
    rows: List[SummaryRow] = []
    for method in methods:
        for size in cast_sizes:
            bench = gen_benchmark(
                seed=scene_seed(seed, 9000, size), n_stories=n_stories,
                prompts_per=prompts_per, pool=world.cards,
                fixed_cast_size=size,
            )
            records = run_method(bench, method, world, seed)
            rows.append(summarize(records, method.label, cast_size=size))
    return rows


ABLATION_VARIANTS: Tuple[MethodSpec, ...] = (
    MethodSpec("charcom"),
    MethodSpec("charcom", flat_prompt=True),
    MethodSpec("charcom", no_composition=True),
    MethodSpec("charcom", random_order=True),
)


def ablation_suite(
    world: World,
    seed: int = 0,
    n_stories: int = 20,
    prompts_per: int = 5,
) -> List[SummaryRow]:
    """Four rows: full pipeline plus the three single-component ablations."""
    bench = gen_benchmark(seed=scene_seed(seed, 9100, 0), n_stories=n_stories,
                          prompts_per=prompts_per, pool=world.cards)
    rows = []
    for method in ABLATION_VARIANTS:
        records = run_method(bench, method, world, seed)
        label = "charcom_full" if method.label == "charcom" else method.label
        rows.append(replace(summarize(records, method.label), method=label))
    return rows


def refcount_sweep(
    world: World,
    counts: Sequence[int] = (1, 5, 15, 30),
    seed: int = 0,
    n_stories: int = 10,
    prompts_per: int = 5,
) -> List[SummaryRow]:
    """Retrain all adapters at each reference count; evaluate on a fixed bench."""
    rows: List[SummaryRow] = []
    bench_seed = scene_seed(seed, 9200, 0)
    for k in counts:
        trained = retrain_adapters(world, k, seed=scene_seed(seed, 9300, k))
        bench = gen_benchmark(seed=bench_seed, n_stories=n_stories,
                              prompts_per=prompts_per, pool=trained.cards)
        records = run_method(bench, MethodSpec("charcom"), trained, seed)
        rows.append(summarize(records, "charcom", ref_count=k))
    return rows


def sign_test_p(wins: int, n: int) -> float:
    """One-sided exact binomial p-value for wins successes out of n at p=1/2."""
    if not 0 <= wins <= n:
        raise ValueError("wins must lie in [0, n]")
    total = sum(math.comb(n, i) for i in range(wins, n + 1))
    return total / 2.0**n
