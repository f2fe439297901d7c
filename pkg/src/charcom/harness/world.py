"""Deterministic test world: characters, pre-trained backbone, trained adapters.

Character sheets use disjoint content vocabularies so text-relevance scores
separate cleanly, and anchors are drawn as a random orthonormal set per world
seed so identities are geometrically distinct.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from ..backbone import (
    BackboneParams,
    CharacterDistribution,
    NoiseSchedule,
    sample_reference_set,
)
from ..fusion import (
    ConditionProjector,
    EmbedderPair,
    FusionCoefficients,
    PositionalTextEncoder,
)
from ..prompts import CharacterCard, SceneSpec, compile_prompt
from ..trainer import AdapterWeights, TrainConfig, train_adapter, train_backbone

# (character_id, trigger, attribute sheet).  Sheets sit near the compiler's
# token budget so relevance cosines stay strong in crowded prompts, and avoid
# sharing content words across characters so weights separate cleanly.
CHARACTER_SHEETS: Tuple[Tuple[str, str, str], ...] = (
    ("brindle", "brindlefox",
     "small copper fox cub, amber eyes, cream chest patch, rounded ears, "
     "bushy banded tail, tiny green knitted scarf, curious darting glance, "
     "velvet russet paws"),
    ("casper", "casperowl",
     "elderly snow owl, silver speckled feathers, round brass spectacles, "
     "drooping left wing, patient golden gaze, worn leather satchel, slow "
     "deliberate nod, frost white brow"),
    ("delia", "deliamouse",
     "cheerful harvest mouse, honey coat, oversized twitching whiskers, "
     "stitched navy apron, chipped front tooth, bright red berry basket, "
     "quick tidy motions, pink curled toes"),
    ("ferro", "ferrobadger",
     "sturdy old badger, charcoal stripes, scarred broad muzzle, heavy iron "
     "boots, gruff kindly voice, cedar smoke scent, thick ringed claws, deep "
     "measured stride"),
    ("isla", "islaheron",
     "slender grey heron, misty dawn plumage, long careful legs, pearl shell "
     "pendant, calm unhurried manner, quiet tide walker, pale narrow beak, "
     "still watchful poise"),
    ("tobin", "tobinhare",
     "lanky young hare, dusty fawn fur, one bent ear, patched yellow "
     "overalls, restless nimble feet, mint leaf pouch, wide eager grin, "
     "springy sudden leaps"),
)

ACTION_PHRASES: Tuple[str, ...] = (
    "explores the sunlit orchard",
    "shares fresh bread beside the hearth",
    "watches rain from the window seat",
    "builds a driftwood raft on the shore",
    "follows glowing lanterns into the village square",
    "rests beneath the crooked willow at dusk",
    "sorts ripe plums into wicker baskets",
    "listens to distant thunder over the hills",
    "sketches clouds from the meadow gate",
    "gathers fallen chestnuts along the lane",
)

STYLE_NOTES: Tuple[str, ...] = (
    "storybook watercolor illustration, soft morning light",
    "woodcut print, bold outlines, muted inks",
    "paper collage, layered textures, gentle shading",
    "chalk drawing, dusk colors, grainy texture",
)


@dataclass(frozen=True)
class WorldConfig:
    n_characters: int = 4
    refs_per_character: int = 30
    d_feat: int = 16
    d_hidden: int = 64
    d_cond: int = 16
    spread: float = 0.1
    embed_dim: int = 256
    schedule_steps: int = 10
    pretrain_samples: int = 192
    # Fraction of pre-training pairs conditioned on a character's solo prompt
    # (the rest use cast-free action/style prompts).  Kept small: the bare
    # backbone should know the pooled manifold, not resolve identities.
    pretrain_solo_fraction: float = 0.15
    # Condition-vector magnitude at the denoiser input; larger values make
    # adapters respond more selectively to the prompts they were trained on.
    cond_gain: float = 2.0
    # Extra conditioning weight on registered trigger tokens: the adapters are
    # trained against trigger-bearing prompts, so triggers carry the
    # activation signal.
    trigger_boost: float = 4.0
    cond_decay: float = 0.983
    backbone_train: TrainConfig = TrainConfig()
    adapter_train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not 1 <= self.n_characters <= len(CHARACTER_SHEETS):
            raise ValueError(
                f"n_characters must be in [1, {len(CHARACTER_SHEETS)}]"
            )
        if self.n_characters > self.d_feat:
            raise ValueError("need d_feat >= n_characters for distinct anchors")


@dataclass(frozen=True)
class World:
    seed: int
    config: WorldConfig
    cards: Tuple[CharacterCard, ...]
    dists: Tuple[CharacterDistribution, ...]
    backbone: BackboneParams
    adapters: Dict[str, AdapterWeights]
    embedders: EmbedderPair
    cond_encoder: PositionalTextEncoder
    projector: ConditionProjector
    coeffs: FusionCoefficients
    schedule: NoiseSchedule

    @property
    def cards_by_id(self) -> Dict[str, CharacterCard]:
        return {c.character_id: c for c in self.cards}

    def condition_for(self, prompt_text: str) -> np.ndarray:
        return self.projector.condition(self.cond_encoder.embed(prompt_text))

    def solo_condition(self, character_id: str) -> np.ndarray:
        prompt = compile_prompt(
            SceneSpec(action="", style="", cast=(character_id,)), self.cards
        )
        return self.condition_for(prompt.text)


def _seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _orthonormal_anchors(n: int, d: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, n)))
    return q.T  # rows are anchors


def build_characters(
    config: WorldConfig, seed
) -> Tuple[Tuple[CharacterCard, ...], Tuple[CharacterDistribution, ...]]:
    s_anchor, s_refs = _seedseq(seed).spawn(2)
    anchors = _orthonormal_anchors(config.n_characters, config.d_feat, s_anchor)
    ref_seeds = s_refs.spawn(config.n_characters)
    cards, dists = [], []
    for (cid, trigger, attrs), anchor, rs in zip(
        CHARACTER_SHEETS[: config.n_characters], anchors, ref_seeds
    ):
        dist = CharacterDistribution(character_id=cid, anchor=anchor,
                                     spread=config.spread)
        refs = tuple(
            sample_reference_set(dist, config.refs_per_character,
                                 seed=np.random.default_rng(rs).integers(2**63))
        )
        cards.append(CharacterCard(
            character_id=cid, trigger=trigger, attributes=attrs,
            reference_set=refs, anchor=anchor,
        ))
        dists.append(dist)
    return tuple(cards), tuple(dists)


def _pretrain_data(world_cards, dists, config, cond_encoder, projector, seed):
    rng = np.random.default_rng(seed)
    solo_conds = {}
    for card in world_cards:
        prompt = compile_prompt(
            SceneSpec(action="", style="", cast=(card.character_id,)), world_cards
        )
        solo_conds[card.character_id] = projector.condition(
            cond_encoder.embed(prompt.text)
        )
    data = []
    for _ in range(config.pretrain_samples):
        dist = dists[rng.integers(len(dists))]
        target = dist.anchor + dist.spread * rng.standard_normal(config.d_feat)
        if rng.uniform() < config.pretrain_solo_fraction:
            cond = solo_conds[dist.character_id]
        else:
            scene = SceneSpec(
                action=ACTION_PHRASES[rng.integers(len(ACTION_PHRASES))],
                style=STYLE_NOTES[rng.integers(len(STYLE_NOTES))],
                cast=(),
            )
            prompt = compile_prompt(scene, world_cards)
            cond = projector.condition(cond_encoder.embed(prompt.text))
        data.append((cond, target))
    return data


def build_world(
    seed: int,
    config: Optional[WorldConfig] = None,
    coeffs: Optional[FusionCoefficients] = None,
) -> World:
    """Train a full world from one seed: characters, backbone, all adapters."""
    config = config or WorldConfig()
    coeffs = coeffs or FusionCoefficients()
    ss = np.random.SeedSequence(seed)
    s_chars, s_pre, s_backbone, s_adapters = ss.spawn(4)

    cards, dists = build_characters(config, s_chars)
    embedders = EmbedderPair.default(config.embed_dim)
    cond_encoder = PositionalTextEncoder(
        config.embed_dim, decay=config.cond_decay,
        boost_tokens=frozenset(c.trigger.casefold() for c in cards),
        boost=config.trigger_boost,
    )
    projector = ConditionProjector.create(config.embed_dim, config.d_cond,
                                          gain=config.cond_gain)

    data = _pretrain_data(cards, dists, config, cond_encoder, projector, s_pre)
    backbone_cfg = replace(
        config.backbone_train,
        seed=int(np.random.default_rng(s_backbone).integers(2**31)),
    )
    backbone, _ = train_backbone(data, backbone_cfg, d_hidden=config.d_hidden)

    world = World(
        seed=seed, config=config, cards=cards, dists=dists, backbone=backbone,
        adapters={}, embedders=embedders, cond_encoder=cond_encoder,
        projector=projector, coeffs=coeffs,
        schedule=NoiseSchedule.default(config.schedule_steps),
    )
    adapters: Dict[str, AdapterWeights] = {}
    for card, s_ad in zip(cards, s_adapters.spawn(len(cards))):
        cfg = replace(
            config.adapter_train,
            seed=int(np.random.default_rng(s_ad).integers(2**31)),
        )
        adapters[card.character_id] = train_adapter(
            backbone, card.reference_set,
            world.solo_condition(card.character_id), cfg,
            character_id=card.character_id,
        )
    return replace(world, adapters=adapters)


def retrain_adapters(world: World, refs_per_character: int, seed: int) -> World:
    """Rebuild every adapter from a fresh reference set of the given size.

    The backbone is reused untouched; cards are updated to carry the new
    (smaller or larger) reference sets so scoring sees the same references the
    adapters were trained on.
    """
    s_refs, s_adapters = _seedseq(seed).spawn(2)
    new_cards = []
    for card, dist, rs in zip(world.cards, world.dists,
                              s_refs.spawn(len(world.cards))):
        refs = tuple(sample_reference_set(
            dist, refs_per_character,
            seed=np.random.default_rng(rs).integers(2**63),
        ))
        new_cards.append(replace(card, reference_set=refs))
    stage = replace(world, cards=tuple(new_cards))
    adapters: Dict[str, AdapterWeights] = {}
    for card, s_ad in zip(stage.cards, s_adapters.spawn(len(stage.cards))):
        cfg = replace(
            world.config.adapter_train,
            seed=int(np.random.default_rng(s_ad).integers(2**31)),
        )
        adapters[card.character_id] = train_adapter(
            stage.backbone, card.reference_set,
            stage.solo_condition(card.character_id), cfg,
            character_id=card.character_id,
        )
    return replace(stage, adapters=adapters)
