"""Structured scene prompt compiler.

A scene prompt concatenates, in a fixed order: one "trigger + compressed
attributes" segment per cast member (cast sorted by character id), then the
action sentence, then the style note.  Attribute segments are truncated to a
token budget so long character sheets do not crowd the prompt.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .backbone import FeatureFrame

ATTRIBUTE_TOKEN_BUDGET = 25
# Advisory lower bound on compressed segments; short inputs pass through.
ATTRIBUTE_TOKEN_FLOOR = 15

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)


class UnknownCharacterError(LookupError):
    """A scene cast references a character id missing from the registry."""

    def __init__(self, character_id: str):
        super().__init__(f"unknown character id: {character_id!r}")
        self.character_id = character_id


@dataclass(frozen=True)
class CharacterCard:
    """Registration unit: trigger token, attribute text, references, anchor."""

    character_id: str
    trigger: str
    attributes: str
    reference_set: Tuple[FeatureFrame, ...]
    anchor: np.ndarray

    def __post_init__(self):
        if not self.trigger.strip():
            raise ValueError("trigger must be non-empty")
        if not self.attributes.strip():
            raise ValueError("attributes must be non-empty")


@dataclass(frozen=True)
class SceneSpec:
    action: str
    style: str
    cast: Tuple[str, ...]
    scene_index: int = 0


@dataclass(frozen=True)
class ScenePrompt:
    """Compiled prompt text plus bookkeeping; embedding is filled in later."""

    text: str
    segment_tokens: Mapping[str, int]
    cast: Tuple[str, ...]
    scene_index: int
    prompt_id: str
    embedding: Optional[np.ndarray] = None


def tokenize(text: str) -> list[str]:
    """Case-folded tokens: punctuation replaced by spaces, split on whitespace."""
    return _PUNCT.sub(" ", text.casefold()).split()


def token_count(text: str) -> int:
    return len(tokenize(text))


def compress_attributes(attributes: str, max_tokens: int = ATTRIBUTE_TOKEN_BUDGET) -> str:
    """Trim attribute text to the token budget, keeping earlier content first.

    Inputs at or under budget are returned verbatim; longer inputs keep their
    first ``max_tokens`` tokens, cut at a token boundary.  Idempotent.
    """
    if not attributes.strip():
        raise ValueError("attributes must be non-empty")
    tokens = tokenize(attributes)
    if len(tokens) <= max_tokens:
        return attributes
    return " ".join(tokens[:max_tokens])


def _registry_index(registry: Sequence[CharacterCard]) -> Dict[str, CharacterCard]:
    index: Dict[str, CharacterCard] = {}
    for card in registry:
        if card.character_id in index:
            raise ValueError(f"duplicate character id: {card.character_id!r}")
        index[card.character_id] = card
    return index


def _prompt_id(scene: SceneSpec, text: str) -> str:
    digest = hashlib.sha1(text.encode("utf-8")).hexdigest()[:8]
    return f"scene{scene.scene_index:03d}-{digest}"


def _compile_in_order(
    scene: SceneSpec, cards: Dict[str, CharacterCard], cast_order: Sequence[str]
) -> ScenePrompt:
    segments = []
    segment_tokens: Dict[str, int] = {}
    for cid in cast_order:
        if cid not in cards:
            raise UnknownCharacterError(cid)
        card = cards[cid]
        compressed = compress_attributes(card.attributes)
        seg = f"{card.trigger} {compressed}"
        segments.append(seg)
        segment_tokens[cid] = token_count(seg)
    parts = ["; ".join(segments)] if segments else []
    if scene.action.strip():
        parts.append(scene.action.strip())
        segment_tokens["action"] = token_count(scene.action)
    if scene.style.strip():
        parts.append(scene.style.strip())
        segment_tokens["style"] = token_count(scene.style)
    text = ". ".join(parts)
    return ScenePrompt(
        text=text,
        segment_tokens=segment_tokens,
        cast=tuple(cast_order),
        scene_index=scene.scene_index,
        prompt_id=_prompt_id(scene, text),
    )


def compile_prompt(scene: SceneSpec, registry: Sequence[CharacterCard]) -> ScenePrompt:
    """Compile a scene into its canonical structured prompt.

    Cast segments appear in ascending character-id order regardless of how the
    scene or registry listed them, so identical scenes always produce
    identical text.
    """
    cards = _registry_index(registry)
    return _compile_in_order(scene, cards, sorted(scene.cast))


def scramble_order(
    scene: SceneSpec, registry: Sequence[CharacterCard], seed: int = 0
) -> ScenePrompt:
    """Compile with a seeded random cast permutation instead of canonical order."""
    cards = _registry_index(registry)
    rng = np.random.default_rng(seed)
    order = [scene.cast[i] for i in rng.permutation(len(scene.cast))]
    return _compile_in_order(scene, cards, order)


def flat_prompt(scene: SceneSpec, registry: Sequence[CharacterCard]) -> ScenePrompt:
    """Unstructured baseline: raw attribute texts, no triggers, no compression.

    Trigger mentions inside the authored action are rewritten to bare
    character ids so the output carries no trigger token at all.
    """
    cards = _registry_index(registry)
    pieces = []
    segment_tokens: Dict[str, int] = {}
    for cid in sorted(scene.cast):
        if cid not in cards:
            raise UnknownCharacterError(cid)
        pieces.append(cards[cid].attributes)
        segment_tokens[cid] = token_count(cards[cid].attributes)
    action = scene.action.strip()
    for card in cards.values():
        action = action.replace(card.trigger, card.character_id)
    if action:
        pieces.append(action)
        segment_tokens["action"] = token_count(action)
    if scene.style.strip():
        pieces.append(scene.style.strip())
        segment_tokens["style"] = token_count(scene.style)
    text = " ".join(pieces)
    return ScenePrompt(
        text=text,
        segment_tokens=segment_tokens,
        cast=tuple(sorted(scene.cast)),
        scene_index=scene.scene_index,
        prompt_id=_prompt_id(scene, text),
    )
