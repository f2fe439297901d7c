"""Prompt-relevance scoring and adapter selection.

A character's blend weight is the logistic of two cosine similarities: prompt
text vs attribute text (hashed bag-of-tokens space) and prompt text vs the
character's reference-set embedding.  Characters above a threshold are
selected; their per-layer residuals are assembled into weighted update sets
for the denoiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .backbone import FeatureFrame
from .lowrank import WeightedEntry
from .prompts import CharacterCard, ScenePrompt, tokenize
from .trainer import AdapterWeights

# splitmix64 finalizer constants; fixed so embeddings never vary across runs.
_MIX = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF


class MissingAdapterError(LookupError):
    """A selected character has no trained adapter in the store."""

    def __init__(self, character_id: str):
        super().__init__(f"no adapter stored for character: {character_id!r}")
        self.character_id = character_id


def _token_hash(token: str) -> int:
    h = 0xCBF29CE484222325  # FNV-1a offset basis
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    h = (h + _MIX) & _MASK
    h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & _MASK
    return h ^ (h >> 31)


@dataclass(frozen=True)
class TextEmbedder:
    """Deterministic signed-hash bag-of-tokens embedder, L2-normalized output."""

    dimension: int = 256

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        for token in tokenize(text):
            h = _token_hash(token)
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[h % self.dimension] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return vec
        return vec / norm


@dataclass(frozen=True)
class PositionalTextEncoder:
    """Order-sensitive text encoder for the denoiser conditioning channel.

    Same signed token hashing as :class:`TextEmbedder`, but token i carries
    weight decay**i, so earlier tokens dominate and reordering a prompt's
    segments changes the vector.  Registered trigger tokens get an extra
    multiplicative boost: they are the identity hooks the adapters are trained
    against, so the conditioning signal concentrates on them.  Relevance
    scoring stays on the order-free bag embedder; this encoder only feeds the
    condition input.
    """

    dimension: int = 256
    decay: float = 0.983
    boost_tokens: frozenset = frozenset()
    boost: float = 1.0

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        weight = 1.0
        for token in tokenize(text):
            h = _token_hash(token)
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            w = weight * (self.boost if token in self.boost_tokens else 1.0)
            vec[h % self.dimension] += sign * w
            weight *= self.decay
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return vec
        return vec / norm


@dataclass(frozen=True)
class RefEmbedder:
    """Reference frames mapped into embedder space by pad/truncate."""

    dimension: int = 256

    def embed_frame(self, frame: FeatureFrame) -> np.ndarray:
        vec = np.zeros(self.dimension)
        n = min(self.dimension, frame.values.shape[0])
        vec[:n] = frame.values[:n]
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return vec
        return vec / norm

    def embed_set(self, frames: Sequence[FeatureFrame]) -> np.ndarray:
        if not frames:
            raise ValueError("reference set must be non-empty")
        mean = np.mean([self.embed_frame(f) for f in frames], axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            return mean
        return mean / norm


@dataclass(frozen=True)
class EmbedderPair:
    """Dual-encoder stand-in: one text space, one reference space."""

    text: TextEmbedder
    reference: RefEmbedder

    @classmethod
    def default(cls, dimension: int = 256) -> "EmbedderPair":
        return cls(text=TextEmbedder(dimension), reference=RefEmbedder(dimension))


@dataclass(frozen=True)
class FusionCoefficients:
    alpha: float = 1.0
    beta: float = 1.0
    weight_threshold: float = 0.6
    # Optional cap on the sum of selected weights; None leaves weights raw.
    cap_total: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.weight_threshold <= 1.0:
            raise ValueError("weight_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class FusionPlan:
    """Selection outcome for one prompt: kept and suppressed characters."""

    prompt_id: str
    selected: Tuple[Tuple[str, float], ...]
    excluded: Tuple[Tuple[str, float, str], ...]

    def to_record(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "selected": [{"character_id": c, "weight": w} for c, w in self.selected],
            "excluded": [
                {"character_id": c, "weight": w, "reason": r}
                for c, w, r in self.excluded
            ],
        }


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention cos(0, .) = 0."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def relevance_weight(
    prompt_text: str,
    card: CharacterCard,
    coeffs: FusionCoefficients,
    embedders: EmbedderPair,
) -> float:
    """Logistic blend weight from text and reference cosine evidence."""
    if not card.attributes.strip():
        raise ValueError("card attributes must be non-empty")
    if not card.reference_set:
        raise ValueError("card reference set must be non-empty")
    p_text = embedders.text.embed(prompt_text)
    cos_text = cosine(p_text, embedders.text.embed(card.attributes))
    cos_ref = cosine(p_text, embedders.reference.embed_set(card.reference_set))
    return logistic(coeffs.alpha * cos_text + coeffs.beta * cos_ref)


def build_plan(
    prompt: ScenePrompt,
    registry: Sequence[CharacterCard],
    coeffs: FusionCoefficients,
    embedders: EmbedderPair,
) -> FusionPlan:
    """Score every registered character and keep those above the threshold."""
    if not registry:
        raise ValueError("registry must be non-empty")
    selected: List[Tuple[str, float]] = []
    excluded: List[Tuple[str, float, str]] = []
    for card in sorted(registry, key=lambda c: c.character_id):
        w = relevance_weight(prompt.text, card, coeffs, embedders)
        if w >= coeffs.weight_threshold:
            selected.append((card.character_id, w))
        else:
            excluded.append((card.character_id, w, "below_threshold"))
    if coeffs.cap_total is not None:
        total = sum(w for _, w in selected)
        if total > coeffs.cap_total > 0:
            scale = coeffs.cap_total / total
            selected = [(c, w * scale) for c, w in selected]
    return FusionPlan(
        prompt_id=prompt.prompt_id,
        selected=tuple(selected),
        excluded=tuple(excluded),
    )


def static_plan(prompt: ScenePrompt, registry: Sequence[CharacterCard]) -> FusionPlan:
    """Prompt-unaware baseline: every registered character at weight 1."""
    return FusionPlan(
        prompt_id=prompt.prompt_id,
        selected=tuple(
            (c.character_id, 1.0)
            for c in sorted(registry, key=lambda c: c.character_id)
        ),
        excluded=(),
    )


def empty_plan(prompt: ScenePrompt) -> FusionPlan:
    return FusionPlan(prompt_id=prompt.prompt_id, selected=(), excluded=())


def plan_to_updates(
    plan: FusionPlan, adapters: Mapping[str, AdapterWeights]
) -> Tuple[Tuple[WeightedEntry, ...], ...]:
    """Assemble per-layer weighted update sets from a plan, in character-id order."""
    ordered = sorted(plan.selected, key=lambda cw: cw[0])
    num_layers: Optional[int] = None
    for cid, _ in ordered:
        if cid not in adapters:
            raise MissingAdapterError(cid)
        n = len(adapters[cid].layers)
        if num_layers is None:
            num_layers = n
        elif n != num_layers:
            raise ValueError("adapters disagree on layer count")
    if num_layers is None:
        num_layers = 2
    layer_sets: List[List[WeightedEntry]] = [[] for _ in range(num_layers)]
    for cid, weight in ordered:
        for i, update in enumerate(adapters[cid].layers):
            layer_sets[i].append((update, weight))
    return tuple(tuple(entries) for entries in layer_sets)


@dataclass(frozen=True)
class ConditionProjector:
    """Fixed random projection from embedder space to the denoiser cond input.

    ``gain`` scales the unit condition vector so the conditioning channel can
    compete with the feature channel inside the denoiser's first layer.
    """

    matrix: np.ndarray
    gain: float = 1.0

    @classmethod
    def create(cls, dim_in: int = 256, d_cond: int = 16, seed: int = 1234,
               gain: float = 1.0) -> "ConditionProjector":
        rng = np.random.default_rng(seed)
        return cls(
            matrix=rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(d_cond, dim_in)),
            gain=gain,
        )

    def condition(self, embedding: np.ndarray) -> np.ndarray:
        v = self.matrix @ embedding
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return v
        return self.gain * v / norm


def with_embedding(prompt: ScenePrompt, embedder: TextEmbedder) -> ScenePrompt:
    """Return the prompt with its text embedding filled in."""
    return replace(prompt, embedding=embedder.embed(prompt.text))
