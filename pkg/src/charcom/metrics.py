"""Identity, fidelity, and temporal-consistency scoring.

Judge scores live in [1, 5] and come from affine cosine maps by default; the
pairwise temporal judge is pluggable so an external evaluator can replace the
embedding proxy without changing the aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .backbone import FeatureFrame
from .fusion import cosine
from .prompts import CharacterCard

# Pairwise temporal evaluator: (frame, next_frame, character_id) -> [0, 1].
PairJudge = Callable[[FeatureFrame, FeatureFrame, str], float]


class JudgeContractError(ValueError):
    """A pluggable judge returned a value outside its declared range."""


@dataclass(frozen=True)
class JudgeScores:
    is_score: float
    pfs_score: float

    def __post_init__(self):
        for v in (self.is_score, self.pfs_score):
            if not 1.0 <= v <= 5.0:
                raise ValueError(f"judge score {v} outside [1, 5]")


@dataclass(frozen=True)
class IdentityEmbedder:
    """Projects frames onto the span of all character anchors, then normalizes.

    The stand-in for a face-crop-plus-encoder: directions outside the identity
    subspace are discarded.  The character id argument is accepted for judge
    compatibility and ignored by this default embedder.
    """

    basis: np.ndarray  # (d_feat, n_anchors), orthonormal columns

    @classmethod
    def from_anchors(cls, anchors: Sequence[np.ndarray]) -> "IdentityEmbedder":
        mat = np.stack(anchors, axis=1)
        q, _ = np.linalg.qr(mat)
        return cls(basis=q)

    def embed(self, values: np.ndarray, character_id: Optional[str] = None) -> np.ndarray:
        proj = self.basis @ (self.basis.T @ values)
        norm = np.linalg.norm(proj)
        if norm == 0.0:
            return proj
        return proj / norm


def proxy_is(
    frame: FeatureFrame, card: CharacterCard, embedder: IdentityEmbedder
) -> float:
    """Identity score: 1 + 4 * max(0, cos(frame embedding, mean ref embedding))."""
    if not card.reference_set:
        raise ValueError("card reference set must be non-empty")
    ref_mean = np.mean(
        [embedder.embed(f.values, card.character_id) for f in card.reference_set],
        axis=0,
    )
    c = cosine(embedder.embed(frame.values, card.character_id), ref_mean)
    return 1.0 + 4.0 * max(0.0, c)


def proxy_pfs(
    frame: FeatureFrame,
    cast_anchors: Sequence[np.ndarray],
    embedder: IdentityEmbedder,
) -> float:
    """Fidelity score against the prompt-implied target (mean of cast anchors)."""
    if not cast_anchors:
        return 1.0
    target = np.mean(np.stack(cast_anchors, axis=0), axis=0)
    c = cosine(embedder.embed(frame.values), embedder.embed(target))
    return 1.0 + 4.0 * max(0.0, c)


def ics(is_score: float, pfs_score: float) -> float:
    """Normalized product of the two judge scores, range [0.04, 1]."""
    for v in (is_score, pfs_score):
        if not 1.0 <= v <= 5.0:
            raise ValueError(f"score {v} outside [1, 5]")
    return is_score * pfs_score / 25.0


def _adjacent_mean(
    sequences: Mapping[str, Sequence[FeatureFrame]],
    pair_value: Callable[[FeatureFrame, FeatureFrame, str], float],
) -> float:
    if not sequences:
        raise ValueError("need at least one character sequence")
    per_character = []
    for cid, frames in sequences.items():
        if len(frames) < 2:
            raise ValueError(f"sequence for {cid!r} needs at least 2 frames")
        vals = [
            pair_value(frames[i], frames[i + 1], cid)
            for i in range(len(frames) - 1)
        ]
        per_character.append(float(np.mean(vals)))
    return float(np.mean(per_character))


def t_ics_emb(
    sequences: Mapping[str, Sequence[FeatureFrame]], embedder: IdentityEmbedder
) -> float:
    """Mean adjacent-frame embedding cosine, averaged over characters."""
    return _adjacent_mean(
        sequences,
        lambda a, b, cid: cosine(
            embedder.embed(a.values, cid), embedder.embed(b.values, cid)
        ),
    )


def default_pair_judge(embedder: IdentityEmbedder) -> PairJudge:
    """Embedding-proxy judge: adjacent cosine clamped into [0, 1]."""

    def judge(a: FeatureFrame, b: FeatureFrame, cid: str) -> float:
        c = cosine(embedder.embed(a.values, cid), embedder.embed(b.values, cid))
        return min(1.0, max(0.0, c))

    return judge


def t_ics(
    sequences: Mapping[str, Sequence[FeatureFrame]], pair_judge: PairJudge
) -> float:
    """Temporal consistency under a pluggable pairwise judge in [0, 1]."""

    def checked(a: FeatureFrame, b: FeatureFrame, cid: str) -> float:
        v = pair_judge(a, b, cid)
        if not 0.0 <= v <= 1.0:
            raise JudgeContractError(f"judge returned {v}, outside [0, 1]")
        return v

    return _adjacent_mean(sequences, checked)


def temporal_loss(
    sequences: Mapping[str, Sequence[FeatureFrame]], embedder: IdentityEmbedder
) -> float:
    """Sum over characters and adjacent pairs of (1 - cos) identity distance."""
    if not sequences:
        raise ValueError("need at least one character sequence")
    total = 0.0
    for cid, frames in sequences.items():
        if len(frames) < 2:
            raise ValueError(f"sequence for {cid!r} needs at least 2 frames")
        for i in range(len(frames) - 1):
            total += 1.0 - cosine(
                embedder.embed(frames[i].values, cid),
                embedder.embed(frames[i + 1].values, cid),
            )
    return total


def total_objective(
    id_term: float, sem_term: float, temp_term: float,
    lam: float = 1.0, mu: float = 1.0,
) -> float:
    """Composite objective: identity + lam * semantic + mu * temporal."""
    if lam < 0 or mu < 0:
        raise ValueError("weights must be >= 0")
    return id_term + lam * sem_term + mu * temp_term


@dataclass(frozen=True)
class MetricReport:
    """Per-story metric bundle plus aggregates."""

    method: str
    per_scene: Tuple[JudgeScores, ...]
    ics_per_scene: Tuple[float, ...]
    t_ics: float
    t_ics_emb: float
    is_mean: float
    is_std: float
    pfs_mean: float
    pfs_std: float
    ics_mean: float
    ics_std: float
    mean_cast_size: float

    @classmethod
    def from_scores(
        cls,
        method: str,
        per_scene: Sequence[JudgeScores],
        t_ics_value: float,
        t_ics_emb_value: float,
        mean_cast_size: float,
    ) -> "MetricReport":
        ics_values = tuple(ics(s.is_score, s.pfs_score) for s in per_scene)
        is_vals = [s.is_score for s in per_scene]
        pfs_vals = [s.pfs_score for s in per_scene]
        return cls(
            method=method,
            per_scene=tuple(per_scene),
            ics_per_scene=ics_values,
            t_ics=t_ics_value,
            t_ics_emb=t_ics_emb_value,
            is_mean=float(np.mean(is_vals)),
            is_std=float(np.std(is_vals)),
            pfs_mean=float(np.mean(pfs_vals)),
            pfs_std=float(np.std(pfs_vals)),
            ics_mean=float(np.mean(ics_values)),
            ics_std=float(np.std(ics_values)),
            mean_cast_size=mean_cast_size,
        )
