"""Miniature diffusion testbed.

Characters are synthetic feature distributions around unit anchors; "images"
are plain feature vectors.  The denoiser is a small MLP whose two square
hidden matrices accept low-rank residuals, and sampling is a fixed-grid
deterministic relaxation from seeded Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .lowrank import WeightedEntry, fused_apply

# Number of MLP matrices that accept residuals (the two hidden d_h x d_h ones).
NUM_ADAPTED_LAYERS = 2

SIGMA_FEATURES = 4

# Per-adapted-layer weighted residual sets, in layer order.
LayerUpdates = Sequence[Sequence[WeightedEntry]]

NO_UPDATES: Tuple[tuple, ...] = ((), ())


@dataclass(frozen=True)
class CharacterDistribution:
    """Synthetic identity: unit anchor plus isotropic spread in feature space."""

    character_id: str
    anchor: np.ndarray
    spread: float
    mixture_offsets: Optional[Tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        if not np.isclose(np.linalg.norm(self.anchor), 1.0):
            raise ValueError("anchor must have unit norm")
        if self.spread < 0:
            raise ValueError("spread must be >= 0")


@dataclass(frozen=True)
class FeatureFrame:
    """One generated or reference feature vector standing in for an image."""

    values: np.ndarray
    scene_index: int = 0
    characters_present: Tuple[str, ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("frame values must be finite")


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels in (0, 1] for the sampler grid."""

    levels: Tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("schedule needs at least one level")
        arr = np.asarray(self.levels)
        if not ((arr > 0) & (arr <= 1)).all():
            raise ValueError("levels must lie in (0, 1]")
        if len(arr) > 1 and not (np.diff(arr) < 0).all():
            raise ValueError("levels must be strictly decreasing")

    @property
    def num_steps(self) -> int:
        return len(self.levels)

    @classmethod
    def default(cls, num_steps: int = 10) -> "NoiseSchedule":
        return cls(tuple(np.linspace(1.0, 0.1, num_steps)))


@dataclass(frozen=True)
class BackboneParams:
    """Frozen MLP denoiser parameters.

    Stack: input projection (d_feat + sigma features + d_cond -> d_hidden),
    two adapted hidden layers (d_hidden -> d_hidden), output head
    (d_hidden -> d_feat).  tanh after every matrix except the head.
    """

    w_in: np.ndarray
    b_in: np.ndarray
    w_mid1: np.ndarray
    b_mid1: np.ndarray
    w_mid2: np.ndarray
    b_mid2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        d_h = self.w_in.shape[0]
        if self.w_mid1.shape != (d_h, d_h) or self.w_mid2.shape != (d_h, d_h):
            raise ValueError("hidden matrices must be square d_hidden x d_hidden")
        if self.w_out.shape[1] != d_h:
            raise ValueError("output head does not match hidden width")
        for arr in (self.w_in, self.b_in, self.w_mid1, self.b_mid1,
                    self.w_mid2, self.b_mid2, self.w_out, self.b_out):
            if not np.isfinite(arr).all():
                raise ValueError("backbone parameters must be finite")

    @property
    def d_feat(self) -> int:
        return self.w_out.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_cond(self) -> int:
        return self.w_in.shape[1] - self.d_feat - SIGMA_FEATURES

    @property
    def adapted_shapes(self) -> Tuple[Tuple[int, int], ...]:
        return (self.w_mid1.shape, self.w_mid2.shape)

    @classmethod
    def init_random(
        cls, d_feat: int = 16, d_hidden: int = 64, d_cond: int = 16, seed: int = 0
    ) -> "BackboneParams":
        rng = np.random.default_rng(seed)
        d_in = d_feat + SIGMA_FEATURES + d_cond

        def layer(n_out, n_in):
            return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

        return cls(
            w_in=layer(d_hidden, d_in), b_in=np.zeros(d_hidden),
            w_mid1=layer(d_hidden, d_hidden), b_mid1=np.zeros(d_hidden),
            w_mid2=layer(d_hidden, d_hidden), b_mid2=np.zeros(d_hidden),
            w_out=layer(d_feat, d_hidden), b_out=np.zeros(d_feat),
        )


def sigma_embedding(sigma) -> np.ndarray:
    """Smooth 4-feature encoding of a noise level: (s, s^2, sin 2pi s, cos 2pi s)."""
    s = np.asarray(sigma, dtype=float)
    return np.stack(
        [s, s * s, np.sin(2 * np.pi * s), np.cos(2 * np.pi * s)], axis=0
    )


def sample_reference_set(
    dist: CharacterDistribution, k: int, seed: int = 0
) -> list[FeatureFrame]:
    """Draw k reference frames ``anchor + spread * eps`` (plus optional offsets)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(k):
        v = dist.anchor + dist.spread * rng.standard_normal(dist.anchor.shape)
        if dist.mixture_offsets:
            v = v + dist.mixture_offsets[rng.integers(len(dist.mixture_offsets))]
        frames.append(
            FeatureFrame(values=v, scene_index=i,
                         characters_present=(dist.character_id,))
        )
    return frames


def forward_noise(y: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Corrupt a clean vector: ``y + sigma * eps`` with seeded standard normal eps."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.array(y, dtype=float, copy=True)
    rng = np.random.default_rng(seed)
    return y + sigma * rng.standard_normal(np.shape(y))


def forward_batch(
    params: BackboneParams,
    updates: LayerUpdates,
    x: np.ndarray,
    sigmas: np.ndarray,
    cond: np.ndarray,
    want_cache: bool = False,
):
    """Batched denoiser pass over columns of ``x`` (shape d_feat x n).

    ``cond`` may be a single vector (broadcast) or a (d_cond, n) batch.  With
    ``want_cache`` the intermediate activations needed for backprop are
    returned alongside the output.
    """
    if len(updates) != NUM_ADAPTED_LAYERS:
        raise ValueError(f"expected {NUM_ADAPTED_LAYERS} update sets")
    n = x.shape[1]
    if cond.ndim == 1:
        cond = np.repeat(cond[:, None], n, axis=1)
    u = np.concatenate([x, sigma_embedding(sigmas), cond], axis=0)
    if u.shape[0] != params.w_in.shape[1]:
        raise ValueError(
            f"assembled input has {u.shape[0]} rows, backbone expects "
            f"{params.w_in.shape[1]}"
        )
    h1 = np.tanh(params.w_in @ u + params.b_in[:, None])
    h2 = np.tanh(fused_apply(params.w_mid1, updates[0], h1) + params.b_mid1[:, None])
    h3 = np.tanh(fused_apply(params.w_mid2, updates[1], h2) + params.b_mid2[:, None])
    out = params.w_out @ h3 + params.b_out[:, None]
    if want_cache:
        return out, (u, h1, h2, h3)
    return out


def denoise(
    params: BackboneParams,
    updates: LayerUpdates,
    x: np.ndarray,
    sigma: float,
    cond: np.ndarray,
) -> np.ndarray:
    """Single deterministic denoiser evaluation at noise level sigma."""
    if x.shape != (params.d_feat,):
        raise ValueError(f"x must have shape ({params.d_feat},)")
    if cond.shape != (params.d_cond,):
        raise ValueError(f"cond must have shape ({params.d_cond},)")
    out = forward_batch(params, updates, x[:, None], np.array([sigma]), cond)
    return out[:, 0]


def relax_sample(denoiser, d_feat: int, schedule: NoiseSchedule, seed: int = 0) -> np.ndarray:
    """Core sampler loop over an arbitrary ``denoiser(x, sigma) -> x_hat``.

    Starts from seeded Gaussian noise and relaxes toward the denoiser output
    over the K descending noise levels with annealed steps 1/K, 1/(K-1), ...,
    1.  The final unit step lands exactly on the last denoiser output; a
    constant 1/K step would leave an e^-1 fraction of the boot noise in the
    result no matter how large K is.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(d_feat)
    remaining = schedule.num_steps
    for sigma in schedule.levels:
        x = x + (denoiser(x, sigma) - x) / remaining
        remaining -= 1
    return x


def sample(
    params: BackboneParams,
    updates: LayerUpdates,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> FeatureFrame:
    """Iterative relaxation sampler, fully deterministic given the seed."""
    values = relax_sample(
        lambda x, sigma: denoise(params, updates, x, sigma, cond),
        params.d_feat, schedule, seed,
    )
    return FeatureFrame(values=values)
