"""Training loops: backbone pre-training and per-character residual fitting.

Both loops minimize a denoising reconstruction loss
``mean ||f(y + sigma * eps, sigma, cond) - y||^2`` with plain SGD, noise level
drawn uniformly from [0, 1] each step.  Residual fitting updates only the two
factor pairs; the backbone arrays are never touched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import (
    NUM_ADAPTED_LAYERS,
    BackboneParams,
    FeatureFrame,
    forward_batch,
    forward_noise,
)
from .lowrank import LowRankUpdate, make_lowrank


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    steps: int = 2000
    batch_size: int = 8
    rank: int = 4
    seed: int = 0
    init_std: float = 0.02

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class TrainProvenance:
    steps: int
    final_loss: float
    loss_trace: Tuple[float, ...]


@dataclass(frozen=True)
class AdapterWeights:
    """Trained per-character residuals, one factor pair per adapted layer."""

    character_id: str
    layers: Tuple[LowRankUpdate, ...]
    rank: int
    provenance: Optional[TrainProvenance] = None

    def __post_init__(self):
        if len(self.layers) != NUM_ADAPTED_LAYERS:
            raise ValueError(f"expected {NUM_ADAPTED_LAYERS} layer updates")
        if any(u.rank != self.rank for u in self.layers):
            raise ValueError("rank must be uniform across layers")


def backbone_digest(params: BackboneParams) -> str:
    """SHA-256 over all parameter bytes; used to assert the backbone stays frozen."""
    h = hashlib.sha256()
    for name in ("w_in", "b_in", "w_mid1", "b_mid1", "w_mid2", "b_mid2",
                 "w_out", "b_out"):
        h.update(np.ascontiguousarray(getattr(params, name)).tobytes())
    return h.hexdigest()


def _noised_batch(targets, sigmas, rng):
    """Stack noisy inputs column-wise; one derived noise seed per sample."""
    cols = []
    for y, s in zip(targets, sigmas):
        cols.append(forward_noise(y, s, seed=int(rng.integers(2**63))))
    return np.stack(cols, axis=1)


def _backward(params, updates, cache, out, targets):
    """Shared backward pass; returns loss, per-layer deltas, and activations."""
    u, h1, h2, h3 = cache
    n = out.shape[1]
    resid = out - targets
    loss = float(np.sum(resid * resid) / n)
    g_out = 2.0 * resid / n
    d3 = (params.w_out.T @ g_out) * (1.0 - h3 * h3)

    def upstream(w, entries, delta):
        g = w.T @ delta
        for upd, wgt in entries:
            if wgt == 0.0:
                continue
            g += (wgt * upd.scale) * (upd.a.T @ (upd.b.T @ delta))
        return g

    d2 = upstream(params.w_mid2, updates[1], d3) * (1.0 - h2 * h2)
    d1 = upstream(params.w_mid1, updates[0], d2) * (1.0 - h1 * h1)
    return loss, g_out, d1, d2, d3, (u, h1, h2, h3)


def _backbone_grads(params, x, sigmas, cond, targets):
    out, cache = forward_batch(params, ((), ()), x, sigmas, cond, want_cache=True)
    loss, g_out, d1, d2, d3, (u, h1, h2, h3) = _backward(
        params, ((), ()), cache, out, targets
    )
    grads = {
        "w_in": d1 @ u.T, "b_in": d1.sum(axis=1),
        "w_mid1": d2 @ h1.T, "b_mid1": d2.sum(axis=1),
        "w_mid2": d3 @ h2.T, "b_mid2": d3.sum(axis=1),
        "w_out": g_out @ h3.T, "b_out": g_out.sum(axis=1),
    }
    return loss, grads


def _adapter_grads(params, factors, x, sigmas, cond, targets):
    """Gradients for the factor pairs only, applied at weight 1."""
    updates = tuple(
        [(LowRankUpdate(b=b, a=a), 1.0)] for b, a in factors
    )
    out, cache = forward_batch(params, updates, x, sigmas, cond, want_cache=True)
    loss, g_out, d1, d2, d3, (u, h1, h2, h3) = _backward(
        params, updates, cache, out, targets
    )
    deltas = (d2, d3)
    hs = (h1, h2)
    grads = []
    for (b, a), delta, h in zip(factors, deltas, hs):
        grads.append((delta @ (a @ h).T, (b.T @ delta) @ h.T))
    return loss, grads


def train_backbone(
    data: Sequence[Tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    d_hidden: int = 64,
) -> Tuple[BackboneParams, List[float]]:
    """Pre-train the denoiser on pooled (cond, target) pairs.

    Returns the trained parameters and the per-step loss trace.  Deterministic
    given (data, config).
    """
    if not data:
        raise ValueError("training data must be non-empty")
    d_cond = len(data[0][0])
    d_feat = len(data[0][1])
    s_init, s_loop = np.random.SeedSequence(config.seed).spawn(2)
    params = BackboneParams.init_random(
        d_feat=d_feat, d_hidden=d_hidden, d_cond=d_cond, seed=s_init
    )
    rng = np.random.default_rng(s_loop)
    conds = np.stack([c for c, _ in data], axis=1)
    targets = np.stack([y for _, y in data], axis=1)

    trace: List[float] = []
    arrays = {name: getattr(params, name).copy() for name in
              ("w_in", "b_in", "w_mid1", "b_mid1", "w_mid2", "b_mid2",
               "w_out", "b_out")}
    for _ in range(config.steps):
        idx = rng.integers(0, targets.shape[1], size=config.batch_size)
        sigmas = rng.uniform(0.0, 1.0, size=config.batch_size)
        y = targets[:, idx]
        x = _noised_batch(y.T, sigmas, rng)
        cur = BackboneParams(**arrays)
        loss, grads = _backbone_grads(cur, x, sigmas, conds[:, idx], y)
        for name, g in grads.items():
            arrays[name] = arrays[name] - config.learning_rate * g
        trace.append(loss)
    return BackboneParams(**arrays), trace


def train_adapter(
    backbone: BackboneParams,
    refs: Sequence[FeatureFrame],
    cond: np.ndarray,
    config: TrainConfig,
    character_id: str = "",
) -> AdapterWeights:
    """Fit one character's residual factors against its reference frames.

    The backbone is read-only throughout; only the factor pairs move.  The
    residual is applied at weight 1 during training, matching how a solo
    character is rendered.
    """
    if not refs:
        raise ValueError("reference set must be non-empty")
    s_init, s_loop = np.random.SeedSequence(config.seed).spawn(2)
    init_seeds = s_init.spawn(NUM_ADAPTED_LAYERS)
    factors = []
    for shape, s in zip(backbone.adapted_shapes, init_seeds):
        fresh = make_lowrank(shape[0], shape[1], config.rank,
                             init_std=config.init_std, seed=s)
        factors.append((fresh.b.copy(), fresh.a.copy()))
    rng = np.random.default_rng(s_loop)
    targets = np.stack([f.values for f in refs], axis=1)

    trace: List[float] = []
    for _ in range(config.steps):
        idx = rng.integers(0, targets.shape[1], size=config.batch_size)
        sigmas = rng.uniform(0.0, 1.0, size=config.batch_size)
        y = targets[:, idx]
        x = _noised_batch(y.T, sigmas, rng)
        loss, grads = _adapter_grads(backbone, factors, x, sigmas, cond, y)
        factors = [
            (b - config.learning_rate * gb, a - config.learning_rate * ga)
            for (b, a), (gb, ga) in zip(factors, grads)
        ]
        trace.append(loss)
    layers = tuple(LowRankUpdate(b=b, a=a) for b, a in factors)
    return AdapterWeights(
        character_id=character_id,
        layers=layers,
        rank=config.rank,
        provenance=TrainProvenance(
            steps=config.steps, final_loss=trace[-1], loss_trace=tuple(trace)
        ),
    )


def adapter_loss(
    backbone: BackboneParams,
    adapter: Optional[AdapterWeights],
    refs: Sequence[FeatureFrame],
    cond: np.ndarray,
    sigma: float = 0.5,
    seed: int = 0,
) -> float:
    """Reconstruction loss of the (optionally adapted) backbone on fixed noise draws."""
    rng = np.random.default_rng(seed)
    targets = np.stack([f.values for f in refs], axis=1)
    sig = np.full(targets.shape[1], sigma)
    x = _noised_batch(targets.T, sig, rng)
    updates = ((), ()) if adapter is None else tuple(
        [(u, 1.0)] for u in adapter.layers
    )
    out = forward_batch(backbone, updates, x, sig, cond)
    resid = out - targets
    return float(np.sum(resid * resid) / targets.shape[1])


def grad_check(
    loss_at: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Max coordinate-wise relative error of analytic vs central differences."""
    if not 0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    params = np.asarray(params, dtype=float)
    worst = 0.0
    flat = params.ravel()
    ana = np.asarray(analytic, dtype=float).ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = epsilon
        hi = loss_at((flat + bump).reshape(params.shape))
        lo = loss_at((flat - bump).reshape(params.shape))
        fd = (hi - lo) / (2 * epsilon)
        denom = max(abs(ana[i]), abs(fd), 1e-8)
        worst = max(worst, abs(ana[i] - fd) / denom)
    return worst
