"""Inter- and intra-domain mixup losses with virtual labels.

Conventions: ``xs, ys`` are a labeled source batch (one-hot ``ys``), ``xt`` an
unlabeled target batch of the same size, ``qt`` the target virtual labels and
``lam`` a per-sample vector of mixing coefficients in ``[0.5, 1]``. Samples and
labels are plain arrays; only model parameters carry gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import AugmentationPolicy, augment
from .errors import ConfigError, NumericError, ValidationError
from .models import ModelBundle
from .tensor import Tensor, binary_cross_entropy, cross_entropy, mse, no_grad

SOURCE_DOMINANT, TARGET_DOMINANT = "source", "target"


@dataclass
class MixParams:
    alpha: float = 0.75
    temperature: float = 0.5
    k: int = 2

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.temperature <= 1:
            raise ConfigError(f"temperature must be in (0, 1], got {self.temperature}")
        if self.k < 1:
            raise ConfigError(f"augmentation count must be >= 1, got {self.k}")


@dataclass
class MixedBatch:
    x: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    dominance: str


@dataclass
class VirtualLabels:
    q: np.ndarray
    q_bar: np.ndarray


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_lambda_prime(alpha: float, seed, count: int) -> np.ndarray:
    """Draw ``max(l, 1 - l)`` with ``l ~ Beta(alpha, alpha)``, ``count`` times."""
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    lam = _rng(seed).beta(alpha, alpha, size=count)
    return np.maximum(lam, 1.0 - lam)


def sharpen(q_bar: np.ndarray, temperature: float) -> np.ndarray:
    """Raise each row to ``1/T`` and renormalise (computed in log space)."""
    if not 0 < temperature <= 1:
        raise ConfigError(f"temperature must be in (0, 1], got {temperature}")
    q_bar = np.atleast_2d(np.asarray(q_bar))
    sums = q_bar.sum(axis=1)
    if np.any(sums <= 0) or not np.all(np.isfinite(q_bar)):
        raise NumericError("sharpen: zero or non-finite probability row")
    if temperature == 1:
        return q_bar.copy()
    logits = np.log(np.maximum(q_bar, 1e-12)) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def entropy(q: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(q)
    return -np.sum(np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0), axis=1)


def virtual_labels(
    model: ModelBundle, xt: np.ndarray, policy: AugmentationPolicy, k: int, temperature: float, seed
) -> VirtualLabels:
    """Average ``h`` over ``k`` augmented copies of ``xt`` and sharpen.

    Runs without recording a graph, so the labels are constants.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    with no_grad():
        total = None
        for i in range(k):
            p = model.classify(augment(xt, policy, seed, i)).data
            total = p.astype(np.float64) if total is None else total + p
    q_bar = total / k
    return VirtualLabels(sharpen(q_bar, temperature).astype(xt.dtype), q_bar)


def _check_pair(a: np.ndarray, b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    if len(a) != len(b):
        raise ValidationError(f"batch sizes differ: {len(a)} vs {len(b)}")
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (len(a),))
    if np.any(lam < 0.5) or np.any(lam > 1):
        raise ValidationError("mixing coefficients must lie in [0.5, 1]")
    return lam


def mix(a: np.ndarray, b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Row-wise ``lam * a + (1 - lam) * b``."""
    lam = np.asarray(lam, dtype=np.float64).reshape(-1, *([1] * (np.ndim(a) - 1)))
    return (lam * a + (1.0 - lam) * b).astype(np.result_type(a, b), copy=False)


def mix_inter(xs, ys, xt, qt, lam, dominance: str = SOURCE_DOMINANT) -> MixedBatch:
    """Cross-domain mixup; the dominant domain gets weight ``lam >= 0.5``."""
    lam = _check_pair(xs, xt, lam)
    if len(ys) != len(xs) or len(qt) != len(xt):
        raise ValidationError("label batches must match their sample batches")
    if dominance == SOURCE_DOMINANT:
        return MixedBatch(mix(xs, xt, lam), mix(ys, qt, lam), lam, dominance)
    if dominance == TARGET_DOMINANT:
        return MixedBatch(mix(xt, xs, lam), mix(qt, ys, lam), lam, dominance)
    raise ValidationError(f"dominance must be 'source' or 'target', got {dominance!r}")


def q_loss_from_predictions(p_st: Tensor, q_st, p_ts: Tensor, q_ts) -> Tensor:
    return cross_entropy(q_st, p_st) + mse(q_ts, p_ts)


def z_loss_from_embeddings(zs: Tensor, zt: Tensor, z_st: Tensor, z_ts: Tensor, lam) -> Tensor:
    w = Tensor(np.asarray(lam).reshape(-1, 1), dtype=zs.dtype)
    mixed_st = w * zs + (1.0 - w) * zt
    mixed_ts = w * zt + (1.0 - w) * zs
    return mse(mixed_st, z_st) + mse(mixed_ts, z_ts)


def d_loss_from_embeddings(model: ModelBundle, z_pos: Tensor, z_neg: Tensor, eps: float = 1e-7) -> Tensor:
    return binary_cross_entropy(model.discriminate(z_pos), 1, eps) + binary_cross_entropy(model.discriminate(z_neg), 0, eps)


def loss_q(model: ModelBundle, xs, ys, xt, qt, lam) -> Tensor:
    """Cross-entropy on source-dominant mixes plus MSE on target-dominant mixes."""
    st = mix_inter(xs, ys, xt, qt, lam, SOURCE_DOMINANT)
    ts = mix_inter(xs, ys, xt, qt, lam, TARGET_DOMINANT)
    return q_loss_from_predictions(model.classify(st.x), st.q, model.classify(ts.x), ts.q)


def loss_z(model: ModelBundle, xs, xt, lam) -> Tensor:
    """Feature-level consistency: mixed features vs features of mixed inputs, both directions."""
    lam = _check_pair(xs, xt, lam)
    return z_loss_from_embeddings(
        model.embed(xs), model.embed(xt), model.embed(mix(xs, xt, lam)), model.embed(mix(xt, xs, lam)), lam
    )


def loss_d(model: ModelBundle, x_st, x_ts, eps: float = 1e-7) -> Tensor:
    """Domain BCE: source-dominant inputs labeled 1, target-dominant labeled 0.

    Features pass through the model's gradient reversal before ``D``.
    """
    return d_loss_from_embeddings(model, model.embed(x_st), model.embed(x_ts), eps)


def loss_d_mixed(model: ModelBundle, xs, xt, lam) -> Tensor:
    lam = _check_pair(xs, xt, lam)
    return loss_d(model, mix(xs, xt, lam), mix(xt, xs, lam))


def _partner(count: int, partner, seed) -> np.ndarray:
    if partner is None:
        return _rng(seed).permutation(count)
    partner = np.asarray(partner, dtype=np.int64)
    if partner.shape != (count,):
        raise ValidationError("partner index must have one entry per sample")
    return partner


def loss_intra_source(model: ModelBundle, xs, ys, lam, partner=None, seed: Optional[int] = None) -> Tensor:
    """Within-source mixup against a shuffled partner, cross-entropy on mixed labels."""
    j = _partner(len(xs), partner, seed)
    lam = _check_pair(xs, xs, lam)
    return cross_entropy(mix(ys, ys[j], lam), model.classify(mix(xs, xs[j], lam)))


def loss_intra_target(model: ModelBundle, xt, qt, lam, partner=None, seed: Optional[int] = None) -> Tensor:
    """Within-target mixup, MSE between mixed virtual labels and predictions."""
    j = _partner(len(xt), partner, seed)
    lam = _check_pair(xt, xt, lam)
    return mse(mix(qt, qt[j], lam), model.classify(mix(xt, xt[j], lam)))
