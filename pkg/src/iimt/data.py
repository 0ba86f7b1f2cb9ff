"""Domain datasets, synthetic domain-shift generators, augmentation, batching."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ValidationError
from .tensor_io import load_tensor, save_tensor

SOURCE, TARGET = "source", "target"


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class DomainDataset:
    """N x d samples from one domain.

    ``labels`` (one-hot) are only set on the source domain. Synthetic target
    sets keep their ground truth in ``heldout_labels``, which training never
    reads.
    """

    samples: np.ndarray
    num_classes: int
    domain: str = SOURCE
    labels: Optional[np.ndarray] = None
    heldout_labels: Optional[np.ndarray] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.domain not in (SOURCE, TARGET):
            raise ValidationError(f"domain must be 'source' or 'target', got {self.domain!r}")
        if self.samples.ndim != 2:
            raise ValidationError(f"samples must be N x d, got shape {self.samples.shape}")
        if (self.labels is not None) != (self.domain == SOURCE):
            raise ValidationError("labels must be present exactly when the domain is 'source'")
        for name in ("labels", "heldout_labels"):
            lab = getattr(self, name)
            if lab is None:
                continue
            if lab.shape != (len(self.samples), self.num_classes):
                raise ValidationError(f"{name} shape {lab.shape} does not match {len(self.samples)} x {self.num_classes}")
            if not (np.all((lab == 0) | (lab == 1)) and np.all(lab.sum(axis=1) == 1)):
                raise ValidationError(f"{name} rows must be one-hot")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def truth(self) -> Optional[np.ndarray]:
        """One-hot ground truth for evaluation, whichever field holds it."""
        return self.labels if self.labels is not None else self.heldout_labels

    def as_domain(self, domain: str) -> "DomainDataset":
        truth = self.truth
        if domain == SOURCE and truth is None:
            raise ValidationError("cannot relabel an unlabeled set as source")
        return DomainDataset(
            self.samples,
            self.num_classes,
            domain,
            labels=truth if domain == SOURCE else None,
            heldout_labels=None if domain == SOURCE else truth,
            params=dict(self.params),
        )

    def astype(self, dtype) -> "DomainDataset":
        out = self.as_domain(self.domain)
        out.samples = self.samples.astype(dtype)
        return out

    def split(self, fraction: float, seed: int) -> Tuple["DomainDataset", "DomainDataset"]:
        idx = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        return self.subset(idx[:cut]), self.subset(idx[cut:])

    def subset(self, idx) -> "DomainDataset":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return DomainDataset(
            self.samples[idx], self.num_classes, self.domain, pick(self.labels), pick(self.heldout_labels), dict(self.params)
        )


def _finish(samples, classes, num_classes, domain, params) -> DomainDataset:
    labels = one_hot(classes, num_classes)
    if domain == SOURCE:
        return DomainDataset(samples, num_classes, SOURCE, labels=labels, params=params)
    return DomainDataset(samples, num_classes, TARGET, heldout_labels=labels, params=params)


def rotation_matrix(degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


# -- generators ----------------------------------------------------------------


MOONS_CENTRE = np.array([0.5, 0.25])


def gen_two_moons(n: int, noise: float = 0.1, rotation: float = 0.0, seed: int = 0, domain: str = SOURCE) -> DomainDataset:
    """Two interleaved half circles, rotated counter-clockwise about their centre.

    Class 0 is the upper arc ``(cos t, sin t)``, class 1 the lower arc
    ``(1 - cos t, 0.5 - sin t)``, with ``t`` evenly spaced on ``[0, pi]``.
    Both arcs are shifted by ``-MOONS_CENTRE`` so the rotation pivot is the
    middle of the data rather than a point on the upper arc.
    """
    if n < 2:
        raise ConfigError(f"two-moons needs n >= 2, got {n}")
    if n % 2:
        raise ConfigError(f"two-moons needs an even n, got {n}")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    x = np.concatenate([upper, lower])
    y = np.repeat([0, 1], half)

    rng = np.random.default_rng(seed)
    x = x + noise * rng.standard_normal(x.shape) - MOONS_CENTRE
    x = x @ rotation_matrix(rotation).T
    order = rng.permutation(n)
    params = {"generator": "two-moons", "n": n, "noise": noise, "rotation": rotation, "seed": seed}
    return _finish(x[order], y[order], 2, domain, params)


def gen_shifted_blobs(
    n: int, means, cov, shift=None, seed: int = 0, domain: str = TARGET
) -> DomainDataset:
    """Gaussian class blobs with shared covariance, centred on ``means + shift``.

    Classes are assigned round-robin, so counts differ by at most one.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    num_classes, d = means.shape
    cov = np.asarray(cov, dtype=np.float64)
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=np.float64)
    if cov.shape != (d, d):
        raise ConfigError(f"covariance must be {d} x {d}, got {cov.shape}")
    if shift.shape != (d,):
        raise ConfigError(f"shift must have length {d}")
    if len(np.unique(means, axis=0)) != num_classes:
        raise ConfigError("class means must be distinct")
    if not np.allclose(cov, cov.T):
        raise ConfigError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigError("covariance is not positive definite") from None
    if n < num_classes:
        raise ConfigError("need at least one sample per class")

    rng = np.random.default_rng(seed)
    y = np.arange(n) % num_classes
    rng.shuffle(y)
    x = means[y] + shift + rng.standard_normal((n, d)) @ chol.T
    params = {
        "generator": "shifted-blobs",
        "n": n,
        "means": means.tolist(),
        "cov": cov.tolist(),
        "shift": shift.tolist(),
        "seed": seed,
    }
    return _finish(x, y, num_classes, domain, params)


# seven-segment strokes in a unit box, y pointing down
_SEGMENTS = {
    "a": ((0.0, 0.0), (1.0, 0.0)),
    "b": ((1.0, 0.0), (1.0, 0.5)),
    "c": ((1.0, 0.5), (1.0, 1.0)),
    "d": ((0.0, 1.0), (1.0, 1.0)),
    "e": ((0.0, 0.5), (0.0, 1.0)),
    "f": ((0.0, 0.0), (0.0, 0.5)),
    "g": ((0.0, 0.5), (1.0, 0.5)),
}
_DIGIT_SEGMENTS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


def _segment_distance(px: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p1 - p0
    t = np.clip(((px - p0) @ d) / max(float(d @ d), 1e-12), 0.0, 1.0)
    nearest = p0 + t[:, None] * d
    return np.linalg.norm(px - nearest, axis=1)


def render_digit(digit: int, resolution: int, angle: float, offset, scale: float, thickness: float) -> np.ndarray:
    """Anti-aliased seven-segment glyph, rotated by ``angle`` degrees about the image centre."""
    coords = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    gx, gy = np.meshgrid(coords, coords)
    px = np.stack([gx.ravel(), gy.ravel()], axis=1)
    rot = rotation_matrix(angle)
    width, height = 0.55 * scale, 1.1 * scale
    dist = np.full(len(px), np.inf)
    for seg in _DIGIT_SEGMENTS[digit]:
        ends = []
        for ux, uy in _SEGMENTS[seg]:
            p = np.array([(ux - 0.5) * width, (uy - 0.5) * height]) + offset
            ends.append(rot @ p)
        dist = np.minimum(dist, _segment_distance(px, ends[0], ends[1]))
    pixel = 2.0 / resolution
    img = np.clip(1.0 - (dist - thickness) / pixel, 0.0, 1.0)
    return img.reshape(resolution, resolution)


def gen_mini_digits(
    n_per_class: int, resolution: int = 16, target_angle: float = 0.0, seed: int = 0
) -> Tuple[DomainDataset, DomainDataset]:
    """Rendered 0-9 glyphs with random offset, scale, and stroke width.

    The target set re-renders every source glyph with identical jitter,
    rotated by ``target_angle`` degrees.
    """
    if resolution not in (8, 16):
        raise ConfigError(f"resolution must be 8 or 16, got {resolution}")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(10), n_per_class)
    rng.shuffle(y)
    n = len(y)
    offsets = rng.uniform(-0.12, 0.12, size=(n, 2))
    scales = rng.uniform(0.85, 1.1, size=n)
    thick = rng.uniform(0.05, 0.1, size=n)

    def render(angle):
        return np.stack(
            [render_digit(d, resolution, angle, o, s, t).ravel() for d, o, s, t in zip(y, offsets, scales, thick)]
        )

    params = {"generator": "mini-digits", "n_per_class": n_per_class, "resolution": resolution, "seed": seed}
    source = _finish(render(0.0), y, 10, SOURCE, {**params, "angle": 0.0})
    target = _finish(render(target_angle), y, 10, TARGET, {**params, "angle": target_angle})
    return source, target


GENERATORS = ("two-moons", "shifted-blobs", "mini-digits")


# -- augmentation -----------------------------------------------------------------


@dataclass
class GaussianJitter:
    sigma: float

    def __call__(self, x, rng):
        return x + self.sigma * rng.standard_normal(x.shape) if self.sigma else x


@dataclass
class RandomScaling:
    low: float = 1.0
    high: float = 1.0

    def __call__(self, x, rng):
        if self.low == self.high == 1.0:
            return x
        return x * rng.uniform(self.low, self.high, size=(x.shape[0], 1))


@dataclass
class RandomShift:
    """Translate each image by up to ``pixels`` in each axis, zero-filling."""

    pixels: int
    image_shape: Tuple[int, int]

    def __call__(self, x, rng):
        h, w = self.image_shape
        imgs = x.reshape(-1, h, w)
        out = np.zeros_like(imgs)
        shifts = rng.integers(-self.pixels, self.pixels + 1, size=(len(imgs), 2))
        for i, (dy, dx) in enumerate(shifts):
            src = imgs[i, max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
            out[i, max(0, dy) : max(0, dy) + src.shape[0], max(0, dx) : max(0, dx) + src.shape[1]] = src
        return out.reshape(x.shape)


@dataclass
class HorizontalFlip:
    p: float
    image_shape: Tuple[int, int]

    def __call__(self, x, rng):
        h, w = self.image_shape
        imgs = x.reshape(-1, h, w)
        flip = rng.random(len(imgs)) < self.p
        out = np.where(flip[:, None, None], imgs[:, :, ::-1], imgs)
        return out.reshape(x.shape)


@dataclass
class AugmentationPolicy:
    transforms: List[Any] = field(default_factory=list)

    def validate(self, dim: int) -> None:
        for t in self.transforms:
            shape = getattr(t, "image_shape", None)
            if shape is not None and int(np.prod(shape)) != dim:
                raise ValidationError(f"{type(t).__name__} expects images of shape {shape}, samples have {dim} features")


def augment(x: np.ndarray, policy: AugmentationPolicy, seed, k: int) -> np.ndarray:
    """Apply ``policy`` to a batch, drawing randomness from stream ``(seed, k)``."""
    x = np.asarray(x)
    if not policy.transforms:
        return x
    policy.validate(x.shape[1])
    rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), k])
    out = x
    for t in policy.transforms:
        out = t(out, rng)
        if out.shape != x.shape:
            raise ValidationError(f"{type(t).__name__} changed shape {x.shape} -> {out.shape}")
    return out.astype(x.dtype, copy=False)


# -- batching ----------------------------------------------------------------------


@dataclass
class DomainCursor:
    """Epoch-wise shuffled index stream over one dataset.

    The permutation for each epoch is a pure function of ``(seed, stream,
    epoch)``, so the cursor state is fully described by ``(epoch, position)``.
    """

    size: int
    seed: int
    stream: int
    epoch: int = 0
    position: int = 0

    def _perm(self) -> np.ndarray:
        cached = getattr(self, "_cache", None)
        if cached is None or cached[0] != self.epoch:
            perm = np.random.default_rng([self.seed, self.stream, self.epoch]).permutation(self.size)
            self._cache = cached = (self.epoch, perm)
        return cached[1]

    def take(self, batch_size: int) -> np.ndarray:
        if batch_size > self.size:
            raise ConfigError(f"batch size {batch_size} exceeds dataset size {self.size}")
        if self.position + batch_size > self.size:
            self.epoch += 1
            self.position = 0
        idx = self._perm()[self.position : self.position + batch_size]
        self.position += batch_size
        return idx

    def state(self) -> Dict[str, int]:
        return {"epoch": self.epoch, "position": self.position}

    def load_state(self, state: Dict[str, int]) -> None:
        self.epoch, self.position = int(state["epoch"]), int(state["position"])


@dataclass
class BatchPair:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    source_idx: np.ndarray
    target_idx: np.ndarray


def make_cursors(source: DomainDataset, target: DomainDataset, seed: int) -> Tuple[DomainCursor, DomainCursor]:
    if len(source) == 0 or len(target) == 0:
        raise ConfigError("both datasets must be non-empty")
    return DomainCursor(len(source), seed, 0), DomainCursor(len(target), seed, 1)


def next_batch_pair(
    source: DomainDataset, target: DomainDataset, src_cursor: DomainCursor, tgt_cursor: DomainCursor, batch_size: int
) -> BatchPair:
    """Positional pairing of independently shuffled source and target batches."""
    if source.labels is None:
        raise ValidationError("source dataset has no labels")
    si, ti = src_cursor.take(batch_size), tgt_cursor.take(batch_size)
    return BatchPair(source.samples[si], source.labels[si], target.samples[ti], si, ti)


# -- on-disk format ----------------------------------------------------------------


def save_dataset(ds: DomainDataset, directory) -> Path:
    """Write ``samples.t``, ``labels.t`` (if any truth is known) and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "samples.t", ds.samples)
    if ds.truth is not None:
        save_tensor(directory / "labels.t", ds.truth)
    manifest = {
        "domain": ds.domain,
        "num_classes": ds.num_classes,
        "count": len(ds),
        "dim": ds.dim,
        "labels_heldout": ds.domain == TARGET and ds.truth is not None,
        "generator": ds.params,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory, domain: Optional[str] = None) -> DomainDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    samples = load_tensor(directory / "samples.t")
    truth = load_tensor(directory / "labels.t") if (directory / "labels.t").exists() else None
    ds = DomainDataset(
        samples,
        int(manifest["num_classes"]),
        manifest["domain"],
        labels=truth if manifest["domain"] == SOURCE else None,
        heldout_labels=truth if manifest["domain"] == TARGET else None,
        params=manifest.get("generator", {}),
    )
    return ds if domain is None or domain == ds.domain else ds.as_domain(domain)
