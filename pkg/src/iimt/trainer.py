"""End-to-end training: total loss, schedule, loop, evaluation, ablation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .checkpoint import checkpoint_name, restore, save_checkpoint
from .config import IimtConfig
from .data import (
    AugmentationPolicy,
    DomainDataset,
    GaussianJitter,
    HorizontalFlip,
    RandomScaling,
    RandomShift,
    gen_mini_digits,
    gen_shifted_blobs,
    gen_two_moons,
    load_dataset,
    make_cursors,
    next_batch_pair,
)
from .errors import ConfigError, NumericError, ValidationError
from .losses import (
    d_loss_from_embeddings,
    mix,
    q_loss_from_predictions,
    sample_lambda_prime,
    virtual_labels,
    z_loss_from_embeddings,
)
from .metrics import EvalReport, report_from_labels
from .models import ModelBundle, ModelConfig, init_params
from .optim import Optimizer, make_optimizer
from .tensor import Tensor, cross_entropy, mse, no_grad

logger = logging.getLogger(__name__)

LOSS_NAMES = ("L_q", "L_d", "L_z", "L_s", "L_t")
DIVERGENCE_LIMIT = 1e6


class DivergenceError(NumericError):
    def __init__(self, message: str, last_checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def w_t_schedule(step: int, w_t_max: float, ramp_steps: int) -> float:
    """Linear ramp from 0 at step 0 to ``w_t_max`` at ``ramp_steps``, flat afterwards."""
    if ramp_steps <= 0:
        raise ConfigError(f"ramp_steps must be positive, got {ramp_steps}")
    if step < 0:
        raise ConfigError(f"step must be non-negative, got {step}")
    return w_t_max * min(1.0, step / ramp_steps)


def mu_schedule(step: int, mu: float, total_steps: int, kind: str = "constant") -> float:
    """Reversal coefficient at ``step``; "ramp" rises smoothly from 0 towards ``mu``."""
    if kind == "constant":
        return float(mu)
    if kind != "ramp":
        raise ConfigError(f"unknown mu schedule {kind!r}")
    p = step / max(total_steps, 1)
    return float(mu * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0))


def step_weights(config: IimtConfig, step: int) -> Dict[str, float]:
    lw = config.loss
    return {
        "L_q": lw.w_q,
        "L_d": lw.w_d,
        "L_z": lw.w_z,
        "L_s": lw.w_s,
        "L_t": w_t_schedule(step, lw.w_t_max, config.ramp_steps),
    }


def total_loss(components: Dict[str, Tensor], weights: Dict[str, float]) -> Tensor:
    """Weighted sum of the component losses present in ``components``."""
    total = None
    for name, value in components.items():
        v = float(value.data)
        if not math.isfinite(v):
            raise NumericError(f"loss component {name} is not finite ({v})")
        term = value * weights[name]
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total


@dataclass
class StepReport:
    step: int
    losses: Dict[str, Optional[float]]
    total: float
    w_t: float
    eval: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> str:
        record = {"step": self.step, **self.losses, "total": self.total, "w_t": self.w_t}
        for split, metrics in self.eval.items():
            for key, value in metrics.items():
                record[f"{split}_{key}"] = value
        return json.dumps(record, sort_keys=True)


@dataclass
class TrainResult:
    model: ModelBundle
    reports: List[StepReport]
    optimizer: Optimizer
    steps_done: int


def evaluate(model: ModelBundle, dataset: DomainDataset, batch_size: int = 4096) -> EvalReport:
    """Argmax predictions of ``h`` against the dataset's ground truth."""
    truth = dataset.truth
    if truth is None:
        raise ValidationError("dataset has no ground-truth labels to evaluate against")
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate an empty dataset")
    preds = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            x = dataset.samples[start : start + batch_size].astype(model.encoder.layers[0].weight.dtype)
            preds.append(model.logits(x).data.argmax(axis=1))
    return report_from_labels(truth.argmax(axis=1), np.concatenate(preds), dataset.num_classes)


def augmentation_policy(config: IimtConfig, dataset: DomainDataset) -> AugmentationPolicy:
    a = config.augment
    transforms = []
    if a.jitter_sigma > 0:
        transforms.append(GaussianJitter(a.jitter_sigma))
    if (a.scale_low, a.scale_high) != (1.0, 1.0):
        transforms.append(RandomScaling(a.scale_low, a.scale_high))
    if a.shift_pixels or a.flip_p:
        side = int(round(math.sqrt(dataset.dim)))
        if side * side != dataset.dim:
            raise ConfigError("image augmentations need square image samples")
        if a.shift_pixels:
            transforms.append(RandomShift(a.shift_pixels, (side, side)))
        if a.flip_p:
            transforms.append(HorizontalFlip(a.flip_p, (side, side)))
    return AugmentationPolicy(transforms)


def model_config(config: IimtConfig, dataset: DomainDataset) -> ModelConfig:
    return ModelConfig(
        input_dim=dataset.dim,
        num_classes=dataset.num_classes,
        hidden_dims=tuple(config.model.hidden_dims),
        embed_dim=config.model.embed_dim,
        disc_hidden=config.model.disc_hidden,
        mu=config.train.mu,
        dtype=config.train.dtype,
    )


@dataclass
class DomainSplits:
    source: DomainDataset
    target: DomainDataset
    source_test: DomainDataset
    target_test: DomainDataset


def build_datasets(config: IimtConfig, seed: Optional[int] = None) -> DomainSplits:
    """Training and test sets for both domains, generated or loaded per ``config.data``."""
    d = config.data
    if seed is None:
        seed = d.seed if d.seed >= 0 else config.train.seed
    if d.source_dir or d.target_dir:
        if not (d.source_dir and d.target_dir):
            raise ConfigError("data.source_dir and data.target_dir must be given together")
        source = load_dataset(d.source_dir, "source")
        target = load_dataset(d.target_dir, "target")
        if target.truth is None:
            raise ConfigError("data.target_dir has no held-out labels; cannot report target metrics")
        src_tr, src_te = source.split(0.8, seed)
        return DomainSplits(src_tr, target, src_te, target)

    # test sets use disjoint seed streams
    test_seed = seed + 1_000_003
    if d.generator == "two-moons":
        make = lambda rot, s, dom: gen_two_moons(d.n, d.noise, rot, s, dom)  # noqa: E731
        return DomainSplits(
            make(d.source_rotation, seed, "source"),
            make(d.target_rotation, seed + 1, "target"),
            make(d.source_rotation, test_seed, "source"),
            make(d.target_rotation, test_seed + 1, "target"),
        )
    if d.generator == "shifted-blobs":
        zero = [0.0] * len(d.shift)
        make = lambda shift, s, dom: gen_shifted_blobs(d.n, d.means, d.cov, shift, s, dom)  # noqa: E731
        return DomainSplits(
            make(zero, seed, "source"),
            make(d.shift, seed + 1, "target"),
            make(zero, test_seed, "source"),
            make(d.shift, test_seed + 1, "target"),
        )
    if d.generator == "mini-digits":
        src, tgt = gen_mini_digits(d.n_per_class, d.resolution, d.target_angle, seed)
        src_te, tgt_te = gen_mini_digits(max(1, d.n_per_class // 2), d.resolution, d.target_angle, test_seed)
        return DomainSplits(src, tgt, src_te, tgt_te)
    raise ConfigError(f"unknown data.generator {d.generator!r}")


def compute_losses(
    model: ModelBundle,
    config: IimtConfig,
    xs: np.ndarray,
    ys: np.ndarray,
    xt: np.ndarray,
    weights: Dict[str, float],
    policy: AugmentationPolicy,
    seed,
) -> Dict[str, Tensor]:
    """Evaluate every loss with a non-zero weight for one paired batch.

    All sub-batches (mixed, raw, intra-domain mixed) go through the encoder
    in a single pass. Random draws happen in a fixed order whatever the
    weights, so runs differing only in weights see the same coefficients.
    """
    rng = np.random.default_rng([*seed, 0])
    b = len(xs)
    mp = config.mix
    lam = sample_lambda_prime(mp.alpha, rng, b)
    lam_s = sample_lambda_prime(mp.alpha, rng, b)
    lam_t = sample_lambda_prime(mp.alpha, rng, b)
    perm_s, perm_t = rng.permutation(b), rng.permutation(b)
    if not config.loss.source_mixup:
        lam_s = np.ones(b)

    use = {name: weights[name] > 0 for name in LOSS_NAMES}
    adv_mixed = config.loss.adv_features == "mixed"
    qt = None
    if use["L_q"] or use["L_t"]:
        qt = virtual_labels(model, xt, policy, mp.k, mp.temperature, [*seed, 1]).q

    blocks: Dict[str, np.ndarray] = {}
    if use["L_q"] or use["L_z"] or (use["L_d"] and adv_mixed):
        blocks["st"] = mix(xs, xt, lam)
        blocks["ts"] = mix(xt, xs, lam)
    if use["L_z"] or (use["L_d"] and not adv_mixed):
        blocks["s"] = xs
        blocks["t"] = xt
    if use["L_s"]:
        blocks["s_mix"] = mix(xs, xs[perm_s], lam_s)
    if use["L_t"]:
        blocks["t_mix"] = mix(xt, xt[perm_t], lam_t)
    if not blocks:
        return {}

    bounds, offset = {}, 0
    for name, arr in blocks.items():
        bounds[name] = slice(offset, offset + len(arr))
        offset += len(arr)
    z_all = model.embed(np.concatenate(list(blocks.values())))
    z = {name: z_all[sl] for name, sl in bounds.items()}
    p_all = None
    if use["L_q"] or use["L_s"] or use["L_t"]:
        p_all = model.predict_from_embedding(z_all)

    out: Dict[str, Tensor] = {}
    if use["L_q"]:
        out["L_q"] = q_loss_from_predictions(
            p_all[bounds["st"]], mix(ys, qt, lam), p_all[bounds["ts"]], mix(qt, ys, lam)
        )
    if use["L_d"]:
        pos, neg = ("st", "ts") if adv_mixed else ("s", "t")
        out["L_d"] = d_loss_from_embeddings(model, z[pos], z[neg])
    if use["L_z"]:
        out["L_z"] = z_loss_from_embeddings(z["s"], z["t"], z["st"], z["ts"], lam)
    if use["L_s"]:
        out["L_s"] = cross_entropy(mix(ys, ys[perm_s], lam_s), p_all[bounds["s_mix"]])
    if use["L_t"]:
        out["L_t"] = mse(mix(qt, qt[perm_t], lam_t), p_all[bounds["t_mix"]])
    return out


def train(
    config: IimtConfig,
    source: DomainDataset,
    target: DomainDataset,
    *,
    eval_sets: Optional[Dict[str, DomainDataset]] = None,
    out_dir=None,
    resume_from=None,
    stop_at: Optional[int] = None,
    log: Optional[Callable[[StepReport], None]] = None,
) -> TrainResult:
    """Run IIMT optimisation.

    ``stop_at`` ends the run early (after that many steps) without changing
    the schedule, which is how a run is split around a checkpoint.
    Checkpoints are written to ``out_dir`` every ``train.checkpoint_every``
    steps and, when ``out_dir`` is set, at the end.
    """
    config.validate()
    t = config.train
    dtype = np.dtype(t.dtype)
    if source.num_classes != target.num_classes or source.dim != target.dim:
        raise ValidationError("source and target must share feature dimension and class count")
    if t.batch_size > min(len(source), len(target)):
        raise ConfigError(f"batch size {t.batch_size} exceeds a dataset size ({len(source)}, {len(target)})")

    src = source.astype(dtype)
    tgt = target.astype(dtype)
    ys_all = src.labels.astype(dtype)
    model = init_params(model_config(config, src), t.seed)
    optimizer = make_optimizer(t.optimizer, model.parameters(), t.lr)
    src_cur, tgt_cur = make_cursors(src, tgt, t.seed)
    policy = augmentation_policy(config, src)
    config_hash = config.hash()
    out_dir = Path(out_dir) if out_dir is not None else None

    start = 0
    if resume_from is not None:
        ckpt = restore(resume_from, model, optimizer)
        if ckpt.config_hash != config_hash:
            raise ConfigError(f"checkpoint config hash {ckpt.config_hash} does not match run config {config_hash}")
        src_cur.load_state(ckpt.extra["source_cursor"])
        tgt_cur.load_state(ckpt.extra["target_cursor"])
        start = ckpt.step

    def checkpoint(step: int) -> Path:
        extra = {"source_cursor": src_cur.state(), "target_cursor": tgt_cur.state()}
        return save_checkpoint(out_dir / checkpoint_name(step, config_hash), model, optimizer, step, config_hash, extra)

    end = t.total_steps if stop_at is None else min(stop_at, t.total_steps)
    reports: List[StepReport] = []
    last_ckpt: Optional[Path] = None
    step = start
    for step in range(start, end):
        weights = step_weights(config, step)
        model.reversal.mu = mu_schedule(step, t.mu, t.total_steps, t.mu_schedule)
        batch = next_batch_pair(src, tgt, src_cur, tgt_cur, t.batch_size)
        ys = ys_all[batch.source_idx]
        comps = compute_losses(model, config, batch.source_x, ys, batch.target_x, weights, policy, [t.seed, step])
        try:
            total = total_loss(comps, weights)
        except NumericError as exc:
            raise DivergenceError(f"step {step}: {exc}", last_ckpt) from None
        value = float(total.data)
        if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"step {step}: total loss {value} diverged", last_ckpt)

        model.zero_grad()
        if comps:
            total.backward()
            try:
                optimizer.step()
            except NumericError as exc:
                raise DivergenceError(f"step {step}: {exc}", last_ckpt) from None

        report = StepReport(
            step=step,
            losses={name: (float(comps[name].data) if name in comps else None) for name in LOSS_NAMES},
            total=value,
            w_t=weights["L_t"],
        )
        done = step + 1
        if eval_sets and t.eval_every and (done % t.eval_every == 0 or done == t.total_steps):
            for split, ds in eval_sets.items():
                r = evaluate(model, ds)
                report.eval[split] = {"accuracy": r.accuracy, "weighted_f1": r.weighted_f1}
        reports.append(report)
        if log is not None:
            log(report)
        if out_dir is not None and t.checkpoint_every and done % t.checkpoint_every == 0:
            last_ckpt = checkpoint(done)

    steps_done = max(start, end)
    if out_dir is not None and (last_ckpt is None or not last_ckpt.name.startswith(f"ckpt-step{steps_done:07d}")):
        checkpoint(steps_done)
    return TrainResult(model, reports, optimizer, steps_done)


# -- ablation ------------------------------------------------------------------------

ABLATION_ROWS = (
    "Source-Only",
    "DANN",
    "Add intra-domain L_s, L_t",
    "Add inter-domain L_q",
    "Add inter-domain L_z",
)


def ablation_configs(config: IimtConfig) -> List[IimtConfig]:
    """The five cumulative configurations, each adding components to the previous one."""
    w = config.loss
    source_only = config.replace(loss={"w_q": 0.0, "w_d": 0.0, "w_z": 0.0, "w_t_max": 0.0, "source_mixup": False, "adv_features": "raw"})
    dann = source_only.replace(loss={"w_d": w.w_d})
    intra = dann.replace(loss={"w_t_max": w.w_t_max, "source_mixup": True})
    inter_q = intra.replace(loss={"w_q": w.w_q, "adv_features": "mixed"})
    inter_z = inter_q.replace(loss={"w_z": w.w_z})
    return [source_only, dann, intra, inter_q, inter_z]


@dataclass
class AblationRow:
    label: str
    target_accuracy: List[float]
    target_f1: List[float]
    source_accuracy: List[float]

    @staticmethod
    def _stats(values: List[float]):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0

    @property
    def accuracy_mean_std(self):
        return self._stats(self.target_accuracy)

    @property
    def f1_mean_std(self):
        return self._stats(self.target_f1)

    @property
    def source_mean_std(self):
        return self._stats(self.source_accuracy)


def run_ablation(
    config: IimtConfig,
    seeds: List[int],
    progress: Optional[Callable[[str, int, EvalReport], None]] = None,
) -> List[AblationRow]:
    """Train every ablation row on every seed; seeds are shared across rows."""
    rows = [AblationRow(label, [], [], []) for label in ABLATION_ROWS]
    splits = {seed: build_datasets(config, seed) for seed in seeds}
    for row, row_cfg in zip(rows, ablation_configs(config)):
        for seed in seeds:
            cfg = row_cfg.replace(train={"seed": seed})
            sp = splits[seed]
            result = train(cfg, sp.source, sp.target)
            tr = evaluate(result.model, sp.target_test)
            sr = evaluate(result.model, sp.source_test)
            row.target_accuracy.append(tr.accuracy)
            row.target_f1.append(tr.weighted_f1)
            row.source_accuracy.append(sr.accuracy)
            if progress is not None:
                progress(row.label, seed, tr)
    return rows


def ablation_csv(rows: List[AblationRow]) -> str:
    lines = ["row,label,target_acc_mean,target_acc_std,target_f1_mean,target_f1_std,source_acc_mean,source_acc_std,seeds"]
    for i, r in enumerate(rows, 1):
        am, asd = r.accuracy_mean_std
        fm, fsd = r.f1_mean_std
        sm, ssd = r.source_mean_std
        lines.append(f'{i},"{r.label}",{am!r},{asd!r},{fm!r},{fsd!r},{sm!r},{ssd!r},{len(r.target_accuracy)}')
    return "\n".join(lines) + "\n"


def ablation_text(rows: List[AblationRow]) -> str:
    width = max(len(r.label) for r in rows)
    head = f"{'Method':<{width}}  {'target acc (%)':>16}  {'target wF1':>15}  {'source acc (%)':>16}"
    lines = [head, "-" * len(head)]
    for r in rows:
        am, asd = r.accuracy_mean_std
        fm, fsd = r.f1_mean_std
        sm, ssd = r.source_mean_std
        lines.append(
            f"{r.label:<{width}}  {100 * am:>8.2f} ± {100 * asd:<5.2f}  {fm:>7.4f} ± {fsd:<5.4f}  {100 * sm:>8.2f} ± {100 * ssd:<5.2f}"
        )
    return "\n".join(lines) + "\n"

