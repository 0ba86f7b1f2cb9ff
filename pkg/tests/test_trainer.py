import csv
import io
import json
import math

import numpy as np
import pytest

from iimt.config import IimtConfig
from iimt.data import make_cursors, next_batch_pair
from iimt.errors import ConfigError, NumericError
from iimt.models import init_params
from iimt.optim import make_optimizer
from iimt.tensor import Tensor, cross_entropy
from iimt import trainer as T
from iimt.trainer import (
    ABLATION_ROWS,
    AblationRow,
    DivergenceError,
    ablation_configs,
    ablation_csv,
    ablation_text,
    build_datasets,
    evaluate,
    model_config,
    mu_schedule,
    step_weights,
    total_loss,
    train,
    w_t_schedule,
)


def tiny_config(**train_overrides):
    t = {"total_steps": 30, "batch_size": 16, "lr": 1e-3, "seed": 2}
    t.update(train_overrides)
    return IimtConfig().replace(
        data={"n": 200},
        model={"hidden_dims": [16], "embed_dim": 8, "disc_hidden": 16},
        train=t,
        augment={"jitter_sigma": 0.05},
    )


@pytest.fixture(scope="module")
def splits():
    return build_datasets(tiny_config(), 2)


def params_of(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


# -- schedules and assembly --------------------------------------------------------------


def test_w_t_schedule_points():
    assert w_t_schedule(0, 2.0, 100) == 0.0
    assert w_t_schedule(50, 2.0, 100) == 1.0
    assert w_t_schedule(100, 2.0, 100) == 2.0
    assert w_t_schedule(10_000, 2.0, 100) == 2.0
    with pytest.raises(ConfigError):
        w_t_schedule(1, 1.0, 0)


def test_w_t_schedule_monotone_and_clamped():
    values = [w_t_schedule(s, 0.7, 37) for s in range(100)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert max(values) == 0.7


def test_mu_schedule():
    assert mu_schedule(5, 0.5, 100) == 0.5
    ramp = [mu_schedule(s, 1.0, 100, "ramp") for s in range(101)]
    assert ramp[0] == 0.0 and all(b > a for a, b in zip(ramp, ramp[1:]))
    assert 0.99 < ramp[-1] < 1.0


def test_step_weights_follow_config():
    cfg = IimtConfig().replace(loss={"w_q": 0.3, "w_t_max": 2.0}, train={"total_steps": 100})
    w = step_weights(cfg, 25)
    assert w == {"L_q": 0.3, "L_d": 1.0, "L_z": 1.0, "L_s": 1.0, "L_t": 1.0}


def _components(seed=0):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    comps = {name: ((p * float(i + 1)) ** 2).sum() for i, name in enumerate(T.LOSS_NAMES)}
    return p, comps


def test_total_loss_zero_weights():
    p, comps = _components()
    total = total_loss(comps, {n: 0.0 for n in comps})
    total.backward()
    assert total.item() == 0.0 and np.all(p.grad == 0)


def test_total_loss_doubling_weights_doubles_everything():
    w = {"L_q": 0.3, "L_d": 1.0, "L_z": 0.7, "L_s": 1.0, "L_t": 0.25}
    p, comps = _components(1)
    one = total_loss(comps, w)
    one.backward()
    g1 = p.grad.copy()
    p, comps = _components(1)
    two = total_loss(comps, {k: 2 * v for k, v in w.items()})
    two.backward()
    assert two.item() == 2 * one.item()
    assert np.array_equal(p.grad, 2 * g1)


def test_total_loss_names_non_finite_component():
    _, comps = _components()
    comps["L_z"] = Tensor(float("nan"))
    with pytest.raises(NumericError, match="L_z"):
        total_loss(comps, {n: 1.0 for n in comps})


# -- training loop ------------------------------------------------------------------------


def test_zero_steps_returns_initial_parameters(splits):
    cfg = tiny_config(total_steps=0)
    result = train(cfg, splits.source, splits.target)
    fresh = init_params(model_config(cfg, splits.source), cfg.train.seed)
    assert all(np.array_equal(a, b) for a, b in zip(params_of(result.model).values(), params_of(fresh).values()))
    assert result.reports == []


def test_step_reports_are_consistent(splits):
    cfg = tiny_config()
    result = train(cfg, splits.source, splits.target)
    assert [r.step for r in result.reports] == list(range(30))
    for r in result.reports:
        w = step_weights(cfg, r.step)
        expected = sum(w[n] * v for n, v in r.losses.items() if v is not None)
        assert math.isclose(r.total, expected, rel_tol=1e-5, abs_tol=1e-7)
        assert r.w_t == w["L_t"]
        record = json.loads(r.to_json())
        assert record["step"] == r.step and set(T.LOSS_NAMES) <= set(record)


def test_inactive_losses_are_skipped(splits):
    cfg = ablation_configs(tiny_config())[0]
    result = train(cfg, splits.source, splits.target)
    for r in result.reports:
        assert r.losses["L_s"] is not None
        assert all(r.losses[n] is None for n in ("L_q", "L_d", "L_z", "L_t"))


def test_source_only_reduction_is_plain_supervised_training(splits):
    cfg = ablation_configs(tiny_config(dtype="float64"))[0]
    result = train(cfg, splits.source, splits.target)

    src = splits.source.astype(np.float64)
    tgt = splits.target.astype(np.float64)
    model = init_params(model_config(cfg, src), cfg.train.seed)
    opt = make_optimizer("adam", model.parameters(), cfg.train.lr)
    sc, tc = make_cursors(src, tgt, cfg.train.seed)
    for _ in range(cfg.train.total_steps):
        b = next_batch_pair(src, tgt, sc, tc, cfg.train.batch_size)
        model.zero_grad()
        cross_entropy(b.source_y, model.classify(b.source_x)).backward()
        opt.step()
    for (name, a), b in zip(params_of(result.model).items(), params_of(model).values()):
        assert np.array_equal(a, b), name


def test_same_seed_bit_identical(splits):
    cfg = tiny_config()
    a = train(cfg, splits.source, splits.target)
    b = train(cfg, splits.source, splits.target)
    assert [r.to_json() for r in a.reports] == [r.to_json() for r in b.reports]
    ea, eb = evaluate(a.model, splits.target_test), evaluate(b.model, splits.target_test)
    assert (ea.accuracy, ea.weighted_f1) == (eb.accuracy, eb.weighted_f1)
    c = train(tiny_config(seed=3), splits.source, splits.target)
    assert [r.total for r in c.reports] != [r.total for r in a.reports]


def test_checkpoint_resume_is_bit_exact(splits, tmp_path):
    cfg = tiny_config(checkpoint_every=10)
    full = train(cfg, splits.source, splits.target)
    first = train(cfg, splits.source, splits.target, out_dir=tmp_path, stop_at=10)
    ckpt = tmp_path / f"ckpt-step0000010-{cfg.hash()}.ckpt"
    assert ckpt.exists() and first.steps_done == 10
    rest = train(cfg, splits.source, splits.target, resume_from=ckpt)
    assert [r.to_json() for r in rest.reports] == [r.to_json() for r in full.reports[10:]]
    for a, b in zip(params_of(full.model).values(), params_of(rest.model).values()):
        assert np.array_equal(a, b)


def test_resume_rejects_other_config(splits, tmp_path):
    cfg = tiny_config()
    train(cfg, splits.source, splits.target, out_dir=tmp_path, stop_at=5)
    ckpt = next(tmp_path.glob("*.ckpt"))
    with pytest.raises(ConfigError, match="hash"):
        train(cfg.replace(loss={"w_z": 0.5}), splits.source, splits.target, resume_from=ckpt)


def test_divergence_aborts_and_keeps_checkpoint(splits, tmp_path, monkeypatch):
    cfg = tiny_config(checkpoint_every=5)
    real = T.compute_losses

    def exploding(model, config, xs, ys, xt, weights, policy, seed):
        out = real(model, config, xs, ys, xt, weights, policy, seed)
        if seed[1] == 7:
            out["L_s"] = out["L_s"] * 1e9
        return out

    monkeypatch.setattr(T, "compute_losses", exploding)
    with pytest.raises(DivergenceError) as info:
        train(cfg, splits.source, splits.target, out_dir=tmp_path)
    assert "step 7" in str(info.value)
    assert info.value.last_checkpoint.name.startswith("ckpt-step0000005")
    assert isinstance(info.value, NumericError)


def test_batch_larger_than_dataset(splits):
    with pytest.raises(ConfigError):
        train(tiny_config(batch_size=500), splits.source, splits.target)


def test_target_labels_never_reach_training(splits):
    assert splits.target.labels is None and splits.target.heldout_labels is not None


# -- ablation -------------------------------------------------------------------------------


def test_ablation_rows_are_cumulative():
    rows = ablation_configs(IimtConfig())
    lw = [r.loss for r in rows]
    assert (lw[0].w_q, lw[0].w_d, lw[0].w_z, lw[0].w_t_max, lw[0].source_mixup) == (0, 0, 0, 0, False)
    assert lw[1].w_d == 1 and lw[1].adv_features == "raw" and not lw[1].source_mixup
    assert lw[2].w_t_max == 1 and lw[2].source_mixup and lw[2].w_q == 0
    assert lw[3].w_q == 1 and lw[3].adv_features == "mixed" and lw[3].w_z == 0
    assert lw[4].w_z == 1
    assert rows[4].loss == IimtConfig().loss


def _rows():
    rng = np.random.default_rng(0)
    return [AblationRow(label, *(rng.random((3, 4)).tolist())) for label in ABLATION_ROWS]


def test_ablation_csv_round_trip():
    rows = _rows()
    parsed = list(csv.DictReader(io.StringIO(ablation_csv(rows))))
    assert [p["label"] for p in parsed] == list(ABLATION_ROWS)
    for p, r in zip(parsed, rows):
        mean, std = r.accuracy_mean_std
        assert float(p["target_acc_mean"]) == mean and float(p["target_acc_std"]) == std
        assert int(p["seeds"]) == 4


def test_ablation_text_has_five_rows_with_spread():
    lines = ablation_text(_rows()).splitlines()
    body = lines[2:]
    assert len(body) == 5
    assert all("±" in line for line in body)
    assert [line.split("  ")[0].strip() for line in body] == list(ABLATION_ROWS)


def test_run_ablation_small():
    cfg = tiny_config(total_steps=5)
    seen = []
    rows = T.run_ablation(cfg, [0, 1], lambda label, seed, rep: seen.append((label, seed)))
    assert [r.label for r in rows] == list(ABLATION_ROWS)
    assert all(len(r.target_accuracy) == 2 for r in rows)
    assert len(seen) == 10
