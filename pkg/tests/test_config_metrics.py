from fractions import Fraction

import numpy as np
import pytest

from iimt.config import IimtConfig, config_from_dict, dump_config, load_config
from iimt.errors import ConfigError, ValidationError
from iimt.metrics import confusion_matrix, report_from_labels, weighted_f1


# -- config ------------------------------------------------------------------------------


def test_defaults():
    cfg = IimtConfig()
    assert (cfg.mix.alpha, cfg.mix.temperature, cfg.mix.k) == (0.75, 0.5, 2)
    assert (cfg.train.optimizer, cfg.train.lr, cfg.train.mu, cfg.train.mu_schedule) == ("adam", 3e-4, 1.0, "constant")
    assert cfg.ramp_steps == cfg.train.total_steps // 2
    cfg.validate()


def test_load_toml_and_dump_round_trip(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[loss]\nw_q = 0.5\n[train]\ntotal_steps = 10\nseed = 3\n[model]\nhidden_dims = [8, 4]\n')
    cfg = load_config(path)
    assert cfg.loss.w_q == 0.5 and cfg.train.total_steps == 10 and cfg.model.hidden_dims == [8, 4]
    again = tmp_path / "d.toml"
    again.write_text(dump_config(cfg))
    assert load_config(again).to_dict() == cfg.to_dict()
    assert load_config(again).hash() == cfg.hash()


def test_unknown_field_named(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[loss]\nw_qq = 1.0\n")
    with pytest.raises(ConfigError, match="loss.w_qq"):
        load_config(path)


def test_unknown_section():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": {}})


def test_syntax_error_reports_line(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[loss]\nw_q = 1.0\nw_d = = 2\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)


def test_type_errors_named():
    with pytest.raises(ConfigError, match="train.batch_size"):
        config_from_dict({"train": {"batch_size": "big"}})
    with pytest.raises(ConfigError, match="loss.source_mixup"):
        config_from_dict({"loss": {"source_mixup": 1}})


@pytest.mark.parametrize(
    "section,values",
    [
        ("loss", {"w_q": -1.0}),
        ("loss", {"w_t_ramp_steps": 5000}),
        ("mix", {"temperature": 1.5}),
        ("mix", {"k": 0}),
        ("train", {"optimizer": "lbfgs"}),
        ("train", {"mu_schedule": "cosine"}),
        ("train", {"lr": 0.0}),
    ],
)
def test_invalid_values_rejected(section, values):
    with pytest.raises(ConfigError):
        IimtConfig().replace(**{section: values}).validate()


def test_hash_tracks_content():
    a = IimtConfig()
    assert a.hash() == IimtConfig().hash()
    assert a.hash() != a.replace(loss={"w_t_max": 0.5}).hash()
    assert len(a.hash()) == 12


def test_replace_leaves_original():
    a = IimtConfig()
    b = a.replace(train={"seed": 9})
    assert a.train.seed == 0 and b.train.seed == 9


def test_shipped_moons_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "two_moons.toml")
    assert cfg.data.generator == "two-moons" and cfg.data.target_rotation == 40.0 and cfg.data.n == 2000


# -- metrics -------------------------------------------------------------------------------


def oracle_weighted_f1(truth, pred, num_classes):
    """Per-class precision/recall by explicit counting, in exact rationals."""
    n = len(truth)
    total = Fraction(0)
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        n_pred = sum(1 for p in pred if p == c)
        n_true = sum(1 for t in truth if t == c)
        if n_true == 0:
            continue
        precision = Fraction(tp, n_pred) if n_pred else Fraction(0)
        recall = Fraction(tp, n_true)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
        total += f1 * n_true
    return float(total / n)


def test_worked_example():
    assert weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 2) == pytest.approx((3 * 0.8 + 2 / 3) / 4, abs=1e-15)
    assert round(weighted_f1([0, 0, 0, 1], [0, 0, 1, 1], 2), 4) == 0.7667


def test_matches_oracle_on_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(1, 6))
        n = int(rng.integers(1, 51))
        truth = rng.integers(0, c, n).tolist()
        pred = rng.integers(0, c, n).tolist()
        assert weighted_f1(truth, pred, c) == oracle_weighted_f1(truth, pred, c)


def test_perfect_and_constant_predictors():
    y = np.repeat(np.arange(4), 5)
    r = report_from_labels(y, y, 4)
    assert r.accuracy == 1.0 and r.weighted_f1 == 1.0
    assert report_from_labels(y, np.zeros_like(y), 4).accuracy == 0.25


def test_absent_class_conventions():
    # class 2 never occurs and is never predicted; class 1 is predicted but absent
    r = report_from_labels([0, 0, 0], [0, 1, 0], 3)
    assert r.f1.tolist()[1:] == [0.0, 0.0]
    assert r.weighted_f1 == pytest.approx(0.8)


def test_confusion_layout_and_empty():
    cm = confusion_matrix([0, 1, 1], [1, 1, 0], 2)
    assert cm.tolist() == [[0, 1], [1, 1]]
    with pytest.raises(ValidationError):
        report_from_labels([], [], 2)
