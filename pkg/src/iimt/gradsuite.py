"""Finite-difference verification of every training loss on a tiny random model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .data import one_hot
from .gradcheck import GradcheckReport, finite_diff_check
from .losses import (
    loss_d_mixed,
    loss_intra_source,
    loss_intra_target,
    loss_q,
    loss_z,
    sample_lambda_prime,
    sharpen,
)
from .models import ModelBundle, ModelConfig, init_params
from .tensor import Tensor

SUITE_LOSSES = ("L_q", "L_z", "L_d", "L_s", "L_t", "total")


@dataclass
class SuiteResult:
    reports: Dict[str, GradcheckReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())


def tiny_problem(seed: int = 0, batch: int = 6, in_dim: int = 3, classes: int = 3, mu: float = 1.0):
    """A 2-layer float64 model and one random batch with fixed mixing draws."""
    rng = np.random.default_rng(seed)
    model = init_params(ModelConfig(in_dim, classes, (5,), 4, disc_hidden=6, mu=mu, dtype="float64"), seed)
    # non-zero biases so no ReLU sits exactly on its kink
    for p in model.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    xs = rng.standard_normal((batch, in_dim))
    xt = rng.standard_normal((batch, in_dim))
    ys = one_hot(rng.integers(0, classes, batch), classes)
    qt = sharpen(rng.dirichlet(np.ones(classes), batch), 0.5)
    lam = sample_lambda_prime(0.75, rng, batch)
    perm = rng.permutation(batch)
    return model, dict(xs=xs, xt=xt, ys=ys, qt=qt, lam=lam, perm=perm)


def loss_functions(model: ModelBundle, b: dict, weights=None) -> Dict[str, Callable[[], Tensor]]:
    w = weights or {"L_q": 1.0, "L_d": 1.0, "L_z": 1.0, "L_s": 1.0, "L_t": 1.0}
    fns = {
        "L_q": lambda: loss_q(model, b["xs"], b["ys"], b["xt"], b["qt"], b["lam"]),
        "L_z": lambda: loss_z(model, b["xs"], b["xt"], b["lam"]),
        "L_d": lambda: loss_d_mixed(model, b["xs"], b["xt"], b["lam"]),
        "L_s": lambda: loss_intra_source(model, b["xs"], b["ys"], b["lam"], partner=b["perm"]),
        "L_t": lambda: loss_intra_target(model, b["xt"], b["qt"], b["lam"], partner=b["perm"]),
    }

    base = dict(fns)

    def total():
        out = None
        for name, fn in base.items():
            term = fn() * w[name]
            out = term if out is None else out + term
        return out

    def total_without_d():
        out = None
        for name, fn in base.items():
            if name != "L_d":
                term = fn() * w[name]
                out = term if out is None else out + term
        return out

    fns["total"] = total
    fns["_total_without_d"] = total_without_d
    return fns


def reversal_scales(model: ModelBundle) -> List[float]:
    """Expected tape/derivative ratio per parameter for a loss seen through gradient reversal."""
    n_enc = len(model.encoder.parameters())
    mu = model.reversal.mu
    return [-mu] * n_enc + [1.0] * (len(model.parameters()) - n_enc)


def run_suite(seed: int = 0, tolerance: float = 1e-4, step: float = 1e-5) -> SuiteResult:
    start = time.perf_counter()
    model, batch = tiny_problem(seed)
    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    fns = loss_functions(model, batch)
    ones = [1.0] * len(params)
    rev = reversal_scales(model)
    references = {
        "L_d": [(fns["L_d"], rev)],
        "total": [(fns["_total_without_d"], ones), (fns["L_d"], rev)],
    }
    reports = {}
    for name in SUITE_LOSSES:
        reports[name] = finite_diff_check(fns[name], params, step, tolerance, names, references.get(name))
    return SuiteResult(reports, time.perf_counter() - start)
