"""Analytic-versus-numeric gradient verification.

Central finite differences with step 1e-3, computed in float64. A coordinate
passes when |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) < 1e-3;
a check passes when at least 99% of the sampled coordinates do.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, make_rng

DEFAULT_STEP = 1e-3
DEFAULT_RTOL = 1e-3
DEFAULT_MIN_FRAC = 0.99
_REL_FLOOR = 1e-6


@dataclass
class CoordinateResult:
    tensor: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradientReport:
    name: str
    n_checked: int = 0
    max_rel: float = 0.0
    mean_rel: float = 0.0
    frac_within: float = 1.0
    worst: list = field(default_factory=list)

    def passed(self, rtol=DEFAULT_RTOL, min_frac=DEFAULT_MIN_FRAC):
        return self.frac_within >= min_frac

    def summary(self):
        status = "pass" if self.passed() else "FAIL"
        return (
            f"{self.name}: {status}  max_rel={self.max_rel:.3e}  "
            f"mean_rel={self.mean_rel:.3e}  within={self.frac_within:.3f} "
            f"({self.n_checked} coords)"
        )


def check_gradients(loss_fn, tensors, n_samples=200, step=DEFAULT_STEP,
                    rtol=DEFAULT_RTOL, seed=0, name="check"):
    """Compare taped gradients of `loss_fn()` against central differences.

    `loss_fn` must rebuild the forward pass from scratch on every call, and
    must be a pure function of the data held by `tensors` (leaf tensors,
    float64 recommended). Gradient slots of the tensors are reset first.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = np.zeros_like(t.data)

    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.array(t.grad, copy=True) for t in tensors]

    sizes = [t.data.size for t in tensors]
    total = sum(sizes)
    rng = make_rng(seed, 0x6C)
    n = min(n_samples, total)
    coords = rng.choice(total, size=n, replace=False)

    report = GradientReport(name=name, n_checked=n)
    rels = []
    results = []
    for flat in sorted(int(c) for c in coords):
        ti = 0
        while flat >= sizes[ti]:
            flat -= sizes[ti]
            ti += 1
        t = tensors[ti]
        view = t.data.reshape(-1)
        orig = view[flat]
        view[flat] = orig + step
        f_plus = float(loss_fn().item())
        view[flat] = orig - step
        f_minus = float(loss_fn().item())
        view[flat] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[ti].reshape(-1)[flat])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
        rels.append(rel)
        results.append(CoordinateResult(
            tensor=t.name or f"tensor{ti}",
            index=np.unravel_index(flat, t.data.shape),
            analytic=a, numeric=numeric, rel_error=rel,
        ))

    rels = np.asarray(rels)
    report.max_rel = float(rels.max()) if len(rels) else 0.0
    report.mean_rel = float(rels.mean()) if len(rels) else 0.0
    report.frac_within = float((rels < rtol).mean()) if len(rels) else 1.0
    report.worst = sorted(results, key=lambda r: -r.rel_error)[:5]
    return report


def as_float64(params, inputs):
    """Cast a parameter store and a list of arrays to float64 leaf tensors."""
    params.cast_(np.float64)
    return [Tensor(np.asarray(x, dtype=np.float64)) for x in inputs]
