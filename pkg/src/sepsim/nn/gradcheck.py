"""Finite-difference verification of reverse-mode gradients.

Probes random scalar entries of the parameter set, perturbs each by +/-h,
and compares the central difference against the recorded gradient. The
relative error uses |a - n| / max(|a|, |n|, 1e-8) so near-zero gradients do
not blow up the ratio.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter

REL_ERR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradProbe:
    param_name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    probes: tuple[GradProbe, ...]

    def worst(self) -> GradProbe:
        return max(self.probes, key=lambda p: p.rel_error)


def _normalize_params(params) -> list[tuple[str, Parameter]]:
    named = []
    for i, entry in enumerate(params):
        if isinstance(entry, tuple):
            named.append(entry)
        else:
            named.append((f"param{i}", entry))
    if not named:
        raise ValueError("no parameters to check")
    return named


def check_gradients(params, loss_fn, probe_count: int = 50, h: float = 1e-5,
                    rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central differences.

    params: iterable of Parameter or (name, Parameter) pairs.
    loss_fn: zero-argument callable that rebuilds the forward pass from the
        current parameter values and returns the scalar loss Tensor.
    """
    named = _normalize_params(params)
    if rng is None:
        rng = np.random.default_rng(0)

    for _, p in named:
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in named}

    sizes = np.array([p.data.size for _, p in named])
    cum = np.cumsum(sizes)
    total = int(cum[-1])

    probes = []
    for _ in range(probe_count):
        flat = int(rng.integers(total))
        which = int(np.searchsorted(cum, flat, side="right"))
        name, p = named[which]
        local = flat - (int(cum[which - 1]) if which > 0 else 0)

        orig = p.data.flat[local]
        p.data.flat[local] = orig + h
        f_plus = loss_fn().item()
        p.data.flat[local] = orig - h
        f_minus = loss_fn().item()
        p.data.flat[local] = orig

        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[name].flat[local])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_ERR_FLOOR)
        probes.append(GradProbe(name, local, a, numeric, rel))

    return GradCheckReport(max(p.rel_error for p in probes), tuple(probes))
