"""One-step maps (Euler-Maruyama and the switching Milstein step) and
trajectory simulation.

The stepping core works on a batch of independent paths at once; the
single-path entry points are batches of one, so both routes perform the
same floating-point operations in the same order.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingJumpTail, StepTooLarge
from .noise import coarsen

SCHEMES = ("euler", "milstein", "milstein_ablated")


def scheme_name(kind):
    name = kind.replace("-", "_").lower()
    if name not in SCHEMES:
        raise ValueError(f"unknown scheme {kind!r}; choose from {', '.join(SCHEMES)}")
    return name


class StepSizeWarning(UserWarning):
    pass


def check_step_size(h, max_rate):
    """Reject ``h >= 1/q``; warn when ``h >= 1/(2q)``, outside the range
    where the order-one bound is proved."""
    if h <= 0:
        raise StepTooLarge("step must be positive")
    if max_rate <= 0:
        return
    if h * max_rate >= 1.0:
        raise StepTooLarge(f"h = {h!r} violates h < 1/q = {1.0 / max_rate!r}")
    if 2.0 * h * max_rate >= 1.0:
        warnings.warn(f"h = {h!r} is not below 1/(2q) = {0.5 / max_rate!r}", StepSizeWarning, stacklevel=3)


@dataclass(frozen=True)
class StepInputs:
    y: np.ndarray
    regime: int
    next_regime: int
    jump_count: int
    h: float
    dw: np.ndarray
    iterated: np.ndarray
    jump_tail: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.jump_count == 0:
            if self.next_regime != self.regime:
                raise ValueError("regime cannot change without a jump")
            if self.jump_tail is not None:
                raise ValueError("jump_tail given for a cell without jumps")


def _batched_step(p, kind, y, regime, next_regime, jump_count, h, dw, iterated, jump_tail):
    sigma = p.diffusion(y, regime)
    out = y + p.drift(y, regime) * h + np.einsum("...ij,...j->...i", sigma, dw)
    if kind == "euler":
        return out
    # sum over l, l1 of D sigma_(l) sigma_(l1) I[l1][l]
    weighted = np.einsum("...ik,...kl->...il", sigma, iterated)
    out = out + np.einsum("...lij,...jl->...i", p.diffusion_jacobian(y, regime), weighted)
    if kind == "milstein":
        fire = np.flatnonzero(jump_count == 1)
        if fire.size:
            jump = p.diffusion(y[fire], next_regime[fire]) - sigma[fire]
            out[fire] = out[fire] + np.einsum("...ij,...j->...i", jump, jump_tail[fire])
    return out


def _as_batch(p, inputs, need_tail):
    tail = inputs.jump_tail
    if tail is None:
        if need_tail and inputs.jump_count == 1:
            raise MissingJumpTail("a cell with one jump needs W(t_{n+1}) - W(tau_1)")
        tail = np.zeros(p.dim_w)
    return (
        np.asarray(inputs.y, dtype=float).reshape(1, p.dim_x),
        np.array([inputs.regime]),
        np.array([inputs.next_regime]),
        np.array([inputs.jump_count]),
        float(inputs.h),
        np.asarray(inputs.dw, dtype=float).reshape(1, p.dim_w),
        np.asarray(inputs.iterated, dtype=float).reshape(1, p.dim_w, p.dim_w),
        np.asarray(tail, dtype=float).reshape(1, p.dim_w),
    )


def milstein_step(p, inputs, ablate_switch_correction=False):
    kind = "milstein_ablated" if ablate_switch_correction else "milstein"
    return _batched_step(p, kind, *_as_batch(p, inputs, not ablate_switch_correction))[0]


def euler_step(p, inputs):
    return _batched_step(p, "euler", *_as_batch(p, inputs, False))[0]


@dataclass(frozen=True)
class LevelInputs:
    """Per-cell scheme inputs at step ``h`` for a batch of paths.

    Shapes: ``regimes (B, n+1)``, ``jump_count (B, n)``, ``dw (B, n, m)``,
    ``iterated (B, n, m, m)``, ``jump_tail (B, n, m)``.
    """

    h: float
    times: np.ndarray
    regimes: np.ndarray
    jump_count: np.ndarray
    dw: np.ndarray
    iterated: np.ndarray
    jump_tail: np.ndarray

    @property
    def n_steps(self):
        return self.times.size - 1

    @classmethod
    def from_path(cls, chain, noise, h):
        cn = coarsen(noise, h)
        return cls(
            h=cn.h,
            times=cn.times,
            regimes=chain.state_at(cn.times)[None],
            jump_count=cn.jump_count[None],
            dw=cn.increments[None],
            iterated=cn.iterated[None],
            jump_tail=cn.jump_tail[None],
        )

    @classmethod
    def stack(cls, levels):
        first = levels[0]
        return cls(
            h=first.h,
            times=first.times,
            regimes=np.concatenate([lv.regimes for lv in levels]),
            jump_count=np.concatenate([lv.jump_count for lv in levels]),
            dw=np.concatenate([lv.dw for lv in levels]),
            iterated=np.concatenate([lv.iterated for lv in levels]),
            jump_tail=np.concatenate([lv.jump_tail for lv in levels]),
        )


def simulate_batch(p, kind, level, y0):
    """Run ``kind`` over every path of ``level``; returns ``(B, n+1, d)``."""
    kind = scheme_name(kind)
    y0 = np.asarray(y0, dtype=float)
    out = np.empty((y0.shape[0], level.n_steps + 1, p.dim_x))
    out[:, 0] = y = y0
    for n in range(level.n_steps):
        y = _batched_step(
            p, kind, y,
            level.regimes[:, n], level.regimes[:, n + 1], level.jump_count[:, n], level.h,
            level.dw[:, n], level.iterated[:, n], level.jump_tail[:, n],
        )
        out[:, n + 1] = y
    return out


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    regimes: np.ndarray
    h: float
    scheme: str


def simulate_trajectory(p, kind, h, chain, noise, y0=None):
    """Simulate one path at step ``h`` driven by ``chain`` and ``noise``."""
    kind = scheme_name(kind)
    check_step_size(h, p.generator.max_rate)
    level = LevelInputs.from_path(chain, noise, h)
    start = p.sample_initial() if y0 is None else np.asarray(y0, dtype=float)
    values = simulate_batch(p, kind, level, start.reshape(1, p.dim_x))[0]
    return Trajectory(level.times, values, level.regimes[0], level.h, kind)
