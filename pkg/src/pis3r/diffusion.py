"""Residual diffusion math: schedules, forward process, reverse recovery, losses.

The forward process mixes a residual (degraded input minus clean image)
with Gaussian noise:

    x_t = x_{t-1} + alpha_t * x_res + beta_t * eps_{t-1}        (per step)
    x_t = x_0 + abar_t * x_res + bbar_t * eps_t                 (marginal)

with abar_t = sum(alpha_i, i<=t), bbar_t = sqrt(sum(beta_i^2, i<=t)) and
endpoint constraints abar_T = bbar_T = 1, so the chain terminates at
x_T = x_in + eps rather than pure noise. Predictors are pluggable
callables, so the sampler is exercised without any trained network; a real
refiner plugs in through `refine`'s external-command mode.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import formats

# (x_t, t, x_in) -> (predicted x_res, predicted eps); outputs match x_t's shape.
PredictorHook = Callable[[np.ndarray, int, np.ndarray], tuple[np.ndarray, np.ndarray]]

_ENDPOINT_TOL = 1e-12


class DiffusionError(ValueError):
    """Raised for invalid schedules, shapes, or refiner failures."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step residual/noise coefficients plus their cumulative forms.

    Arrays are indexed by step-1 (step t in 1..T lives at index t-1).
    """

    alpha: np.ndarray
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta", "alpha_bar", "beta_bar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        t = len(self.alpha)
        if t < 1 or any(len(getattr(self, n)) != t for n in ("beta", "alpha_bar", "beta_bar")):
            raise DiffusionError("schedule arrays must be non-empty and equally long")
        if not ((self.alpha > 0).all() and (self.beta > 0).all()):
            raise DiffusionError("all per-step coefficients must be positive")
        if abs(self.alpha_bar[-1] - 1.0) > _ENDPOINT_TOL:
            raise DiffusionError(f"abar_T must be 1, got {self.alpha_bar[-1]!r}")
        if abs(self.beta_bar[-1] - 1.0) > _ENDPOINT_TOL:
            raise DiffusionError(f"bbar_T must be 1, got {self.beta_bar[-1]!r}")
        if not (np.diff(self.alpha_bar) > 0).all() or not (np.diff(self.beta_bar) > 0).all():
            raise DiffusionError("cumulative coefficients must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.alpha)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative residual coefficient, with the t = 0 convention abar_0 = 0."""
        self._check_t(t)
        return 0.0 if t == 0 else float(self.alpha_bar[t - 1])

    def beta_bar_at(self, t: int) -> float:
        self._check_t(t)
        return 0.0 if t == 0 else float(self.beta_bar[t - 1])

    def _check_t(self, t: int, lo: int = 0) -> None:
        if not (lo <= t <= self.T):
            raise DiffusionError(f"step {t} outside [{lo}, {self.T}]")


@dataclass
class DiffusionState:
    """Snapshot of one diffusion chain at step t.

    The residual is always derived from (x_in, x0); keeping it computed
    rather than stored means it can never go stale when either image
    changes.
    """

    x0: np.ndarray
    x_in: np.ndarray
    xt: np.ndarray
    t: int

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.x_in = np.asarray(self.x_in, dtype=np.float64)
        self.xt = np.asarray(self.xt, dtype=np.float64)
        _check_shapes(self.x0, self.x_in, self.xt)
        if self.t < 0:
            raise DiffusionError(f"step index must be >= 0, got {self.t}")

    @property
    def x_res(self) -> np.ndarray:
        return self.x_in - self.x0


def make_schedule(T: int, kind: str = "uniform-alpha") -> DiffusionSchedule:
    """Build a schedule satisfying the abar_T = bbar_T = 1 endpoints.

    uniform-alpha: alpha_t = 1/T; beta_t^2 = t / (T(T+1)/2), i.e. linearly
    increasing noise power normalized to unit total.
    """
    if T < 1:
        raise DiffusionError(f"T must be >= 1, got {T}")
    if kind != "uniform-alpha":
        raise DiffusionError(f"unknown schedule kind {kind!r}")
    steps = np.arange(1, T + 1, dtype=np.float64)
    alpha = np.full(T, 1.0 / T)
    alpha_bar = steps / T
    power = T * (T + 1) / 2.0
    beta = np.sqrt(steps / power)
    beta_bar = np.sqrt(np.cumsum(steps) / power)
    return DiffusionSchedule(alpha, beta, alpha_bar, beta_bar)


def _check_shapes(ref: np.ndarray, *others) -> None:
    for arr in others:
        if np.shape(arr) != np.shape(ref):
            raise DiffusionError(f"shape mismatch: {np.shape(arr)} vs {np.shape(ref)}")


def forward_step(x_prev, x_res, t: int, schedule: DiffusionSchedule, noise) -> np.ndarray:
    """One forward step: x_t = x_{t-1} + alpha_t * x_res + beta_t * eps."""
    schedule._check_t(t, lo=1)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    _check_shapes(x_prev, x_res, noise)
    return x_prev + schedule.alpha[t - 1] * np.asarray(x_res) + schedule.beta[t - 1] * np.asarray(noise)


def forward_marginal(x0, x_res, t: int, schedule: DiffusionSchedule, noise) -> np.ndarray:
    """Marginal form: x_t = x_0 + abar_t * x_res + bbar_t * eps (t = 0 returns x_0)."""
    x0 = np.asarray(x0, dtype=np.float64)
    _check_shapes(x0, x_res, noise)
    return x0 + schedule.alpha_bar_at(t) * np.asarray(x_res) + schedule.beta_bar_at(t) * np.asarray(noise)


def recover_x0(xt, t: int, schedule: DiffusionSchedule, pred_res, pred_eps) -> np.ndarray:
    """Invert the marginal form: x0 = x_t - abar_t * x_res - bbar_t * eps."""
    xt = np.asarray(xt, dtype=np.float64)
    _check_shapes(xt, pred_res, pred_eps)
    return xt - schedule.alpha_bar_at(t) * np.asarray(pred_res) - schedule.beta_bar_at(t) * np.asarray(pred_eps)


def sample(
    x_in,
    schedule: DiffusionSchedule,
    hook: PredictorHook,
    steps: int | None = None,
    seed: int = 0,
    stochastic: bool = False,
) -> np.ndarray:
    """Reverse chain from x_T = x_in + eps down to an x_0 estimate.

    Deterministic (sigma = 0) by default: at each visited step the hook's
    predictions recover x0, and the state is re-noised only through the
    residual term, x_{t_prev} = x0 + abar_{t_prev} * x_res. Stochastic mode
    adds bbar_{t_prev} * eps' from the seeded generator.
    """
    x_in = np.asarray(x_in, dtype=np.float64)
    if steps is None:
        steps = schedule.T
    if not (1 <= steps <= schedule.T):
        raise DiffusionError(f"steps must lie in [1, {schedule.T}], got {steps}")
    times = np.unique(np.rint(np.linspace(0, schedule.T, steps + 1)).astype(int))[::-1]
    rng = np.random.default_rng(seed)
    xt = x_in + schedule.beta_bar_at(schedule.T) * rng.standard_normal(x_in.shape)
    for t, t_prev in zip(times[:-1], times[1:]):
        pred_res, pred_eps = hook(xt, int(t), x_in)
        _check_shapes(xt, pred_res, pred_eps)
        x0_hat = recover_x0(xt, int(t), schedule, pred_res, pred_eps)
        xt = x0_hat + schedule.alpha_bar_at(int(t_prev)) * np.asarray(pred_res)
        if stochastic and t_prev > 0:
            xt = xt + schedule.beta_bar_at(int(t_prev)) * rng.standard_normal(x_in.shape)
    return xt


def oracle_hook(x0, schedule: DiffusionSchedule) -> PredictorHook:
    """Perfect predictor for verification: derives the true residual and noise.

    Given the true clean image, x_res = x_in - x0 and the noise realized in
    x_t follows by inverting the marginal form.
    """
    x0 = np.asarray(x0, dtype=np.float64)

    def hook(xt, t, x_in):
        x_res = np.asarray(x_in, dtype=np.float64) - x0
        bbar = schedule.beta_bar_at(t)
        if bbar == 0.0:
            eps = np.zeros_like(x0)
        else:
            eps = (np.asarray(xt) - x0 - schedule.alpha_bar_at(t) * x_res) / bbar
        return x_res, eps

    return hook


def zero_hook(xt, t, x_in):
    """Predicts zero residual and zero noise (recovery returns x_t unchanged)."""
    z = np.zeros_like(np.asarray(xt, dtype=np.float64))
    return z, z


def losses(true_res, true_eps, pred_res, pred_eps, lambda_res: float = 1.0, lambda_eps: float = 1.0):
    """Mean-squared prediction errors scaled by their loss weights."""
    if lambda_res < 0 or lambda_eps < 0:
        raise DiffusionError("loss weights must be non-negative")
    true_res = np.asarray(true_res, dtype=np.float64)
    _check_shapes(true_res, true_eps, pred_res, pred_eps)
    l_res = lambda_res * float(np.mean((true_res - np.asarray(pred_res)) ** 2))
    l_eps = lambda_eps * float(np.mean((np.asarray(true_eps) - np.asarray(pred_eps)) ** 2))
    return l_res, l_eps


def refine(
    image: np.ndarray,
    holes: np.ndarray | None = None,
    mode: str = "pass-through",
    command: str | None = None,
    workdir=None,
) -> np.ndarray:
    """Refinement seam for the stitched canvas.

    pass-through returns the image unchanged. external invokes
    `<command> --input <png> --holes <png> --output <png>` and validates
    that the output exists with unchanged dimensions.
    """
    img = np.asarray(image, dtype=np.uint8)
    if mode == "pass-through":
        return img.copy()
    if mode != "external":
        raise DiffusionError(f"unknown refine mode {mode!r}")
    if not command:
        raise DiffusionError("external refinement requires a command")
    if holes is None:
        holes = np.zeros(img.shape[:2], dtype=bool)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        tmp = Path(tmp)
        in_path, holes_path, out_path = tmp / "input.png", tmp / "holes.png", tmp / "output.png"
        formats.save_image(in_path, img)
        formats.save_mask(holes_path, holes)
        argv = shlex.split(command) + [
            "--input", str(in_path), "--holes", str(holes_path), "--output", str(out_path),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise DiffusionError(
                f"refiner exited with {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
            )
        if not out_path.exists():
            raise DiffusionError("refiner produced no output image")
        refined = formats.load_image(out_path)
    if refined.shape != img.shape:
        raise DiffusionError(f"refiner changed dimensions: {img.shape} -> {refined.shape}")
    return refined
