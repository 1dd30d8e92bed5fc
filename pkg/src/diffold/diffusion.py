"""Uniform discrete diffusion over amino-acid types.

The single-step kernel mixes the identity with the uniform distribution:
``Q_t = alpha_t * I + (1 - alpha_t) * 11^T / d``.  The family is closed under
composition, so the cumulative kernel has the same form with the cumulative
retention ``alpha_bar_t`` — which is what makes exact skip-step reverse
sampling possible.  States are row distributions throughout: a hard state is
a one-hot row, and ``p(S_t | S_0) = S_0 Q_bar_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

COSINE_S = 0.008
ALPHA_MIN_CLIP = 0.001


@dataclass(frozen=True)
class TransitionSchedule:
    """Per-step retention coefficients and their cumulative products."""

    T: int
    alpha: np.ndarray      # (T,), alpha[t-1] is the step t retention
    alpha_bar: np.ndarray  # (T,), exact cumulative product of alpha
    d: int = 20

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative retention; alpha_bar_0 = 1 (no corruption)."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def retention(self, t: int, t_prev: int) -> float:
        """Retention of the composite kernel bridging t_prev -> t."""
        if not 0 <= t_prev < t <= self.T:
            raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
        return self.alpha_bar_at(t) / self.alpha_bar_at(t_prev)

    def q_matrix(self, t: int) -> np.ndarray:
        """Single-step transition matrix Q_t (row-stochastic, d x d)."""
        return _mix_matrix(self.alpha_at(t), self.d)

    def q_bar_matrix(self, t: int) -> np.ndarray:
        """Cumulative transition matrix from step 0 to t (closed form)."""
        return _mix_matrix(self.alpha_bar_at(t), self.d)

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")


def _mix_matrix(retention: float, d: int) -> np.ndarray:
    return retention * np.eye(d) + (1.0 - retention) * np.full((d, d), 1.0 / d)


def _cosine_alpha_bar(t: np.ndarray, T: int) -> np.ndarray:
    f = np.cos((t / T + COSINE_S) / (1.0 + COSINE_S) * math.pi / 2.0) ** 2
    f0 = math.cos(COSINE_S / (1.0 + COSINE_S) * math.pi / 2.0) ** 2
    return f / f0


def _linear_alphas(T: int, d: int) -> np.ndarray:
    """Linearly decreasing alpha_t whose product is 1/d (solved for the slope)."""
    target = -math.log(d)
    alpha_max = 1.0 - 1e-4
    if T == 1:
        return np.array([1.0 / d])

    def log_prod(alpha_min: float) -> float:
        a = np.linspace(alpha_max, alpha_min, T)
        return float(np.sum(np.log(a)))

    lo, hi = 1e-6, alpha_max  # log_prod(lo) << target < log_prod(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if log_prod(mid) > target:
            hi = mid
        else:
            lo = mid
    return np.linspace(alpha_max, 0.5 * (lo + hi), T)


def make_schedule(T: int, kind: str = "cosine", d: int = 20) -> TransitionSchedule:
    """Build a retention schedule of ``T`` steps over ``d`` types.

    ``cosine`` (default) follows the squared-cosine cumulative-retention
    curve with s = 0.008, per-step ratios clipped to [0.001, 1]; ``linear``
    decreases alpha_t linearly so that alpha_bar_T is 1/d.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if d < 2:
        raise ValueError("d must be >= 2")
    if kind == "cosine":
        bar = _cosine_alpha_bar(np.arange(T + 1, dtype=np.float64), T)
        alpha = np.clip(bar[1:] / bar[:-1], ALPHA_MIN_CLIP, 1.0)
    elif kind == "linear":
        alpha = _linear_alphas(T, d)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    # Recompute the cumulative product from the clipped alphas so that
    # alpha_bar is their exact running product.
    return TransitionSchedule(T=T, alpha=alpha, alpha_bar=np.cumprod(alpha), d=d)


def one_hot(types: np.ndarray, d: int = 20) -> np.ndarray:
    types = np.asarray(types, dtype=np.int64)
    out = np.zeros((types.shape[0], d))
    out[np.arange(types.shape[0]), types] = 1.0
    return out


def is_one_hot(state: np.ndarray) -> bool:
    if state.ndim != 2:
        return False
    return bool(
        np.all((state == 0.0) | (state == 1.0)) and np.all(state.sum(axis=1) == 1.0)
    )


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def categorical_sample(probs: np.ndarray, rng) -> np.ndarray:
    """One-hot rows sampled independently from each probability row."""
    rng = _as_rng(rng)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1)) * cdf[:, -1:]
    idx = np.minimum((u > cdf).sum(axis=1), probs.shape[1] - 1)
    return one_hot(idx, probs.shape[1])


def forward_marginal(s0: np.ndarray, t: int, schedule: TransitionSchedule) -> np.ndarray:
    """p(S_t | S_0) rows: ``s0 @ Q_bar_t``, evaluated in closed form."""
    schedule._check_t(t)
    s0 = np.asarray(s0, dtype=np.float64)
    bar = schedule.alpha_bar_at(t)
    return bar * s0 + (1.0 - bar) * s0.sum(axis=1, keepdims=True) / schedule.d


def forward_sample(
    s0_hard: np.ndarray, t: int, schedule: TransitionSchedule, rng
) -> np.ndarray:
    """Hard corrupted state S_t ~ p(S_t | S_0) given one-hot S_0 rows."""
    if not is_one_hot(np.asarray(s0_hard)):
        raise ValueError("forward_sample requires one-hot input rows")
    return categorical_sample(forward_marginal(s0_hard, t, schedule), _as_rng(rng))


def _bridge_posterior(
    s0_hat: np.ndarray,
    st_hard: np.ndarray,
    t: int,
    t_prev: int,
    schedule: TransitionSchedule,
) -> np.ndarray:
    """Posterior over S_{t_prev} given hard S_t and predicted S_0 rows.

    Per row: numerator (S_t Q^T) * (s0_hat Q_bar_{t_prev}) where Q is the
    composite kernel bridging t_prev -> t, normalized by s0_hat Q_bar_t S_t^T.
    """
    a_step = schedule.retention(t, t_prev)          # retention of t_prev -> t
    bar_prev = schedule.alpha_bar_at(t_prev)
    bar_t = schedule.alpha_bar_at(t)
    d = schedule.d
    st = np.asarray(st_hard, dtype=np.float64)
    s0 = np.asarray(s0_hat, dtype=np.float64)

    left = a_step * st + (1.0 - a_step) / d          # rows of S_t Q^T
    right = bar_prev * s0 + (1.0 - bar_prev) / d     # rows of s0_hat Q_bar_{t_prev}
    num = left * right
    denom = bar_t * np.sum(s0 * st, axis=1, keepdims=True) + (1.0 - bar_t) / d
    return num / np.maximum(denom, 1e-30)


def posterior(
    s0_hat: np.ndarray, st_hard: np.ndarray, t: int, schedule: TransitionSchedule
) -> np.ndarray:
    """Single-step posterior q(S_{t-1} | s0_hat, S_t); defined for t >= 2."""
    if not 2 <= t <= schedule.T:
        raise ValueError(f"posterior requires 2 <= t <= T, got t={t}")
    if not is_one_hot(np.asarray(st_hard)):
        raise ValueError("posterior requires one-hot S_t rows")
    return _bridge_posterior(s0_hat, st_hard, t, t - 1, schedule)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def reverse_step(
    s0_logits: np.ndarray,
    st_hard: np.ndarray,
    t: int,
    t_prev: int,
    schedule: TransitionSchedule,
    rng,
) -> np.ndarray:
    """Sample hard S_{t_prev} from the denoising distribution.

    With ``t_prev = 0`` the predicted clean distribution is sampled
    directly; otherwise the composite-kernel posterior bridges t -> t_prev
    in one draw, which is what makes a skip interval of the full T a single
    denoising step.
    """
    if not 0 <= t_prev < t <= schedule.T:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if not is_one_hot(np.asarray(st_hard)):
        raise ValueError("reverse_step requires one-hot S_t rows")
    s0_hat = softmax_rows(np.asarray(s0_logits, dtype=np.float64))
    if t_prev == 0:
        probs = s0_hat
    else:
        probs = _bridge_posterior(s0_hat, st_hard, t, t_prev, schedule)
    return categorical_sample(probs, _as_rng(rng))


def uniform_state(n: int, d: int = 20) -> np.ndarray:
    return np.full((n, d), 1.0 / d)


def sample_uniform_hard(n: int, d: int, rng) -> np.ndarray:
    """Hard state with each row drawn from the uniform prior."""
    return categorical_sample(uniform_state(n, d), _as_rng(rng))
