"""Noise schedules, forward sampling and DDPM/DDIM reverse steps.

Indexing: all tables are stored for t = 0..T with ``alpha_bar[0] == 1`` and
``beta[0] == 0``; step t in 1..T is a real diffusion step.  The reverse steps
use the cumulative product ``alpha_bar`` wherever the DDIM update needs the
signal level of a timestep.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        ab = np.asarray(self.alpha_bar, dtype=float)
        beta.setflags(write=False)
        ab.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)
        if beta.shape != ab.shape or beta.ndim != 1 or len(beta) < 2:
            raise ValueError("beta and alpha_bar must be 1-D tables of length T + 1 >= 2")
        if not (1.0 - 1e-6 <= ab[0] <= 1.0):
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0 or ab[-1] >= 0.05:
            raise ValueError(f"alpha_bar[T] must lie in (0, 0.05), got {ab[-1]}")

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    def check_t(self, t: int, lo: int = 0):
        if not (lo <= t <= self.T) or int(t) != t:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")


def cosine_alpha_bar(T: int, s: float = 0.008) -> np.ndarray:
    x = np.arange(T + 1, dtype=float)
    f = np.cos(((x / T) + s) / (1 + s) * math.pi * 0.5) ** 2
    return f / f[0]


def build_schedule(T: int = 1000, kind: str = "cosine") -> NoiseSchedule:
    """Cosine (default) or linear beta schedule with T steps.

    The linear schedule spans [1e-4, 0.02] at T = 1000 and is rescaled by
    1000 / T for other lengths so that the final signal level stays small.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    T = int(T)
    if kind == "cosine":
        ab = cosine_alpha_bar(T)
        betas = 1.0 - ab[1:] / ab[:-1]
    elif kind == "linear":
        scale = 1000.0 / T
        betas = np.linspace(scale * 1e-4, scale * 0.02, T) if T > 1 else np.array([scale * 0.02])
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    betas = np.clip(betas, 0.0, MAX_BETA)
    beta = np.concatenate([[0.0], betas])
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar, kind=kind)


def q_sample(x0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    s.check_t(t)
    ab = s.alpha_bar[t]
    return math.sqrt(ab) * np.asarray(x0, dtype=float) + math.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


def predicted_noise(x_t, x0_hat, t: int, s: NoiseSchedule) -> np.ndarray:
    """Noise direction implied by ``x0_hat``: ``(x_t - sqrt(ab_t) x0_hat) / sqrt(1 - ab_t)``."""
    ab = s.alpha_bar[t]
    return (np.asarray(x_t, dtype=float) - math.sqrt(ab) * np.asarray(x0_hat, dtype=float)) / math.sqrt(1.0 - ab)


def ddim_sigma(t: int, t_prev: int, eta: float, s: NoiseSchedule) -> float:
    """sigma for a DDIM jump t -> t_prev; eta = 1 recovers the DDPM posterior std."""
    ab_t = s.alpha_bar[t]
    ab_p = s.alpha_bar[t_prev]
    return eta * math.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_p)


def ddim_step(x_t, x0_hat, t: int, t_prev: int, sigma: float, eps_t, s: NoiseSchedule) -> np.ndarray:
    s.check_t(t, lo=1)
    s.check_t(t_prev)
    if not t_prev < t:
        raise ValueError(f"t_prev ({t_prev}) must be smaller than t ({t})")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    ab_p = s.alpha_bar[t_prev]
    var_dir = 1.0 - ab_p - sigma**2
    if var_dir < 0:
        if var_dir > -1e-12:
            var_dir = 0.0
        else:
            raise ValueError("sigma too large")
    eps_hat = predicted_noise(x_t, x0_hat, t, s)
    out = math.sqrt(ab_p) * np.asarray(x0_hat, dtype=float) + math.sqrt(var_dir) * eps_hat
    if sigma > 0:
        out = out + sigma * np.asarray(eps_t, dtype=float)
    return out


def ddpm_step(x_t, eps_theta, t: int, sigma: float, eps_t, s: NoiseSchedule) -> np.ndarray:
    s.check_t(t, lo=1)
    a_t = s.alpha[t]
    ab_t = s.alpha_bar[t]
    out = (np.asarray(x_t, dtype=float) - ((1.0 - a_t) / math.sqrt(1.0 - ab_t)) * np.asarray(eps_theta, dtype=float))
    out = out / math.sqrt(a_t)
    if sigma:
        out = out + sigma * np.asarray(eps_t, dtype=float)
    return out


def tau_subsequence(T: int, S: int) -> np.ndarray:
    """S evenly spaced timesteps ending at T, ascending: ``tau_i = floor(i T / S)``."""
    if S < 1 or T < 1:
        raise ValueError("need S >= 1 and T >= 1")
    if S > T:
        raise ValueError(f"cannot take {S} steps out of T = {T}")
    return np.array([(i * T) // S for i in range(1, S + 1)], dtype=int)


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding, interleaved as ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]``.

    Frequencies follow ``w_k = 10000 ** (-k / (dim / 2))``.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dim must be even and positive, got {dim}")
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = float(t) * freqs
    out = np.empty(dim)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def dump_schedule_csv(s: NoiseSchedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "beta", "alpha", "alpha_bar"])
        for t in range(s.T + 1):
            w.writerow([t, repr(float(s.beta[t])), repr(float(s.alpha[t])), repr(float(s.alpha_bar[t]))])


def load_schedule_csv(path) -> NoiseSchedule:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    ts = [int(r["t"]) for r in rows]
    if ts != list(range(len(rows))):
        raise ValueError("schedule CSV must list t = 0..T in order")
    return NoiseSchedule(
        beta=np.array([float(r["beta"]) for r in rows]),
        alpha_bar=np.array([float(r["alpha_bar"]) for r in rows]),
        kind="csv",
    )
