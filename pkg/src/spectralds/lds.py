"""Diagonal (symmetric) linear dynamical systems: stepping, simulation,
impulse responses, and the geometric filter mu_L(alpha).

The system is x_t = diag(alpha) x_{t-1} + B u_t, y_t = C x_t with the feed-
through fixed to zero and x_0 = 0.  Hidden state may carry a trailing batch
axis, in which case inputs broadcast per batch column.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .streams import stream


@dataclass(frozen=True)
class DiagonalLds:
    """Marginally stable diagonal LDS: |alpha[i]| <= 1, B (h x n), C (m x h)."""

    alpha: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if c.ndim == 1:
            c = c[None, :]
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        h = alpha.shape[0]
        if b.shape[0] != h or c.shape[1] != h:
            raise DimensionError(
                f"inconsistent dims: alpha has h={h}, B is {b.shape}, C is {c.shape}")
        if np.any(np.abs(alpha) > 1.0):
            raise ValueError("|alpha| <= 1 required (marginal stability bound)")

    @property
    def h(self):
        return self.alpha.shape[0]

    @property
    def n(self):
        return self.b.shape[1]

    @property
    def m(self):
        return self.c.shape[0]


@dataclass
class LdsState:
    """Hidden state x of shape (h, batch); zero-initialised unless provided."""

    x: np.ndarray

    @classmethod
    def zeros(cls, lds: DiagonalLds, batch: int = 1):
        return cls(x=np.zeros((lds.h, batch)))


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded Gaussian noise: state noise after each transition, output noise
    on each y_t."""

    state_var: float = 0.5
    output_var: float = 5.0
    seed: int = 0


NOISY_PRESET = NoiseSpec(state_var=0.5, output_var=5.0)


def step(lds: DiagonalLds, state: LdsState, u_t):
    """One transition: returns (new state, output), each with the batch axis.

    Cost is O(h (n + m) batch) regardless of how many steps preceded.
    """
    u_t = np.asarray(u_t, dtype=float)
    if u_t.ndim == 1:
        u_t = u_t[:, None]
    if u_t.shape[0] != lds.n:
        raise DimensionError(f"input has {u_t.shape[0]} channels, expected {lds.n}")
    if state.x.shape[0] != lds.h:
        raise DimensionError("state dimension does not match the system")
    x_new = lds.alpha[:, None] * state.x + lds.b @ u_t
    return LdsState(x=x_new), lds.c @ x_new


def simulate(lds: DiagonalLds, u, noise: Optional[NoiseSpec] = None) -> np.ndarray:
    """Run the recurrence from zero state over u of shape (T, n) or (T, n, B).

    With a NoiseSpec, i.i.d. Gaussian state noise (variance state_var) is
    added after each transition and output noise (variance output_var) to each
    y_t, all driven by the spec's seed.
    """
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 2
    if squeeze:
        u = u[:, :, None]
    T, n, batch = u.shape
    if n != lds.n:
        raise DimensionError(f"input has {n} channels, expected {lds.n}")
    rng = stream(noise.seed, "lds-noise") if noise is not None else None
    s_std = np.sqrt(noise.state_var) if noise is not None else 0.0
    o_std = np.sqrt(noise.output_var) if noise is not None else 0.0
    x = np.zeros((lds.h, batch))
    y = np.empty((T, lds.m, batch))
    alpha = lds.alpha[:, None]
    for t in range(T):
        x = alpha * x + lds.b @ u[t]
        if rng is not None and s_std > 0:
            x = x + s_std * rng.standard_normal(x.shape)
        y_t = lds.c @ x
        if rng is not None and o_std > 0:
            y_t = y_t + o_std * rng.standard_normal(y_t.shape)
        y[t] = y_t
    return y[:, :, 0] if squeeze else y


def impulse_response(lds: DiagonalLds, L: int) -> np.ndarray:
    """Kernel psi with psi[:, :, t] = C diag(alpha)^t B, shape (m, n, L)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    pows = np.power(lds.alpha[:, None], np.arange(L)[None, :])  # (h, L)
    return np.einsum("mh,hl,hn->mnl", lds.c, pows, lds.b)


def mu_filter(alpha: float, L: int) -> np.ndarray:
    """Geometric impulse filter (1 - alpha) * [1, alpha, ..., alpha^(L-1)].

    Equals the impulse response of the scalar system (c, a, b) =
    (1 - alpha, alpha, 1).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return geometric_filters(np.array([alpha]), L)[0]


def geometric_filters(alphas, L: int) -> np.ndarray:
    """Rows (1 - a_i) * a_i^(t-1) for t = 1..L; accepts any a in [-1, 1]."""
    alphas = np.asarray(alphas, dtype=float)
    return (1.0 - alphas)[:, None] * np.power(alphas[:, None], np.arange(L)[None, :])
