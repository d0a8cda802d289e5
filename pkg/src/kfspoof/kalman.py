"""Kalman filter steps and the measurement-independent gain schedule.

The filter is the standard one:

    predict:  m' = F m + B u,          S' = F S F^T + R
    update:   K  = S' H^T (H S' H^T + Q)^-1
              m'' = m' + K (z - H m'),  S'' = (I - K H) S'

Because the covariance recursion never touches controls or measurements,
the whole gain sequence K_1..K_T is a function of (F, H, R, Q, S_0) alone
and can be tabulated up front; that is what :func:`gain_schedule` does.
Posterior covariances are re-symmetrised after every update to keep
round-off from accumulating skew.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GaussianBelief, LinearSystem, frozen_array

# A symmetric solve is declared singular when the smallest eigenvalue drops
# below this fraction of the largest.
SINGULAR_PIVOT_RATIO = 1e-12


class SingularInnovationError(RuntimeError):
    """H S H^T + Q is numerically singular, the filter update is undefined."""


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def solve_spd(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve S x = rhs for symmetric positive (semi)definite S.

    Uses an eigendecomposition so the pivot check is symmetric and exact;
    raises :class:`SingularInnovationError` when S is rank deficient.
    """
    w, V = np.linalg.eigh(_sym(S))
    largest = float(w[-1])
    if largest <= 0.0 or float(w[0]) < SINGULAR_PIVOT_RATIO * largest:
        raise SingularInnovationError(
            f"innovation covariance is singular (pivots {w.min():.3e}..{largest:.3e})"
        )
    return V @ ((V.T @ rhs) / w[:, None] if rhs.ndim == 2 else (V.T @ rhs) / w)


def kalman_gain(cov_prior: np.ndarray, system: LinearSystem) -> np.ndarray:
    """K = S H^T (H S H^T + Q)^-1 for the prior covariance S."""
    S = system.H @ cov_prior @ system.H.T + system.Q
    # K = P H^T S^-1  <=>  K^T = S^-1 (P H^T)^T, S symmetric.
    return solve_spd(S, system.H @ cov_prior.T).T


def predict(belief: GaussianBelief, system: LinearSystem, u: np.ndarray) -> GaussianBelief:
    """Time update: propagate the belief through one motion step."""
    u = np.asarray(u, dtype=float)
    if u.shape != (system.n,) or belief.mean.shape != (system.n,):
        raise ValueError("dimension mismatch between belief, system and control")
    mean = system.F @ belief.mean + system.B @ u
    cov = _sym(system.F @ belief.cov @ system.F.T + system.R)
    return GaussianBelief(mean, cov)


def update(belief: GaussianBelief, system: LinearSystem, z: np.ndarray) -> GaussianBelief:
    """Measurement update of a predicted belief with observation z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (system.n,) or belief.mean.shape != (system.n,):
        raise ValueError("dimension mismatch between belief, system and measurement")
    K = kalman_gain(belief.cov, system)
    mean = belief.mean + K @ (z - system.H @ belief.mean)
    cov = _sym((np.eye(system.n) - K @ system.H) @ belief.cov)
    return GaussianBelief(mean, cov)


def filter_step(
    belief: GaussianBelief, system: LinearSystem, u: np.ndarray, z: np.ndarray
) -> GaussianBelief:
    """One full predict-then-update cycle."""
    return update(predict(belief, system, u), system, z)


@dataclass(frozen=True)
class GainSchedule:
    """Gains and covariances for steps 1..T, precomputed from S_0 alone.

    ``gains[t-1]`` is K_t, ``covs_prior[t-1]`` the pre-update covariance at
    step t and ``covs_post[t-1]`` the post-update one.
    """

    gains: tuple[np.ndarray, ...]
    covs_post: tuple[np.ndarray, ...]
    covs_prior: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.gains)

    def gain(self, t: int) -> np.ndarray:
        return self.gains[t - 1]

    def window(self, start: int, end: int) -> "GainSchedule":
        """Sub-schedule covering absolute steps start..end inclusive."""
        if not 1 <= start <= end <= len(self):
            raise ValueError(f"window {start}..{end} outside schedule of length {len(self)}")
        sl = slice(start - 1, end)
        return GainSchedule(self.gains[sl], self.covs_post[sl], self.covs_prior[sl])


def gain_schedule(sigma0, system: LinearSystem, T: int) -> GainSchedule:
    """Iterate the covariance recursion T steps starting from sigma0."""
    if T < 1:
        raise ValueError(f"schedule length must be >= 1, got {T}")
    cov = np.array(sigma0, dtype=float)
    if cov.shape != (system.n, system.n):
        raise ValueError(f"sigma0 has shape {cov.shape}, expected ({system.n}, {system.n})")
    gains, priors, posts = [], [], []
    eye = np.eye(system.n)
    for _ in range(T):
        cov_prior = _sym(system.F @ cov @ system.F.T + system.R)
        K = kalman_gain(cov_prior, system)
        cov = _sym((eye - K @ system.H) @ cov_prior)
        gains.append(frozen_array(K, ndim=2))
        priors.append(frozen_array(cov_prior, ndim=2))
        posts.append(frozen_array(cov, ndim=2))
    return GainSchedule(tuple(gains), tuple(posts), tuple(priors))
