"""Core value types shared by every module, plus scenario validation.

Conventions used throughout the package:

* the state lives in R^n and all system matrices are n x n,
* steps are integers t = 1..T; step 0 is the initial belief,
* ``R`` is the process-noise covariance and ``Q`` the measurement-noise
  covariance (swapped relative to a common textbook convention, kept
  consistent everywhere here),
* all types below are immutable value objects; their arrays are marked
  read-only so they can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

# Eigenvalue floor used when deciding whether a covariance is PSD.
PSD_EIG_FLOOR = -1e-10

VALID_MODES = ("known-init", "unknown-init", "online")


def frozen_array(value, ndim: int | None = None) -> np.ndarray:
    """Copy ``value`` into a read-only float array."""
    arr = np.array(value, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def is_symmetric_psd(mat: np.ndarray, eig_floor: float = PSD_EIG_FLOOR) -> bool:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        return False
    if not np.allclose(mat, mat.T, atol=1e-10, rtol=0.0):
        return False
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    return bool(eigs.min(initial=0.0) >= eig_floor)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete-time linear plant x' = F x + B u + w observed as z = H x + v.

    ``w ~ N(0, R)`` drives the motion and ``v ~ N(0, Q)`` the measurement.
    """

    F: np.ndarray
    B: np.ndarray
    H: np.ndarray
    R: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        for name in ("F", "B", "H", "R", "Q"):
            object.__setattr__(self, name, frozen_array(getattr(self, name), ndim=2))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearSystem):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("F", "B", "H", "R", "Q")
        )


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean and covariance of a Gaussian state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", frozen_array(self.mean, ndim=1))
        object.__setattr__(self, "cov", frozen_array(self.cov, ndim=2))

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianBelief):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)


@dataclass(frozen=True, eq=False)
class SeparationSpec:
    """Required estimate separations d_t > 0 at selected steps of a horizon.

    ``constraints`` maps a step t (1-based) to the separation that must be
    reached at that step, measured in the ``p`` norm (1 or 2).  ``gamma``
    weighs the per-step signal cost and may be a scalar applied to every
    step or a map from step to weight; unspecified steps default to 1.
    """

    constraints: Mapping[int, float]
    T: int
    p: int = 1
    gamma: Mapping[int, float] | float = 1.0

    def __post_init__(self):
        ordered = {int(t): float(d) for t, d in sorted(dict(self.constraints).items())}
        object.__setattr__(self, "constraints", ordered)
        if not isinstance(self.gamma, (int, float)):
            object.__setattr__(self, "gamma", {int(t): float(g) for t, g in dict(self.gamma).items()})
        else:
            object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(self.constraints)

    @property
    def k(self) -> int:
        return len(self.constraints)

    def gamma_at(self, t: int) -> float:
        if isinstance(self.gamma, dict):
            return self.gamma.get(t, 1.0)
        return self.gamma

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeparationSpec):
            return NotImplemented
        return (
            self.constraints == other.constraints
            and self.T == other.T
            and self.p == other.p
            and self.gamma == other.gamma
        )


@dataclass(frozen=True, eq=False)
class SpoofPlan:
    """A planned spoofing sequence eps_1..eps_T with its reported cost.

    ``objective`` is sum_t gamma_t * ||eps_t||_p^p for the norm the plan was
    built for.  ``branches_solved`` counts the LP instances the planner ran.
    """

    epsilons: np.ndarray
    objective: float
    status: str  # "optimal" | "suboptimal-fallback" | "infeasible"
    branches_solved: int = 1

    def __post_init__(self):
        object.__setattr__(self, "epsilons", frozen_array(self.epsilons, ndim=2))

    @property
    def T(self) -> int:
        return self.epsilons.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpoofPlan):
            return NotImplemented
        return (
            np.array_equal(self.epsilons, other.epsilons)
            and self.objective == other.objective
            and self.status == other.status
            and self.branches_solved == other.branches_solved
        )


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything needed to plan and simulate one spoofing scenario.

    ``controls`` is either a single n-vector (broadcast to every step) or a
    full (L, n) sequence with L >= spec.T.  ``M0`` is the expected initial
    estimate gap E(m_0 - m~_0) used by the unknown-init and online modes.
    ``m0_distribution``, when given, is the sampling distribution for the
    observer's initial mean in Monte Carlo trials.  ``sigma0_guess`` is the
    covariance the online attacker assumes when tracking the clean filter;
    it defaults to the observer's initial covariance.
    """

    system: LinearSystem
    controls: np.ndarray
    init_observer: GaussianBelief
    init_attacker: GaussianBelief
    M0: np.ndarray
    spec: SeparationSpec
    mode: str = "known-init"
    horizon_online: int = 0
    trials: int = 1
    seed: int = 0
    m0_distribution: GaussianBelief | None = None
    sigma0_guess: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "controls", frozen_array(self.controls))
        object.__setattr__(self, "M0", frozen_array(self.M0, ndim=1))
        if self.sigma0_guess is not None:
            object.__setattr__(self, "sigma0_guess", frozen_array(self.sigma0_guess, ndim=2))

    def control(self, t: int) -> np.ndarray:
        """Control applied during the transition into step t (t = 1-based)."""
        if self.controls.ndim == 1:
            return self.controls
        return self.controls[t - 1]

    def controls_matrix(self, T: int) -> np.ndarray:
        if self.controls.ndim == 1:
            return np.tile(self.controls, (T, 1))
        return np.asarray(self.controls[:T])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        same_guess = (
            (self.sigma0_guess is None and other.sigma0_guess is None)
            or (
                self.sigma0_guess is not None
                and other.sigma0_guess is not None
                and np.array_equal(self.sigma0_guess, other.sigma0_guess)
            )
        )
        return (
            self.system == other.system
            and np.array_equal(self.controls, other.controls)
            and self.init_observer == other.init_observer
            and self.init_attacker == other.init_attacker
            and np.array_equal(self.M0, other.M0)
            and self.spec == other.spec
            and self.mode == other.mode
            and self.horizon_online == other.horizon_online
            and self.trials == other.trials
            and self.seed == other.seed
            and self.m0_distribution == other.m0_distribution
            and same_guess
        )


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`; an empty violation list means valid."""

    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_matrix(out: list[str], name: str, mat: np.ndarray, n: int) -> None:
    if mat.shape != (n, n):
        out.append(f"{name} has shape {mat.shape}, expected ({n}, {n})")


def validate(config: ScenarioConfig) -> ValidationReport:
    """Collect every violation in ``config``; side-effect free and idempotent.

    A config with an empty report is accepted by every planner and
    simulation entry point without raising.
    """
    out: list[str] = []
    sys_ = config.system
    F = sys_.F
    if F.ndim != 2 or F.shape[0] != F.shape[1] or F.shape[0] < 1:
        out.append(f"F must be square and non-empty, got shape {F.shape}")
        return ValidationReport(tuple(out))
    n = sys_.n

    for name in ("B", "H"):
        _check_matrix(out, name, getattr(sys_, name), n)
    for name in ("R", "Q"):
        mat = getattr(sys_, name)
        _check_matrix(out, name, mat, n)
        if mat.shape == (n, n) and not is_symmetric_psd(mat):
            out.append(f"{name} not symmetric PSD")

    for label, belief in (("observer init", config.init_observer), ("attacker init", config.init_attacker)):
        if belief.mean.shape != (n,):
            out.append(f"{label} mean has shape {belief.mean.shape}, expected ({n},)")
        if belief.cov.shape != (n, n):
            out.append(f"{label} covariance has shape {belief.cov.shape}, expected ({n}, {n})")
        elif not is_symmetric_psd(belief.cov):
            out.append(f"{label} covariance not symmetric PSD")

    if config.M0.shape != (n,):
        out.append(f"M0 has shape {config.M0.shape}, expected ({n},)")

    spec = config.spec
    if spec.T < 1:
        out.append(f"horizon T must be >= 1, got {spec.T}")
    if spec.p not in (1, 2):
        out.append(f"norm selector p must be 1 or 2, got {spec.p}")
    for t, d in spec.constraints.items():
        if not 1 <= t <= spec.T:
            out.append(f"constrained step {t} outside 1..{spec.T}")
        if d <= 0:
            out.append(f"non-positive separation d_{t} = {d}")
    if isinstance(spec.gamma, dict):
        for t, g in spec.gamma.items():
            if g <= 0:
                out.append(f"non-positive weight gamma_{t} = {g}")
    elif spec.gamma <= 0:
        out.append(f"non-positive weight gamma = {spec.gamma}")

    if config.controls.ndim == 1:
        if config.controls.shape != (n,):
            out.append(f"control vector has shape {config.controls.shape}, expected ({n},)")
    elif config.controls.ndim == 2:
        if config.controls.shape[1] != n:
            out.append(f"control rows have width {config.controls.shape[1]}, expected {n}")
        if config.controls.shape[0] < spec.T:
            out.append(f"control sequence has {config.controls.shape[0]} rows, need >= T = {spec.T}")
    else:
        out.append("controls must be an n-vector or an (L, n) sequence")

    if config.mode not in VALID_MODES:
        out.append(f"unknown mode {config.mode!r}")
    if config.mode == "online" and config.horizon_online < 1:
        out.append(f"online mode needs horizon_online >= 1, got {config.horizon_online}")
    if config.trials < 1:
        out.append(f"trials must be >= 1, got {config.trials}")

    if config.mode == "known-init":
        if config.init_attacker != config.init_observer:
            out.append("known-init mode requires identical observer and attacker initial beliefs")
        if config.M0.shape == (n,) and not np.allclose(config.M0, 0.0, atol=1e-9):
            out.append("known-init mode requires M0 = 0")
    elif config.M0.shape == (n,) and config.init_attacker.mean.shape == (n,):
        expected_mean = (
            config.m0_distribution.mean
            if config.m0_distribution is not None and config.m0_distribution.mean.shape == (n,)
            else config.init_observer.mean
            if config.init_observer.mean.shape == (n,)
            else None
        )
        if expected_mean is not None and not np.allclose(
            config.M0, expected_mean - config.init_attacker.mean, atol=1e-9
        ):
            out.append("M0 inconsistent with the expected observer mean minus the attacker mean")

    if config.m0_distribution is not None:
        dist = config.m0_distribution
        if dist.mean.shape != (n,) or dist.cov.shape != (n, n):
            out.append("m0_distribution dimensions do not match the system")
        elif not is_symmetric_psd(dist.cov):
            out.append("m0_distribution covariance not symmetric PSD")
    if config.sigma0_guess is not None:
        if config.sigma0_guess.shape != (n, n):
            out.append(f"sigma0_guess has shape {config.sigma0_guess.shape}, expected ({n}, {n})")
        elif not is_symmetric_psd(config.sigma0_guess):
            out.append("sigma0_guess not symmetric PSD")

    # A structurally sound config can still drive the filter covariance into a
    # singular innovation (for example Q = 0 collapses it after one update).
    # Dry-run the gain recursions so acceptance here guarantees the planners
    # and simulators will not raise.
    if not out:
        from . import kalman  # local import, avoids a module cycle

        horizon = spec.T + (config.horizon_online if config.mode == "online" else 0)
        for label, cov in (("observer", config.init_observer.cov), ("attacker", config.init_attacker.cov)):
            try:
                kalman.gain_schedule(cov, sys_, horizon)
            except kalman.SingularInnovationError as exc:
                out.append(f"{label} gain recursion fails: {exc}")
        if config.mode == "online" and config.sigma0_guess is not None:
            try:
                kalman.gain_schedule(config.sigma0_guess, sys_, horizon)
            except kalman.SingularInnovationError as exc:
                out.append(f"sigma0_guess gain recursion fails: {exc}")

    return ValidationReport(tuple(out))
