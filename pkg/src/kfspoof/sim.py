"""Ground-truth synthesis, dual-filter replay, Monte Carlo trials, metrics.

Every operation here is a pure function of its inputs and a seed.  Noise is
drawn from a counter-based generator (Philox) through index-stable
sub-streams, so trial i produces the same numbers no matter how many trials
run around it, and covariances are applied through their symmetric
eigendecomposition square root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kalman, planner
from .model import GaussianBelief, LinearSystem, ScenarioConfig, SeparationSpec, SpoofPlan


def generator(seed: int, key: tuple[int, ...] = ()) -> np.random.Generator:
    """Counter-based stream for a seed and an optional sub-stream key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (eigendecomposition based)."""
    sym = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(sym)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sample_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return np.asarray(mean, dtype=float) + gaussian_factor(np.asarray(cov, dtype=float)) @ rng.standard_normal(len(mean))


def simulate_truth(
    system: LinearSystem,
    x0: np.ndarray,
    controls: np.ndarray,
    T: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Roll the plant forward T steps; returns (states incl. x0, measurements)."""
    x = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    states = np.empty((T + 1, system.n))
    measurements = np.empty((T, system.n))
    states[0] = x
    f_proc = gaussian_factor(system.R)
    f_meas = gaussian_factor(system.Q)
    for t in range(1, T + 1):
        x = system.F @ x + system.B @ controls[t - 1] + f_proc @ rng.standard_normal(system.n)
        states[t] = x
        measurements[t - 1] = system.H @ x + f_meas @ rng.standard_normal(system.n)
    return states, measurements


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Step-by-step record of one spoofed-vs-clean filter run."""

    means_clean: np.ndarray  # (T, n), filter fed the true measurements
    means_spoofed: np.ndarray  # (T, n), filter fed measurements plus spoofing
    sep_l1: np.ndarray
    sep_l2: np.ndarray
    epsilons: np.ndarray
    measurements: np.ndarray
    energy_l1: float
    slack: dict[int, float]  # constrained step -> achieved minus desired

    @property
    def T(self) -> int:
        return self.means_clean.shape[0]

    def separation(self, t: int, p: int) -> float:
        return float(self.sep_l1[t - 1] if p == 1 else self.sep_l2[t - 1])


def run_dual_filters(
    system: LinearSystem,
    plan: SpoofPlan | np.ndarray,
    measurements: np.ndarray,
    init_obs: GaussianBelief,
    init_att: GaussianBelief,
    controls: np.ndarray,
    spec: SeparationSpec | None = None,
) -> TrialResult:
    """Replay one measurement realisation through both filters.

    The clean filter consumes z_t from ``init_obs``; the spoofed one
    consumes z_t + eps_t from ``init_att``.  ``spec`` is only used to fill
    in the per-constraint slack entries.
    """
    eps = plan.epsilons if isinstance(plan, SpoofPlan) else np.asarray(plan, dtype=float)
    measurements = np.asarray(measurements, dtype=float)
    controls = np.asarray(controls, dtype=float)
    T = eps.shape[0]
    if measurements.shape[0] < T:
        raise ValueError(f"{measurements.shape[0]} measurements for a {T}-step plan")
    clean, spoofed = init_obs, init_att
    means_clean = np.empty((T, system.n))
    means_spoofed = np.empty((T, system.n))
    sep_l1 = np.empty(T)
    sep_l2 = np.empty(T)
    for t in range(1, T + 1):
        u = controls[t - 1]
        z = measurements[t - 1]
        clean = kalman.filter_step(clean, system, u, z)
        spoofed = kalman.filter_step(spoofed, system, u, z + eps[t - 1])
        means_clean[t - 1] = clean.mean
        means_spoofed[t - 1] = spoofed.mean
        gap = clean.mean - spoofed.mean
        sep_l1[t - 1] = np.abs(gap).sum()
        sep_l2[t - 1] = np.linalg.norm(gap)
    slack = {}
    if spec is not None:
        for t, d in spec.constraints.items():
            if t <= T:
                achieved = sep_l1[t - 1] if spec.p == 1 else sep_l2[t - 1]
                slack[t] = float(achieved - d)
    return TrialResult(
        means_clean=means_clean,
        means_spoofed=means_spoofed,
        sep_l1=sep_l1,
        sep_l2=sep_l2,
        epsilons=eps.copy(),
        measurements=measurements[:T].copy(),
        energy_l1=float(np.abs(eps).sum()),
        slack=slack,
    )


def _draw_initial(config: ScenarioConfig, rng: np.random.Generator) -> tuple[GaussianBelief, np.ndarray]:
    """Per-trial observer init and true initial state.

    The observer mean is resampled when the scenario declares a sampling
    distribution for it; the true state is drawn from the observer's prior
    so the clean filter starts calibrated.
    """
    if config.m0_distribution is not None:
        m0 = sample_gaussian(rng, config.m0_distribution.mean, config.m0_distribution.cov)
    else:
        m0 = config.init_observer.mean.copy()
    x0 = sample_gaussian(rng, m0, config.init_observer.cov)
    return GaussianBelief(m0, config.init_observer.cov), x0


def run_trial(
    config: ScenarioConfig,
    plan: SpoofPlan | np.ndarray | None,
    rng: np.random.Generator,
) -> TrialResult:
    """One seeded trial: draw a realisation, then replay or run online."""
    T = config.spec.T
    controls = config.controls_matrix(T)
    init_obs, x0 = _draw_initial(config, rng)
    _, measurements = simulate_truth(config.system, x0, controls, T, rng)
    if plan is None and config.mode == "online":
        return run_online_trial(config, measurements, init_obs)
    if plan is None:
        plan = planner.plan_offline(config)
    return run_dual_filters(
        config.system, plan, measurements, init_obs, config.init_attacker, controls, config.spec
    )


def run_online_trial(
    config: ScenarioConfig,
    measurements: np.ndarray,
    init_obs_realized: GaussianBelief,
) -> TrialResult:
    """Receding-horizon run against one measurement realisation.

    The attacker replicates the spoofed filter exactly (it knows its own
    initial belief and the corrupted measurements) and tracks the clean
    filter with a shadow filter seeded at the expected observer mean; the
    difference of the two is the gap estimate handed to the planner.
    """
    system = config.system
    T = config.spec.T
    controls = config.controls_matrix(T)
    clean = init_obs_realized
    spoofed = config.init_attacker
    guess_cov = config.sigma0_guess if config.sigma0_guess is not None else config.init_observer.cov
    shadow = GaussianBelief(config.init_attacker.mean + config.M0, guess_cov)

    means_clean = np.empty((T, system.n))
    means_spoofed = np.empty((T, system.n))
    sep_l1 = np.empty(T)
    sep_l2 = np.empty(T)
    eps_all = np.zeros((T, system.n))
    for t in range(1, T + 1):
        delta = shadow.mean - spoofed.mean
        eps = planner.plan_online(config, measurements[:t], delta)
        eps_all[t - 1] = eps
        u = controls[t - 1]
        z = measurements[t - 1]
        clean = kalman.filter_step(clean, system, u, z)
        spoofed = kalman.filter_step(spoofed, system, u, z + eps)
        shadow = kalman.filter_step(shadow, system, u, z)
        means_clean[t - 1] = clean.mean
        means_spoofed[t - 1] = spoofed.mean
        gap = clean.mean - spoofed.mean
        sep_l1[t - 1] = np.abs(gap).sum()
        sep_l2[t - 1] = np.linalg.norm(gap)
    spec = config.spec
    slack = {
        t: float((sep_l1[t - 1] if spec.p == 1 else sep_l2[t - 1]) - d)
        for t, d in spec.constraints.items()
    }
    return TrialResult(
        means_clean=means_clean,
        means_spoofed=means_spoofed,
        sep_l1=sep_l1,
        sep_l2=sep_l2,
        epsilons=eps_all,
        measurements=np.asarray(measurements[:T], dtype=float).copy(),
        energy_l1=float(np.abs(eps_all).sum()),
        slack=slack,
    )


@dataclass(frozen=True, eq=False)
class MonteCarloSummary:
    """Per-constraint achieved-separation statistics over seeded trials."""

    stats: dict[int, dict[str, float]]  # step -> mean / std / min / max
    per_trial: dict[int, np.ndarray]  # step -> (trials,) achieved separations
    trials: int
    seed: int


def monte_carlo(
    config: ScenarioConfig,
    plan_or_policy: SpoofPlan | np.ndarray | None = None,
    trials: int | None = None,
    seed: int | None = None,
) -> MonteCarloSummary:
    """Independent seeded trials of one scenario.

    Pass a plan to replay it on every realisation; pass None to plan
    offline automatically, or to run the receding-horizon policy when the
    scenario mode is online.  Trial i always sees the same realisation for
    a given master seed, regardless of the total trial count.
    """
    trials = config.trials if trials is None else trials
    seed = config.seed if seed is None else seed
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    plan = plan_or_policy
    if plan is None and config.mode != "online":
        plan = planner.plan_offline(config)
    steps = config.spec.steps
    collected: dict[int, list[float]] = {t: [] for t in steps}
    for i in range(trials):
        result = run_trial(config, plan, generator(seed, (i,)))
        for t in steps:
            collected[t].append(result.separation(t, config.spec.p))
    per_trial = {t: np.asarray(v) for t, v in collected.items()}
    stats = {}
    for t, values in per_trial.items():
        stats[t] = {
            "mean": float(values.mean()),
            "std": float(values.std(ddof=1)) if trials > 1 else 0.0,
            "min": float(values.min()),
            "max": float(values.max()),
        }
    return MonteCarloSummary(stats=stats, per_trial=per_trial, trials=trials, seed=seed)


class OnlineComparison(NamedTuple):
    offline: TrialResult
    online: TrialResult
    divergence: dict[int, tuple[float, float]]  # step -> (offline, online) sep_l1 - d
    energy: tuple[float, float]  # (offline, online) total injected |eps|


def compare_online_offline(config: ScenarioConfig, seed: int | None = None) -> OnlineComparison:
    """Offline plan vs receding-horizon policy on one shared realisation."""
    seed = config.seed if seed is None else seed
    rng = generator(seed, (0,))
    T = config.spec.T
    controls = config.controls_matrix(T)
    init_obs, x0 = _draw_initial(config, rng)
    _, measurements = simulate_truth(config.system, x0, controls, T, rng)

    plan = planner.plan_offline(config)
    offline = run_dual_filters(
        config.system, plan, measurements, init_obs, config.init_attacker, controls, config.spec
    )
    online = run_online_trial(config, measurements, init_obs)
    divergence = {
        t: (float(offline.sep_l1[t - 1] - d), float(online.sep_l1[t - 1] - d))
        for t, d in config.spec.constraints.items()
    }
    return OnlineComparison(
        offline=offline,
        online=online,
        divergence=divergence,
        energy=(offline.energy_l1, online.energy_l1),
    )
