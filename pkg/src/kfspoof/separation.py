"""Closed-form evolution of the gap between spoofed and clean estimates.

Running two filters on the same measurement stream, one fed z_t and one fed
z_t + eps_t, the difference of their means obeys a linear recursion

    gap_t = A_t gap_{t-1} + b_t - Ktil_t eps_t,
    A_t   = (I - Ktil_t H) F,
    b_t   = (K_t - Ktil_t) (z_t - H (F m_{t-1} + B u_t)),

where K_t are the clean filter's gains, Ktil_t the spoofed filter's, and
m_{t-1} the clean filter's mean.  Unrolling the recursion expresses gap_t
as a linear function of the initial gap, the innovation-mismatch terms b_i
and the spoofing inputs; this module tabulates the matrices of that linear
function so the planners can treat the gap as a plain matrix product.

When both filters start from the same belief the two gain sequences agree,
every b_t vanishes, and the gap is a deterministic function of the spoofing
inputs alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kalman import GainSchedule
from .model import GaussianBelief, LinearSystem, frozen_array


@dataclass(frozen=True)
class SeparationTerms:
    """Linear-map tables for the estimate gap over steps 1..T.

    step_mats[t-1]        A_t, the one-step gap propagator.
    init_propagators[t-1] P_t = A_t A_{t-1} ... A_1, applied to the initial gap.
    influence[(t, i)]     matrix multiplying eps_i inside gap_t (i <= t); the
                          minus sign of the gain is folded in, so the diagonal
                          entry influence[(t, t)] equals -Ktil_t.
    range_products[(t, i)] A_t ... A_{i+1}, the transport applied to the
                          innovation-mismatch term b_i (identity when i = t).
    gain_diffs[t-1]       K_t - Ktil_t, used to assemble the b_i series.
    """

    step_mats: tuple[np.ndarray, ...]
    init_propagators: tuple[np.ndarray, ...]
    influence: dict[tuple[int, int], np.ndarray]
    range_products: dict[tuple[int, int], np.ndarray]
    gain_diffs: tuple[np.ndarray, ...]
    n: int
    T: int

    def influence_at(self, t: int, i: int) -> np.ndarray:
        """Matrix mapping eps_i to its contribution to gap_t (zero if i > t)."""
        if i > t:
            return np.zeros((self.n, self.n))
        return self.influence[(t, i)]


def separation_terms(
    schedule_obs: GainSchedule,
    schedule_att: GainSchedule,
    system: LinearSystem,
    T: int,
) -> SeparationTerms:
    """Tabulate the gap's linear structure for steps 1..T.

    ``schedule_att`` provides the spoofed filter's gains, which drive the
    propagators and influence matrices; ``schedule_obs`` only enters through
    the stored gain differences.  The two schedules coincide in the
    known-init setting.
    """
    if len(schedule_att) < T or len(schedule_obs) < T:
        raise ValueError(f"schedules must cover {T} steps")
    n = system.n
    eye = np.eye(n)
    step_mats: list[np.ndarray] = []
    init_props: list[np.ndarray] = []
    influence: dict[tuple[int, int], np.ndarray] = {}
    range_products: dict[tuple[int, int], np.ndarray] = {}
    gain_diffs: list[np.ndarray] = []

    prop = eye
    for t in range(1, T + 1):
        Ktil = schedule_att.gain(t)
        A_t = (eye - Ktil @ system.H) @ system.F
        step_mats.append(frozen_array(A_t, ndim=2))
        prop = A_t @ prop
        init_props.append(frozen_array(prop, ndim=2))
        gain_diffs.append(frozen_array(schedule_obs.gain(t) - Ktil, ndim=2))

        # Extend every earlier step's transport by A_t, then add step t itself.
        for i in range(1, t):
            range_products[(t, i)] = frozen_array(A_t @ range_products[(t - 1, i)], ndim=2)
            influence[(t, i)] = frozen_array(A_t @ influence[(t - 1, i)], ndim=2)
        range_products[(t, t)] = frozen_array(eye, ndim=2)
        influence[(t, t)] = frozen_array(-Ktil, ndim=2)

    return SeparationTerms(
        step_mats=tuple(step_mats),
        init_propagators=tuple(init_props),
        influence=influence,
        range_products=range_products,
        gain_diffs=tuple(gain_diffs),
        n=n,
        T=T,
    )


def _stack(vectors, n: int, upto: int) -> np.ndarray:
    arr = np.zeros((upto, n))
    if vectors is not None:
        given = np.asarray(vectors, dtype=float)
        take = min(upto, given.shape[0])
        arr[:take] = given[:take]
    return arr


def exact_separation(
    terms: SeparationTerms,
    init_diff: np.ndarray,
    b_seq: Sequence[np.ndarray] | None,
    epsilons: Sequence[np.ndarray] | None,
    t: int,
) -> np.ndarray:
    """Gap at step t given the initial gap, mismatch terms and spoof inputs.

    ``b_seq`` holds the innovation-mismatch vectors b_1..b_t (pass None when
    both filters share their initial belief, in which case they are all
    zero).  The result matches the difference of two simulated filters to
    round-off, which is what the test-suite oracle checks.
    """
    if not 1 <= t <= terms.T:
        raise ValueError(f"step {t} outside 1..{terms.T}")
    init_diff = np.asarray(init_diff, dtype=float)
    if init_diff.shape != (terms.n,):
        raise ValueError(f"init_diff has shape {init_diff.shape}, expected ({terms.n},)")
    out = terms.init_propagators[t - 1] @ init_diff
    eps = _stack(epsilons, terms.n, t)
    bs = _stack(b_seq, terms.n, t)
    for i in range(1, t + 1):
        out = out + terms.range_products[(t, i)] @ bs[i - 1]
        out = out + terms.influence[(t, i)] @ eps[i - 1]
    return out


def expected_separation(
    terms: SeparationTerms,
    M0: np.ndarray,
    epsilons: Sequence[np.ndarray] | None,
) -> list[np.ndarray]:
    """Expected gap at every step 1..T for an expected initial gap of M0.

    The innovation-mismatch terms have zero mean, so only the propagated
    initial gap and the spoofing contributions survive the expectation.
    """
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (terms.n,):
        raise ValueError(f"M0 has shape {M0.shape}, expected ({terms.n},)")
    eps = _stack(epsilons, terms.n, terms.T)
    out: list[np.ndarray] = []
    running: list[np.ndarray] = []
    for t in range(1, terms.T + 1):
        A_t = terms.step_mats[t - 1]
        running = [A_t @ v for v in running]
        running.append(terms.influence[(t, t)] @ eps[t - 1])
        total = terms.init_propagators[t - 1] @ M0
        for v in running:
            total = total + v
        out.append(total)
    return out


def innovation_mismatch_terms(
    system: LinearSystem,
    terms: SeparationTerms,
    measurements: Sequence[np.ndarray],
    controls: Sequence[np.ndarray],
    init_observer: GaussianBelief,
) -> list[np.ndarray]:
    """b_t series for a concrete measurement realisation.

    Replays the clean filter mean with the tabulated observer gains (the
    attacker-side gains enter only through the stored gain differences) and
    scales each innovation by K_t - Ktil_t.
    """
    measurements = np.asarray(measurements, dtype=float)
    controls = np.asarray(controls, dtype=float)
    T = min(terms.T, measurements.shape[0])
    m = init_observer.mean.copy()
    out: list[np.ndarray] = []
    for t in range(1, T + 1):
        m_prior = system.F @ m + system.B @ controls[t - 1]
        gap = measurements[t - 1] - system.H @ m_prior
        out.append(terms.gain_diffs[t - 1] @ gap)
        # Observer gain K_t = gain_diffs + (-influence[(t, t)]).
        K_t = terms.gain_diffs[t - 1] - terms.influence[(t, t)]
        m = m_prior + K_t @ gap
    return out
