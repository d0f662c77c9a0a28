"""Bus engine replacement model with ambiguous mileage transitions.

Mileage lives on a grid of equal-width odometer bins. Each month a bus
either gets maintenance (cost growing with mileage) or an engine
replacement (fixed cost, mileage resets), with iid mean-zero unit-scale
extreme-value taste shocks on both options. Monthly mileage jumps are
estimated from fleet data by maximum likelihood; a KL ambiguity ball
around that estimate, calibrated per state from an observation count,
drives the robust fixed point and the logit choice probabilities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .ambiguity import AmbiguitySet, _worst_case_batch, calibrate_radius
from .robust_dp import MdpSpec, TransitionSet
from .simplex import Distribution


class OdometerDataError(ValueError):
    """Fleet data violates the monthly odometer conventions."""


@dataclass(frozen=True)
class ZurcherConfig:
    """Model primitives and ambiguity settings for one instance."""

    n_states: int = 78
    bin_width: float = 5_000.0
    replacement_cost: float = 50.0
    maintenance_slope: float = 0.4
    discount: float = 0.9999
    max_jump: int = 3
    confidence: float = 0.0
    pooled_n_obs: int = 55

    def __post_init__(self):
        if self.max_jump < 1:
            raise ValueError("max_jump must be >= 1")
        if self.n_states < self.max_jump + 1:
            raise ValueError("n_states must exceed max_jump")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.replacement_cost < 0 or self.maintenance_slope < 0:
            raise ValueError("costs must be non-negative")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.pooled_n_obs < 1:
            raise ValueError("pooled_n_obs must be >= 1")

    @property
    def maintenance_cost(self) -> np.ndarray:
        return self.maintenance_slope * np.arange(self.n_states, dtype=float)


@dataclass(frozen=True, eq=False)
class TransitionEstimate:
    """Pooled maximum-likelihood estimate of the monthly jump law."""

    counts: np.ndarray
    jump_probs: Distribution

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=int)
        if counts.ndim != 1 or counts.sum() < 1:
            raise ValueError("counts must be a 1-D array with at least one draw")
        if not np.array_equal(
            self.jump_probs.probs, counts / counts.sum()
        ):
            raise ValueError("jump_probs must equal counts / n_obs exactly")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_counts(cls, counts) -> "TransitionEstimate":
        counts = np.asarray(counts, dtype=int)
        return cls(counts=counts, jump_probs=Distribution(counts / counts.sum()))

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class EvFunction:
    """Fixed point of the robust log-sum-exp operator on mileage states."""

    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ChoiceProbabilities:
    """Logit probability of maintaining at each mileage state.

    maintain_prob is clipped away from exact 0 and 1 at machine
    resolution; log_odds keeps the unclipped value difference between
    maintaining and replacing.
    """

    maintain_prob: np.ndarray
    log_odds: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.maintain_prob, dtype=float)
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("maintain probabilities must lie strictly in (0, 1)")
        p.setflags(write=False)
        object.__setattr__(self, "maintain_prob", p)


@dataclass(frozen=True, eq=False)
class EvSolution:
    """Converged fixed point plus the per-state worst-case transitions."""

    ev: EvFunction
    supports: tuple[np.ndarray, ...]
    worst_case: tuple[Distribution, ...]
    continuation: np.ndarray
    omega: float
    radii: np.ndarray
    iterations: int
    residual: float
    converged: bool
    error_bound: float


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------


def ingest_odometer_data(rows, config: ZurcherConfig) -> TransitionEstimate:
    """Pool monthly mileage jumps from odometer readings into an MLE.

    rows are (bus_id, month, odometer, replaced) tuples, sorted by month
    within each bus with consecutive months. The jump of month t is the
    bin of month t+1 minus the bin of month t, except that a replacement
    in month t resets the baseline to bin zero.
    """
    counts = np.zeros(config.max_jump + 1, dtype=int)
    by_bus: dict = {}
    for row in rows:
        bus, month, odometer, replaced = row
        by_bus.setdefault(bus, []).append((int(month), float(odometer), int(replaced)))

    def to_bin(odometer: float) -> int:
        return min(int(odometer // config.bin_width), config.n_states - 1)

    for bus, entries in by_bus.items():
        months = [m for m, _, _ in entries]
        if any(b - a != 1 for a, b in zip(months, months[1:])):
            raise OdometerDataError(
                f"bus {bus!r}: months must be consecutive, got {months}"
            )
        for (month, odo, replaced), (_, odo_next, _) in zip(entries, entries[1:]):
            base = 0 if replaced else to_bin(odo)
            jump = to_bin(odo_next) - base
            if jump < 0:
                raise OdometerDataError(
                    f"bus {bus!r} month {month}: odometer fell from {odo} to "
                    f"{odo_next} without a replacement flag"
                )
            if jump > config.max_jump:
                raise OdometerDataError(
                    f"bus {bus!r} month {month}: jump of {jump} bins exceeds "
                    f"the maximum of {config.max_jump}"
                )
            counts[jump] += 1
    if counts.sum() == 0:
        raise OdometerDataError("no monthly transitions in the data")
    return TransitionEstimate.from_counts(counts)


def read_odometer_csv(path, config: ZurcherConfig) -> TransitionEstimate:
    """Ingest a bus_id,month,odometer,replace CSV file."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "bus_id",
            "month",
            "odometer",
            "replace",
        ]:
            raise OdometerDataError(
                f"{path}: expected header bus_id,month,odometer,replace"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                bus, month, odometer, flag = row
                parsed = (bus, int(month), float(odometer), int(flag))
                if parsed[3] not in (0, 1):
                    raise ValueError("replace flag must be 0 or 1")
            except (ValueError, TypeError) as exc:
                raise OdometerDataError(f"{path}:{lineno}: malformed row {row!r}: {exc}")
            rows.append(parsed)
    return ingest_odometer_data(rows, config)


def write_odometer_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bus_id", "month", "odometer", "replace"])
        for bus, month, odometer, flag in rows:
            writer.writerow([bus, month, repr(float(odometer)), int(flag)])


def default_jump_law(max_jump: int) -> Distribution:
    """Synthetic stand-in for the fleet jump law when no data is supplied.

    Roughly 60% single-bin jumps and about one percent of two bins or
    more; excess atoms beyond max_jump collapse into the final one.
    """
    base = np.array([0.388, 0.600, 0.010, 0.002])
    if max_jump + 1 <= base.size:
        law = base[: max_jump + 1].copy()
        law[-1] += base[max_jump + 1 :].sum()
    else:
        law = np.concatenate([base, np.zeros(max_jump + 1 - base.size)])
    return Distribution(law / law.sum())


def generate_fleet_rows(
    config: ZurcherConfig,
    true_jump: Distribution,
    n_buses: int,
    n_months: int,
    seed: int,
    replace_threshold: int | None = None,
    rule: "ChoiceProbabilities | None" = None,
):
    """Simulate odometer rows for a synthetic fleet.

    Buses follow the given jump law; replacement is triggered either by
    the logit rule (when given) or by mileage reaching replace_threshold
    (default 60% of the grid). Odometer readings sit mid-bin so binning
    recovers the simulated states exactly.
    """
    if true_jump.support_size != config.max_jump + 1:
        raise ValueError("jump law must cover jumps 0..max_jump")
    if replace_threshold is None:
        replace_threshold = max(1, int(0.6 * config.n_states))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rows = []
    jumps_cdf = np.cumsum(true_jump.probs)
    for bus in range(n_buses):
        x = 0
        for month in range(n_months):
            if rule is not None:
                shocks = rng.gumbel(-np.euler_gamma, 1.0, size=2)
                replaced = int(rule.log_odds[x] + shocks[0] < shocks[1])
            else:
                replaced = int(x >= replace_threshold)
            rows.append(
                (f"bus{bus:04d}", month, x * config.bin_width + config.bin_width / 2, replaced)
            )
            jump = int(np.searchsorted(jumps_cdf, rng.random(), side="right"))
            base = 0 if replaced else x
            x = min(base + jump, config.n_states - 1)
    return rows


# ---------------------------------------------------------------------------
# state-space construction
# ---------------------------------------------------------------------------


def mileage_supports(config: ZurcherConfig, jump_probs: Distribution):
    """Reachable states and their probabilities from each mileage state.

    Jumps past the top of the grid pile up on the last state, so supports
    shrink near the top; atoms with zero estimated probability are
    excluded throughout.
    """
    supports, centers = [], []
    probs = jump_probs.probs
    for x in range(config.n_states):
        dests = np.minimum(x + np.arange(config.max_jump + 1), config.n_states - 1)
        merged: dict[int, float] = {}
        for dest, pj in zip(dests, probs):
            if pj > 0.0:
                merged[int(dest)] = merged.get(int(dest), 0.0) + pj
        support = np.array(sorted(merged), dtype=int)
        centers.append(np.array([merged[d] for d in support]))
        supports.append(support)
    return supports, centers


def _state_radii(config: ZurcherConfig, sizes, omega: float, n_obs: int) -> np.ndarray:
    """Calibrated KL radius per state; singleton supports carry zero."""
    radii = np.zeros(len(sizes))
    for x, size in enumerate(sizes):
        if size >= 2 and omega > 0.0:
            radii[x] = calibrate_radius(n_obs, size, omega)
    return radii


def to_mdp_spec(
    config: ZurcherConfig,
    jump_probs: Distribution,
    omega: float | None = None,
    n_obs: int | None = None,
) -> MdpSpec:
    """Express the replacement problem (without taste shocks) as an MDP.

    Action 0 maintains (transitions from the current state), action 1
    replaces (transitions from state zero). Mainly useful for cross
    checks against the generic robust solver.
    """
    omega = config.confidence if omega is None else omega
    n_obs = config.pooled_n_obs if n_obs is None else n_obs
    supports, centers = mileage_supports(config, jump_probs)
    radii = _state_radii(config, [len(s) for s in supports], omega, n_obs)
    sets = [
        TransitionSet(
            supports[x],
            AmbiguitySet(
                Distribution(centers[x]),
                float(radii[x]),
                n_obs=n_obs if radii[x] > 0 else None,
                confidence=omega if radii[x] > 0 else None,
            ),
        )
        for x in range(config.n_states)
    ]
    utility = np.column_stack(
        [-config.maintenance_cost, np.full(config.n_states, -config.replacement_cost)]
    )
    transitions = tuple((sets[x], sets[0]) for x in range(config.n_states))
    return MdpSpec(utility=utility, discount=config.discount, transitions=transitions)


# ---------------------------------------------------------------------------
# robust fixed point
# ---------------------------------------------------------------------------


def _padded_state_arrays(supports, centers, n_states):
    width = max(len(s) for s in supports)
    sup = np.zeros((n_states, width), dtype=int)
    prob = np.zeros((n_states, width))
    for x, (s, c) in enumerate(zip(supports, centers)):
        sup[x, : len(s)] = s
        prob[x, : len(s)] = c
    return sup, prob


def solve_ev_multi(
    config: ZurcherConfig,
    estimate: TransitionEstimate,
    omegas,
    kappa: float = 1e-8,
    max_iter: int = 10**6,
) -> list[EvSolution]:
    """Solve the robust fixed point for several confidence levels at once.

    All levels iterate in lockstep from zero; a level freezes the first
    time its sup-norm step reaches kappa, so results match solving each
    level on its own.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    omegas = [float(w) for w in omegas]
    supports, centers = mileage_supports(config, estimate.jump_probs)
    sizes = [len(s) for s in supports]
    sup_pad, prob_pad = _padded_state_arrays(supports, centers, config.n_states)
    radii = np.vstack(
        [_state_radii(config, sizes, w, config.pooled_n_obs) for w in omegas]
    )
    n_levels = len(omegas)
    n_states = config.n_states
    cost = config.maintenance_cost
    rc = config.replacement_cost
    delta = config.discount

    v = np.zeros((n_levels, n_states))
    active = np.ones(n_levels, dtype=bool)
    iterations = np.zeros(n_levels, dtype=int)
    residuals = np.full(n_levels, np.inf)
    width = sup_pad.shape[1]

    def continuation_for(level_idx, values):
        gathered = values[:, sup_pad].reshape(-1, width)
        probs = np.broadcast_to(
            prob_pad, (len(level_idx), n_states, width)
        ).reshape(-1, width)
        rho = radii[level_idx].reshape(-1)
        cont, minimizers, _ = _worst_case_batch(probs, gathered, rho)
        return cont.reshape(len(level_idx), n_states), minimizers

    for step in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cont, _ = continuation_for(idx, v[idx])
        keep = -cost[None, :] + delta * cont
        repl = -rc + delta * cont[:, :1]
        new_v = np.logaddexp(keep, repl)
        step_res = np.max(np.abs(new_v - v[idx]), axis=1)
        v[idx] = new_v
        iterations[idx] = step
        residuals[idx] = step_res
        active[idx[step_res <= kappa]] = False

    solutions = []
    all_idx = np.arange(n_levels)
    cont_final, minimizers = continuation_for(all_idx, v)
    for k, omega in enumerate(omegas):
        per_state = minimizers[k * n_states : (k + 1) * n_states]
        worst = tuple(
            Distribution(per_state[x, : sizes[x]]) for x in range(n_states)
        )
        solutions.append(
            EvSolution(
                ev=EvFunction(values=v[k].copy()),
                supports=tuple(supports),
                worst_case=worst,
                continuation=cont_final[k],
                omega=omega,
                radii=radii[k],
                iterations=int(iterations[k]),
                residual=float(residuals[k]),
                converged=bool(residuals[k] <= kappa),
                error_bound=float(residuals[k] * delta / (1.0 - delta)),
            )
        )
    return solutions


def solve_ev(
    config: ZurcherConfig,
    estimate: TransitionEstimate,
    kappa: float = 1e-8,
    max_iter: int = 10**6,
    omega: float | None = None,
) -> EvSolution:
    """Robust fixed point at the config's confidence level."""
    omega = config.confidence if omega is None else omega
    return solve_ev_multi(config, estimate, [omega], kappa=kappa, max_iter=max_iter)[0]


def apply_ev_operator(
    config: ZurcherConfig,
    estimate: TransitionEstimate,
    v,
    omega: float | None = None,
) -> np.ndarray:
    """One application of the robust log-sum-exp operator at v."""
    omega = config.confidence if omega is None else omega
    v = np.asarray(v, dtype=float)
    if v.shape != (config.n_states,):
        raise ValueError(f"v must have shape ({config.n_states},)")
    supports, centers = mileage_supports(config, estimate.jump_probs)
    radii = _state_radii(config, [len(s) for s in supports], omega, config.pooled_n_obs)
    sup_pad, prob_pad = _padded_state_arrays(supports, centers, config.n_states)
    cont, _, _ = _worst_case_batch(prob_pad, v[sup_pad], radii)
    keep = -config.maintenance_cost + config.discount * cont
    repl = -config.replacement_cost + config.discount * cont[0]
    return np.logaddexp(keep, repl)


def choice_probabilities(config: ZurcherConfig, solution: EvSolution) -> ChoiceProbabilities:
    """Logit maintain probability from worst-case continuation values."""
    v_keep = -config.maintenance_cost + config.discount * solution.continuation
    v_repl = -config.replacement_cost + config.discount * solution.continuation[0]
    log_odds = v_keep - v_repl
    prob = np.where(
        log_odds >= 0.0,
        1.0 / (1.0 + np.exp(-log_odds)),
        np.exp(log_odds) / (1.0 + np.exp(log_odds)),
    )
    tiny = np.nextafter(0.0, 1.0)
    prob = np.clip(prob, tiny, np.nextafter(1.0, 0.0))
    return ChoiceProbabilities(maintain_prob=prob, log_odds=log_odds)


@dataclass(frozen=True, eq=False)
class WorstCaseJumpRecord:
    """Worst-case jump law at one state for one (omega, n_obs) setting."""

    omega: float
    n_obs: int
    state: int
    jumps: np.ndarray
    probs: Distribution


def worst_case_jump_table(
    config: ZurcherConfig,
    estimate: TransitionEstimate,
    omegas,
    n_obs_list=None,
    representative_state: int | None = None,
    kappa: float = 1e-8,
) -> list[WorstCaseJumpRecord]:
    """Worst-case jump distributions at a representative mileage state.

    One record per (omega, n_obs) pair; the default state is the bin at
    75,000 miles, clipped into the grid.
    """
    if n_obs_list is None:
        n_obs_list = [config.pooled_n_obs]
    if representative_state is None:
        representative_state = min(int(75_000 // config.bin_width), config.n_states - 1)
    state = representative_state
    records = []
    for n_obs in n_obs_list:
        cfg = dc_replace(config, pooled_n_obs=int(n_obs))
        for sol in solve_ev_multi(cfg, estimate, omegas, kappa=kappa):
            records.append(
                WorstCaseJumpRecord(
                    omega=sol.omega,
                    n_obs=int(n_obs),
                    state=state,
                    jumps=sol.supports[state] - state,
                    probs=sol.worst_case[state],
                )
            )
    return records
