"""Finite robust Markov decision problems and their value iteration.

A problem instance attaches one ambiguity set of transition laws to each
state-action pair. Uncertainty is treated as uncoupled across states,
actions, and time: each sweep lets every pair realize its own worst case
independently, which is what makes the robust operator a contraction.
The standard known-transition problem is the zero-radius special case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import AmbiguitySet, _worst_case_batch
from .simplex import Distribution


@dataclass(frozen=True, eq=False)
class TransitionSet:
    """Ambiguity set over destination states for one state-action pair."""

    support: np.ndarray
    ambiguity: AmbiguitySet

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int)
        if support.ndim != 1 or support.size != self.ambiguity.center.support_size:
            raise ValueError("support and center must have matching lengths")
        if len(np.unique(support)) != support.size:
            raise ValueError("support indices must be unique")
        support.setflags(write=False)
        object.__setattr__(self, "support", support)


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Utility, discount, and per-(state, action) transition ambiguity."""

    utility: np.ndarray
    discount: float
    transitions: tuple[tuple[TransitionSet, ...], ...]

    def __post_init__(self):
        utility = np.asarray(self.utility, dtype=float)
        if utility.ndim != 2:
            raise ValueError("utility must be a (states, actions) array")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        n_states, n_actions = utility.shape
        transitions = tuple(tuple(row) for row in self.transitions)
        if len(transitions) != n_states or any(
            len(row) != n_actions for row in transitions
        ):
            raise ValueError("transitions must be a (states, actions) table")
        for row in transitions:
            for ts in row:
                if np.any(ts.support < 0) or np.any(ts.support >= n_states):
                    raise ValueError("support index out of range")
        utility.setflags(write=False)
        object.__setattr__(self, "utility", utility)
        object.__setattr__(self, "transitions", transitions)

    @property
    def n_states(self) -> int:
        return self.utility.shape[0]

    @property
    def n_actions(self) -> int:
        return self.utility.shape[1]

    @classmethod
    def from_dense(cls, utility, transition, discount, radii=0.0) -> "MdpSpec":
        """Build a spec from dense row-stochastic transition arrays.

        transition has shape (states, actions, states); the support of
        each pair is its positive entries. radii is a scalar or a
        (states, actions) array of KL radii.
        """
        utility = np.asarray(utility, dtype=float)
        transition = np.asarray(transition, dtype=float)
        n_states, n_actions = utility.shape
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (n_states, n_actions))
        rows = []
        for s in range(n_states):
            row = []
            for a in range(n_actions):
                support = np.flatnonzero(transition[s, a] > 0.0)
                center = Distribution(transition[s, a, support])
                row.append(
                    TransitionSet(support, AmbiguitySet(center, float(radii[s, a])))
                )
            rows.append(tuple(row))
        return cls(utility=utility, discount=discount, transitions=tuple(rows))


@dataclass(frozen=True, eq=False)
class RobustSolution:
    """Converged values, greedy policy, and per-pair worst-case laws."""

    values: np.ndarray
    policy: np.ndarray
    worst_case: tuple[tuple[Distribution, ...], ...]
    iterations: int
    residual: float
    converged: bool
    error_bound: float


def _padded_arrays(spec: MdpSpec):
    """Stack all (s, a) supports into padded (S*A, width) arrays."""
    width = max(
        ts.support.size for row in spec.transitions for ts in row
    )
    n_rows = spec.n_states * spec.n_actions
    support = np.zeros((n_rows, width), dtype=int)
    probs = np.zeros((n_rows, width))
    radii = np.zeros(n_rows)
    for s, row in enumerate(spec.transitions):
        for a, ts in enumerate(row):
            r = s * spec.n_actions + a
            k = ts.support.size
            support[r, :k] = ts.support
            probs[r, :k] = ts.ambiguity.center.probs
            radii[r] = ts.ambiguity.radius
    return support, probs, radii


def _sweep(spec, support, probs, radii, w):
    """One application of the robust Bellman operator at value mapping w."""
    values, minimizers, _ = _worst_case_batch(probs, w[support], radii)
    action_values = spec.utility + spec.discount * values.reshape(
        spec.n_states, spec.n_actions
    )
    new_w = action_values.max(axis=1)
    policy = action_values.argmax(axis=1)  # first max: lowest action wins ties
    return new_w, policy, minimizers


def robust_bellman_apply(spec: MdpSpec, w):
    """Apply the robust Bellman operator once.

    Returns the updated value mapping, the greedy policy, and the
    worst-case distribution of every state-action pair at w.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.n_states,):
        raise ValueError(f"value mapping must have shape ({spec.n_states},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("value mapping has non-finite entries")
    support, probs, radii = _padded_arrays(spec)
    new_w, policy, minimizers = _sweep(spec, support, probs, radii, w)
    worst = _collect_worst(spec, minimizers)
    return new_w, policy, worst


def _collect_worst(spec, minimizers):
    rows = []
    for s, row in enumerate(spec.transitions):
        entries = []
        for a, ts in enumerate(row):
            q = minimizers[s * spec.n_actions + a, : ts.support.size]
            entries.append(Distribution(q))
        rows.append(tuple(entries))
    return tuple(rows)


def robust_value_iteration(
    spec: MdpSpec, kappa: float = 1e-8, max_iter: int = 10**6
) -> RobustSolution:
    """Iterate the robust Bellman operator from zero to a fixed point.

    Stops when the sup-norm step falls to kappa or max_iter is reached
    (the solution is then flagged non-converged). error_bound reports the
    implied value error residual * discount / (1 - discount), which can
    dwarf the residual itself at discounts near one.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    support, probs, radii = _padded_arrays(spec)
    v = np.zeros(spec.n_states)
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_v, _, _ = _sweep(spec, support, probs, radii, v)
        residual = float(np.max(np.abs(new_v - v)))
        v = new_v
        if residual <= kappa:
            break
    converged = residual <= kappa
    # re-apply at the returned values so the policy attains the max there
    _, policy, minimizers = _sweep(spec, support, probs, radii, v)
    worst = _collect_worst(spec, minimizers)
    denom = 1.0 - spec.discount
    return RobustSolution(
        values=v,
        policy=policy,
        worst_case=worst,
        iterations=iterations,
        residual=residual,
        converged=converged,
        error_bound=residual * spec.discount / denom,
    )


def evaluate_policy_under_truth(spec: MdpSpec, policy, gumbel_shocks: bool = False):
    """Exact value of a fixed decision rule under known transitions.

    Every transition set of the spec must have radius zero. policy is
    either an integer action per state or a (states, actions) matrix of
    action probabilities. With gumbel_shocks the per-period flow adds the
    expected chosen taste shock -log p(a|s) of a logit rule with iid
    mean-zero unit-scale extreme-value shocks.
    """
    for row in spec.transitions:
        for ts in row:
            if ts.ambiguity.radius != 0.0:
                raise ValueError("evaluation requires zero-radius transition sets")
    policy = np.asarray(policy)
    if policy.ndim == 1:
        probs = np.zeros((spec.n_states, spec.n_actions))
        probs[np.arange(spec.n_states), policy.astype(int)] = 1.0
    else:
        probs = np.asarray(policy, dtype=float)
        if probs.shape != (spec.n_states, spec.n_actions):
            raise ValueError("action probabilities must be (states, actions)")
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("rows of action probabilities must sum to one")

    chain = np.zeros((spec.n_states, spec.n_states))
    for s, row in enumerate(spec.transitions):
        for a, ts in enumerate(row):
            if probs[s, a] > 0.0:
                chain[s, ts.support] += probs[s, a] * ts.ambiguity.center.probs
    flow = np.where(probs > 0, probs * spec.utility, 0.0).sum(axis=1)
    if gumbel_shocks:
        with np.errstate(divide="ignore", invalid="ignore"):
            entropy = np.where(probs > 0, -probs * np.log(probs), 0.0).sum(axis=1)
        flow = flow + entropy
    eye = np.eye(spec.n_states)
    return np.linalg.solve(eye - spec.discount * chain, flow)


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------


def mdp_to_json(spec: MdpSpec) -> dict:
    """Serialize to the documented JSON shape (see README)."""
    transitions = []
    for row in spec.transitions:
        entries = []
        for ts in row:
            amb = ts.ambiguity
            entry = {
                "support": ts.support.tolist(),
                "center": amb.center.probs.tolist(),
                "radius": amb.radius,
            }
            if amb.n_obs is not None:
                entry["n_obs"] = amb.n_obs
            if amb.confidence is not None:
                entry["confidence"] = amb.confidence
            entries.append(entry)
        transitions.append(entries)
    return {
        "discount": spec.discount,
        "utility": spec.utility.tolist(),
        "transitions": transitions,
    }


def mdp_from_json(data: dict) -> MdpSpec:
    """Inverse of mdp_to_json."""
    rows = []
    for row in data["transitions"]:
        entries = []
        for entry in row:
            amb = AmbiguitySet(
                center=Distribution(np.asarray(entry["center"], dtype=float)),
                radius=float(entry["radius"]),
                n_obs=entry.get("n_obs"),
                confidence=entry.get("confidence"),
            )
            entries.append(TransitionSet(np.asarray(entry["support"]), amb))
        rows.append(tuple(entries))
    return MdpSpec(
        utility=np.asarray(data["utility"], dtype=float),
        discount=float(data["discount"]),
        transitions=tuple(rows),
    )


def dump_mdp(spec: MdpSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp_to_json(spec), fh, sort_keys=True, indent=1)


def load_mdp(path) -> MdpSpec:
    with open(path) as fh:
        return mdp_from_json(json.load(fh))
