"""Node update rule driven by non-coherent over-the-air consensus.

Each frame, every node encodes its iterate into a preamble mixture and
transmits in its slot; listening nodes turn the received correlation
energies into a consensus signal

    d_i = sum_m (|r_m|^2 - sigma2/(M E)) (z_m - w_i),

whose conditional mean over fading and noise is
sum_j pathloss[i,j] (w_j - w_i): averaging happens in the air without
channel knowledge or explicit weights. The iterate then moves along the
consensus signal and down the local gradient, projected back onto the
feasible ball:

    w <- project(w + gamma * d_i - eta * grad f_i(w)).

All nodes update from the same frame snapshot (a frame barrier).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Deployment, RxCorrelations, faded_correlations
from .codec import Codebook, encode_weights_batch, project_to_ball


class DivergenceError(RuntimeError):
    """A trajectory produced a non-finite update and was aborted."""

    def __init__(self, message: str, node: int, frame: int | None = None):
        super().__init__(message)
        self.node = node
        self.frame = frame


@dataclass(frozen=True)
class Stepsizes:
    """Consensus stepsize gamma and learning stepsize eta."""

    gamma: float
    eta: float

    def __post_init__(self):
        if self.gamma < 0 or self.eta < 0:
            raise ValueError(f"stepsizes must be non-negative, got {self}")


@dataclass
class NodeState:
    """One node's iterate plus its fixed identity and slot."""

    w: np.ndarray
    node_id: int
    slot: int


def init_states(dep: Deployment, d: int) -> list[NodeState]:
    """All-zero iterates, one state per deployed node."""
    return [
        NodeState(w=np.zeros(d), node_id=i, slot=int(dep.slot_of[i])) for i in range(dep.n)
    ]


def check_node_order(states: list[NodeState], n: int):
    """Require states[k].node_id == k for all k, covering all n nodes.

    The frame functions bind node k's iterate to problem row k and to
    deployment row k through positions, so a reordered or partial state
    list would silently pair iterates with the wrong local data.
    """
    if len(states) != n or any(s.node_id != k for k, s in enumerate(states)):
        raise ValueError("states must be listed in node-id order, one per deployed node")


def consensus_signal(
    rx: RxCorrelations, w_i: np.ndarray, cb: Codebook, noise_to_energy: float
) -> np.ndarray:
    """Debiased energy readout mapped back through the codewords.

    Subtracting the known noise floor sigma2/(M E) from each |r_m|^2
    leaves weights whose expectation is sum_j pathloss[i,j] p_{j,m}; the
    codeword combination then averages neighbors' iterates relative to
    w_i, up to the pathloss normalization absorbed by gamma.
    """
    q = rx.power - noise_to_energy / cb.size
    return cb.codewords @ q - q.sum() * w_i


def ncota_step(
    state: NodeState,
    d_vec: np.ndarray,
    grad: np.ndarray,
    steps: Stepsizes,
    radius: float,
) -> NodeState:
    """Apply one projected consensus-plus-gradient update to one node."""
    if not (np.all(np.isfinite(d_vec)) and np.all(np.isfinite(grad))):
        raise DivergenceError(
            f"non-finite consensus signal or gradient at node {state.node_id}",
            node=state.node_id,
        )
    w = project_to_ball(state.w + steps.gamma * d_vec - steps.eta * grad, radius)
    return NodeState(w=w, node_id=state.node_id, slot=state.slot)


def run_frame(
    states: list[NodeState],
    dep: Deployment,
    problem,
    steps: Stepsizes,
    cb: Codebook,
    backend: str,
    key: tuple,
) -> list[NodeState]:
    """Advance every node by one frame (encode, exchange, update).

    Gradients are evaluated at the current iterates, concurrently with
    the radio exchange; all updates use the same frame snapshot. ``key``
    scopes the frame's random streams, typically (seed, grid, trial, k).

    Vectorized across nodes, but every random draw stays on the same
    (key, receiver, kind) stream the per-receiver channel path uses, so
    the result matches composing transmit_and_correlate,
    consensus_signal, and ncota_step node by node.
    """
    if backend not in ("idealized", "faded"):
        raise ValueError(f"unknown channel backend {backend!r}")
    check_node_order(states, dep.n)
    n = dep.n
    iterates = np.stack([s.w for s in states])
    grads = problem.grad_matrix(iterates)
    mix = encode_weights_batch(iterates, cb)  # (n, M)
    m = cb.size
    energy = dep.energy_per_sample
    noise_floor = dep.noise_to_energy / m

    power = np.empty((n, m))
    for slot in (0, 1):
        receivers = np.flatnonzero(dep.slot_of == slot)
        senders = np.flatnonzero(dep.slot_of != slot)  # ascending node ids
        if receivers.size and not senders.size:
            raise ValueError("no transmitters in the opposite slot")
        gains = dep.pathloss[np.ix_(receivers, senders)]
        if backend == "idealized":
            power[receivers] = gains @ mix[senders] + noise_floor
        else:
            x = (np.sqrt(energy) * np.sqrt(m) * np.sqrt(mix[senders])).astype(complex)
            for k, i in enumerate(receivers):
                r = faded_correlations(x, gains[k], dep.noise_power, energy, int(i), key)
                power[i] = np.abs(r) ** 2

    debiased = power - noise_floor
    signals = debiased @ cb.codewords.T - debiased.sum(axis=1, keepdims=True) * iterates
    finite = np.isfinite(signals).all(axis=1) & np.isfinite(grads).all(axis=1)
    if not finite.all():
        node = int(np.flatnonzero(~finite)[0])
        raise DivergenceError(
            f"non-finite consensus signal or gradient at node {node}", node=node
        )
    moved = iterates + steps.gamma * signals - steps.eta * grads
    norms = np.linalg.norm(moved, axis=1)
    over = norms > cb.radius
    if over.any():
        moved[over] *= (cb.radius / norms[over])[:, None]
    return [
        NodeState(w=moved[k], node_id=s.node_id, slot=s.slot) for k, s in enumerate(states)
    ]


def frame_duration_s(d: int, w_tot_hz: float) -> float:
    """Wall-clock seconds per frame: two slots of d+1 samples each."""
    return 2.0 * (d + 1) / w_tot_hz
