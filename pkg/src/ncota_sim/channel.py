"""Simulated wireless medium: geometry, pathloss, fading, and correlation.

Nodes are dropped uniformly on a disc and linked by Friis free-space
pathloss at the carrier frequency. Time is slotted into frames; every
frame has two half-duplex slots with a fixed, balanced node partition,
so each node transmits once and listens once per frame. Channel gains
are Rayleigh (circularly symmetric complex normal with the pathloss as
variance), drawn independently per frame and per directed receiver-
transmitter pair. A receiver correlates its slot's superposition against
the M orthogonal preambles, yielding

    r_m = sum_j h_{i,j} sqrt(p_{j,m}) + n_m,    n_m ~ CN(0, sigma2/(M*E)),

and only the energies |r_m|^2 are used downstream (no phase, no CSI).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import streams
from .codec import TxFrame

SPEED_OF_LIGHT = 2.998e8  # m/s

_PLACEMENT_RETRIES = 100


@dataclass(frozen=True)
class RadioConstants:
    """Link-budget constants shared by every node."""

    p_tx_dbm: float = 5.0        # transmit power
    n0_dbm_hz: float = -169.0    # noise power spectral density
    w_tot_hz: float = 1e6        # total bandwidth, also the sample rate
    f_c_hz: float = 3e9          # carrier frequency


DEFAULT_RADIO = RadioConstants()


@dataclass
class Deployment:
    """A fixed node layout with its derived link and radio parameters.

    pathloss[i, j] is the average channel gain between nodes i and j
    (symmetric, zero on the diagonal). slot_of[i] in {0, 1} fixes the
    half-duplex schedule for the whole run. lambda_star is the largest
    per-receiver sum of neighbor gains and normalizes the implicit
    mixing weights.
    """

    positions: np.ndarray       # (N, 2) meters
    pathloss: np.ndarray        # (N, N)
    slot_of: np.ndarray         # (N,) int
    energy_per_sample: float    # E, joules per complex sample
    noise_power: float          # sigma2, joules per complex sample
    constants: RadioConstants
    radius_m: float
    seed: int
    lambda_star: float

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def noise_to_energy(self) -> float:
        """sigma2 / E, the inverse per-sample SNR before pathloss."""
        return self.noise_power / self.energy_per_sample

    def neighbors(self, i: int) -> np.ndarray:
        """Indices heard by node i: everyone in the opposite slot."""
        return np.flatnonzero(self.slot_of != self.slot_of[i])


@dataclass(frozen=True)
class RxCorrelations:
    """Matched-filter outputs at one receiver for one frame.

    power holds |r_m|^2 for each preamble; r carries the complex
    correlations when a fading realization was actually drawn, and is
    None for the idealized backend which reports conditional means.
    """

    power: np.ndarray
    r: np.ndarray | None = None


def friis_pathloss(dist_m: float, f_c_hz: float) -> float:
    """Free-space gain (c / (4 pi f d))^2 between isotropic antennas."""
    if dist_m <= 0:
        raise ValueError(f"distance must be positive, got {dist_m}")
    wavelength = SPEED_OF_LIGHT / f_c_hz
    return (wavelength / (4.0 * np.pi * dist_m)) ** 2


def assign_slots(n: int, rng: np.random.Generator) -> np.ndarray:
    """Randomly split nodes into two balanced half-duplex slots.

    A balanced partition (floor(n/2) versus the rest) guarantees both
    slots are non-empty for n >= 2, so every node always has someone to
    listen to; with n = 2 the two nodes land in opposite slots.
    """
    if n < 2:
        raise ValueError("need at least two nodes to populate both slots")
    order = rng.permutation(n)
    slots = np.zeros(n, dtype=np.int64)
    slots[order[n // 2 :]] = 1
    if slots.min() == slots.max():  # unreachable with a balanced split
        raise RuntimeError("degenerate slot assignment")
    return slots


def build_deployment(
    n: int,
    radius_m: float,
    seed: int,
    constants: RadioConstants = DEFAULT_RADIO,
) -> Deployment:
    """Drop n nodes uniformly on a disc and derive the link parameters."""
    if radius_m <= 0:
        raise ValueError("deployment radius must be positive")
    for attempt in range(_PLACEMENT_RETRIES):
        rng = streams.stream(seed, streams.DEPLOY, attempt)
        radial = radius_m * np.sqrt(rng.random(n))
        angle = 2.0 * np.pi * rng.random(n)
        positions = np.column_stack([radial * np.cos(angle), radial * np.sin(angle)])
        diff = positions[:, None, :] - positions[None, :, :]
        dists = np.sqrt((diff**2).sum(axis=2))
        if np.all(dists[~np.eye(n, dtype=bool)] > 0.0):
            break
    else:
        raise RuntimeError(f"could not place {n} distinct nodes in {_PLACEMENT_RETRIES} tries")

    slots = assign_slots(n, streams.stream(seed, streams.SLOTS))
    return _finish_deployment(positions, slots, constants, radius_m, seed)


def _finish_deployment(positions, slots, constants, radius_m, seed) -> Deployment:
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dists = np.sqrt((diff**2).sum(axis=2))
    pathloss = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    wavelength = SPEED_OF_LIGHT / constants.f_c_hz
    pathloss[off] = (wavelength / (4.0 * np.pi * dists[off])) ** 2

    p_tx_w = 10.0 ** ((constants.p_tx_dbm - 30.0) / 10.0)
    energy = p_tx_w / constants.w_tot_hz
    # Per-sample convention: one complex sample lasts 1/W seconds, so the
    # in-band noise energy per sample equals the density N0 itself.
    sigma2 = 10.0 ** ((constants.n0_dbm_hz - 30.0) / 10.0)

    opposite = slots[:, None] != slots[None, :]
    lambda_star = float((pathloss * opposite).sum(axis=1).max())
    return Deployment(
        positions=positions,
        pathloss=pathloss,
        slot_of=slots,
        energy_per_sample=float(energy),
        noise_power=float(sigma2),
        constants=constants,
        radius_m=float(radius_m),
        seed=int(seed),
        lambda_star=lambda_star,
    )


def transmit_and_correlate(
    txs: dict[int, TxFrame],
    receiver: int,
    dep: Deployment,
    backend: str,
    key: tuple,
) -> RxCorrelations:
    """Superimpose the opposite slot's frames at one receiver and correlate.

    txs maps transmitting node index to its TxFrame; every transmitter
    must sit in the other half-duplex slot (raises on a violation).
    ``key`` scopes the random streams to (run..., frame); the function
    derives (key..., receiver, kind) substreams so draws are independent
    of any processing order.

    backend:
        "faded"      draw h ~ CN(0, pathloss) per link plus receiver
                     noise, return complex correlations and energies.
        "idealized"  skip randomness and report each |r_m|^2 as its
                     conditional mean sum_j pathloss[i,j] p_{j,m} + sigma2/(M E).
    """
    senders = sorted(txs)
    my_slot = dep.slot_of[receiver]
    for j in senders:
        if dep.slot_of[j] == my_slot:
            raise ValueError(f"node {j} cannot transmit to node {receiver} in the same slot")
    if not senders:
        raise ValueError("no transmitters in the opposite slot")
    m = txs[senders[0]].samples.shape[0]
    energy = dep.energy_per_sample
    gains = dep.pathloss[receiver, senders]

    if backend == "idealized":
        weights = np.stack([txs[j].weights for j in senders])  # (n_tx, M)
        power = gains @ weights + dep.noise_power / (m * energy)
        return RxCorrelations(power=power, r=None)
    if backend != "faded":
        raise ValueError(f"unknown channel backend {backend!r}")

    x = np.stack([txs[j].samples for j in senders])  # (n_tx, M) real
    r = faded_correlations(x.astype(complex), gains, dep.noise_power, energy, receiver, key)
    return RxCorrelations(power=np.abs(r) ** 2, r=r)


def faded_correlations(
    x_complex: np.ndarray,
    gains: np.ndarray,
    noise_power: float,
    energy: float,
    receiver: int,
    key: tuple,
) -> np.ndarray:
    """Complex correlations at one receiver for pre-stacked transmit rows.

    The hot inner kernel shared by transmit_and_correlate and the frame
    loop: rows of ``x_complex`` are the opposite slot's sample vectors in
    ascending node order and ``gains`` the matching pathloss entries.
    Draws the receiver's fading and noise from the (key..., receiver,
    kind) streams, so results depend only on the key, never on how many
    receivers were batched together.
    """
    m = x_complex.shape[1]
    h = streams.complex_normal(
        streams.scratch_stream(*key, receiver, streams.FADING), gains, gains.shape[0]
    )
    noise = streams.complex_normal(
        streams.scratch_stream(*key, receiver, streams.NOISE), noise_power, m
    )
    y = h @ x_complex + noise
    return y / (np.sqrt(energy) * np.sqrt(m))


def deployment_to_json(dep: Deployment) -> str:
    """Serialize a deployment so a run can be replayed elsewhere."""
    doc = {
        "positions": [[float(x), float(y)] for x, y in dep.positions],
        "slot_of": [int(s) for s in dep.slot_of],
        "radius_m": dep.radius_m,
        "seed": dep.seed,
        "p_tx_dbm": dep.constants.p_tx_dbm,
        "n0_dbm_hz": dep.constants.n0_dbm_hz,
        "w_tot_hz": dep.constants.w_tot_hz,
        "f_c_hz": dep.constants.f_c_hz,
    }
    return json.dumps(doc, indent=2)


def deployment_from_json(text: str) -> Deployment:
    """Rebuild a deployment from its JSON form, rederiving link parameters."""
    doc = json.loads(text)
    constants = RadioConstants(
        p_tx_dbm=doc["p_tx_dbm"],
        n0_dbm_hz=doc["n0_dbm_hz"],
        w_tot_hz=doc["w_tot_hz"],
        f_c_hz=doc["f_c_hz"],
    )
    positions = np.asarray(doc["positions"], dtype=float)
    slots = np.asarray(doc["slot_of"], dtype=np.int64)
    return _finish_deployment(positions, slots, constants, doc["radius_m"], doc["seed"])
