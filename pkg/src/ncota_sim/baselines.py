"""Reference consensus-optimization schemes the over-the-air rule is compared against.

Three baselines share the update template  w <- project(c_i - eta * grad f_i(w)):

* classical noiseless DGD, where c_i mixes neighbor iterates with an
  explicit doubly stochastic matrix (the correctness oracle);
* a digital scheme (orthogonal TDMA links, dithered quantization,
  capacity-threshold outages) whose payloads either arrive intact or
  are erased;
* an analog scheme (orthogonal links, amplitude modulation of the
  normalized iterate plus a norm sample and a pilot, maximum-likelihood
  channel estimation from the pilot).

Both radio baselines give every node one orthogonal transmission per
frame, so their frames are N times longer than a single payload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .channel import Deployment, friis_pathloss
from .codec import project_to_ball
from .ncota import NodeState, check_node_order

_EST_FLOOR = 1e-15  # below this |h_est| an analog link is treated as lost


@dataclass(frozen=True)
class QuantizerConfig:
    """Uniform dithered quantizer on [-1, 1] plus a fixed-size header."""

    levels: int = 9
    header_bits: int = 64

    def payload_bits(self, d: int) -> int:
        """Bits per payload: header plus a block code over levels^d messages."""
        return self.header_bits + math.ceil(d * math.log2(self.levels))


@dataclass(frozen=True)
class DigitalLinkConfig:
    """Fixed-rate links with per-link decode success probabilities."""

    rate: float                 # bits/s/Hz
    success_prob: np.ndarray    # (N, N), zero diagonal
    weight_norm: float          # max_n sum_{j != n} success_prob[n, j]
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)


def dgd_step_reference(
    states: list[NodeState],
    omega: np.ndarray,
    eta: float,
    problem,
    radius: float,
) -> list[NodeState]:
    """One step of classical noiseless DGD with explicit mixing weights."""
    _check_doubly_stochastic(omega)
    check_node_order(states, omega.shape[0])
    iterates = np.stack([s.w for s in states])
    mixed = omega @ iterates
    grads = problem.grad_matrix(iterates)
    return [
        NodeState(
            w=project_to_ball(mixed[k] - eta * grads[k], radius),
            node_id=s.node_id,
            slot=s.slot,
        )
        for k, s in enumerate(states)
    ]


def dithered_quantize(
    w: np.ndarray,
    cfg: QuantizerConfig,
    rng: np.random.Generator,
    scale: float | None = None,
) -> np.ndarray:
    """Quantize to ``cfg.levels`` uniform levels on [-scale, scale], unbiased.

    Each component is rounded to the level above it with probability
    equal to its fractional position in the cell, so the expectation
    equals the input exactly. ``scale`` defaults to ||w||_inf (the value
    the 64-bit header carries to the receiver).
    """
    w = np.asarray(w, dtype=float)
    if scale is None:
        scale = float(np.abs(w).max()) if w.size else 0.0
    if scale == 0.0:
        return np.zeros_like(w)
    y = w / scale  # in [-1, 1]
    delta = 2.0 / (cfg.levels - 1)
    t = (y + 1.0) / delta
    below = np.floor(t)
    frac = t - below
    up = (rng.random(w.shape) < frac).astype(float)
    return scale * (-1.0 + (below + up) * delta)


def choose_rate(
    dep: Deployment,
    target_prob: float = 0.9,
    radius_m: float = 500.0,
    granularity: float = 1.0,
) -> float:
    """Largest link rate whose decode success at ``radius_m`` meets the target.

    A rate-R transmission over a fading link of average gain g succeeds
    with probability exp(-(sigma2/(E g)) (2^R - 1)); the feasibility
    boundary at distance ``radius_m`` gives the continuous maximum, which
    is then floored to a multiple of ``granularity`` (practical links come
    in discrete modulation-and-coding rates; pass 0 for the continuous
    value).
    """
    if not 0.0 < target_prob < 1.0:
        raise ValueError("target_prob must lie strictly between 0 and 1")
    gain = friis_pathloss(radius_m, dep.constants.f_c_hz)
    snr = gain / dep.noise_to_energy
    r_max = math.log2(1.0 + snr * math.log(1.0 / target_prob))
    if granularity > 0:
        return math.floor(r_max / granularity) * granularity
    return r_max


def digital_link_config(
    dep: Deployment,
    rate: float,
    quantizer: QuantizerConfig | None = None,
) -> DigitalLinkConfig:
    """Per-link success probabilities for fixed-rate transmissions."""
    if rate <= 0:
        raise ValueError("link rate must be positive")
    off = ~np.eye(dep.n, dtype=bool)
    succ = np.zeros((dep.n, dep.n))
    succ[off] = np.exp(-(dep.noise_to_energy / dep.pathloss[off]) * (2.0**rate - 1.0))
    return DigitalLinkConfig(
        rate=float(rate),
        success_prob=succ,
        weight_norm=float(succ.sum(axis=1).max()),
        quantizer=quantizer or QuantizerConfig(),
    )


def od_mixing_matrix(cfg: DigitalLinkConfig) -> np.ndarray:
    """Expected mixing matrix of the digital scheme (success / normalizer)."""
    omega = cfg.success_prob / cfg.weight_norm
    np.fill_diagonal(omega, 0.0)
    diag = 1.0 - omega.sum(axis=1)
    if diag.min() < 0:
        raise ValueError(f"negative self-weight {diag.min()} in digital mixing matrix")
    omega[np.diag_indices_from(omega)] = diag
    return omega


def od_dgd_frame(
    states: list[NodeState],
    dep: Deployment,
    cfg: DigitalLinkConfig,
    eta: float,
    problem,
    key: tuple,
) -> list[NodeState]:
    """One frame of the digital baseline.

    Every node broadcasts a dithered-quantized iterate on its own
    orthogonal channel; each directed link is independently erased when
    the fade drops instantaneous capacity below the rate. Received
    payloads are combined with the constant normalizer 1/weight_norm.
    """
    check_node_order(states, dep.n)
    iterates = np.stack([s.w for s in states])
    grads = problem.grad_matrix(iterates)
    quantized = np.stack(
        [
            dithered_quantize(
                s.w, cfg.quantizer, streams.scratch_stream(*key, s.node_id, streams.QUANTIZE)
            )
            for s in states
        ]
    )
    threshold = (2.0**cfg.rate - 1.0) * dep.noise_to_energy
    everyone = np.arange(dep.n)
    new_states = []
    for k, s in enumerate(states):
        i = s.node_id
        others = np.delete(everyone, i)
        h = streams.complex_normal(
            streams.scratch_stream(*key, i, streams.LINK), dep.pathloss[i, others], len(others)
        )
        arrived = np.abs(h) ** 2 > threshold
        c = s.w + (arrived[:, None] * (quantized[others] - s.w)).sum(axis=0) / cfg.weight_norm
        new_states.append(
            NodeState(
                w=project_to_ball(c - eta * grads[k], problem.radius),
                node_id=i,
                slot=s.slot,
            )
        )
    return new_states


def oa_encode(w: np.ndarray, energy: float, radius: float) -> np.ndarray:
    """Amplitude-modulate an iterate into d/2 + 2 complex samples.

    The first d/2 samples carry the unit-normalized iterate (real half
    in-phase, imaginary half quadrature), then one sample carries the
    norm fraction ||w||/R, then a constant pilot. The 1/3 energy factor
    keeps the total at most (d/2 + 2) E for any feasible w.
    """
    w = np.asarray(w, dtype=float)
    d = w.shape[0]
    if d % 2 != 0:
        raise ValueError("analog modulation needs an even model dimension")
    half = d // 2
    scale = math.sqrt(energy * (half + 2) / 3.0)
    x = np.zeros(half + 2, dtype=complex)
    norm = float(np.linalg.norm(w))
    if norm > 0.0:
        x[:half] = (w[:half] + 1j * w[half:]) / norm
        x[half] = norm / radius
    x[half + 1] = 1.0
    return scale * x


def oa_decode(y: np.ndarray, energy: float, radius: float, d: int) -> np.ndarray | None:
    """Invert the analog modulation from one received payload.

    The pilot sample alone gives the maximum-likelihood channel estimate.
    Returns None when the estimated gain is numerically zero (the link is
    skipped). The norm fraction is clamped to [0, 1] and the direction
    re-normalized, so the reconstruction always lands in the feasible ball.
    """
    half = d // 2
    scale = math.sqrt(energy * (half + 2) / 3.0)
    h_est = y[half + 1] / scale
    if abs(h_est) < _EST_FLOOR:
        return None
    payload = y / (h_est * scale)
    norm_frac = min(max(float(np.real(payload[half])), 0.0), 1.0)
    direction = np.concatenate([np.real(payload[:half]), np.imag(payload[:half])])
    dir_norm = float(np.linalg.norm(direction))
    if dir_norm == 0.0:
        return np.zeros(d)
    return (norm_frac * radius / dir_norm) * direction


def oa_mixing_matrix(dep: Deployment) -> np.ndarray:
    """Expected mixing matrix of the analog scheme (pathloss / normalizer)."""
    norm = float(dep.pathloss.sum(axis=1).max())
    omega = dep.pathloss / norm
    diag = 1.0 - omega.sum(axis=1)
    if diag.min() < 0:
        raise ValueError(f"negative self-weight {diag.min()} in analog mixing matrix")
    omega[np.diag_indices_from(omega)] = diag
    return omega


def _oa_decode_block(y_rows: np.ndarray, energy: float, radius: float, d: int):
    """Vectorized oa_decode over stacked payloads.

    Returns (decoded, valid): decoded[k] equals oa_decode(y_rows[k], ...)
    wherever valid[k] is True; rows with a vanishing channel estimate are
    flagged invalid and left as garbage for the caller to mask out.
    """
    half = d // 2
    scale = math.sqrt(energy * (half + 2) / 3.0)
    h_est = y_rows[:, half + 1] / scale
    valid = np.abs(h_est) >= _EST_FLOOR
    payload = y_rows / (np.where(valid, h_est, 1.0) * scale)[:, None]
    norm_frac = np.clip(np.real(payload[:, half]), 0.0, 1.0)
    direction = np.concatenate([payload[:, :half].real, payload[:, :half].imag], axis=1)
    dir_norm = np.linalg.norm(direction, axis=1)
    coef = np.where(dir_norm > 0.0, norm_frac * radius / np.where(dir_norm > 0.0, dir_norm, 1.0), 0.0)
    return coef[:, None] * direction, valid


def oa_dgd_frame(
    states: list[NodeState],
    dep: Deployment,
    eta: float,
    problem,
    key: tuple,
) -> list[NodeState]:
    """One frame of the analog baseline over orthogonal fading links."""
    check_node_order(states, dep.n)
    iterates = np.stack([s.w for s in states])
    grads = problem.grad_matrix(iterates)
    d = iterates.shape[1]
    energy = dep.energy_per_sample
    radius = problem.radius
    payloads = np.stack([oa_encode(s.w, energy, radius) for s in states])
    weight_norm = float(dep.pathloss.sum(axis=1).max())
    everyone = np.arange(dep.n)
    new_states = []
    for k, s in enumerate(states):
        i = s.node_id
        others = np.delete(everyone, i)
        h = streams.complex_normal(
            streams.scratch_stream(*key, i, streams.FADING), dep.pathloss[i, others], len(others)
        )
        noise = streams.complex_normal(
            streams.scratch_stream(*key, i, streams.NOISE),
            dep.noise_power,
            (len(others), d // 2 + 2),
        )
        decoded, valid = _oa_decode_block(
            h[:, None] * payloads[others] + noise, energy, radius, d
        )
        link_weight = (dep.pathloss[i, others] / weight_norm) * valid
        c = s.w + link_weight @ (decoded - s.w)
        new_states.append(
            NodeState(
                w=project_to_ball(c - eta * grads[k], radius),
                node_id=i,
                slot=s.slot,
            )
        )
    return new_states


def od_frame_duration_s(n: int, d: int, cfg: DigitalLinkConfig, w_tot_hz: float) -> float:
    """Seconds per digital frame: n orthogonal payloads of ceil(bits/rate) uses."""
    uses = math.ceil(cfg.quantizer.payload_bits(d) / cfg.rate)
    return n * uses / w_tot_hz


def oa_frame_duration_s(n: int, d: int, w_tot_hz: float) -> float:
    """Seconds per analog frame: n orthogonal payloads of d/2 + 2 samples."""
    return n * (d // 2 + 2) / w_tot_hz


def _check_doubly_stochastic(omega: np.ndarray, tol: float = 1e-9):
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError("mixing matrix must be square")
    if omega.min() < -1e-12:
        raise ValueError(f"negative mixing weight {omega.min()}")
    rows = np.abs(omega.sum(axis=1) - 1.0).max()
    cols = np.abs(omega.sum(axis=0) - 1.0).max()
    if rows > tol or cols > tol:
        raise ValueError(f"mixing matrix not doubly stochastic (row err {rows}, col err {cols})")
