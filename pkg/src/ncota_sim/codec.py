"""Convex-combination codec between ball-constrained vectors and preamble mixtures.

A model vector w with ||w|| <= R is expressed as a convex combination of
M = d + 1 fixed codewords whose hull contains the radius-R ball:

    z_m = 2*R*d*e_m - R*1   (m = 1..d),     z_{d+1} = -R*1.

The mixture weights double as transmit energy allocations: codeword m is
represented on air by the scaled preamble sqrt(E)*sqrt(M)*sqrt(p_m)*e_m,
so each frame spends total energy M*E regardless of w. The preambles are
orthogonal one-hot columns and are never materialized; only the length-M
sample vector of the mixture matters.
"""

from dataclasses import dataclass

import numpy as np

# Componentwise tolerance below which a slightly negative mixture weight is
# treated as floating point underflow and clamped to zero.
SIMPLEX_TOL = 1e-12

# Relative slack admitted on ||w|| <= R before encode rejects the input.
NORM_SLACK = 1e-9


@dataclass(frozen=True)
class Codebook:
    """Fixed codeword set for dimension d and feasible radius R."""

    d: int
    radius: float
    codewords: np.ndarray  # (d, M) with column m = z_m

    @property
    def size(self) -> int:
        """Number of codewords M = d + 1."""
        return self.d + 1

    @property
    def preamble_scale(self) -> float:
        """Per-sample amplitude sqrt(M) of the unit-energy preambles."""
        return float(np.sqrt(self.size))


@dataclass(frozen=True)
class TxFrame:
    """One node's on-air samples for a single frame.

    samples
        Length-M real vector x with x_m = sqrt(E)*sqrt(M)*sqrt(p_m).
    energy_per_sample
        The energy budget E; ||samples||^2 == M * E.
    weights
        The mixture weights p that produced the samples. Kept for the
        idealized channel backend, which reports conditional means
        instead of drawing fades.
    """

    samples: np.ndarray
    energy_per_sample: float
    weights: np.ndarray


def build_codebook(d: int, radius: float) -> Codebook:
    """Construct the d+1 codewords spanning the radius-``radius`` ball."""
    if d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    m = d + 1
    z = np.full((d, m), -float(radius))
    idx = np.arange(d)
    z[idx, idx] += 2.0 * radius * d
    return Codebook(d=int(d), radius=float(radius), codewords=z)


def encode_weights(w, cb: Codebook) -> np.ndarray:
    """Map a feasible vector to its convex mixture weights.

    Returns the length-(d+1) probability vector p with w = codewords @ p.
    Raises ValueError if ||w|| exceeds the codebook radius beyond a
    1e-9 relative slack.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (cb.d,):
        raise ValueError(f"expected shape ({cb.d},), got {w.shape}")
    norm = float(np.linalg.norm(w))
    if norm > cb.radius * (1.0 + NORM_SLACK):
        raise ValueError(f"||w|| = {norm} exceeds codebook radius {cb.radius}")
    p = np.empty(cb.size)
    p[: cb.d] = (w + cb.radius) / (2.0 * cb.radius * cb.d)
    p[cb.d] = 1.0 - p[: cb.d].sum()
    return _clamp_simplex(p)


def encode_weights_batch(w_rows: np.ndarray, cb: Codebook) -> np.ndarray:
    """Encode a stack of vectors at once; row k of the result is
    ``encode_weights(w_rows[k], cb)``.

    One vectorized pass replaces the per-node encode in the frame loop.
    """
    w_rows = np.asarray(w_rows, dtype=float)
    if w_rows.ndim != 2 or w_rows.shape[1] != cb.d:
        raise ValueError(f"expected shape (n, {cb.d}), got {w_rows.shape}")
    norms = np.linalg.norm(w_rows, axis=1)
    worst = int(np.argmax(norms))
    if norms[worst] > cb.radius * (1.0 + NORM_SLACK):
        raise ValueError(
            f"||w|| = {norms[worst]} exceeds codebook radius {cb.radius} (row {worst})"
        )
    p = np.empty((w_rows.shape[0], cb.size))
    p[:, : cb.d] = (w_rows + cb.radius) / (2.0 * cb.radius * cb.d)
    p[:, cb.d] = 1.0 - p[:, : cb.d].sum(axis=1)
    return _clamp_simplex(p)


def decode_weights(p, cb: Codebook) -> np.ndarray:
    """Invert the mixture: return codewords @ p for a valid simplex vector."""
    p = _check_simplex(np.asarray(p, dtype=float))
    if p.shape != (cb.size,):
        raise ValueError(f"expected {cb.size} weights, got shape {p.shape}")
    return cb.codewords @ p


def build_tx_signal(p, energy_per_sample: float) -> TxFrame:
    """Scale mixture weights into on-air samples with ||x||^2 = M * E."""
    if energy_per_sample <= 0:
        raise ValueError("energy_per_sample must be positive")
    p = _check_simplex(np.asarray(p, dtype=float))
    m = p.shape[0]
    x = np.sqrt(energy_per_sample) * np.sqrt(m) * np.sqrt(p)
    return TxFrame(samples=x, energy_per_sample=float(energy_per_sample), weights=p)


def project_to_ball(a, radius: float) -> np.ndarray:
    """Euclidean projection onto the origin-centered ball of given radius."""
    a = np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(a))
    if norm <= radius:
        return a
    return a * (radius / norm)


def _clamp_simplex(p: np.ndarray) -> np.ndarray:
    lowest = float(p.min())
    if lowest < -SIMPLEX_TOL:
        raise ValueError(f"mixture weight {lowest} below -{SIMPLEX_TOL}")
    if lowest < 0.0:
        p = np.where(p < 0.0, 0.0, p)
    return p


def _check_simplex(p: np.ndarray) -> np.ndarray:
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"mixture weights sum to {p.sum()}, expected 1")
    return _clamp_simplex(p)
