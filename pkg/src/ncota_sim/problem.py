"""Distributed learning task: one regularized logistic loss per node.

Node i holds a single unit-norm feature vector d_i with label l_i in
{-1, +1} and minimizes

    f_i(w) = 0.005 ||w||^2 + ln(1 + exp(-l_i d_i^T w)),

which is mu-strongly convex and L-smooth with mu = 0.01 and
L = mu + 1/4 = 0.26 (the logistic curvature never exceeds 1/4 on unit
features). The global objective is the average of the f_i. The feasible
region is the ball of radius R = max(||grad F(0)|| / mu, R_min), which
provably contains the unconstrained optimum.

Datasets come either from IDX-format image/label files (binary digits,
energy-ranked pixel selection) or from a synthetic two-centroid model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import streams

MU = 0.01
SMOOTHNESS = MU + 0.25

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass
class ProblemSpec:
    """The N local objectives plus an optional held-out test set."""

    features: np.ndarray            # (N, d), unit-norm rows
    labels: np.ndarray              # (N,), +-1
    radius: float                   # feasible ball radius R
    mu: float = MU
    smoothness: float = SMOOTHNESS  # L
    test_features: np.ndarray | None = None
    test_labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def local_loss(self, w, i: int) -> float:
        z = self.labels[i] * float(self.features[i] @ np.asarray(w, dtype=float))
        return 0.5 * self.mu * float(np.dot(w, w)) + float(np.logaddexp(0.0, -z))

    def local_grad(self, w, i: int) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        z = self.labels[i] * float(self.features[i] @ w)
        return self.mu * w - self.labels[i] * expit(-z) * self.features[i]

    def grad_matrix(self, iterates: np.ndarray) -> np.ndarray:
        """Row i is grad f_i evaluated at iterates[i]; vectorized over nodes."""
        iterates = np.asarray(iterates, dtype=float)
        z = self.labels * np.einsum("nd,nd->n", self.features, iterates)
        return self.mu * iterates - (self.labels * expit(-z))[:, None] * self.features

    def global_loss(self, w) -> float:
        w = np.asarray(w, dtype=float)
        z = self.labels * (self.features @ w)
        return 0.5 * self.mu * float(np.dot(w, w)) + float(np.logaddexp(0.0, -z).mean())

    def global_grad(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        z = self.labels * (self.features @ w)
        return self.mu * w - (self.labels * expit(-z)) @ self.features / self.n

    def classification_error(self, w) -> float:
        """Fraction of held-out samples misclassified by sign(w . d)."""
        if self.test_features is None:
            return float("nan")
        predicted = np.where(self.test_features @ np.asarray(w, dtype=float) > 0.0, 1, -1)
        return float(np.mean(predicted != self.test_labels))

    def to_json(self) -> str:
        doc = {
            "features": self.features.tolist(),
            "labels": [int(v) for v in self.labels],
            "radius": self.radius,
            "mu": self.mu,
            "smoothness": self.smoothness,
            "test_features": None
            if self.test_features is None
            else self.test_features.tolist(),
            "test_labels": None
            if self.test_labels is None
            else [int(v) for v in self.test_labels],
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "ProblemSpec":
        doc = json.loads(text)
        return ProblemSpec(
            features=np.asarray(doc["features"], dtype=float),
            labels=np.asarray(doc["labels"], dtype=float),
            radius=float(doc["radius"]),
            mu=float(doc["mu"]),
            smoothness=float(doc["smoothness"]),
            test_features=None
            if doc["test_features"] is None
            else np.asarray(doc["test_features"], dtype=float),
            test_labels=None
            if doc["test_labels"] is None
            else np.asarray(doc["test_labels"], dtype=float),
        )


@dataclass(frozen=True)
class Optimum:
    """Centralized solution and the constants derived from it."""

    w_star: np.ndarray
    grad_norm_at_zero: float
    zeta: float       # R - ||w*||, margin of the optimum from the boundary
    nabla_max: float  # max_i ||grad f_i(w*)||
    iterations: int


def _grad_at_zero(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # grad F(0) = -(1/N) sum_i l_i d_i * sigmoid(0)
    return -0.5 * (labels @ features) / features.shape[0]


def estimate_radius(problem: ProblemSpec, r_min: float = 1.0) -> float:
    """Feasible radius max(||grad F(0)|| / mu, r_min) containing the optimum."""
    g0 = float(np.linalg.norm(_grad_at_zero(problem.features, problem.labels)))
    return max(g0 / problem.mu, r_min)


def solve_centralized(problem, tol: float = 1e-10, max_iter: int = 200_000) -> Optimum:
    """Projected full-gradient descent to the global optimum.

    Runs with the classical stepsize 2/(mu+L) until ||grad F(w)|| <= tol,
    projecting onto the radius-R ball each step. Works on any object
    exposing mu, smoothness, radius, n, global_grad and local_grad.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    step = 2.0 / (problem.mu + problem.smoothness)
    w = np.zeros(problem.d)
    g0 = float(np.linalg.norm(problem.global_grad(w)))
    for it in range(max_iter):
        g = problem.global_grad(w)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            nabla_max = max(
                float(np.linalg.norm(problem.local_grad(w, i))) for i in range(problem.n)
            )
            return Optimum(
                w_star=w,
                grad_norm_at_zero=g0,
                zeta=problem.radius - float(np.linalg.norm(w)),
                nabla_max=nabla_max,
                iterations=it,
            )
        candidate = w - step * g
        norm = float(np.linalg.norm(candidate))
        w = candidate if norm <= problem.radius else candidate * (problem.radius / norm)
    raise RuntimeError(f"centralized solver did not reach ||grad|| <= {tol} in {max_iter} steps")


def synthesize_dataset(
    n: int,
    d: int,
    seed: int,
    class_spread: float = 0.3,
    test_size: int = 200,
    r_min: float = 1.0,
    radius: float | None = None,
) -> ProblemSpec:
    """Two-centroid synthetic task: noisy unit-norm copies of +-prototypes.

    Draws one unit-norm Gaussian centroid per class, then gives each node
    a unit-normalized noisy copy of its class centroid. Labels are
    balanced (first ceil(n/2) nodes positive). The test set is drawn
    fresh from the same model.
    """
    rng = streams.stream(seed, streams.DATA)
    centroids = rng.standard_normal((2, d))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    def draw(count, label_pos_count):
        labels = np.where(np.arange(count) < label_pos_count, 1.0, -1.0)
        picks = np.where(labels > 0, 0, 1)
        feats = centroids[picks] + class_spread * rng.standard_normal((count, d))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        return feats, labels

    features, labels = draw(n, (n + 1) // 2)
    test_features, test_labels = draw(test_size, (test_size + 1) // 2) if test_size else (None, None)
    spec = ProblemSpec(
        features=features,
        labels=labels,
        radius=1.0,
        test_features=test_features,
        test_labels=test_labels,
    )
    spec.radius = float(radius) if radius is not None else estimate_radius(spec, r_min)
    return spec


def read_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into an (count, rows*cols) float array in [0, 1]."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise ValueError(f"{path}: bad IDX image magic 0x{magic:08x}")
        raw = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
    if raw.size != count * rows * cols:
        raise ValueError(f"{path}: expected {count * rows * cols} pixels, got {raw.size}")
    return raw.reshape(count, rows * cols).astype(float) / 255.0


def read_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into an (count,) integer array."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated IDX label header")
        magic, count = struct.unpack(">II", header)
        if magic != _IDX_LABELS_MAGIC:
            raise ValueError(f"{path}: bad IDX label magic 0x{magic:08x}")
        raw = np.frombuffer(fh.read(count), dtype=np.uint8)
    if raw.size != count:
        raise ValueError(f"{path}: expected {count} labels, got {raw.size}")
    return raw.astype(np.int64)


def ingest_dataset(
    images_path,
    labels_path,
    n: int,
    d: int,
    test_size: int = 200,
    r_min: float = 1.0,
    radius: float | None = None,
) -> ProblemSpec:
    """Build the task from IDX files restricted to the two binary digits.

    Keeps only images labeled 0 or 1, assigns one image per node with a
    balanced class split (digit 0 maps to label +1), and holds out the
    next balanced test_size images as the test set. The d retained
    pixels are those with the largest mean energy over the n training
    images only; selected features are normalized to unit norm.
    """
    images = read_idx_images(images_path)
    digits = read_idx_labels(labels_path)
    if images.shape[0] != digits.shape[0]:
        raise ValueError("image and label counts differ")

    zeros = np.flatnonzero(digits == 0)
    ones = np.flatnonzero(digits == 1)
    n_pos = (n + 1) // 2
    n_neg = n - n_pos
    t_pos = (test_size + 1) // 2
    t_neg = test_size - t_pos
    if len(zeros) < n_pos + t_pos or len(ones) < n_neg + t_neg:
        raise ValueError(
            f"not enough binary-digit images: need {n_pos + t_pos} zeros and "
            f"{n_neg + t_neg} ones, found {len(zeros)} and {len(ones)}"
        )

    train_idx = np.concatenate([zeros[:n_pos], ones[:n_neg]])
    train_images = images[train_idx]
    labels = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])

    # Energy-ranked pixel selection computed on the training images alone.
    energy = (train_images**2).mean(axis=0)
    keep = np.sort(np.argsort(energy)[::-1][:d])

    def project(block):
        sub = block[:, keep]
        norms = np.linalg.norm(sub, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("an image has no energy on the selected pixels")
        return sub / norms[:, None]

    features = project(train_images)
    test_features = test_labels = None
    if test_size:
        test_idx = np.concatenate([zeros[n_pos : n_pos + t_pos], ones[n_neg : n_neg + t_neg]])
        test_features = project(images[test_idx])
        test_labels = np.concatenate([np.ones(t_pos), -np.ones(t_neg)])

    spec = ProblemSpec(
        features=features,
        labels=labels,
        radius=1.0,
        test_features=test_features,
        test_labels=test_labels,
    )
    spec.radius = float(radius) if radius is not None else estimate_radius(spec, r_min)
    return spec
