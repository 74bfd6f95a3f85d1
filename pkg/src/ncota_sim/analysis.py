"""Convergence analysis for the over-the-air consensus dynamics.

The expected update induces an implicit mixing matrix Omega with
off-diagonal entries pathloss[i,j] / lambda_star over opposite-slot
pairs. This module exposes that matrix and its spectrum, the constants
entering the convergence guarantees, stepsize admissibility checks, the
two-part error bound (iterate to penalized minimizer, penalized
minimizer to optimum), the horizon-indexed stepsize schedule, and a
numerical minimizer of the penalized objective

    G(W) = sum_i f_i(w_i) + (gamma lambda_star / (2 eta)) W^T (I - Omega (x) I_d) W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Deployment
from .problem import Optimum, solve_centralized


@dataclass(frozen=True)
class MixingSpectrum:
    """Implicit mixing matrix, its eigenvalues (descending), and lambda_star."""

    omega: np.ndarray
    eigenvalues: np.ndarray
    lambda_star: float

    @property
    def rho2(self) -> float:
        """Second-largest eigenvalue; consensus needs rho2 < 1."""
        return float(self.eigenvalues[1])

    @property
    def rho_min(self) -> float:
        """Smallest eigenvalue, at least -1."""
        return float(self.eigenvalues[-1])


@dataclass(frozen=True)
class ConvergenceConstants:
    """Problem- and deployment-level constants of the error bounds."""

    mu: float
    L: float
    zeta: float        # distance of the optimum from the feasible boundary
    nabla_max: float   # largest local gradient norm at the optimum
    Z: float           # spectral-gap constant (1 - rho2) lambda_star / (2 sqrt(1 + L/mu))
    Sigma: float       # second-moment bound on the consensus error
    rho2: float
    rho_n: float
    lambda_star: float
    noise_to_energy: float
    n: int
    d: int
    radius: float


@dataclass(frozen=True)
class StepsizeConditions:
    """Admissibility of a stepsize pair for the convergence guarantee.

    contraction: eta (mu + L) + gamma lambda_star (1 - rho_n) <= 2, so the
    combined consensus-plus-gradient step stays contractive.
    interior: eta/gamma small enough that the penalized minimizer stays
    strictly inside the feasible ball.
    """

    contraction: bool
    interior: bool

    def __bool__(self) -> bool:
        return self.contraction and self.interior


@dataclass(frozen=True)
class ConvergenceBounds:
    """Mean-error bound, split at the penalized minimizer, at one frame count."""

    iterate_gap: float    # bound on (1/sqrt N) E-norm of W_k minus the penalized minimizer
    minimizer_gap: float  # bound on (1/sqrt N) norm of the penalized minimizer minus 1 (x) w*
    guaranteed: bool      # both stepsize conditions hold

    @property
    def total(self) -> float:
        return self.iterate_gap + self.minimizer_gap


@dataclass(frozen=True)
class StepSchedule:
    """Constant stepsizes tuned to a target frame horizon."""

    frames: int
    epsilon: float
    a: float
    b: float
    eta: float
    gamma: float


def mixing_matrix(dep: Deployment) -> MixingSpectrum:
    """Implicit mixing matrix of the expected consensus signal."""
    opposite = dep.slot_of[:, None] != dep.slot_of[None, :]
    omega = np.where(opposite, dep.pathloss, 0.0) / dep.lambda_star
    diag = 1.0 - omega.sum(axis=1)
    # summing g_ij / lambda_star instead of sum(g_ij) / lambda_star can leave
    # the heaviest row a few ulps past 1; clamp that, reject anything larger
    if diag.min() < -1e-12:
        raise ValueError(f"negative self-weight {diag.min()}; lambda_star inconsistent")
    omega[np.diag_indices_from(omega)] = np.maximum(diag, 0.0)
    eigenvalues = np.linalg.eigvalsh(omega)[::-1]
    return MixingSpectrum(omega=omega, eigenvalues=eigenvalues, lambda_star=dep.lambda_star)


def consensus_noise_bound(consts_or_dep, n: int, radius: float, d: int) -> float:
    """Second-moment bound 8 n (radius d (lambda_star + sigma2/E))^2.

    Accepts anything exposing lambda_star and noise_to_energy (constants
    or a deployment).
    """
    lam = consts_or_dep.lambda_star
    n2e = consts_or_dep.noise_to_energy
    return 8.0 * n * (radius * d * (lam + n2e)) ** 2


def convergence_constants(
    spectrum: MixingSpectrum,
    optimum: Optimum,
    problem,
    dep: Deployment,
) -> ConvergenceConstants:
    """Assemble every constant the bounds need from solved sub-problems."""
    z = (1.0 - spectrum.rho2) * spectrum.lambda_star / (
        2.0 * math.sqrt(1.0 + problem.smoothness / problem.mu)
    )
    sigma = consensus_noise_bound(dep, problem.n, problem.radius, problem.d)
    return ConvergenceConstants(
        mu=problem.mu,
        L=problem.smoothness,
        zeta=optimum.zeta,
        nabla_max=optimum.nabla_max,
        Z=z,
        Sigma=sigma,
        rho2=spectrum.rho2,
        rho_n=spectrum.rho_min,
        lambda_star=spectrum.lambda_star,
        noise_to_energy=dep.noise_to_energy,
        n=problem.n,
        d=problem.d,
        radius=problem.radius,
    )


def check_conditions(consts: ConvergenceConstants, gamma: float, eta: float) -> StepsizeConditions:
    """Evaluate both stepsize admissibility conditions."""
    contraction = (
        eta * (consts.mu + consts.L) + gamma * consts.lambda_star * (1.0 - consts.rho_n) <= 2.0
    )
    if gamma > 0:
        interior = eta / gamma <= consts.zeta * consts.Z / (
            math.sqrt(consts.n) * consts.nabla_max
        )
    else:
        interior = False
    return StepsizeConditions(contraction=bool(contraction), interior=bool(interior))


def convergence_bounds(
    consts: ConvergenceConstants, gamma: float, eta: float, frame: int
) -> ConvergenceBounds:
    """Two-part mean-error bound after ``frame`` frames.

    Computed even when the stepsize conditions fail, in which case
    ``guaranteed`` is False and the numbers are indicative only.
    """
    if eta > 0:
        iterate_gap = 2.0 * consts.radius * (
            (math.sqrt(2.0) * consts.d / math.sqrt(consts.mu))
            * (consts.lambda_star + consts.noise_to_energy)
            * (gamma / math.sqrt(eta))
            + math.exp(-consts.mu * eta * frame)
        )
    else:
        iterate_gap = math.inf
    minimizer_gap = (consts.nabla_max / consts.Z) * (eta / gamma) if gamma > 0 else math.inf
    return ConvergenceBounds(
        iterate_gap=float(iterate_gap),
        minimizer_gap=float(minimizer_gap),
        guaranteed=bool(check_conditions(consts, gamma, eta)),
    )


def horizon_schedule(frames: int, epsilon: float, a: float, b: float) -> StepSchedule:
    """Stepsizes eta = a K^-(1-eps), gamma = b K^-(3/4)(1-eps) for horizon K."""
    if frames < 1:
        raise ValueError("horizon must be at least one frame")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    if a <= 0 or b <= 0:
        raise ValueError("schedule scales must be positive")
    return StepSchedule(
        frames=int(frames),
        epsilon=float(epsilon),
        a=float(a),
        b=float(b),
        eta=a * float(frames) ** -(1.0 - epsilon),
        gamma=b * float(frames) ** (-0.75 * (1.0 - epsilon)),
    )


def lyapunov_value(
    iterates: np.ndarray,
    gamma: float,
    eta: float,
    spectrum: MixingSpectrum,
    problem,
) -> float:
    """Penalized objective G(W) whose minimizer the dynamics track."""
    if eta <= 0:
        raise ValueError("eta must be positive to form the penalty ratio")
    w = np.asarray(iterates, dtype=float)
    losses = sum(problem.local_loss(w[i], i) for i in range(problem.n))
    pen = gamma * spectrum.lambda_star / eta
    quad = float(np.sum(w * (w - spectrum.omega @ w)))
    return float(losses) + 0.5 * pen * quad


def minimize_lyapunov(
    problem,
    gamma: float,
    eta: float,
    spectrum: MixingSpectrum,
    tol: float = 1e-9,
    max_iter: int = 2_000_000,
) -> np.ndarray:
    """Minimize G over the product of feasible balls by projected gradient.

    Uses the accelerated (constant-momentum) variant so stiff penalties
    gamma/eta stay tractable; stops when the gradient-mapping norm drops
    below ``tol``.
    """
    if eta <= 0 or gamma < 0:
        raise ValueError("need eta > 0 and gamma >= 0")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    pen = gamma * spectrum.lambda_star / eta
    omega = spectrum.omega
    lips = problem.smoothness + pen * (1.0 - spectrum.rho_min)
    step = 1.0 / lips
    sqrt_kappa = math.sqrt(lips / problem.mu)
    beta = (sqrt_kappa - 1.0) / (sqrt_kappa + 1.0)

    def grad(w):
        return problem.grad_matrix(w) + pen * (w - omega @ w)

    def project_rows(w):
        norms = np.linalg.norm(w, axis=1)
        factor = np.minimum(1.0, problem.radius / np.maximum(norms, 1e-300))
        return w * factor[:, None]

    current = np.zeros((problem.n, problem.d))
    lookahead = current
    for it in range(max_iter):
        advanced = project_rows(lookahead - step * grad(lookahead))
        if it % 50 == 0:
            mapped = advanced - project_rows(advanced - step * grad(advanced))
            if float(np.linalg.norm(mapped)) * lips <= tol:
                return advanced
        lookahead = advanced + beta * (advanced - current)
        current = advanced
    raise RuntimeError(f"penalized minimizer did not converge in {max_iter} iterations")


def analysis_report(
    dep: Deployment,
    problem,
    gamma: float | None = None,
    eta: float | None = None,
    frames: list[int] | None = None,
    tol: float = 1e-10,
) -> dict:
    """Self-contained JSON-ready report of spectrum, constants, and bounds.

    Stepsize conditions and per-frame bounds are included only when a
    stepsize pair is supplied.
    """
    spectrum = mixing_matrix(dep)
    optimum = solve_centralized(problem, tol=tol)
    consts = convergence_constants(spectrum, optimum, problem, dep)
    doc = {
        "n": problem.n,
        "d": problem.d,
        "radius": problem.radius,
        "lambda_star": consts.lambda_star,
        "noise_to_energy": consts.noise_to_energy,
        "rho2": consts.rho2,
        "rho_n": consts.rho_n,
        "consensus_feasible": bool(consts.rho2 < 1.0),
        "Z": consts.Z,
        "Sigma": consts.Sigma,
        "zeta": consts.zeta,
        "nabla_max": consts.nabla_max,
        "grad_norm_at_zero": optimum.grad_norm_at_zero,
        "eta": eta,
        "gamma": gamma,
        "conditions": None,
        "bounds": None,
    }
    if gamma is not None and eta is not None:
        cond = check_conditions(consts, gamma, eta)
        doc["conditions"] = {"contraction": cond.contraction, "interior": cond.interior}
        doc["bounds"] = [
            {
                "frame": int(k),
                "iterate_gap": bounds.iterate_gap,
                "minimizer_gap": bounds.minimizer_gap,
                "total": bounds.total,
                "guaranteed": bounds.guaranteed,
            }
            for k in (frames or [])
            for bounds in [convergence_bounds(consts, gamma, eta, int(k))]
        ]
    return doc
