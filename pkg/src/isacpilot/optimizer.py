"""Projected gradient ascent on the Stiefel manifold plus frontier tooling.

Each iteration takes an ascent step along the conjugate gradient and
projects back to the closest row-orthonormal matrix (polar factor via SVD),
so every recorded iterate is feasible.  Independent runs (seeds, trade-off
values, cloud samples) are pure and can execute concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import PilotMatrix, pilot_entries
from .errors import (
    DimensionError,
    InvalidParameterError,
    IsacPilotError,
    SingularMatrixError,
)
from .gradients import isac_value_and_grad
from .metrics import IsacObjective, mi_pair
from .streams import complex_normal

STOP_WINDOW = 10


@dataclass(frozen=True)
class OptimizerConfig:
    """Fixed-step ascent settings; rel_tol 0 disables the early stop."""

    step_size: float = 0.1
    max_iters: int = 200
    rel_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise InvalidParameterError("step_size must be positive")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise InvalidParameterError("rel_tol must be nonnegative")


@dataclass(eq=False)
class OptimizationTrace:
    """Per-iteration objective/feasibility records and the final pilot."""

    iterations: np.ndarray
    objective: np.ndarray
    comm_mi: np.ndarray
    sense_mi: np.ndarray
    residual: np.ndarray
    final_pilot: PilotMatrix

    def __post_init__(self):
        if np.any(self.residual > 1e-8):
            raise IsacPilotError("optimizer produced an infeasible iterate")

    @property
    def n_iterations(self) -> int:
        return int(self.iterations[-1])


def project_stiefel(z) -> PilotMatrix:
    """Closest row-orthonormal matrix to z in Frobenius norm (polar factor)."""
    z = np.asarray(pilot_entries(z), dtype=complex)
    u, s, vh = np.linalg.svd(z, full_matrices=False)
    if s.min(initial=np.inf) <= 1e-12:
        raise SingularMatrixError("projection undefined for rank-deficient input")
    return PilotMatrix(u @ vh)


def random_stiefel(n_slots: int, n_tx: int, rng: np.random.Generator) -> PilotMatrix:
    """Random orthogonal pilot: projected i.i.d. complex Gaussian matrix."""
    if n_slots >= n_tx:
        raise DimensionError("pilot length must be strictly below the antenna count")
    return project_stiefel(complex_normal(rng, (n_slots, n_tx)))


def _residual(phi: np.ndarray) -> float:
    gram = phi @ phi.conj().T
    return float(np.linalg.norm(gram - np.eye(phi.shape[0])))


def optimize_pgd(
    init: PilotMatrix, objective: IsacObjective, config: OptimizerConfig
) -> OptimizationTrace:
    """Ascend the scalarized objective from ``init``; deterministic given inputs.

    Stops at ``max_iters`` or once the objective spread over a 10-iteration
    window drops below ``rel_tol`` relative to the current value.
    """
    phi = pilot_entries(init).copy()
    values, comms, senses, residuals = [], [], [], []

    def record(p, t):
        try:
            val, comm, sense, grad = isac_value_and_grad(p, objective)
        except IsacPilotError as exc:
            exc.args = (f"iteration {t}: {exc}",) + exc.args[1:]
            raise
        values.append(val)
        comms.append(comm)
        senses.append(sense)
        residuals.append(_residual(p))
        return grad

    grad = record(phi, 0)
    n_done = 0
    for t in range(1, config.max_iters + 1):
        phi = project_stiefel(phi + config.step_size * grad).entries
        grad = record(phi, t)
        n_done = t
        if config.rel_tol > 0 and t >= STOP_WINDOW:
            window = values[-(STOP_WINDOW + 1) :]
            if max(window) - min(window) <= config.rel_tol * max(1.0, abs(values[-1])):
                break

    return OptimizationTrace(
        iterations=np.arange(n_done + 1),
        objective=np.array(values),
        comm_mi=np.array(comms),
        sense_mi=np.array(senses),
        residual=np.array(residuals),
        final_pilot=PilotMatrix(phi),
    )


@dataclass(eq=False)
class SweepPoint:
    """Endpoint summary of one trade-off run."""

    rho: float
    comm_mi: float
    sense_mi: float
    pilot: PilotMatrix
    iterations: int
    residual: float


def rho_sweep(
    objective_template: IsacObjective,
    rho_values,
    shared_init: PilotMatrix,
    config: OptimizerConfig,
) -> list[SweepPoint]:
    """Run the optimizer per trade-off value from one shared initializer."""
    rho_values = np.asarray(rho_values, dtype=float)
    if np.any((rho_values < 0) | (rho_values > 1)):
        raise InvalidParameterError("rho values must lie in [0, 1]")
    points = []
    for rho in rho_values:
        objective = replace(objective_template, rho=float(rho))
        trace = optimize_pgd(shared_init, objective, config)
        points.append(
            SweepPoint(
                rho=float(rho),
                comm_mi=float(trace.comm_mi[-1]),
                sense_mi=float(trace.sense_mi[-1]),
                pilot=trace.final_pilot,
                iterations=trace.n_iterations,
                residual=float(trace.residual[-1]),
            )
        )
    return points


def pareto_filter(points) -> list:
    """Non-dominated subset under the componentwise order, input order kept.

    A point is dropped iff some other point is >= in every coordinate and
    strictly greater in at least one; exact duplicates all survive.
    """
    pts = [tuple(p) for p in points]
    if not pts:
        return []
    arr = np.asarray(pts, dtype=float)
    n_pts, n_dim = arr.shape
    dominated = np.zeros(n_pts, dtype=bool)
    chunk = max(1, 10_000_000 // n_pts)
    for start in range(0, n_pts, chunk):
        block = arr[start : start + chunk]
        geq = np.ones((block.shape[0], n_pts), dtype=bool)
        strict = np.zeros((block.shape[0], n_pts), dtype=bool)
        for d in range(n_dim):
            others = arr[:, d][None, :]
            mine = block[:, d][:, None]
            geq &= others >= mine
            strict |= others > mine
        dominated[start : start + chunk] = np.any(geq & strict, axis=1)
    return [p for p, d in zip(pts, dominated) if not d]


def sample_feasible_cloud(
    n_samples: int,
    n_slots: int,
    objective: IsacObjective,
    rng: np.random.Generator,
    formula: str = "approx",
) -> np.ndarray:
    """(sense MI, comm MI) pairs of random orthogonal pilots, shape (n, 2)."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    n_tx = objective.scene.geometry.n_tx
    pairs = np.empty((n_samples, 2))
    for i in range(n_samples):
        pilot = random_stiefel(n_slots, n_tx, rng)
        pairs[i] = mi_pair(pilot, objective, formula)
    return pairs
