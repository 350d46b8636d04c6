"""Closed-form conjugate (Wirtinger) gradients of the pilot objectives.

Convention: a gradient G is d f / d Phi^*, so the derivative of f along a
perturbation E of the pilot is 2 Re <G, E>. The expressions below were
re-derived from d log det Sigma(Phi) and d beta(Phi) and are validated
against finite differences rather than transcribed, which resolves the
shape ambiguities of the published three-term form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import GmmUserModel, SensingScene, pilot_entries, steering_vector
from .errors import InvalidParameterError, NumericError, ObjectiveDomainError
from .metrics import IsacObjective, comm_state, sense_state


@dataclass(eq=False)
class GradientMatrix:
    """L x N_t conjugate-gradient matrix d f / d Phi^*."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if not np.all(np.isfinite(self.entries.view(float))):
            raise NumericError("gradient contains non-finite entries")


def _comm_grad_entries(pilot, model: GmmUserModel) -> np.ndarray:
    state = comm_state(pilot, model)
    weights = np.exp(state.log_mix - state.log_omega)
    # d log det Sigma_n / d Phi^* = Sigma_n^{-1} Phi R_n
    x = np.linalg.solve(state.sigma, state.phi_r)
    # d beta_n / d Phi^* = s_n mu_bar_n^H - s_n (s_n^H Phi R_n)
    y = np.einsum("kl,klm->km", state.s.conj(), state.phi_r)
    term = x + state.s[:, :, None] * (state.mu_bar.conj() - y)[:, None, :]
    return np.einsum("k,klm->lm", weights, term)


def grad_comm_mi_user(pilot, model: GmmUserModel) -> GradientMatrix:
    """Gradient of the per-user communication metric."""
    return GradientMatrix(_comm_grad_entries(pilot, model))


def _sense_grad_entries(pilot, scene: SensingScene) -> np.ndarray:
    state = sense_state(pilot, scene)
    if state.arg <= 0.0:
        raise ObjectiveDomainError(
            f"approximate sensing metric log argument is {state.arg:.6g} <= 0", state.arg
        )
    a_tx, u, powers = state.a_tx, state.u, state.powers
    n_rx = scene.geometry.n_rx
    angles = np.concatenate(([scene.target_angle], scene.clutter_angles))
    a_rx = np.stack(
        [steering_vector(scene.geometry.n_rx, scene.geometry.spacing_rx, t) for t in angles]
    )
    rx_corr = a_rx[0].conj() @ a_rx.T

    numer = n_rx * np.outer(u[0], a_tx[0].conj())
    for i in range(1, len(powers)):
        nu_i = powers[i]
        if nu_i == 0.0:
            continue
        c = state.gram[0, i]
        r = rx_corr[i]
        d_i = state.clutter_denoms[i - 1]
        d_cross = np.conj(c) * r * np.outer(u[i], a_tx[0].conj()) + c * np.conj(r) * np.outer(
            u[0], a_tx[i].conj()
        )
        numer -= (nu_i / d_i) * d_cross
        numer += (nu_i**2 * abs(c) ** 2 * n_rx / d_i**2) * np.outer(u[i], a_tx[i].conj())
    return (powers[0] / state.noise_var / state.arg) * numer


def grad_sensing_mi(pilot, scene: SensingScene) -> GradientMatrix:
    """Gradient of the approximate sensing metric (the optimized form)."""
    return GradientMatrix(_sense_grad_entries(pilot, scene))


def grad_isac(pilot, objective: IsacObjective) -> GradientMatrix:
    """rho-weighted combination of the communication and sensing gradients."""
    phi = pilot_entries(pilot)
    total = np.zeros_like(phi)
    if objective.rho > 0.0:
        for w, model in zip(objective.user_weights, objective.users):
            total += objective.rho * w * _comm_grad_entries(phi, model)
    if objective.rho < 1.0:
        total += (1.0 - objective.rho) * _sense_grad_entries(phi, objective.scene)
    return GradientMatrix(total)


def isac_value_and_grad(pilot, objective: IsacObjective):
    """(objective, weighted comm MI, sense MI, gradient entries) in one pass.

    Shares the per-pilot state between value and gradient; used by the
    optimizer where both are needed every iteration.
    """
    phi = pilot_entries(pilot)
    comm_total = 0.0
    grad = np.zeros_like(phi)
    for w, model in zip(objective.user_weights, objective.users):
        state = comm_state(phi, model)
        comm_total += w * state.value
        mix = np.exp(state.log_mix - state.log_omega)
        x = np.linalg.solve(state.sigma, state.phi_r)
        y = np.einsum("kl,klm->km", state.s.conj(), state.phi_r)
        term = x + state.s[:, :, None] * (state.mu_bar.conj() - y)[:, None, :]
        grad += objective.rho * w * np.einsum("k,klm->lm", mix, term)

    s_state = sense_state(phi, objective.scene)
    if s_state.arg <= 0.0:
        raise ObjectiveDomainError(
            f"approximate sensing metric log argument is {s_state.arg:.6g} <= 0", s_state.arg
        )
    sense_val = float(np.log(s_state.arg))
    grad += (1.0 - objective.rho) * _sense_grad_entries(phi, objective.scene)
    value = objective.rho * comm_total + (1.0 - objective.rho) * sense_val
    return value, float(comm_total), sense_val, grad


def finite_diff_check(objective_fn, gradient_fn, pilot, step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference derivatives.

    Every real and imaginary pilot coordinate is perturbed; the analytic
    directional derivative along E is 2 Re <G, E>.  Returns
    max |analytic - numeric| / max(1e-12, |numeric|).
    """
    if step <= 0:
        raise InvalidParameterError("finite-difference step must be positive")
    phi = pilot_entries(pilot).copy()
    grad = gradient_fn(phi)
    g_entries = grad.entries if isinstance(grad, GradientMatrix) else np.asarray(grad)

    def directional(base, direction, h):
        # fourth-order central stencil
        f = lambda t: float(objective_fn(base + t * direction))
        return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12.0 * h)

    worst = 0.0
    n_slots, n_tx = phi.shape
    for i in range(n_slots):
        for j in range(n_tx):
            h = step * (1.0 + abs(phi[i, j]))
            basis = np.zeros_like(phi)
            basis[i, j] = 1.0
            for direction, analytic in (
                (basis, 2.0 * g_entries[i, j].real),
                (1j * basis, 2.0 * g_entries[i, j].imag),
            ):
                numeric = directional(phi, direction, h)
                err = abs(analytic - numeric) / max(1e-12, abs(numeric))
                worst = max(worst, err)
    return worst
