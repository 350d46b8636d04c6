"""Mutual-information objectives and diagnostics for pilot design.

All values are in natural-log units; conversion to bits happens only at
reporting boundaries.  The communication metric is a linearized-entropy
surrogate and can be negative; it includes its pilot-independent constant
so values are comparable across pilots at a fixed noise level and length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .channel import (
    GmmUserModel,
    SensingScene,
    pilot_entries,
    sample_channels,
    steering_vector,
)
from .errors import (
    DimensionError,
    InvalidParameterError,
    NumericError,
    ObjectiveDomainError,
    UnsupportedModelError,
)
from .streams import complex_normal


@dataclass(eq=False)
class IsacObjective:
    """Scalarized joint objective: rho weights communication against sensing."""

    rho: float
    user_weights: np.ndarray
    users: list
    scene: SensingScene

    def __post_init__(self):
        self.user_weights = np.asarray(self.user_weights, dtype=float)
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidParameterError("rho must lie in [0, 1]")
        if self.user_weights.ndim != 1 or self.user_weights.size != len(self.users):
            raise DimensionError("one weight per user model is required")
        if abs(self.user_weights.sum() - 1.0) > 1e-12 or np.any(self.user_weights < 0):
            raise InvalidParameterError("user weights must be nonnegative and sum to 1")


@dataclass
class SensingVectors:
    """Stacked target/clutter response vectors mu_i of length N_r * L."""

    mu: list


class CommState(NamedTuple):
    """Shared per-pilot quantities for the communication metric and its gradient."""

    value: float
    log_mix: np.ndarray  # log of alpha_n e^{-beta_n} / det Sigma_n, per component
    log_omega: float
    chol: np.ndarray  # (N_k, L, L) Cholesky factors of Sigma_n
    phi_r: np.ndarray  # (N_k, L, N_t) products Phi R_n
    v: np.ndarray  # (N_k, L) products Phi mu_bar_n
    s: np.ndarray  # (N_k, L) solves Sigma_n^{-1} v_n
    mu_bar: np.ndarray  # (N_k, N_t)
    sigma: np.ndarray  # (N_k, L, L)


class SenseState(NamedTuple):
    """Shared per-pilot quantities for the sensing metric and its gradient."""

    a_tx: np.ndarray  # (Q+1, N_t) transmit steering, target first
    u: np.ndarray  # (Q+1, L) pilots applied to steering
    gram: np.ndarray  # (Q+1, Q+1) Gram of the mu_i vectors
    powers: np.ndarray  # (Q+1,) nu_i, target first
    noise_var: float
    arg: float  # argument of the log in the approximate metric
    clutter_denoms: np.ndarray  # (Q,) sigma_r^2 + nu_i ||mu_i||^2


def _check_pilot_model(phi: np.ndarray, model: GmmUserModel):
    if phi.shape[1] != model.n_tx:
        raise DimensionError("pilot antenna count must match the channel model")


def comm_state(pilot, model: GmmUserModel) -> CommState:
    """Evaluate the mixture observation statistics Sigma_n(Phi) and the metric."""
    phi = pilot_entries(pilot)
    _check_pilot_model(phi, model)
    n_slots = phi.shape[0]
    sigma2 = model.noise_std**2

    mean_overall = model.weights @ model.means
    mu_bar = mean_overall[None, :] - model.means
    phi_r = np.einsum("ln,knm->klm", phi, model.covariances)
    sigma = phi_r @ phi.conj().T
    sigma = 0.5 * (sigma + sigma.conj().transpose(0, 2, 1))
    sigma += sigma2 * np.eye(n_slots)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericError("observation covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.einsum("kll->kl", chol).real), axis=1)

    v = mu_bar @ phi.T
    s = np.linalg.solve(sigma, v[..., None])[..., 0]
    beta = np.einsum("kl,kl->k", v.conj(), s).real

    with np.errstate(divide="ignore"):
        log_mix = np.log(model.weights) - beta - logdet
    log_omega = float(logsumexp(log_mix))
    cnst = -n_slots * (2.0 * np.log(model.noise_std) + 1.0)
    value = -log_omega + cnst
    return CommState(value, log_mix, log_omega, chol, phi_r, v, s, mu_bar, sigma)


def comm_mi_user(pilot, model: GmmUserModel) -> float:
    """Surrogate mutual information between the pilot observation and the channel."""
    return comm_state(pilot, model).value


def comm_mi_weighted(pilot, objective: IsacObjective) -> float:
    """Preference-weighted sum of the per-user communication metrics."""
    return float(
        sum(w * comm_mi_user(pilot, m) for w, m in zip(objective.user_weights, objective.users))
    )


def sensing_mu(pilot, geometry, theta_deg: float) -> np.ndarray:
    """Response vector for angle ``theta_deg``: a_rx kron (Phi a_tx), length N_r*L.

    Column-major stacking of the L x N_r layout; norms and inner products
    match any other consistent stacking.
    """
    phi = pilot_entries(pilot)
    a_t = steering_vector(geometry.n_tx, geometry.spacing_tx, theta_deg)
    a_r = steering_vector(geometry.n_rx, geometry.spacing_rx, theta_deg)
    return np.kron(a_r, phi @ a_t)


def sense_state(pilot, scene: SensingScene) -> SenseState:
    """Gram-domain quantities shared by all sensing metrics and gradients.

    mu_i^H mu_j factors into a receive-steering correlation times a
    pilot-domain inner product, so nothing of size N_r*L is ever formed.
    """
    phi = pilot_entries(pilot)
    geom = scene.geometry
    if phi.shape[1] != geom.n_tx:
        raise DimensionError("pilot antenna count must match the scene geometry")
    angles = np.concatenate(([scene.target_angle], scene.clutter_angles))
    powers = np.concatenate(([scene.target_power], scene.clutter_powers))
    a_tx = np.stack([steering_vector(geom.n_tx, geom.spacing_tx, t) for t in angles])
    a_rx = np.stack([steering_vector(geom.n_rx, geom.spacing_rx, t) for t in angles])
    u = a_tx @ phi.T
    gram = (a_rx.conj() @ a_rx.T) * (u.conj() @ u.T)
    sigma2 = scene.radar_noise_std**2

    norms = gram.diagonal().real
    denoms = sigma2 + powers[1:] * norms[1:]
    cross = np.abs(gram[0, 1:]) ** 2
    arg = 1.0 + powers[0] / sigma2 * (norms[0] - np.sum(powers[1:] * cross / denoms))
    return SenseState(a_tx, u, gram, powers, sigma2, float(arg), denoms)


def _whitened_snr(state: SenseState) -> float:
    """x = nu_0 mu_0^H (R_cc + sigma^2 I)^{-1} mu_0 via the rank-Q identity (exact)."""
    gram, powers, sigma2 = state.gram, state.powers, state.noise_var
    live = powers[1:] > 0
    if not live.any():
        quad = gram[0, 0].real
    else:
        idx = np.flatnonzero(live) + 1
        b = gram[idx, 0]
        k_mat = gram[np.ix_(idx, idx)] + np.diag(sigma2 / powers[idx])
        z = np.linalg.solve(k_mat, b)
        quad = gram[0, 0].real - float(np.vdot(b, z).real)
    return powers[0] / sigma2 * quad


def sensing_mi_exact(pilot, scene: SensingScene) -> float:
    """Sensing information log(1 + x) with the clutter-plus-noise solve done exactly."""
    return float(np.log1p(_whitened_snr(sense_state(pilot, scene))))


def sensing_mi_approx(pilot, scene: SensingScene) -> float:
    """Large-array form of the sensing information (exact for zero or one clutter source)."""
    state = sense_state(pilot, scene)
    if state.arg <= 0.0:
        raise ObjectiveDomainError(
            f"approximate sensing metric log argument is {state.arg:.6g} <= 0", state.arg
        )
    return float(np.log(state.arg))


def sensing_mi(pilot, scene: SensingScene, formula: str = "approx") -> float:
    """Sensing metric under the globally selected formula ("approx" or "exact")."""
    if formula == "approx":
        return sensing_mi_approx(pilot, scene)
    if formula == "exact":
        return sensing_mi_exact(pilot, scene)
    raise InvalidParameterError(f"unknown sensing formula {formula!r}")


def isac_objective(pilot, objective: IsacObjective) -> float:
    """rho-weighted scalarization of communication and (approximate) sensing metrics."""
    return objective.rho * comm_mi_weighted(pilot, objective) + (
        1.0 - objective.rho
    ) * sensing_mi_approx(pilot, objective.scene)


def sense_kl_and_g(pilot, scene: SensingScene) -> tuple[float, float]:
    """Detection-error exponent decomposition: (KL divergence, saturation factor g).

    g = x / (1 + x) with x the whitened target-to-interference ratio; the KL
    divergence of the whitened hypothesis pair is log(1 + x) - g.
    """
    x = _whitened_snr(sense_state(pilot, scene))
    g = x / (1.0 + x)
    return float(np.log1p(x) - g), float(g)


def sensing_vectors(pilot, scene: SensingScene) -> SensingVectors:
    """Materialized response vectors (target first), mostly for cross-checks."""
    geom = scene.geometry
    angles = [scene.target_angle, *scene.clutter_angles]
    return SensingVectors([sensing_mu(pilot, geom, t) for t in angles])


def sense_kl_direct(pilot, scene: SensingScene) -> float:
    """KL divergence evaluated from the dense whitened signal covariance.

    Forms A = W R_dd W with W the inverse square root of the clutter-plus-noise
    covariance and evaluates logdet(I + A) - tr(I - (I + A)^{-1}).  Dense
    cross-validation path for ``sense_kl_and_g``.
    """
    mus = sensing_vectors(pilot, scene).mu
    powers = np.concatenate(([scene.target_power], scene.clutter_powers))
    dim = mus[0].size
    cov = scene.radar_noise_std**2 * np.eye(dim, dtype=complex)
    for p, mu in zip(powers[1:], mus[1:]):
        cov += p * np.outer(mu, mu.conj())
    vals, vecs = np.linalg.eigh(cov)
    w_half = (vecs * (1.0 / np.sqrt(vals))) @ vecs.conj().T
    m0 = w_half @ mus[0]
    a_mat = powers[0] * np.outer(m0, m0.conj())
    eye = np.eye(dim, dtype=complex)
    sign, logdet = np.linalg.slogdet(eye + a_mat)
    trace_term = np.trace(eye - np.linalg.inv(eye + a_mat)).real
    return float(sign.real * logdet - trace_term)


def comm_mi_lower_bound_gaussian(pilot, model: GmmUserModel, trace_mse: float) -> float:
    """Estimation-error lower bound on the communication metric (single Gaussian prior)."""
    if model.n_components != 1:
        raise UnsupportedModelError("closed-form prior entropy requires a single component")
    if trace_mse <= 0:
        raise InvalidParameterError("trace_mse must be positive")
    n_tx = model.n_tx
    _, logdet = np.linalg.slogdet(model.covariances[0])
    return float(logdet - n_tx * np.log(trace_mse / n_tx))


def effective_training_snr(error_variance: float) -> float:
    """Effective data-phase SNR 2/(1 + err) - 1 under the estimation
    orthogonality identity, clipped at 0; equals 1 for perfect estimation."""
    if error_variance < 0:
        raise InvalidParameterError("error variance must be nonnegative")
    return max(2.0 / (1.0 + error_variance) - 1.0, 0.0)


def c_worst_estimate(
    pilot,
    users: list,
    block_len: int,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo training-aware capacity lower bound, natural-log units.

    Runs mixture-MMSE channel estimation per trial, pools the normalized
    error variance into an effective SNR 2/(1 + err) - 1 (clipped at 0), and
    averages the block-discounted log-determinant over per-trial estimates
    normalized to unit average entry power.
    """
    from .evaluation import gmm_mmse_batch  # local import to avoid a cycle

    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    if block_len < 1:
        raise InvalidParameterError("block_len must be >= 1")
    phi = pilot_entries(pilot)
    n_slots, n_tx = phi.shape
    n_users = len(users)

    estimates = np.empty((trials, n_users, n_tx), dtype=complex)
    err_power = 0.0
    ch_power = 0.0
    for k, model in enumerate(users):
        channels = sample_channels(model, trials, rng)
        noise = model.noise_std * complex_normal(rng, (trials, n_slots))
        obs = channels @ phi.T + noise
        est, _ = gmm_mmse_batch(obs, phi, model)
        estimates[:, k, :] = est
        err_power += float(np.sum(np.abs(channels - est) ** 2))
        ch_power += float(np.sum(np.abs(channels) ** 2))
    err_var = err_power / ch_power
    eff_snr = effective_training_snr(err_var)

    prefactor = block_len / (block_len + n_slots)
    total = 0.0
    eye = np.eye(n_users)
    for r in range(trials):
        h_hat = estimates[r]
        power = np.mean(np.abs(h_hat) ** 2)
        if power <= 0:
            continue
        h_bar = h_hat / np.sqrt(power)
        _, logdet = np.linalg.slogdet(eye + eff_snr * (h_bar.conj() @ h_bar.T) / n_tx)
        total += logdet
    return float(prefactor * total / trials)


def mi_pair(pilot, objective: IsacObjective, formula: str = "approx") -> tuple[float, float]:
    """(sensing MI, weighted communication MI) for frontier bookkeeping."""
    return sensing_mi(pilot, objective.scene, formula), comm_mi_weighted(pilot, objective)
