"""Downstream pilot evaluation: radar detection, channel estimation, link SER.

Trials are paired: target-absent and target-present statistics share the
same clutter and noise draws, and experiment substreams depend only on the
caller's generator, never on the pilot under test, so pilots can be compared
on identical randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (
    GmmUserModel,
    PilotMatrix,
    SensingScene,
    pilot_entries,
    sample_channels,
)
from .errors import (
    DimensionError,
    InvalidParameterError,
    NumericError,
    SingularMatrixError,
)
from .metrics import sense_state, sensing_vectors
from .optimizer import project_stiefel
from .streams import complex_normal

QAM_LEVELS = (2.0 * np.arange(8) - 7.0) / np.sqrt(42.0)
_GRAY = np.array([k ^ (k >> 1) for k in range(8)])
_GRAY_INV = np.argsort(_GRAY)
CONSTELLATION = (QAM_LEVELS[:, None] + 1j * QAM_LEVELS[None, :]).ravel()


@dataclass(frozen=True)
class DetectionTrial:
    """Detector outputs for one paired trial (shared interference draws)."""

    statistic_h0: float
    statistic_h1: float

    def __post_init__(self):
        if not (
            np.isfinite(self.statistic_h0)
            and np.isfinite(self.statistic_h1)
            and self.statistic_h0 >= 0
            and self.statistic_h1 >= 0
        ):
            raise InvalidParameterError("detection statistics must be finite and nonnegative")


@dataclass(eq=False)
class RocCurve:
    """Empirical operating points sorted by false-alarm probability."""

    p_fa: np.ndarray
    p_d: np.ndarray
    thresholds: np.ndarray
    low_resolution: np.ndarray  # True where p_fa is below 1/n_trials


def simulate_radar_frame(
    pilot, scene: SensingScene, hypothesis: str, rng: np.random.Generator
) -> np.ndarray:
    """One vectorized backscatter snapshot of length N_r * L.

    Target and clutter amplitudes are complex Gaussian with the configured
    powers (Swerling-I); the target term is present only under "H1".
    """
    if hypothesis not in ("H0", "H1"):
        raise InvalidParameterError("hypothesis must be 'H0' or 'H1'")
    mus = sensing_vectors(pilot, scene).mu
    y = np.zeros(mus[0].size, dtype=complex)
    if hypothesis == "H1":
        y += np.sqrt(scene.target_power) * complex_normal(rng) * mus[0]
    for power, mu in zip(scene.clutter_powers, mus[1:]):
        y += np.sqrt(power) * complex_normal(rng) * mu
    y += scene.radar_noise_std * complex_normal(rng, (y.size,))
    return y


def detector_statistic(y: np.ndarray, pilot, scene: SensingScene) -> float:
    """Whitened matched quadratic form |mu_0^H (R_cc + sigma^2 I)^{-1} y|^2.

    Likelihood-ratio statistic for a Gaussian rank-one target in known
    colored interference; the interference covariance comes from the true
    scene (clairvoyant detector).
    """
    mus = sensing_vectors(pilot, scene).mu
    dim = mus[0].size
    y = np.asarray(y, dtype=complex)
    if y.shape != (dim,):
        raise DimensionError("observation length must equal N_r * L")
    cov = scene.radar_noise_std**2 * np.eye(dim, dtype=complex)
    for power, mu in zip(scene.clutter_powers, mus[1:]):
        cov += power * np.outer(mu, mu.conj())
    w = np.linalg.solve(cov, mus[0])
    return float(np.abs(np.vdot(w, y)) ** 2)


def paired_detection_trial(pilot, scene: SensingScene, rng: np.random.Generator) -> DetectionTrial:
    """Frame-level paired trial: both hypotheses share clutter and noise draws."""
    mus = sensing_vectors(pilot, scene).mu
    interference = np.zeros(mus[0].size, dtype=complex)
    for power, mu in zip(scene.clutter_powers, mus[1:]):
        interference += np.sqrt(power) * complex_normal(rng) * mu
    interference += scene.radar_noise_std * complex_normal(rng, (interference.size,))
    target = np.sqrt(scene.target_power) * complex_normal(rng) * mus[0]
    return DetectionTrial(
        statistic_h0=detector_statistic(interference, pilot, scene),
        statistic_h1=detector_statistic(interference + target, pilot, scene),
    )


def _detector_scalars(pilot, scene: SensingScene) -> tuple[np.ndarray, float]:
    """(w^H mu_i for i = 0..Q, ||w||^2) without materializing N_r*L vectors."""
    state = sense_state(pilot, scene)
    gram, powers, sigma2 = state.gram, state.powers, state.noise_var
    live = powers[1:] > 0
    if not live.any():
        proj = gram[0] / sigma2
        w_norm2 = gram[0, 0].real / sigma2**2
        return proj, float(w_norm2)
    idx = np.flatnonzero(live) + 1
    b = gram[idx, 0]
    k_mat = gram[np.ix_(idx, idx)] + np.diag(sigma2 / powers[idx])
    z = np.linalg.solve(k_mat, b)
    proj = (gram[0] - z.conj() @ gram[idx, :]) / sigma2
    w_norm2 = (
        gram[0, 0].real
        - 2.0 * np.vdot(b, z).real
        + np.vdot(z, gram[np.ix_(idx, idx)] @ z).real
    ) / sigma2**2
    return proj, float(w_norm2)


def simulate_detection_trials(
    pilot, scene: SensingScene, n_trials: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Paired detector statistics (h0, h1) for ``n_trials`` trials.

    Works on the scalar projection w^H y, whose distribution is identical to
    the frame-level statistic; standard draws are pilot-independent so equal
    seeds give paired comparisons across pilots.
    """
    if n_trials < 1:
        raise InvalidParameterError("n_trials must be >= 1")
    proj, w_norm2 = _detector_scalars(pilot, scene)
    n_clutter = scene.n_clutter
    gamma_c = complex_normal(rng, (n_trials, n_clutter)) if n_clutter else None
    noise = complex_normal(rng, (n_trials,))
    gamma_t = complex_normal(rng, (n_trials,))

    interf = np.sqrt(scene.radar_noise_std**2 * w_norm2) * noise
    if n_clutter:
        interf = interf + gamma_c @ (np.sqrt(scene.clutter_powers) * proj[1:])
    target = np.sqrt(scene.target_power) * gamma_t * proj[0]
    t0 = np.abs(interf) ** 2
    t1 = np.abs(interf + target) ** 2
    return t0, t1


def roc_curve(
    pilot,
    scene: SensingScene,
    n_trials: int,
    p_fa_grid,
    rng: np.random.Generator,
) -> RocCurve:
    """Empirical ROC: thresholds from target-absent order statistics.

    Detection probabilities are estimated against those thresholds from the
    paired target-present statistics; grid points below the 1/n_trials
    resolution are flagged.
    """
    if n_trials < 1000:
        raise InvalidParameterError("at least 1e3 trials are needed for usable tails")
    p_fa = np.sort(np.asarray(p_fa_grid, dtype=float))
    if np.any((p_fa <= 0) | (p_fa > 1)):
        raise InvalidParameterError("false-alarm targets must lie in (0, 1]")
    t0, t1 = simulate_detection_trials(pilot, scene, n_trials, rng)
    thresholds = np.quantile(t0, 1.0 - p_fa)
    p_d = np.array([np.mean(t1 > thr) for thr in thresholds])
    return RocCurve(
        p_fa=p_fa,
        p_d=p_d,
        thresholds=thresholds,
        low_resolution=p_fa < 1.0 / n_trials,
    )


def _mixture_observation_stats(phi: np.ndarray, model: GmmUserModel):
    """Observation covariances, log-determinants and projections for the estimator."""
    sigma2 = model.noise_std**2
    phi_r = np.einsum("ln,knm->klm", phi, model.covariances)
    sigma = phi_r @ phi.conj().T
    sigma = 0.5 * (sigma + sigma.conj().transpose(0, 2, 1))
    sigma += sigma2 * np.eye(phi.shape[0])
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericError("observation covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.einsum("kll->kl", chol).real), axis=1)
    phi_mu = model.means @ phi.T
    return sigma, logdet, phi_mu, phi_r


def gmm_mmse_batch(
    observations: np.ndarray, pilot, model: GmmUserModel
) -> tuple[np.ndarray, np.ndarray]:
    """Mixture-MMSE channel estimates for a batch of observations.

    Returns (estimates of shape (T, N_t), responsibilities of shape (T, N_k)).
    Responsibilities are computed in the log domain and normalized; trials
    are processed in chunks to bound the (N_k, chunk, L) intermediates.
    """
    phi = pilot_entries(pilot)
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    if obs.shape[1] != phi.shape[0]:
        raise DimensionError("observation length must equal the pilot length")
    sigma, logdet, phi_mu, phi_r = _mixture_observation_stats(phi, model)
    r_phi_h = phi_r.conj().transpose(0, 2, 1)  # R_n Phi^H, shape (N_k, N_t, L)

    n_trials = obs.shape[0]
    n_comp = model.n_components
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.weights) - logdet
    est = np.empty((n_trials, model.n_tx), dtype=complex)
    resp = np.empty((n_trials, n_comp))
    chunk = max(1, int(2_000_000 // (n_comp * max(model.n_tx, phi.shape[0]))))
    for start in range(0, n_trials, chunk):
        block = obs[start : start + chunk]
        resid = block[None, :, :] - phi_mu[:, None, :]
        z = np.linalg.solve(sigma, resid.transpose(0, 2, 1))
        quad = np.einsum("kcl,klc->kc", resid.conj(), z).real
        log_w = log_prior[:, None] - quad
        log_w -= log_w.max(axis=0)
        w = np.exp(log_w)
        w /= w.sum(axis=0)
        posterior = np.matmul(r_phi_h, z) + model.means[:, :, None]
        est[start : start + chunk] = np.einsum("kc,knc->cn", w, posterior)
        resp[start : start + chunk] = w.T
    return est, resp


def gmm_mmse_estimate(
    y: np.ndarray, pilot, model: GmmUserModel, return_responsibilities: bool = False
):
    """Posterior-mean channel estimate from one pilot observation."""
    est, resp = gmm_mmse_batch(np.asarray(y)[None, :], pilot, model)
    if return_responsibilities:
        return est[0], resp[0]
    return est[0]


def nmse_experiment(
    pilot, users: list, n_trials: int, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Normalized channel-estimation error per user and pooled over users.

    Channel and noise substreams are spawned per user in fixed order and do
    not depend on the pilot, so different pilots see identical trials.
    """
    if n_trials < 1:
        raise InvalidParameterError("n_trials must be >= 1")
    phi = pilot_entries(pilot)
    per_user = np.empty(len(users))
    streams = rng.spawn(len(users))
    for k, (model, stream) in enumerate(zip(users, streams)):
        channels = sample_channels(model, n_trials, stream)
        noise = model.noise_std * complex_normal(stream, (n_trials, phi.shape[0]))
        obs = channels @ phi.T + noise
        est, _ = gmm_mmse_batch(obs, phi, model)
        norms = np.sum(np.abs(channels) ** 2, axis=1)
        valid = norms > 0
        errors = np.sum(np.abs(channels - est) ** 2, axis=1)
        per_user[k] = float(np.mean(errors[valid] / norms[valid]))
    return per_user, float(per_user.mean())


def qam64_map(bits) -> np.ndarray:
    """Gray-labeled square 64-QAM mapper, unit average symbol energy.

    ``bits`` has shape (..., 6); the first three bits select the in-phase
    level, the last three the quadrature level.
    """
    b = np.asarray(bits, dtype=int)
    if b.shape[-1] != 6:
        raise DimensionError("64-QAM requires 6 bits per symbol")
    v_i = 4 * b[..., 0] + 2 * b[..., 1] + b[..., 2]
    v_q = 4 * b[..., 3] + 2 * b[..., 4] + b[..., 5]
    return QAM_LEVELS[_GRAY_INV[v_i]] + 1j * QAM_LEVELS[_GRAY_INV[v_q]]


def _nearest_level_index(x: np.ndarray) -> np.ndarray:
    scaled = np.rint((x * np.sqrt(42.0) + 7.0) / 2.0)
    return np.clip(scaled, 0, 7).astype(int)


def qam64_demap(symbol) -> np.ndarray:
    """Minimum-distance hard decision back to the 6-bit Gray label."""
    s = np.asarray(symbol, dtype=complex)
    v_i = _GRAY[_nearest_level_index(s.real)]
    v_q = _GRAY[_nearest_level_index(s.imag)]
    bits = np.empty(s.shape + (6,), dtype=int)
    for pos, shift in enumerate((2, 1, 0)):
        bits[..., pos] = (v_i >> shift) & 1
        bits[..., 3 + pos] = (v_q >> shift) & 1
    return bits


def zf_precode(channel_estimates: np.ndarray) -> np.ndarray:
    """Zero-forcing precoder with unit-norm columns.

    W = H^H (H H^H)^{-1} scaled so each user's column has unit transmit
    power; H W is then diagonal with positive entries.
    """
    h = np.asarray(channel_estimates, dtype=complex)
    if h.ndim != 2 or h.shape[0] > h.shape[1]:
        raise DimensionError("estimate matrix must be K x N_t with K <= N_t")
    gram = h @ h.conj().T
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals.min() <= 1e-12 * max(eigvals.max(), 1.0):
        raise SingularMatrixError("channel estimate matrix is rank deficient")
    w = np.linalg.solve(gram, h).conj().T
    return w / np.linalg.norm(w, axis=0, keepdims=True)


def ser_experiment(
    pilot,
    users: list,
    snr_grid_db,
    n_symbols: int,
    block_len: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Symbol error rate of the estimate-then-ZF-precode link per SNR point.

    Per block: draw true channels, estimate them from the pilot phase,
    precode with the estimates, send Gray-mapped 64-QAM through the true
    channels, and hard-decide after dividing by the estimated effective
    gain.  SNR sets the data-phase noise variance as 10^(-snr/10) against
    unit symbol energy and unit-norm precoder columns; ``n_symbols`` counts
    per-user symbols per SNR point.
    """
    if n_symbols < 1000:
        raise InvalidParameterError("at least 1e3 symbols are needed per SNR point")
    if block_len < 1:
        raise InvalidParameterError("block_len must be >= 1")
    snr_grid_db = np.asarray(snr_grid_db, dtype=float)
    phi = pilot_entries(pilot)
    n_users = len(users)
    n_blocks = int(np.ceil(n_symbols / block_len))

    chan_rng, data_rng = rng.spawn(2)
    h_true = np.empty((n_blocks, n_users, phi.shape[1]), dtype=complex)
    h_est = np.empty_like(h_true)
    for k, model in enumerate(users):
        channels = sample_channels(model, n_blocks, chan_rng)
        noise = model.noise_std * complex_normal(chan_rng, (n_blocks, phi.shape[0]))
        est, _ = gmm_mmse_batch(channels @ phi.T + noise, phi, model)
        h_true[:, k, :] = channels
        h_est[:, k, :] = est

    gram = np.einsum("bkn,bjn->bkj", h_est, h_est.conj())
    try:
        x = np.linalg.solve(gram, h_est)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("a block produced a rank-deficient estimate") from exc
    w = x.conj().transpose(0, 2, 1)
    w /= np.sqrt(np.einsum("bnk,bnk->bk", w.conj(), w).real)[:, None, :]
    gains = np.einsum("bkn,bnk->bk", h_est, w).real
    effective = np.einsum("bkn,bnj->bkj", h_true, w)

    ser = np.empty(snr_grid_db.size)
    for i, snr_db in enumerate(snr_grid_db):
        noise_std = 10.0 ** (-snr_db / 20.0)
        sent = data_rng.integers(0, 64, size=(n_blocks, n_users, block_len))
        symbols = CONSTELLATION[sent]
        received = np.einsum("bkj,bjm->bkm", effective, symbols)
        received += noise_std * complex_normal(data_rng, received.shape)
        equalized = received / gains[:, :, None]
        decided = 8 * _nearest_level_index(equalized.real) + _nearest_level_index(equalized.imag)
        ser[i] = float(np.mean(decided != sent))
    return ser


def dft_pilot(n_slots: int, n_tx: int) -> PilotMatrix:
    """Pilot rows drawn from the unitary DFT matrix (benchmark design)."""
    if n_slots >= n_tx:
        raise DimensionError("pilot length must be strictly below the antenna count")
    grid = np.outer(np.arange(n_slots), np.arange(n_tx))
    return PilotMatrix(np.exp(-2j * np.pi * grid / n_tx) / np.sqrt(n_tx))


def eigen_pilot(n_slots: int, users: list, user_weights=None) -> PilotMatrix:
    """Strongest eigenvectors of the pooled channel covariance (benchmark design)."""
    n_tx = users[0].n_tx
    if n_slots >= n_tx:
        raise DimensionError("pilot length must be strictly below the antenna count")
    if user_weights is None:
        user_weights = np.full(len(users), 1.0 / len(users))
    pooled = np.zeros((n_tx, n_tx), dtype=complex)
    for weight, model in zip(user_weights, users):
        cov = np.einsum("k,knm->nm", model.weights, model.covariances)
        cov += np.einsum("k,kn,km->nm", model.weights, model.means, model.means.conj())
        mean = model.weights @ model.means
        cov -= np.outer(mean, mean.conj())
        pooled += weight * cov
    _, vecs = np.linalg.eigh(pooled)
    top = vecs[:, ::-1][:, :n_slots]
    return project_stiefel(top.conj().T)
