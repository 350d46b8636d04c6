"""Array geometry, steering vectors, GMM channel priors and pilot reception.

Angles are degrees at every public boundary; angular integrals are carried
out in radians.  The complex Gaussian convention is CN(mu, R) with variance
R/2 on the real and imaginary parts, so a unit-variance complex scalar has
variance 1/2 per component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    InvalidParameterError,
    InvalidRegionError,
    NumericError,
)
from .streams import complex_normal

ORTHONORMALITY_TOL = 1e-8


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear transmit/receive arrays; spacings in wavelengths."""

    n_tx: int
    n_rx: int
    spacing_tx: float = 0.5
    spacing_rx: float = 0.5

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise InvalidParameterError("antenna counts must be >= 1")
        if self.spacing_tx <= 0 or self.spacing_rx <= 0:
            raise InvalidParameterError("antenna spacings must be positive")


def steering_vector(n: int, spacing_wavelengths: float, theta_deg: float) -> np.ndarray:
    """ULA response toward ``theta_deg``: entry m is exp(j*2*pi*d*m*sin(theta))."""
    if n < 1:
        raise InvalidParameterError("steering vector length must be >= 1")
    m = np.arange(n)
    phase = 2.0 * np.pi * spacing_wavelengths * m * np.sin(np.deg2rad(theta_deg))
    return np.exp(1j * phase)


def laplacian_weights(mean_aoa_deg: float, spread_deg: float, grid_deg: np.ndarray) -> np.ndarray:
    """Laplacian angular profile sampled on ``grid_deg``, renormalized to sum 1."""
    if spread_deg <= 0:
        raise InvalidParameterError("azimuth spread must be positive")
    grid = np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise InvalidParameterError("angle grid must be nonempty")
    w = np.exp(-np.sqrt(2.0) * np.abs(grid - mean_aoa_deg) / spread_deg)
    w /= np.sqrt(2.0) * spread_deg
    return w / w.sum()


def region_covariance(
    geometry: ArrayGeometry,
    region_lo_deg: float,
    region_hi_deg: float,
    quadrature_points: int = 8,
) -> np.ndarray:
    """Midpoint-rule integral of the transmit steering outer product over a region.

    Integration is in radians, so every diagonal entry equals the region
    width in radians (steering entries have unit modulus).
    """
    if region_lo_deg >= region_hi_deg:
        raise InvalidRegionError("region lower edge must be below the upper edge")
    if quadrature_points < 1:
        raise InvalidParameterError("quadrature_points must be >= 1")
    q = quadrature_points
    step = (region_hi_deg - region_lo_deg) / q
    centers = region_lo_deg + (np.arange(q) + 0.5) * step
    a = np.stack([steering_vector(geometry.n_tx, geometry.spacing_tx, t) for t in centers])
    cov = a.T @ a.conj() * np.deg2rad(step)
    return 0.5 * (cov + cov.conj().T)


@dataclass(eq=False)
class GmmUserModel:
    """Per-user Gaussian-mixture channel prior plus its pilot-phase noise level."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    noise_std: float
    mean_aoa: float = 0.0
    azimuth_spread: float = 0.0
    _factors: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=complex)
        self.covariances = np.asarray(self.covariances, dtype=complex)
        if self.weights.ndim != 1:
            raise DimensionError("weights must be a vector")
        n_comp = self.weights.size
        if self.means.shape[0] != n_comp or self.covariances.shape[0] != n_comp:
            raise DimensionError("means/covariances must have one entry per component")
        if self.covariances.shape[1] != self.covariances.shape[2]:
            raise DimensionError("covariances must be square")
        if self.means.shape[1] != self.covariances.shape[1]:
            raise DimensionError("mean and covariance dimensions disagree")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("weights must be nonnegative and sum to 1")
        if self.noise_std <= 0:
            raise InvalidParameterError("noise_std must be positive")
        scale = max(1.0, float(np.abs(self.covariances).max(initial=0.0)))
        herm_gap = float(
            np.abs(self.covariances - self.covariances.conj().transpose(0, 2, 1)).max(initial=0.0)
        )
        if herm_gap > 1e-12 * scale:
            raise InvalidParameterError("covariances must be Hermitian")
        min_eig = min(float(np.linalg.eigvalsh(c).min()) for c in self.covariances)
        if min_eig < -1e-10 * scale:
            raise InvalidParameterError("covariances must be positive semidefinite")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def n_tx(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class SensingScene:
    """Target plus clutter geometry for the monostatic radar subsystem."""

    target_angle: float
    target_power: float
    clutter: tuple
    radar_noise_std: float
    geometry: ArrayGeometry

    def __post_init__(self):
        object.__setattr__(self, "clutter", tuple((float(a), float(p)) for a, p in self.clutter))
        if self.target_power < 0:
            raise InvalidParameterError("target power must be nonnegative")
        if any(p < 0 for _, p in self.clutter):
            raise InvalidParameterError("clutter powers must be nonnegative")
        if self.radar_noise_std <= 0:
            raise InvalidParameterError("radar noise std must be positive")

    @property
    def n_clutter(self) -> int:
        return len(self.clutter)

    @property
    def clutter_angles(self) -> np.ndarray:
        return np.array([a for a, _ in self.clutter], dtype=float)

    @property
    def clutter_powers(self) -> np.ndarray:
        return np.array([p for _, p in self.clutter], dtype=float)


@dataclass(eq=False)
class PilotMatrix:
    """L x N_t pilot with orthonormal rows (unit power budget per slot)."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2:
            raise DimensionError("pilot must be a matrix")
        n_slots, n_tx = self.entries.shape
        if n_slots >= n_tx:
            raise DimensionError("pilot length must be strictly below the antenna count")
        if self.residual > ORTHONORMALITY_TOL:
            raise InvalidParameterError("pilot rows are not orthonormal")

    @property
    def n_slots(self) -> int:
        return self.entries.shape[0]

    @property
    def n_tx(self) -> int:
        return self.entries.shape[1]

    @property
    def residual(self) -> float:
        gram = self.entries @ self.entries.conj().T
        return float(np.linalg.norm(gram - np.eye(self.n_slots)))


def pilot_entries(pilot) -> np.ndarray:
    """Accept a PilotMatrix or a bare complex matrix (used off-manifold)."""
    if isinstance(pilot, PilotMatrix):
        return pilot.entries
    return np.asarray(pilot, dtype=complex)


def build_user_model(
    geometry: ArrayGeometry,
    mean_aoa_deg: float,
    spread_deg: float,
    n_components: int,
    noise_std: float,
    mean_policy: str = "steering",
    mean_scale: float = 1.0,
    quadrature_points: int = 8,
) -> GmmUserModel:
    """Equal partition of [-90, 90] degrees into angular mixture components.

    Mixture weights follow the Laplacian profile at the region centers and
    each covariance integrates the steering outer product over its region.
    ``mean_policy`` fills the component means: "zero" or "steering" (a scaled
    steering vector at the region center, which keeps the cross-mean terms of
    the communication objective alive).
    """
    if n_components < 1:
        raise InvalidParameterError("n_components must be >= 1")
    if mean_policy not in ("zero", "steering"):
        raise InvalidParameterError(f"unknown mean_policy {mean_policy!r}")
    edges = np.linspace(-90.0, 90.0, n_components + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    weights = laplacian_weights(mean_aoa_deg, spread_deg, centers)
    covs = np.stack(
        [
            region_covariance(geometry, lo, hi, quadrature_points)
            for lo, hi in zip(edges[:-1], edges[1:])
        ]
    )
    if mean_policy == "zero":
        means = np.zeros((n_components, geometry.n_tx), dtype=complex)
    else:
        means = mean_scale * np.stack(
            [steering_vector(geometry.n_tx, geometry.spacing_tx, t) for t in centers]
        )
    return GmmUserModel(
        weights=weights,
        means=means,
        covariances=covs,
        noise_std=noise_std,
        mean_aoa=mean_aoa_deg,
        azimuth_spread=spread_deg,
    )


def _component_factors(model: GmmUserModel) -> np.ndarray:
    """Square roots A_n with A_n A_n^H = R_n, via eigendecomposition (R_n may be singular)."""
    if model._factors is None:
        factors = np.empty_like(model.covariances)
        for i, cov in enumerate(model.covariances):
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < -1e-8 * max(1.0, abs(vals.max())):
                raise NumericError("covariance factorization failed: negative eigenvalue")
            factors[i] = vecs * np.sqrt(np.clip(vals, 0.0, None))
        model._factors = factors
    return model._factors


def sample_channels(model: GmmUserModel, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_samples`` channels: pick a component by weight, then CN(mu_n, R_n)."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    factors = _component_factors(model)
    indices = rng.choice(model.n_components, size=n_samples, p=model.weights)
    out = np.empty((n_samples, model.n_tx), dtype=complex)
    for comp in np.unique(indices):
        mask = indices == comp
        z = complex_normal(rng, (int(mask.sum()), model.n_tx))
        out[mask] = model.means[comp] + z @ factors[comp].T
    return out


def sample_channel(model: GmmUserModel, rng: np.random.Generator) -> np.ndarray:
    """Single channel draw from the mixture prior."""
    return sample_channels(model, 1, rng)[0]


def simulate_pilot_rx(
    pilot, channel: np.ndarray, noise_std: float, rng: np.random.Generator
) -> np.ndarray:
    """Received pilot-phase signal y = Phi h + n, noise variance noise_std^2 per entry."""
    phi = pilot_entries(pilot)
    h = np.asarray(channel, dtype=complex)
    if h.shape != (phi.shape[1],):
        raise DimensionError("channel length must match the pilot antenna count")
    if noise_std < 0:
        raise InvalidParameterError("noise_std must be nonnegative")
    return phi @ h + noise_std * complex_normal(rng, (phi.shape[0],))
