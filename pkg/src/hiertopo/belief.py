"""Discrete Bayes filter over processed images.

The evolution model diffuses 90% of the probability mass with a discrete
Gaussian kernel under reflect padding and injects the remaining 10%
uniformly across all poses; new poses enter with prior 1/n. A legacy
evolution variant reproduces the uncorrected behavior (no reflect padding,
the residual 10% spread over all poses except each source's eight
neighbors, zero-initialized new poses) for ablation runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

MASS_TOL = 1e-9
DEFAULT_RADIUS = 4
DEFAULT_MASS = 0.9
DEFAULT_SIGMA = 2.0


@dataclass(frozen=True)
class DiffusionKernel:
    """Odd-length symmetric tap vector summing to `mass`."""

    taps: np.ndarray
    mass: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise DomainError("kernel taps must be a 1-D odd-length vector")
        if abs(float(taps.sum()) - self.mass) > 1e-12:
            raise DomainError("kernel taps must sum to the stated mass")
        if not np.allclose(taps, taps[::-1], rtol=0, atol=1e-15):
            raise DomainError("kernel taps must be symmetric")
        object.__setattr__(self, "taps", taps)

    @property
    def radius(self) -> int:
        return self.taps.size // 2


@dataclass(frozen=True)
class BeliefState:
    """Probability vector over the n processed images."""

    beliefs: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beliefs, dtype=np.float64)
        if b.ndim != 1:
            raise DomainError("beliefs must be a 1-D vector")
        if b.size and (np.any(b < 0) or abs(float(b.sum()) - 1.0) > MASS_TOL):
            raise DomainError("beliefs must be non-negative and sum to 1")
        object.__setattr__(self, "beliefs", b)

    @property
    def n(self) -> int:
        return self.beliefs.size


def make_diffusion_kernel(
    radius: int = DEFAULT_RADIUS,
    mass: float = DEFAULT_MASS,
    sigma: float = DEFAULT_SIGMA,
) -> DiffusionKernel:
    """Discrete Gaussian taps over [-radius, radius], rescaled to sum to `mass`."""
    if radius < 1:
        raise DomainError("radius must be >= 1")
    if not 0.0 < mass <= 1.0:
        raise DomainError("mass must be in (0, 1]")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    taps *= mass / taps.sum()
    return DiffusionKernel(taps=taps, mass=mass)


def _reflect_pad(b: np.ndarray, radius: int) -> np.ndarray:
    # symmetric reflection: index -k maps to k-1, index n-1+k maps to n-k
    return np.pad(b, radius, mode="symmetric")


def diffuse(beliefs: np.ndarray, kernel: DiffusionKernel) -> np.ndarray:
    """Reflect-padded convolution with the kernel; scales total mass by kernel.mass."""
    padded = _reflect_pad(beliefs, kernel.radius)
    return np.convolve(padded, kernel.taps, mode="valid")


def predict_array(beliefs: np.ndarray, kernel: DiffusionKernel) -> np.ndarray:
    """One evolution step: diffuse 90% of the mass, spread the rest uniformly."""
    n = beliefs.size
    if n == 0:
        raise DomainError("cannot predict on an empty belief vector")
    out = diffuse(beliefs, kernel)
    out += (1.0 - kernel.mass) * beliefs.sum() / n
    return out


def predict(state: BeliefState, kernel: DiffusionKernel) -> BeliefState:
    if abs(kernel.mass - DEFAULT_MASS) > 1e-12:
        raise DomainError("evolution kernel must carry mass 0.9")
    return BeliefState(predict_array(state.beliefs, kernel))


def add_pose_array(beliefs: np.ndarray) -> np.ndarray:
    """Append a new pose with prior 1/n (n = poses before the append), renormalize."""
    n = beliefs.size
    if n == 0:
        return np.array([1.0])
    out = np.append(beliefs, beliefs.sum() / n)
    return out / out.sum()


def add_pose(state: BeliefState) -> BeliefState:
    return BeliefState(add_pose_array(state.beliefs))


def measurement_update_array(beliefs: np.ndarray, likelihoods: np.ndarray) -> np.ndarray:
    likelihoods = np.asarray(likelihoods, dtype=np.float64)
    if likelihoods.shape != beliefs.shape:
        raise DomainError(
            f"likelihood length {likelihoods.size} != pose count {beliefs.size}"
        )
    if np.any(likelihoods < 0):
        raise DomainError("likelihoods must be non-negative")
    post = beliefs * likelihoods
    total = post.sum()
    if total <= 0.0:
        raise DomainError("all-zero posterior; substitute a uniform likelihood")
    return post / total


def measurement_update(state: BeliefState, likelihoods) -> BeliefState:
    return BeliefState(measurement_update_array(state.beliefs, likelihoods))


# -- legacy evolution model (ablation) ---------------------------------------


def legacy_predict_array(beliefs: np.ndarray, kernel: DiffusionKernel) -> np.ndarray:
    """Uncorrected evolution step.

    No reflect padding: mass diffusing past the first pose is clamped onto
    it while mass past the newest pose is lost, so energy accumulates
    around the early poses. The residual (1 - mass) energy goes to every
    pose except the current peak's eight neighbors, proportionally to the
    prior, which leaves the notch-shaped irregular distribution the fixed
    model removes. The result is renormalized.
    """
    n = beliefs.size
    if n == 0:
        raise DomainError("cannot predict on an empty belief vector")
    radius = kernel.radius
    full = np.convolve(beliefs, kernel.taps, mode="full")
    out = full[radius : radius + n].copy()
    out[0] += full[:radius].sum()

    peak = int(np.argmax(beliefs))
    mask = np.ones(n)
    mask[max(peak - radius, 0) : min(peak + radius + 1, n)] = 0.0
    mask[peak] = 1.0
    weights = beliefs * mask
    total_weight = weights.sum()
    residual = (1.0 - kernel.mass) * beliefs.sum()
    if total_weight > 0.0:
        out += residual * weights / total_weight
    elif mask.sum() > 0.0:
        out += residual * mask / mask.sum()

    total = out.sum()
    if total <= 0:
        raise DomainError("legacy evolution lost all probability mass")
    return out / total


def legacy_add_pose_array(beliefs: np.ndarray) -> np.ndarray:
    """Uncorrected pose insertion: new poses start with zero prior belief."""
    if beliefs.size == 0:
        return np.array([1.0])
    return np.append(beliefs, 0.0)
