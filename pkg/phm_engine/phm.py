"""Phase-aware beta-sigmoid masks.

A mask pair splits the mixture X into a source k and the rest, with
M_k + M_notk == 1 per bin: the two magnitudes and the unit mixture form a
triangle, the law of cosines gives the phase offsets and a binary sign picks
the rotation. Two pairs (direct vs rest, noise vs rest) give the quadrangle
decomposition whose fourth side is the reverberation.
"""

import logging
from typing import NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import expit, softmax

from phm_engine.exceptions import ShapeMismatchError
from phm_engine.schemas import GumbelConfig
from phm_engine.spectral import ComplexSpectrogram, SignalBuffer

logger = logging.getLogger(__name__)

EPS_DEG = 1e-8
EPS_CLIP = 1e-8
# logits are finite; these bound log(0) in oracle fits
_TINY = np.finfo(np.float64).tiny
_GAP_LIMIT = -np.log(_TINY)
_BETA_LOGIT_FLOOR = -745.0


class MaskLogits(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    z_k: np.ndarray
    z_notk: np.ndarray
    beta_logit: np.ndarray
    q0: np.ndarray
    q1: np.ndarray

    @model_validator(mode="after")
    def check_grids(self):
        grids = [self.z_k, self.z_notk, self.beta_logit, self.q0, self.q1]
        shape = np.shape(grids[0])
        if any(np.shape(grid) != shape for grid in grids):
            raise ValueError("all logit grids must share one shape")
        if not all(np.all(np.isfinite(grid)) for grid in grids):
            raise ValueError("logits must be finite")
        return self

    @property
    def shape(self) -> Tuple[int, ...]:
        return np.shape(self.z_k)

    @classmethod
    def from_channels(cls, channels: np.ndarray) -> "MaskLogits":
        """Build from a (..., 5) array ordered z_k, z_notk, beta_logit, q0, q1."""
        channels = np.asarray(channels, dtype=np.float64)
        return cls(
            z_k=channels[..., 0],
            z_notk=channels[..., 1],
            beta_logit=channels[..., 2],
            q0=channels[..., 3],
            q1=channels[..., 4],
        )


class PhmMaskField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mag_k: np.ndarray
    mag_notk: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    cos_dk: np.ndarray
    sin_dk: np.ndarray
    cos_dnotk: np.ndarray
    sin_dnotk: np.ndarray
    mask_k: np.ndarray
    mask_notk: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mask_k.shape


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class _Triangle(NamedTuple):
    """Sides (1, mag_k, mag_notk) with their sum and difference kept exact."""

    mag_k: np.ndarray
    mag_notk: np.ndarray
    beta: np.ndarray
    excess: np.ndarray
    spread: np.ndarray


def _triangle(logits: MaskLogits) -> _Triangle:
    gap = np.asarray(logits.z_k, dtype=np.float64) - logits.z_notk
    sigma_k = expit(gap)
    sigma_notk = expit(-gap)
    tilt = np.tanh(0.5 * gap)
    raw_excess = softplus(np.asarray(logits.beta_logit, dtype=np.float64))
    beta = 1.0 + raw_excess

    steep = np.abs(tilt)
    bound = np.full_like(beta, np.inf)
    np.divide(1.0, steep, out=bound, where=steep > EPS_CLIP)
    clipped = bound < beta
    if np.any(clipped):
        logger.debug("beta clipped on %d of %d bins", int(clipped.sum()), clipped.size)
    # 1/|tilt| - 1 == 2 expit(-|gap|) / |tilt|
    bound_excess = np.full_like(beta, np.inf)
    np.divide(2.0 * expit(-np.abs(gap)), steep, out=bound_excess, where=steep > EPS_CLIP)
    beta = np.where(clipped, bound, beta)
    excess = np.where(clipped, bound_excess, raw_excess)
    return _Triangle(
        mag_k=beta * sigma_k,
        mag_notk=beta * sigma_notk,
        beta=beta,
        excess=excess,
        spread=np.where(clipped, np.sign(tilt), beta * tilt),
    )


def magnitude_masks(logits: MaskLogits) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sides = _triangle(logits)
    return sides.mag_k, sides.mag_notk, sides.beta


def gumbel_sign(q0: np.ndarray, q1: np.ndarray, cfg: GumbelConfig) -> np.ndarray:
    q = np.stack([np.asarray(q0, dtype=np.float64), np.asarray(q1, dtype=np.float64)])
    if cfg.mode == "stochastic":
        rng = np.random.default_rng(cfg.seed)
        q = q + rng.gumbel(0.0, 1.0, size=q.shape)
    gamma = softmax(q / cfg.temperature, axis=0)
    return np.where(gamma[0] > gamma[1], -1.0, 1.0)


def _heron_area(total: np.ndarray, excess: np.ndarray, spread: np.ndarray) -> np.ndarray:
    """Area of the triangle with sides 1, near, far given near + far, near + far - 1 and near - far."""
    product = (total + 1.0) * excess * (1.0 - spread) * (1.0 + spread)
    return 0.25 * np.sqrt(np.maximum(product, 0.0))


def _kahan_area(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Heron's formula with the sides sorted a >= b >= c and Kahan's bracketing."""
    a, b, c = np.sort(np.stack(np.broadcast_arrays(a, b, c)), axis=0)[::-1]
    product = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * np.sqrt(np.maximum(product, 0.0))


def _vertex_angles(
    near: np.ndarray, total: np.ndarray, spread: np.ndarray, area: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """cos/sin of the angle at the mixture vertex adjacent to side `near`."""
    degenerate = near < EPS_DEG
    safe_near = np.where(degenerate, 1.0, near)
    # 1 + near^2 - far^2 == 1 + total * spread
    cos = np.clip((1.0 + total * spread) / (2.0 * safe_near), -1.0, 1.0)
    sin = np.clip(2.0 * area / safe_near, 0.0, 1.0)
    return np.where(degenerate, 1.0, cos), np.where(degenerate, 0.0, sin)


def _triangle_factors(
    near: np.ndarray, far: np.ndarray, total: np.ndarray, spread: np.ndarray, area: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    cos_dk, sin_dk = _vertex_angles(near, total, spread, area)
    cos_dnotk, sin_dnotk = _vertex_angles(far, total, -spread, area)
    return cos_dk, sin_dk, cos_dnotk, sin_dnotk


def phase_factors(
    mag_k: np.ndarray, mag_notk: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    mag_k = np.asarray(mag_k, dtype=np.float64)
    mag_notk = np.asarray(mag_notk, dtype=np.float64)
    area = _kahan_area(np.ones_like(mag_k), mag_k, mag_notk)
    return _triangle_factors(mag_k, mag_notk, mag_k + mag_notk, mag_k - mag_notk, area)


def assemble_masks(logits: MaskLogits, cfg: GumbelConfig = GumbelConfig()) -> PhmMaskField:
    sides = _triangle(logits)
    xi = gumbel_sign(logits.q0, logits.q1, cfg)
    # area from the exact sum and difference, not from the rounded sides
    area = _heron_area(sides.beta, sides.excess, sides.spread)
    cos_dk, sin_dk, cos_dnotk, sin_dnotk = _triangle_factors(
        sides.mag_k, sides.mag_notk, sides.beta, sides.spread, area
    )
    # the complement turns the other way so the two sides close the triangle
    mask_k = sides.mag_k * (cos_dk + 1j * xi * sin_dk)
    mask_notk = sides.mag_notk * (cos_dnotk - 1j * xi * sin_dnotk)
    return PhmMaskField(
        mag_k=sides.mag_k,
        mag_notk=sides.mag_notk,
        beta=sides.beta,
        xi=xi,
        cos_dk=cos_dk,
        sin_dk=sin_dk,
        cos_dnotk=cos_dnotk,
        sin_dnotk=sin_dnotk,
        mask_k=mask_k,
        mask_notk=mask_notk,
    )


def _check_shape(X: ComplexSpectrogram, field: PhmMaskField, name: str = "mask"):
    if X.shape != field.shape:
        raise ShapeMismatchError(f"shape mismatch: {name} {field.shape} vs spectrogram {X.shape}")


def apply_mask(
    X: ComplexSpectrogram, field: PhmMaskField
) -> Tuple[ComplexSpectrogram, ComplexSpectrogram]:
    _check_shape(X, field)
    return (
        ComplexSpectrogram(bins=field.mask_k * X.bins),
        ComplexSpectrogram(bins=field.mask_notk * X.bins),
    )


def quadrangle_decompose(
    X: ComplexSpectrogram, field_d: PhmMaskField, field_n: PhmMaskField
) -> Tuple[ComplexSpectrogram, ComplexSpectrogram, ComplexSpectrogram]:
    _check_shape(X, field_d, "direct mask")
    _check_shape(X, field_n, "noise mask")
    direct = field_d.mask_k * X.bins
    noise = field_n.mask_k * X.bins
    reverb = X.bins - direct - noise
    return (
        ComplexSpectrogram(bins=direct),
        ComplexSpectrogram(bins=reverb),
        ComplexSpectrogram(bins=noise),
    )


def oracle_fit(X: ComplexSpectrogram, Y_target: ComplexSpectrogram) -> MaskLogits:
    """Logits that reproduce Y_target exactly under assemble_masks (deterministic sign)."""
    if X.shape != Y_target.shape:
        raise ShapeMismatchError(f"shape mismatch: target {Y_target.shape} vs mixture {X.shape}")
    mixture = X.bins
    magnitude = np.abs(mixture)
    fitted = magnitude > EPS_DEG
    safe = np.where(fitted, mixture, 1.0)

    ratio = np.where(fitted, Y_target.bins / safe, 1.0)
    a = np.abs(ratio)
    b = np.abs(1.0 - ratio)
    # a - b == (a^2 - b^2) / (a + b) == (2 Re(ratio) - 1) / (a + b)
    spread = (2.0 * ratio.real - 1.0) / (a + b)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        gap = np.where(
            spread >= 0.0,
            np.log1p(spread / np.maximum(b, _TINY)),
            -np.log1p(-spread / np.maximum(a, _TINY)),
        )
    gap = np.clip(gap, -_GAP_LIMIT, _GAP_LIMIT)

    excess = np.maximum(a + b - 1.0, 0.0)
    beta_logit = np.full_like(excess, _BETA_LOGIT_FLOOR)
    positive = excess > 0.0
    # inverse softplus, log(e^x - 1), in a form that does not overflow
    beta_logit[positive] = excess[positive] + np.log(-np.expm1(-excess[positive]))
    beta_logit = np.maximum(beta_logit, _BETA_LOGIT_FLOOR)

    xi = np.where(ratio.imag < 0.0, -1.0, 1.0)
    return MaskLogits(
        z_k=gap, z_notk=np.zeros_like(gap), beta_logit=beta_logit, q0=-0.5 * xi, q1=0.5 * xi
    )


def remix(y_d: SignalBuffer, y_r: SignalBuffer, reverb_gain_db: float) -> SignalBuffer:
    if len(y_d) != len(y_r):
        raise ShapeMismatchError(
            f"shape mismatch: direct has {len(y_d)} samples, reverb has {len(y_r)}"
        )
    if np.isneginf(reverb_gain_db):
        return SignalBuffer(samples=y_d.samples.copy(), component="remix")
    gain = 10.0 ** (reverb_gain_db / 20.0)
    return SignalBuffer(samples=y_d.samples + gain * y_r.samples, component="remix")
