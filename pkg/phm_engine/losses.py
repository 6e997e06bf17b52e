"""Training losses and their gradients w.r.t. the estimate: complex spectrogram MSE and the
emphasized multi-scale cosine similarity on waveforms."""

from typing import Dict, Mapping, Tuple

import numpy as np

from phm_engine.exceptions import MissingComponentError, NoFullSegmentError, ShapeMismatchError
from phm_engine.schemas import LossConfig
from phm_engine.spectral import ComplexSpectrogram, SignalBuffer

COMPONENTS = ("d", "r", "n")


def _samples(signal) -> np.ndarray:
    if isinstance(signal, SignalBuffer):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def _check_pair(y: np.ndarray, yhat: np.ndarray):
    if y.shape != yhat.shape:
        raise ShapeMismatchError(
            f"shape mismatch: reference has {y.shape[0]} samples, estimate has {yhat.shape[0]}"
        )
    if y.shape[0] < 1:
        raise ShapeMismatchError("signals must contain at least one sample")


def cos_sim_loss(y, yhat, eps_norm: float = 1e-8) -> float:
    y, yhat = _samples(y), _samples(yhat)
    _check_pair(y, yhat)
    return float(-np.dot(y, yhat) / ((np.linalg.norm(y) + eps_norm) * (np.linalg.norm(yhat) + eps_norm)))


def _bins(spec) -> np.ndarray:
    if isinstance(spec, ComplexSpectrogram):
        return spec.bins
    return np.asarray(spec, dtype=np.complex128)


def _check_grids(Y: np.ndarray, Yhat: np.ndarray):
    if Y.shape != Yhat.shape:
        raise ShapeMismatchError(f"shape mismatch: reference grid {Y.shape}, estimate grid {Yhat.shape}")
    if Y.size < 1:
        raise ShapeMismatchError("spectrograms must contain at least one bin")


def complex_mse_loss(Y, Yhat) -> float:
    """Mean squared distance between two complex spectrograms."""
    Y, Yhat = _bins(Y), _bins(Yhat)
    _check_grids(Y, Yhat)
    return float(np.mean(np.abs(Yhat - Y) ** 2))


def complex_mse_gradient(Y, Yhat) -> np.ndarray:
    """d/d Re(Yhat) + j d/d Im(Yhat) of complex_mse_loss."""
    Y, Yhat = _bins(Y), _bins(Yhat)
    _check_grids(Y, Yhat)
    return 2.0 * (Yhat - Y) / Y.size


def _segments(signal: np.ndarray, length: int) -> np.ndarray:
    count = signal.shape[0] // length
    return signal[: count * length].reshape(count, length)


def _active_scales(n_samples: int, cfg: LossConfig):
    scales = [g for g in cfg.segment_lengths if n_samples >= g]
    if not scales:
        raise NoFullSegmentError(
            f"no full segment at any scale: {n_samples} samples < {min(cfg.segment_lengths)}"
        )
    return scales


def multiscale_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    y, yhat = _samples(y), _samples(yhat)
    _check_pair(y, yhat)
    total = 0.0
    for length in _active_scales(y.shape[0], cfg):
        ref, est = _segments(y, length), _segments(yhat, length)
        norms = (np.linalg.norm(ref, axis=1) + cfg.eps_norm) * (np.linalg.norm(est, axis=1) + cfg.eps_norm)
        total += float(np.mean(-np.sum(ref * est, axis=1) / norms))
    return total


def multiscale_gradient(y, yhat, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """d multiscale_loss / d yhat."""
    y, yhat = _samples(y), _samples(yhat)
    _check_pair(y, yhat)
    grad = np.zeros_like(yhat)
    eps = cfg.eps_norm
    for length in _active_scales(y.shape[0], cfg):
        ref, est = _segments(y, length), _segments(yhat, length)
        count = ref.shape[0]
        ref_norm = np.linalg.norm(ref, axis=1, keepdims=True)
        est_norm = np.linalg.norm(est, axis=1, keepdims=True)
        a, b = ref_norm + eps, est_norm + eps
        inner = np.sum(ref * est, axis=1, keepdims=True)
        unit = np.divide(est, est_norm, out=np.zeros_like(est), where=est_norm > 0)
        seg_grad = -ref / (a * b) + inner / (a * b**2) * unit
        grad[: count * length] += (seg_grad / count).reshape(-1)
    return grad


def pre_emphasis(y, alpha: float = 0.97) -> SignalBuffer:
    samples = _samples(y)
    out = samples.copy()
    out[1:] = samples[1:] - alpha * samples[:-1]
    return SignalBuffer(samples=out)


def _pre_emphasis_transpose(grad: np.ndarray, alpha: float) -> np.ndarray:
    out = grad.copy()
    out[:-1] -= alpha * grad[1:]
    return out


def mu_law(y, mu: float = 65535.0) -> SignalBuffer:
    samples = np.clip(_samples(y), -1.0, 1.0)
    return SignalBuffer(samples=np.sign(samples) * np.log1p(mu * np.abs(samples)) / np.log1p(mu))


def _mu_law_derivative(samples: np.ndarray, mu: float) -> np.ndarray:
    inside = np.abs(samples) < 1.0
    slope = mu / ((1.0 + mu * np.abs(samples)) * np.log1p(mu))
    return np.where(inside, slope, 0.0)


def _emphasis_stages(y: np.ndarray, cfg: LossConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    emphasized = pre_emphasis(y, cfg.preemph_alpha).samples
    return y, emphasized, mu_law(emphasized, cfg.mu).samples


def emphasized_loss(y, yhat, cfg: LossConfig = LossConfig()) -> float:
    y, yhat = _samples(y), _samples(yhat)
    _check_pair(y, yhat)
    return sum(
        multiscale_loss(ref, est, cfg)
        for ref, est in zip(_emphasis_stages(y, cfg), _emphasis_stages(yhat, cfg))
    )


def loss_gradient(y, yhat, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """d emphasized_loss / d yhat."""
    y, yhat = _samples(y), _samples(yhat)
    _check_pair(y, yhat)
    ref_plain, ref_pre, ref_mu = _emphasis_stages(y, cfg)
    est_plain, est_pre, est_mu = _emphasis_stages(yhat, cfg)

    grad = multiscale_gradient(ref_plain, est_plain, cfg)
    grad += _pre_emphasis_transpose(multiscale_gradient(ref_pre, est_pre, cfg), cfg.preemph_alpha)
    through_mu = multiscale_gradient(ref_mu, est_mu, cfg) * _mu_law_derivative(est_pre, cfg.mu)
    grad += _pre_emphasis_transpose(through_mu, cfg.preemph_alpha)
    return grad


def final_loss(
    components: Mapping[str, Tuple[SignalBuffer, SignalBuffer]],
    x: SignalBuffer,
    cfg: LossConfig = LossConfig(),
) -> float:
    """Sum of emphasized losses over every component and its complement x - y."""
    missing = [k for k in COMPONENTS if k not in components]
    if missing:
        raise MissingComponentError(f"missing component(s): {missing}")
    mixture = _samples(x)
    pairs: Dict[str, Tuple[np.ndarray, np.ndarray]] = {
        k: (_samples(components[k][0]), _samples(components[k][1])) for k in COMPONENTS
    }
    total = 0.0
    for ref, est in pairs.values():
        if ref.shape != mixture.shape or est.shape != mixture.shape:
            raise ShapeMismatchError("shape mismatch: components and mixture lengths differ")
        total += emphasized_loss(ref, est, cfg)
        total += emphasized_loss(mixture - ref, mixture - est, cfg)
    return total
