from typing import Optional, Tuple

import numpy as np

from phm_engine.exceptions import (
    NoPhaseErrorToImprove,
    ShapeMismatchError,
    UndefinedWeightsError,
    ZeroReferenceError,
)
from phm_engine.schemas import MetricReport, StftConfig
from phm_engine.spectral import ComplexSpectrogram, SignalBuffer, padded_stft

SI_SDR_CAP_DB = 200.0
# phase distances at or below this count as zero
PD_ZERO_DEG = 1e-9


def phase_distance(A: ComplexSpectrogram, B: ComplexSpectrogram) -> float:
    """Mean angle between A and B in degrees, weighted by |A|."""
    if A.shape != B.shape:
        raise ShapeMismatchError(f"shape mismatch: {A.shape} vs {B.shape}")
    weights = np.abs(A.bins)
    total = weights.sum()
    if total == 0.0:
        raise UndefinedWeightsError("undefined weights: A is zero everywhere")
    difference = np.angle(A.bins, deg=True) - np.angle(B.bins, deg=True)
    angle = np.abs(np.mod(difference + 180.0, 360.0) - 180.0)
    # no angle where B vanishes
    angle = np.where(B.bins == 0, 0.0, angle)
    return float(np.clip(np.sum(weights * angle) / total, 0.0, 180.0))


def si_sdr(reference: SignalBuffer, estimate: SignalBuffer) -> float:
    ref, est = reference.samples, estimate.samples
    if ref.shape != est.shape:
        raise ShapeMismatchError(f"shape mismatch: {ref.shape[0]} vs {est.shape[0]} samples")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0.0:
        raise ZeroReferenceError("zero reference: SI-SDR is undefined")
    target = np.dot(est, ref) / ref_energy * ref
    signal = np.dot(target, target)
    residual = np.dot(target - est, target - est)
    if signal == 0.0:
        return -SI_SDR_CAP_DB
    if residual <= signal * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    return float(max(10.0 * np.log10(signal / residual), -SI_SDR_CAP_DB))


def phase_gain(Y: ComplexSpectrogram, X: ComplexSpectrogram, Yhat: ComplexSpectrogram) -> float:
    """Relative phase-distance improvement of Yhat over the mixture X, in percent."""
    baseline = phase_distance(Y, X)
    if baseline <= PD_ZERO_DEG:
        raise NoPhaseErrorToImprove("no phase error to improve: PD(Y, X) is zero")
    return 100.0 * (baseline - phase_distance(Y, Yhat)) / baseline


def metric_report(
    reference: SignalBuffer,
    estimate: SignalBuffer,
    stft_cfg: StftConfig,
    mixture: Optional[SignalBuffer] = None,
    names: Tuple[str, str] = ("", ""),
) -> MetricReport:
    ref_spec = padded_stft(reference, stft_cfg)
    est_spec = padded_stft(estimate, stft_cfg)
    gain = None
    if mixture is not None:
        gain = phase_gain(ref_spec, padded_stft(mixture, stft_cfg), est_spec)
    return MetricReport(
        reference=names[0],
        estimate=names[1],
        si_sdr_db=si_sdr(reference, estimate),
        phase_distance_deg=phase_distance(ref_spec, est_spec),
        phase_gain_pct=gain,
    )
