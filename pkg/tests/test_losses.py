import numpy as np
import pytest
from scipy.signal import lfilter

from phm_engine.exceptions import MissingComponentError, NoFullSegmentError, ShapeMismatchError
from phm_engine.losses import (
    complex_mse_gradient,
    complex_mse_loss,
    cos_sim_loss,
    emphasized_loss,
    final_loss,
    loss_gradient,
    mu_law,
    multiscale_gradient,
    multiscale_loss,
    pre_emphasis,
)
from phm_engine.schemas import LossConfig
from phm_engine.spectral import ComplexSpectrogram, SignalBuffer

EXACT = LossConfig(eps_norm=0.0)
SHORT = LossConfig(segment_lengths=[64, 32])


def brute_force_multiscale(y, yhat, cfg: LossConfig) -> float:
    total = 0.0
    for length in cfg.segment_lengths:
        values = []
        start = 0
        while start + length <= len(y):
            ref, est = y[start : start + length], yhat[start : start + length]
            dot = sum(float(a) * float(b) for a, b in zip(ref, est))
            norm_ref = np.sqrt(sum(float(a) ** 2 for a in ref)) + cfg.eps_norm
            norm_est = np.sqrt(sum(float(b) ** 2 for b in est)) + cfg.eps_norm
            values.append(-dot / (norm_ref * norm_est))
            start += length
        if values:
            total += sum(values) / len(values)
    return total


def brute_force_emphasized(y, yhat, cfg: LossConfig) -> float:
    def emphasize(x):
        out = [x[0]] + [x[t] - cfg.preemph_alpha * x[t - 1] for t in range(1, len(x))]
        return np.array(out)

    def compand(x):
        x = np.clip(x, -1.0, 1.0)
        return np.array([np.sign(v) * np.log(1 + cfg.mu * abs(v)) / np.log(1 + cfg.mu) for v in x])

    return (
        brute_force_multiscale(y, yhat, cfg)
        + brute_force_multiscale(emphasize(y), emphasize(yhat), cfg)
        + brute_force_multiscale(compand(emphasize(y)), compand(emphasize(yhat)), cfg)
    )


def estimate_away_from_zero(rng, length, alpha=0.97):
    """An estimate whose pre-emphasized samples keep clear of the mu-law kink at zero."""
    emphasized = rng.choice([-1.0, 1.0], length) * (0.02 + 0.1 * np.abs(rng.standard_normal(length)))
    return lfilter([1.0], [1.0, -alpha], emphasized)


def finite_difference(fn, yhat, step=1e-6):
    grad = np.zeros_like(yhat)
    for index in range(yhat.shape[0]):
        up, down = yhat.copy(), yhat.copy()
        up[index] += step
        down[index] -= step
        grad[index] = (fn(up) - fn(down)) / (2 * step)
    return grad


# ---------------------------------------------------------------------------
# Complex spectrogram MSE
# ---------------------------------------------------------------------------


class TestComplexMse:
    def test_perfect_estimate(self, rng):
        Y = rng.standard_normal((6, 9)) + 1j * rng.standard_normal((6, 9))
        assert complex_mse_loss(Y, Y) == 0.0
        np.testing.assert_array_equal(complex_mse_gradient(Y, Y), 0.0)

    def test_constant_offset(self):
        assert complex_mse_loss(np.zeros((2, 3)), np.full((2, 3), 1.0 + 1.0j)) == pytest.approx(2.0)

    def test_accepts_spectrograms(self, rng):
        Y = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
        Yhat = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
        wrapped = complex_mse_loss(ComplexSpectrogram(bins=Y), ComplexSpectrogram(bins=Yhat))
        assert wrapped == complex_mse_loss(Y, Yhat)

    def test_finite_differences(self, rng):
        Y = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        Yhat = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        parts = np.concatenate([Yhat.real.ravel(), Yhat.imag.ravel()])
        rebuild = lambda p: (p[: Y.size] + 1j * p[Y.size :]).reshape(Y.shape)  # noqa: E731
        numeric = finite_difference(lambda p: complex_mse_loss(Y, rebuild(p)), parts)
        analytic = complex_mse_gradient(Y, Yhat)
        np.testing.assert_allclose(rebuild(numeric), analytic, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            complex_mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))
        with pytest.raises(ShapeMismatchError):
            complex_mse_gradient(np.zeros((0, 3)), np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# Single-segment cosine similarity
# ---------------------------------------------------------------------------


class TestCosSim:
    def test_self_similarity(self, rng):
        y = rng.standard_normal(100)
        assert cos_sim_loss(y, y) == pytest.approx(-1.0, abs=1e-7)

    def test_anti_aligned(self, rng):
        y = rng.standard_normal(100)
        assert cos_sim_loss(y, -y) == pytest.approx(1.0, abs=1e-7)

    def test_orthogonal(self):
        assert cos_sim_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_accepts_signal_buffers(self, rng):
        y = rng.standard_normal(50)
        assert cos_sim_loss(SignalBuffer(samples=y), SignalBuffer(samples=y)) == pytest.approx(-1.0, abs=1e-7)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError, match="shape mismatch"):
            cos_sim_loss(np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# Multi-scale loss
# ---------------------------------------------------------------------------


class TestMultiscaleLoss:
    def test_perfect_estimate(self, rng):
        y = rng.standard_normal(8128)
        assert multiscale_loss(y, y, EXACT) == pytest.approx(-4.0, abs=1e-9)
        assert multiscale_loss(y, y) == pytest.approx(-4.0, abs=1e-6)

    def test_negated_estimate(self, rng):
        y = rng.standard_normal(8128)
        assert multiscale_loss(y, -y, EXACT) == pytest.approx(4.0, abs=1e-9)

    def test_matches_slicing_oracle(self, rng):
        y, yhat = rng.standard_normal(8128), rng.standard_normal(8128)
        cfg = LossConfig()
        assert multiscale_loss(y, yhat, cfg) == pytest.approx(brute_force_multiscale(y, yhat, cfg), abs=1e-12)

    def test_single_scale_is_mean_segment_loss(self, rng):
        y, yhat = rng.standard_normal(8128), rng.standard_normal(8128)
        single = LossConfig(segment_lengths=[4064], eps_norm=0.0)
        halves = [cos_sim_loss(y[i : i + 4064], yhat[i : i + 4064], eps_norm=0.0) for i in (0, 4064)]
        assert multiscale_loss(y, yhat, single) == pytest.approx(np.mean(halves), abs=1e-12)

    def test_trailing_remainder_dropped(self, rng):
        y, yhat = rng.standard_normal(32000), rng.standard_normal(32000)
        cfg = LossConfig()
        assert multiscale_loss(y, yhat, cfg) == pytest.approx(brute_force_multiscale(y, yhat, cfg), abs=1e-12)
        # samples past the last full 508-segment never reach the loss
        tail = yhat.copy()
        tail[-(32000 % 508) :] = 0.0
        assert multiscale_loss(y, tail, LossConfig(segment_lengths=[508])) == pytest.approx(
            multiscale_loss(y, yhat, LossConfig(segment_lengths=[508])), abs=1e-15
        )

    def test_short_signals_use_the_scales_they_fill(self, rng):
        y = rng.standard_normal(1500)
        assert multiscale_loss(y, y, EXACT) == pytest.approx(-2.0, abs=1e-9)

    def test_range(self, rng):
        for _ in range(10):
            value = multiscale_loss(rng.standard_normal(4064), rng.standard_normal(4064))
            assert -4.0 <= value <= 4.0

    @pytest.mark.parametrize("scale", [0.5, 3.0, 100.0])
    def test_scale_invariance(self, rng, scale):
        y, yhat = rng.standard_normal(8128), rng.standard_normal(8128)
        assert multiscale_loss(y, scale * yhat) == pytest.approx(multiscale_loss(y, yhat), abs=1e-9)

    def test_too_short(self):
        with pytest.raises(NoFullSegmentError, match="no full segment at any scale"):
            multiscale_loss(np.ones(100), np.ones(100))

    def test_segment_lengths_must_be_positive(self):
        with pytest.raises(ValueError):
            LossConfig(segment_lengths=[508, 0])


# ---------------------------------------------------------------------------
# Emphasis stages
# ---------------------------------------------------------------------------


class TestEmphasis:
    def test_pre_emphasis_identity(self, rng):
        y = rng.standard_normal(10)
        np.testing.assert_array_equal(pre_emphasis(y, 0.0).samples, y)

    def test_pre_emphasis_values(self):
        np.testing.assert_allclose(pre_emphasis(np.ones(3), 0.97).samples, [1.0, 0.03, 0.03])

    def test_pre_emphasis_dc(self):
        out = pre_emphasis(np.full(20, 0.4), 0.97).samples
        np.testing.assert_allclose(out[1:], 0.4 * 0.03)

    def test_mu_law_fixed_points(self):
        np.testing.assert_allclose(mu_law(np.array([0.0, 1.0, -1.0])).samples, [0.0, 1.0, -1.0])

    def test_mu_law_half(self):
        assert mu_law(np.array([0.5])).samples.item() == pytest.approx(0.93750, abs=1e-5)

    def test_mu_law_is_odd(self, rng):
        y = rng.uniform(-1, 1, 50)
        np.testing.assert_allclose(mu_law(-y).samples, -mu_law(y).samples)

    def test_emphasized_perfect(self, rng):
        y = 0.1 * rng.standard_normal(8128)
        assert emphasized_loss(y, y, EXACT) == pytest.approx(-12.0, abs=1e-9)
        assert emphasized_loss(y, -y, EXACT) == pytest.approx(12.0, abs=1e-9)

    def test_emphasized_matches_composition_oracle(self, rng):
        y, yhat = 0.1 * rng.standard_normal(1024), 0.1 * rng.standard_normal(1024)
        cfg = LossConfig(segment_lengths=[512, 256])
        assert emphasized_loss(y, yhat, cfg) == pytest.approx(brute_force_emphasized(y, yhat, cfg), abs=1e-12)

    def test_oddness(self, rng):
        y, yhat = 0.1 * rng.standard_normal(1016), 0.1 * rng.standard_normal(1016)
        assert emphasized_loss(-y, -yhat) == pytest.approx(emphasized_loss(y, yhat), abs=1e-12)


# ---------------------------------------------------------------------------
# Component sum
# ---------------------------------------------------------------------------


class TestFinalLoss:
    def components(self, rng, length=8128):
        x = 0.1 * rng.standard_normal(length)
        y = {k: 0.1 * rng.standard_normal(length) for k in "drn"}
        return x, y

    def test_perfect_prediction(self, rng):
        x, y = self.components(rng)
        pairs = {k: (SignalBuffer(samples=v), SignalBuffer(samples=v)) for k, v in y.items()}
        assert final_loss(pairs, SignalBuffer(samples=x), EXACT) == pytest.approx(-72.0, abs=1e-8)

    def test_complement_exchange(self, rng):
        x, y = self.components(rng)
        est = {k: 0.1 * rng.standard_normal(len(x)) for k in "drn"}
        pairs = {k: (y[k], est[k]) for k in "drn"}
        swapped = dict(pairs, d=(x - y["d"], x - est["d"]))
        assert final_loss(swapped, x) == pytest.approx(final_loss(pairs, x), abs=1e-9)

    def test_matches_naive_sum(self, rng):
        x, y = self.components(rng, length=1016)
        est = {k: 0.1 * rng.standard_normal(len(x)) for k in "drn"}
        expected = sum(
            emphasized_loss(y[k], est[k]) + emphasized_loss(x - y[k], x - est[k]) for k in "drn"
        )
        assert final_loss({k: (y[k], est[k]) for k in "drn"}, x) == pytest.approx(expected, abs=1e-12)

    def test_missing_component(self, rng):
        x, y = self.components(rng, length=1016)
        with pytest.raises(MissingComponentError, match="missing component"):
            final_loss({"d": (y["d"], y["d"]), "n": (y["n"], y["n"])}, x)

    def test_length_mismatch(self, rng):
        x, y = self.components(rng, length=1016)
        pairs = {k: (v, v) for k, v in y.items()}
        with pytest.raises(ShapeMismatchError):
            final_loss(pairs, x[:-1])


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


class TestGradients:
    def test_tangent_to_each_segment(self, rng):
        cfg = LossConfig(segment_lengths=[508], eps_norm=0.0)
        y, yhat = rng.standard_normal(2032), rng.standard_normal(2032)
        grad = multiscale_gradient(y, yhat, cfg).reshape(4, 508)
        for g, est in zip(grad, yhat.reshape(4, 508)):
            assert abs(np.dot(g, est)) / (np.linalg.norm(g) * np.linalg.norm(est)) < 1e-6

    def test_perfect_estimate_is_stationary(self, rng):
        y = rng.standard_normal(1016)
        np.testing.assert_allclose(multiscale_gradient(y, y, EXACT), 0.0, atol=1e-12)

    def test_multiscale_finite_differences(self, rng):
        y, yhat = rng.standard_normal(128), rng.standard_normal(128)
        numeric = finite_difference(lambda e: multiscale_loss(y, e, SHORT), yhat)
        analytic = multiscale_gradient(y, yhat, SHORT)
        assert np.max(np.abs(numeric - analytic)) / np.max(np.abs(analytic)) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_emphasized_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        y, yhat = 0.1 * rng.standard_normal(128), estimate_away_from_zero(rng, 128)
        numeric = finite_difference(lambda e: emphasized_loss(y, e, SHORT), yhat)
        analytic = loss_gradient(y, yhat, SHORT)
        assert np.max(np.abs(numeric - analytic)) / np.max(np.abs(analytic)) < 1e-4

    @pytest.mark.slow
    def test_emphasized_finite_differences_sweep(self):
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            y, yhat = 0.1 * rng.standard_normal(96), estimate_away_from_zero(rng, 96)
            numeric = finite_difference(lambda e: emphasized_loss(y, e, SHORT), yhat)
            analytic = loss_gradient(y, yhat, SHORT)
            assert np.max(np.abs(numeric - analytic)) / np.max(np.abs(analytic)) < 1e-4

    def test_gradient_ignores_dropped_tail(self, rng):
        y, yhat = rng.standard_normal(100), rng.standard_normal(100)
        grad = multiscale_gradient(y, yhat, SHORT)
        assert np.all(grad[96:] == 0.0)
