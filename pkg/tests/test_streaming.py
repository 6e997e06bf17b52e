import numpy as np
import pytest

from phm_engine.exceptions import ShapeMismatchError
from phm_engine.opcount import required_queues
from phm_engine.schemas import ConvLayerSpec, UNetConfig
from phm_engine.streaming import FrameQueue, StreamState, queue_capacities, stream_push
from phm_engine.unet import forward_window, init_weights

from conftest import small_config


def random_config(rng) -> UNetConfig:
    """A valid network built top-down so every layer tiles its input exactly."""
    depth = int(rng.integers(1, 4))
    specs = [
        (int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        for _ in range(depth)
    ]
    frames, bins = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    for kernel_t, stride_t, kernel_f, stride_f in reversed(specs):
        frames = (frames - 1) * stride_t + kernel_t
        bins = (bins - 1) * stride_f + kernel_f
    channels = [5] + [int(rng.integers(1, 5)) for _ in range(depth)]
    layers = [
        ConvLayerSpec(
            kernel_t=kernel_t,
            stride_t=stride_t,
            kernel_f=kernel_f,
            stride_f=stride_f,
            in_ch=channels[index],
            out_ch=channels[index + 1],
        )
        for index, (kernel_t, stride_t, kernel_f, stride_f) in enumerate(specs)
    ]
    lookahead = int(rng.integers(0, frames))
    return UNetConfig(
        encoder_layers=layers,
        head_channels=int(rng.integers(1, 5)),
        context_frames=frames,
        freq_bins=bins,
        lookahead_ms=8.0 * lookahead,
    )


def run_equivalence(cfg: UNetConfig, seed: int, dtype, extra_frames: int = 3):
    weights = init_weights(cfg, seed, dtype=dtype)
    frames = np.random.default_rng(seed).standard_normal(
        (cfg.context_frames + extra_frames, cfg.freq_bins, cfg.in_channels)
    )
    state = StreamState(cfg, dtype=dtype)
    pairs = []
    for n, frame in enumerate(frames):
        out = state.push(frame, weights)
        if n < cfg.context_frames - 1:
            assert out is None
            continue
        window = frames[n - cfg.context_frames + 1 : n + 1].astype(dtype)
        pairs.append((out, forward_window(window, weights, cfg)[cfg.target_frame]))
    return state, pairs


def record_accesses(state: StreamState):
    """Wrap every queue so each lookup records how far back it reached."""
    reach = [0] * len(state.queues)
    for level, queue in enumerate(state.queues):
        original = queue.get

        def get(index, queue=queue, level=level, original=original):
            reach[level] = max(reach[level], queue.next_index - index)
            return original(index)

        queue.get = get
    return reach


def grid_anchors(cfg: UNetConfig, depth: int, start: int, stop: int):
    """First input frame of every encoder output at `depth` in a valid pass over frames [start, stop)."""
    anchors = list(range(start, stop))
    for layer in cfg.encoder_layers[:depth]:
        count = (len(anchors) - layer.kernel_t) // layer.stride_t + 1
        anchors = [anchors[i * layer.stride_t] for i in range(max(count, 0))]
    return anchors


def visited_phases(cfg: UNetConfig, depth: int, pushes: int = 32) -> int:
    """Distinct output grids at `depth` met while the window slides one frame at a time."""
    horizon = pushes + cfg.context_frames
    stop = horizon + 2 * cfg.context_frames + 64
    grids = set()
    for start in range(pushes):
        grids.add(frozenset(a for a in grid_anchors(cfg, depth, start, stop) if a >= horizon))
    return len(grids)


# ---------------------------------------------------------------------------
# Ring buffer
# ---------------------------------------------------------------------------


class TestFrameQueue:
    def test_holds_latest_frames(self):
        queue = FrameQueue(3, (2,), dtype=np.float64)
        for value in range(5):
            queue.push(np.full(2, value))
        assert len(queue) == 3
        assert queue.oldest == 2
        np.testing.assert_array_equal(queue.gather([2, 4]), [[2, 2], [4, 4]])

    def test_evicted_frame(self):
        queue = FrameQueue(2, (1,))
        for value in range(3):
            queue.push(np.array([value]))
        with pytest.raises(IndexError, match="not cached"):
            queue.get(0)
        with pytest.raises(IndexError):
            queue.get(3)

    def test_clear(self):
        queue = FrameQueue(2, (1,))
        queue.push(np.ones(1))
        queue.clear()
        assert len(queue) == 0 and queue.next_index == 0

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            FrameQueue(0, (1,))


# ---------------------------------------------------------------------------
# Backend equivalence
# ---------------------------------------------------------------------------


class TestStreamingEquivalence:
    def test_small_config_double(self, small_cfg):
        _, pairs = run_equivalence(small_cfg, seed=1, dtype=np.float64, extra_frames=6)
        assert len(pairs) == 7
        for streamed, windowed in pairs:
            np.testing.assert_allclose(streamed, windowed, atol=1e-10)

    def test_small_config_single(self, small_cfg):
        _, pairs = run_equivalence(small_cfg, seed=2, dtype=np.float32)
        for streamed, windowed in pairs:
            np.testing.assert_allclose(streamed, windowed, atol=1e-4)

    def test_default_config(self):
        _, pairs = run_equivalence(UNetConfig.default("rt"), seed=3, dtype=np.float32, extra_frames=2)
        for streamed, windowed in pairs:
            np.testing.assert_allclose(streamed, windowed, atol=1e-4)

    def test_random_configs(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            cfg = random_config(rng)
            _, pairs = run_equivalence(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
            for streamed, windowed in pairs:
                np.testing.assert_allclose(streamed, windowed, atol=1e-10)

    @pytest.mark.slow
    def test_default_config_sweep(self):
        cfg = UNetConfig.default("rt")
        for seed in range(200):
            _, pairs = run_equivalence(cfg, seed=seed, dtype=np.float32, extra_frames=0)
            for streamed, windowed in pairs:
                np.testing.assert_allclose(streamed, windowed, atol=1e-4)


# ---------------------------------------------------------------------------
# Warmup and queue arithmetic
# ---------------------------------------------------------------------------


class TestQueueArithmetic:
    def test_warmup(self, small_cfg):
        weights = init_weights(small_cfg, 0)
        state = StreamState(small_cfg)
        frame = np.zeros((small_cfg.freq_bins, small_cfg.in_channels))
        outputs = [stream_push(frame, state, weights, small_cfg) for _ in range(small_cfg.context_frames + 4)]
        assert state.warmup == small_cfg.context_frames
        assert all(out is None for out in outputs[: state.warmup - 1])
        assert all(out is not None for out in outputs[state.warmup - 1 :])
        direct, noise = outputs[-1]
        assert direct.shape == noise.shape == (1, small_cfg.freq_bins)

    def test_emitted_count(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cfg = random_config(rng)
            weights = init_weights(cfg, 0, dtype=np.float64)
            state = StreamState(cfg, dtype=np.float64)
            pushes = cfg.context_frames + int(rng.integers(0, 5))
            for _ in range(pushes):
                state.push(np.zeros((cfg.freq_bins, cfg.in_channels)), weights)
            assert state.frames_ingested == pushes
            assert state.frames_emitted == max(0, pushes - cfg.context_frames + 1)

    def test_capacities_are_minimal(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            cfg = random_config(rng)
            weights = init_weights(cfg, 1, dtype=np.float64)
            state = StreamState(cfg, dtype=np.float64)
            reach = record_accesses(state)
            for _ in range(cfg.context_frames + 3):
                state.push(np.ones((cfg.freq_bins, cfg.in_channels)), weights)
            assert [max(r, 1) for r in reach] == state.capacities == queue_capacities(cfg)

    def test_queue_phases_follow_strides(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            cfg = random_config(rng)
            state = StreamState(cfg)
            for depth in range(1, cfg.depth + 1):
                assert visited_phases(cfg, depth) == required_queues(cfg, depth) == state.queue_phases(depth)

    def test_default_network_phases(self):
        cfg = UNetConfig.default("rt")
        assert [visited_phases(cfg, depth) for depth in range(1, cfg.depth + 1)] == [1, 2, 2, 4, 4]
        assert [required_queues(cfg, depth) for depth in range(1, cfg.depth + 1)] == [1, 2, 2, 4, 4]

    def test_reset(self, small_cfg):
        weights = init_weights(small_cfg, 0, dtype=np.float64)
        state = StreamState(small_cfg, dtype=np.float64)
        frames = np.random.default_rng(0).standard_normal((small_cfg.context_frames, 253, 5))
        first = [state.push(frame, weights) for frame in frames][-1]
        state.reset()
        assert state.frames_ingested == 0 and state.op_counter.total() == 0
        second = [state.push(frame, weights) for frame in frames][-1]
        assert first.tobytes() == second.tobytes()


# ---------------------------------------------------------------------------
# Instrumentation and errors
# ---------------------------------------------------------------------------


class TestStreamingOps:
    def test_first_emitting_push_is_steady_state(self, small_cfg):
        weights = init_weights(small_cfg, 0)
        state = StreamState(small_cfg)
        frame = np.zeros((253, 5))
        tallies = []
        for _ in range(small_cfg.context_frames + 2):
            state.push(frame, weights)
            tallies.append(state.last_push_ops.as_dict())
        assert tallies[-3] == tallies[-2] == tallies[-1]
        assert state.op_counter.total() >= 3 * state.last_push_ops.total()

    def test_wrong_frame_shape(self, small_cfg):
        state = StreamState(small_cfg)
        with pytest.raises(ShapeMismatchError, match="shape mismatch"):
            state.push(np.zeros((252, 5)), init_weights(small_cfg, 0))

    def test_state_bound_to_config(self, small_cfg):
        other = small_config(head_channels=4)
        with pytest.raises(ShapeMismatchError):
            stream_push(np.zeros((253, 5)), StreamState(small_cfg), init_weights(other, 0), other)
