"""Incremental inference: one feature frame in, at most one frame of logits out.

Every level of the encoder keeps a ring buffer of its output frames addressed
by absolute index. A level whose outputs are spaced D input frames apart
serves D interleaved phases from the same buffer, so a single queue per layer
stands in for the prod(strides) queues of a per-phase layout.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from phm_engine.exceptions import ShapeMismatchError
from phm_engine.phm import MaskLogits
from phm_engine.schemas import LOGIT_CHANNELS, UNetConfig
from phm_engine.unet import (
    OpCounter,
    WeightSet,
    conv_frame,
    dilations,
    head_logits,
    leaky_relu,
    plan_decoder,
    receptive_offsets,
    split_logits,
    transposed_row,
)

logger = logging.getLogger(__name__)


class FrameQueue:
    def __init__(self, capacity: int, frame_shape: Tuple[int, ...], dtype=np.float32) -> None:
        if capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        self.capacity = capacity
        self.buffer = np.zeros((capacity,) + tuple(frame_shape), dtype=dtype)
        self.next_index = 0

    def __len__(self) -> int:
        return min(self.next_index, self.capacity)

    @property
    def oldest(self) -> int:
        return max(0, self.next_index - self.capacity)

    def push(self, frame: np.ndarray) -> None:
        self.buffer[self.next_index % self.capacity] = frame
        self.next_index += 1

    def get(self, index: int) -> np.ndarray:
        if not self.oldest <= index < self.next_index:
            raise IndexError(
                f"frame {index} not cached (holding {self.oldest}..{self.next_index - 1})"
            )
        return self.buffer[index % self.capacity]

    def gather(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self.get(index) for index in indices])

    def clear(self) -> None:
        self.buffer[...] = 0
        self.next_index = 0


def queue_capacities(cfg: UNetConfig) -> List[int]:
    """Smallest ring size per level (0 = input) that still serves the next layer and the decoder."""
    spacing = dilations(cfg)
    offsets = receptive_offsets(cfg)
    plan = plan_decoder(cfg)
    capacities = []
    for level in range(cfg.depth + 1):
        needed = 1
        if level < cfg.depth:
            needed = max(needed, (cfg.encoder_layers[level].kernel_t - 1) * spacing[level] + 1)
        # a level can drop out of the decoder when its kernel is shorter than its stride
        oldest_window_frame = min(plan.needed_in.get(level, []), default=None)
        if level >= 1 and oldest_window_frame is not None:
            needed = max(
                needed,
                cfg.context_frames - offsets[level] - spacing[level] * oldest_window_frame,
            )
        capacities.append(needed)
    return capacities


class StreamState:
    """Caches for one stream. Not shareable between streams."""

    def __init__(self, cfg: UNetConfig, dtype=np.float32) -> None:
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.dilations = dilations(cfg)
        self.offsets = receptive_offsets(cfg)
        self.plan = plan_decoder(cfg)
        self.shapes = cfg.encoder_shapes()
        self.capacities = queue_capacities(cfg)
        self.queues = [
            FrameQueue(capacity, shape[1:], self.dtype)
            for capacity, shape in zip(self.capacities, self.shapes)
        ]
        self.frames_ingested = 0
        self.frames_emitted = 0
        self.op_counter = OpCounter()
        self.last_push_ops = OpCounter()

    @property
    def warmup(self) -> int:
        return self.cfg.context_frames

    def queue_phases(self, depth: int) -> int:
        """Interleaved frame phases held by the queue of encoder layer `depth`."""
        return self.dilations[depth]

    def reset(self) -> None:
        for queue in self.queues:
            queue.clear()
        self.frames_ingested = 0
        self.frames_emitted = 0
        self.op_counter = OpCounter()
        self.last_push_ops = OpCounter()

    def push(self, frame: np.ndarray, weights: WeightSet) -> Optional[np.ndarray]:
        """Ingest one (F, C) frame; returns (F, 10) logits once the context is full."""
        cfg = self.cfg
        frame = np.asarray(frame, dtype=self.dtype)
        expected = (cfg.freq_bins, cfg.in_channels)
        if frame.shape != expected:
            raise ShapeMismatchError(f"shape mismatch: frame {frame.shape}, expected {expected}")

        n = self.frames_ingested
        ops = OpCounter()
        self.queues[0].push(frame)
        for depth, layer in enumerate(cfg.encoder_layers, start=1):
            index = n - self.offsets[depth]
            if index < 0:
                break
            step = self.dilations[depth - 1]
            taps = self.queues[depth - 1].gather([index + k * step for k in range(layer.kernel_t)])
            name = f"enc{depth}"
            out = conv_frame(taps, weights.weight(name), weights.bias(name), layer.stride_f)
            ops.add(name, out.shape[0] * layer.kernel_volume * layer.in_ch * layer.out_ch)
            self.queues[depth].push(leaky_relu(out, cfg.leaky_slope))
        self.frames_ingested += 1

        logits = None
        if n >= cfg.context_frames - 1:
            logits = self._decode_target(n, weights, ops)
            self.frames_emitted += 1
        self.last_push_ops = ops
        self.op_counter.merge(ops)
        return logits

    def _decode_target(self, n: int, weights: WeightSet, ops: OpCounter) -> np.ndarray:
        cfg, plan = self.cfg, self.plan
        window_start = n - cfg.context_frames + 1

        def cached(level: int, frame: int) -> np.ndarray:
            return self.queues[level].get(window_start + self.dilations[level] * frame)

        inputs: Dict[int, np.ndarray] = {m: cached(cfg.depth, m) for m in plan.needed_in[cfg.depth]}
        outputs: Dict[int, np.ndarray] = {}
        for dec in cfg.decoder_layers:
            depth = dec.mirror_of
            name = f"dec{depth}"
            weight, bias = weights.weight(name), weights.bias(name)
            out_bins = (self.shapes[depth][1] - 1) * dec.stride_f + dec.kernel_f
            outputs = {}
            for t in plan.needed_out[depth]:
                acc = np.zeros((out_bins, dec.out_ch), dtype=self.dtype)
                for i, k in plan.taps[depth][t]:
                    row = inputs[i]
                    acc += transposed_row(row, weight[k], dec.stride_f)
                    ops.add(name, row.shape[0] * dec.kernel_f * dec.in_ch * dec.out_ch)
                outputs[t] = leaky_relu(acc + bias, cfg.leaky_slope)
            if depth > 1:
                inputs = {
                    m: np.concatenate([outputs[m], cached(depth - 1, m)], axis=-1)
                    for m in plan.needed_in[depth - 1]
                }

        target = outputs[plan.target]
        ops.add("head", target.shape[0] * cfg.head_channels * LOGIT_CHANNELS)
        return head_logits(target, weights)


def stream_push(
    frame: np.ndarray, state: StreamState, weights: WeightSet, cfg: UNetConfig
) -> Optional[Tuple[MaskLogits, MaskLogits]]:
    """Logits pair for frame n - LA, each grid shaped (1, F); None during warmup."""
    if state.cfg != cfg:
        raise ShapeMismatchError("stream state was built for a different network config")
    logits = state.push(frame, weights)
    if logits is None:
        return None
    return split_logits(logits[None])
