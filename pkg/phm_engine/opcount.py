"""Analytic multiplication counts for the windowed and the streaming backends."""

from math import prod
from typing import Dict, Literal, Mapping, Optional

from rich.table import Table

from phm_engine.exceptions import ConfigError
from phm_engine.schemas import LOGIT_CHANNELS, LayerOpCount, OpCountReport, UNetConfig
from phm_engine.unet import layer_names, plan_decoder

Mode = Literal["naive", "streaming"]


def required_queues(cfg: UNetConfig, depth: int) -> int:
    if not 1 <= depth <= cfg.depth:
        raise ConfigError(f"depth {depth} outside 1..{cfg.depth}")
    return prod(cfg.temporal_strides()[:depth])


def count_layer_mults(cfg: UNetConfig, mode: Mode) -> Dict[str, int]:
    """Multiplications per layer: one full window (naive) or one steady-state push (streaming)."""
    shapes = cfg.encoder_shapes()
    counts: Dict[str, int] = {}
    for depth, layer in enumerate(cfg.encoder_layers, start=1):
        frames, bins, _ = shapes[depth]
        positions = frames * bins if mode == "naive" else bins
        counts[f"enc{depth}"] = positions * layer.kernel_volume * layer.in_ch * layer.out_ch

    plan = plan_decoder(cfg) if mode == "streaming" else None
    for dec in cfg.decoder_layers:
        frames, bins, _ = shapes[dec.mirror_of]
        per_row = bins * dec.kernel_f * dec.in_ch * dec.out_ch
        if mode == "naive":
            counts[f"dec{dec.mirror_of}"] = frames * dec.kernel_t * per_row
        else:
            rows = sum(len(pairs) for pairs in plan.taps[dec.mirror_of].values())
            counts[f"dec{dec.mirror_of}"] = rows * per_row

    head_frames = cfg.context_frames if mode == "naive" else 1
    counts["head"] = head_frames * cfg.freq_bins * cfg.head_channels * LOGIT_CHANNELS
    return counts


def _reduction(naive: int, streaming: int) -> float:
    return 1.0 - streaming / naive if naive else 0.0


def count_ops(cfg: UNetConfig) -> OpCountReport:
    naive = count_layer_mults(cfg, "naive")
    streaming = count_layer_mults(cfg, "streaming")
    layers = []
    for name in layer_names(cfg):
        kind = "encoder" if name.startswith("enc") else "decoder" if name.startswith("dec") else "head"
        layers.append(
            LayerOpCount(
                name=name,
                kind=kind,
                naive_mults=naive[name],
                streaming_mults=streaming[name],
                reduction_pct=_reduction(naive[name], streaming[name]),
            )
        )
    naive_total, streaming_total = sum(naive.values()), sum(streaming.values())
    return OpCountReport(
        layers=layers,
        naive_total=naive_total,
        streaming_total=streaming_total,
        overall_reduction_pct=_reduction(naive_total, streaming_total),
    )


def op_table(
    report: OpCountReport,
    instrumented_naive: Optional[Mapping[str, int]] = None,
    instrumented_streaming: Optional[Mapping[str, int]] = None,
) -> Table:
    table = Table(title="Multiplications per output frame")
    table.add_column("layer")
    table.add_column("naive", justify="right")
    table.add_column("streaming", justify="right")
    if instrumented_naive is not None:
        table.add_column("measured naive", justify="right")
        table.add_column("measured streaming", justify="right")
    table.add_column("reduction", justify="right")
    for layer in report.layers:
        row = [layer.name, f"{layer.naive_mults:,}", f"{layer.streaming_mults:,}"]
        if instrumented_naive is not None:
            row += [
                f"{instrumented_naive.get(layer.name, 0):,}",
                f"{(instrumented_streaming or {}).get(layer.name, 0):,}",
            ]
        row.append(f"{100 * layer.reduction_pct:.1f}%")
        table.add_row(*row)
    total = ["total", f"{report.naive_total:,}", f"{report.streaming_total:,}"]
    if instrumented_naive is not None:
        total += [
            f"{sum(instrumented_naive.values()):,}",
            f"{sum((instrumented_streaming or {}).values()):,}",
        ]
    total.append(f"{100 * report.overall_reduction_pct:.1f}%")
    table.add_row(*total, style="bold")
    return table
