from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

import orjson
import typer
from rich.console import Console
from rich.table import Table

from phm_engine.dependencies import initiate_engine_service
from phm_engine.exceptions import ConfigError, handle_usage_exception
from phm_engine.log_config import configure_logging
from phm_engine.opcount import op_table
from phm_engine.schemas import BenchReport, EnhanceStats, MetricReport, OracleCheckReport, SimulationReport
from phm_engine.service_results import get_settings, handle_result
from phm_engine.services import JSON_OPTIONS

app = typer.Typer(no_args_is_help=True, add_completion=False)
console = Console()


class Mode(str, Enum):
    causal = "causal"
    noncausal = "noncausal"


class Preset(str, Enum):
    rt = "rt"
    nrt = "nrt"


class Switch(str, Enum):
    on = "on"
    off = "off"


class WavFormat(str, Enum):
    pcm16 = "pcm16"
    ieee_float = "float"


class LowBandTarget(str, Enum):
    direct = "direct"
    noise = "noise"


class BenchMode(str, Enum):
    both = "both"
    analytic = "analytic"


BACKENDS = {Mode.causal: "causal-stream", Mode.noncausal: "noncausal-window"}


def print_json(report) -> None:
    typer.echo(orjson.dumps(report.model_dump(mode="json"), option=JSON_OPTIONS).decode())


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides PHM_LOG_LEVEL."),
):
    """Speech denoising and dereverberation with phase-aware masks."""
    try:
        settings = get_settings()
    except ConfigError as raised_exception:
        handle_usage_exception(raised_exception)
    configure_logging(log_level or settings.log_level)


@app.command("enhance")
def cmd_enhance(
    input: Path = typer.Option(..., "--input", help="16 kHz mono WAV to enhance."),
    output: Path = typer.Option(..., "--output", help="Where the remixed WAV is written."),
    weights: Optional[Path] = typer.Option(None, "--weights", help="PHMW weight file."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seeded random weights instead of a file."),
    mode: Mode = typer.Option(Mode.causal, "--mode"),
    preset: Optional[Preset] = typer.Option(None, "--preset", help="STFT preset, defaults to PHM_PRESET."),
    reverb_gain_db: Optional[float] = typer.Option(None, "--reverb-gain-db"),
    lookahead_ms: Optional[float] = typer.Option(None, "--lookahead-ms"),
    drc: Switch = typer.Option(Switch.off, "--drc"),
    drc_config: Optional[Path] = typer.Option(None, "--drc-config", help="DrcConfig YAML."),
    config: Optional[Path] = typer.Option(None, "--config", help="UNetConfig YAML."),
    emit_components: Optional[Path] = typer.Option(None, "--emit-components", help="Directory for direct/reverb/noise WAVs."),
    emit_stats: Optional[Path] = typer.Option(None, "--emit-stats", help="JSON file for run statistics."),
    wav_format: Optional[WavFormat] = typer.Option(None, "--wav-format"),
    low_band: LowBandTarget = typer.Option(LowBandTarget.direct, "--low-band", help="Component receiving the trimmed low bins."),
):
    result = initiate_engine_service().enhance_file(
        input_path=input,
        output_path=output,
        weights_path=weights,
        seed=seed,
        mode=BACKENDS[mode],
        preset=preset.value if preset else None,
        reverb_gain_db=reverb_gain_db,
        lookahead_ms=lookahead_ms,
        drc=drc == Switch.on,
        drc_config_path=drc_config,
        config_path=config,
        emit_components=emit_components,
        emit_stats=emit_stats,
        wav_format=wav_format.value if wav_format else None,
        low_band=low_band.value,
    )
    stats = handle_result(result, EnhanceStats)
    console.print(
        f"{stats.frames} frames, {stats.backend}, lookahead {stats.lookahead_frames} frames, "
        f"{stats.ms_per_frame:.2f} ms/frame, {stats.instrumented_mults:,} multiplications"
    )


@app.command("simulate")
def cmd_simulate(
    seed: int = typer.Option(0, "--seed"),
    out_dir: Path = typer.Option(..., "--out-dir"),
    count: int = typer.Option(1, "--count"),
    snr_db: Optional[float] = typer.Option(None, "--snr-db", help="Fixed SNR for every mixture."),
    snr_range: Optional[Tuple[float, float]] = typer.Option(None, "--snr-range", help="LOW HIGH in dB."),
    t60: Optional[float] = typer.Option(None, "--t60", help="Fixed reverberation time in seconds."),
    wav_format: Optional[WavFormat] = typer.Option(None, "--wav-format"),
):
    result = initiate_engine_service().simulate(
        seed=seed,
        out_dir=out_dir,
        count=count,
        snr_db=snr_db,
        snr_range=snr_range,
        t60=t60,
        wav_format=wav_format.value if wav_format else None,
    )
    report = handle_result(result, SimulationReport)
    console.print(f"wrote {report.count} mixtures, manifest {report.manifest}")


@app.command("metrics")
def cmd_metrics(
    reference: Path = typer.Option(..., "--reference"),
    estimate: Path = typer.Option(..., "--estimate"),
    stft_preset: Optional[Preset] = typer.Option(None, "--stft-preset"),
    mixture: Optional[Path] = typer.Option(None, "--mixture", help="Adds the phase gain over this mixture."),
    json: bool = typer.Option(False, "--json", help="Print JSON instead of text."),
):
    result = initiate_engine_service().metrics(
        reference_path=reference,
        estimate_path=estimate,
        preset=stft_preset.value if stft_preset else None,
        mixture_path=mixture,
    )
    report = handle_result(result, MetricReport)
    if json:
        print_json(report)
        return
    console.print(f"si_sdr_db: {report.si_sdr_db:.2f}")
    console.print(f"phase_distance_deg: {report.phase_distance_deg:.2f}")
    if report.phase_gain_pct is not None:
        console.print(f"phase_gain_pct: {report.phase_gain_pct:.1f}")


@app.command("bench-ops")
def cmd_bench_ops(
    config: Optional[Path] = typer.Option(None, "--config", help="UNetConfig YAML; the default network otherwise."),
    mode: BenchMode = typer.Option(BenchMode.both, "--mode"),
    seed: int = typer.Option(0, "--seed"),
    json: bool = typer.Option(False, "--json", help="Print JSON instead of a table."),
):
    result = initiate_engine_service().bench_ops(
        config_path=config, instrumented=mode == BenchMode.both, seed=seed
    )
    report = handle_result(result, BenchReport)
    if json:
        print_json(report)
        return
    instrumented = mode == BenchMode.both
    console.print(
        op_table(
            report.analytic,
            report.instrumented_naive if instrumented else None,
            report.instrumented_streaming if instrumented else None,
        )
    )
    console.print(f"overall reduction: {100 * report.analytic.overall_reduction_pct:.1f}%")
    console.print(f"reference figure: {100 * report.analytic.reference_reduction_pct:.1f}%")
    if instrumented:
        console.print(f"analytic and measured counts match: {report.counts_match}")


@app.command("oracle-check")
def cmd_oracle_check(
    seed: int = typer.Option(0, "--seed"),
    count: int = typer.Option(20, "--count"),
    threshold_db: float = typer.Option(50.0, "--threshold-db"),
    preset: Optional[Preset] = typer.Option(None, "--preset"),
):
    result = initiate_engine_service().oracle_check(
        seed=seed, count=count, threshold_db=threshold_db, preset=preset.value if preset else None
    )
    report = handle_result(result, OracleCheckReport)
    if not report.mixtures:
        console.print("no mixtures requested")
        return
    table = Table(title="Oracle reconstruction")
    for column in ("seed", "snr (dB)", "t60 (s)", "SI-SDR direct", "SI-SDR noise", "max bin error"):
        table.add_column(column, justify="right")
    for m in report.mixtures:
        table.add_row(
            str(m.seed),
            f"{m.snr_db:.1f}",
            f"{m.t60:.2f}",
            f"{m.si_sdr_direct_db:.1f}",
            f"{m.si_sdr_noise_db:.1f}",
            f"{m.max_bin_error:.2e}",
        )
    console.print(table)
    console.print(f"min SI-SDR direct: {report.min_si_sdr_direct_db:.1f} dB")
    console.print(f"min SI-SDR noise: {report.min_si_sdr_noise_db:.1f} dB")
    if not report.passed:
        console.print(f"[bold red]below {threshold_db:.1f} dB[/]")
        raise typer.Exit(code=1)


if __name__ == "__main__":
    app()
