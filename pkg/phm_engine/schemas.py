from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

SAMPLE_RATE = 16000
LOGIT_CHANNELS = 10
FEATURE_CHANNELS = 5


class StftConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    window_size: int = Field(gt=0)
    hop_size: int = Field(gt=0)
    fft_size: int = Field(gt=0)
    discard_low_bins: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_framing(self):
        if self.window_size % self.hop_size != 0:
            raise ValueError(
                f"hop_size {self.hop_size} must divide window_size {self.window_size}"
            )
        if self.fft_size < self.window_size:
            raise ValueError("fft_size must be >= window_size")
        if self.discard_low_bins >= self.full_bin_count:
            raise ValueError("discard_low_bins must be smaller than the bin count")
        return self

    @property
    def full_bin_count(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def bin_count(self) -> int:
        return self.full_bin_count - self.discard_low_bins


STFT_PRESETS: Dict[str, StftConfig] = {
    "rt": StftConfig(window_size=512, hop_size=128, fft_size=512, discard_low_bins=4),
    "nrt": StftConfig(window_size=1024, hop_size=256, fft_size=1024, discard_low_bins=4),
}


class GumbelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    temperature: float = Field(default=1.0, gt=0)
    mode: Literal["deterministic", "stochastic"] = "deterministic"
    seed: int = 0


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    segment_lengths: List[int] = Field(default_factory=lambda: [4064, 2032, 1016, 508], min_length=1)
    preemph_alpha: float = Field(default=0.97, ge=0.0, lt=1.0)
    mu: float = Field(default=65535.0, gt=0)
    # 0 disables the stabiliser
    eps_norm: float = Field(default=1e-8, ge=0.0)

    @model_validator(mode="after")
    def check_segments(self):
        if any(g <= 0 for g in self.segment_lengths):
            raise ValueError("segment lengths must be positive")
        return self


def conv_out_len(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1


class ConvLayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel_f: int = Field(ge=1)
    kernel_t: int = Field(ge=1)
    stride_f: int = Field(default=1, ge=1)
    stride_t: int = Field(default=1, ge=1)
    in_ch: int = Field(ge=1)
    out_ch: int = Field(ge=1)

    @property
    def kernel_volume(self) -> int:
        return self.kernel_f * self.kernel_t


class DecoderLayerSpec(ConvLayerSpec):
    # index of the mirrored encoder layer, 1-based
    mirror_of: int


class UNetConfig(BaseModel):
    """Valid-convolution U-Net description.

    Tensors are laid out (time, frequency, channel). Decoder layers are
    derived by mirroring the encoder; every encoder layer must tile its
    input exactly so the transposed layers restore the same extent.
    """

    model_config = ConfigDict(frozen=True)

    encoder_layers: List[ConvLayerSpec] = Field(min_length=1)
    head_channels: int = Field(default=16, ge=1)
    leaky_slope: float = Field(default=0.01, ge=0.0)
    lookahead_ms: float = Field(default=32.0, ge=0.0)
    hop_size: int = Field(default=128, gt=0)
    freq_bins: int = Field(default=253, ge=1)
    context_frames: int = Field(default=65, ge=1)
    in_channels: int = Field(default=FEATURE_CHANNELS, ge=1)

    @model_validator(mode="after")
    def check_geometry(self):
        channels = self.in_channels
        frames, bins = self.context_frames, self.freq_bins
        for depth, layer in enumerate(self.encoder_layers, start=1):
            if layer.in_ch != channels:
                raise ValueError(
                    f"encoder layer {depth} expects {layer.in_ch} channels, receives {channels}"
                )
            if frames < layer.kernel_t or bins < layer.kernel_f:
                raise ValueError(f"encoder layer {depth} kernel exceeds its input")
            if (frames - layer.kernel_t) % layer.stride_t or (bins - layer.kernel_f) % layer.stride_f:
                raise ValueError(
                    f"encoder layer {depth} does not tile its {frames}x{bins} input exactly"
                )
            frames = conv_out_len(frames, layer.kernel_t, layer.stride_t)
            bins = conv_out_len(bins, layer.kernel_f, layer.stride_f)
            channels = layer.out_ch
        if not 0 <= self.lookahead_frames < self.context_frames:
            raise ValueError("lookahead must be shorter than the context")
        return self

    @property
    def depth(self) -> int:
        return len(self.encoder_layers)

    @property
    def lookahead_frames(self) -> int:
        hop_ms = 1000.0 * self.hop_size / SAMPLE_RATE
        return int(round(self.lookahead_ms / hop_ms))

    @property
    def target_frame(self) -> int:
        return self.context_frames - 1 - self.lookahead_frames

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.freq_bins, self.context_frames, self.in_channels)

    def encoder_shapes(self) -> List[Tuple[int, int, int]]:
        """(frames, bins, channels) of the input and of every encoder output."""
        shapes = [(self.context_frames, self.freq_bins, self.in_channels)]
        for layer in self.encoder_layers:
            frames, bins, _ = shapes[-1]
            shapes.append(
                (
                    conv_out_len(frames, layer.kernel_t, layer.stride_t),
                    conv_out_len(bins, layer.kernel_f, layer.stride_f),
                    layer.out_ch,
                )
            )
        return shapes

    @property
    def decoder_layers(self) -> List[DecoderLayerSpec]:
        """Mirrored decoder, deepest first."""
        layers = []
        for depth in range(self.depth, 0, -1):
            enc = self.encoder_layers[depth - 1]
            layers.append(
                DecoderLayerSpec(
                    kernel_f=enc.kernel_f,
                    kernel_t=enc.kernel_t,
                    stride_f=enc.stride_f,
                    stride_t=enc.stride_t,
                    in_ch=enc.out_ch if depth == self.depth else 2 * enc.out_ch,
                    out_ch=enc.in_ch if depth > 1 else self.head_channels,
                    mirror_of=depth,
                )
            )
        return layers

    def temporal_strides(self) -> List[int]:
        return [layer.stride_t for layer in self.encoder_layers]

    @classmethod
    def default(cls, preset: str = "rt") -> "UNetConfig":
        channels = [16, 32, 48, 64, 80]
        strides_t = [1, 2, 1, 2, 1]
        layers = []
        in_ch = FEATURE_CHANNELS
        for out_ch, stride_t in zip(channels, strides_t):
            layers.append(
                ConvLayerSpec(
                    kernel_f=5, kernel_t=3, stride_f=2, stride_t=stride_t, in_ch=in_ch, out_ch=out_ch
                )
            )
            in_ch = out_ch
        stft_cfg = STFT_PRESETS[preset]
        return cls(
            encoder_layers=layers,
            hop_size=stft_cfg.hop_size,
            freq_bins=stft_cfg.bin_count,
        )


class DrcConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold_db: float = -18.0
    ratio: float = Field(default=3.0, ge=1.0)
    attack_ms: float = Field(default=5.0, gt=0)
    release_ms: float = Field(default=50.0, gt=0)
    makeup_db: float = 0.0


class RirParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    direct_delay: int = Field(default=0, ge=0)
    t60: float = Field(gt=0)
    tail_length: int = Field(ge=1)
    direct_gain: float = 1.0
    tail_gain: float = 0.05
    gap: int = Field(default=32, ge=0)
    seed: int = 0


class ScenarioRanges(BaseModel):
    model_config = ConfigDict(frozen=True)

    snr_db: Tuple[float, float] = (-10.0, 30.0)
    t60: Tuple[float, float] = (0.1, 1.0)
    direct_delay: Tuple[int, int] = (0, 64)
    segment_seconds: float = Field(default=2.0, gt=0)

    @model_validator(mode="after")
    def check_ranges(self):
        for name in ("snr_db", "t60", "direct_delay"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} range is empty: {low} > {high}")
        if self.t60[0] <= 0:
            raise ValueError("t60 must be positive")
        return self

    @property
    def segment_length(self) -> int:
        return int(round(self.segment_seconds * SAMPLE_RATE))


class ScenarioParams(BaseModel):
    seed: int
    snr_db: float
    t60: float
    direct_delay: int
    f0_hz: float


class LayerOpCount(BaseModel):
    name: str
    kind: Literal["encoder", "decoder", "head"]
    naive_mults: int
    streaming_mults: int
    reduction_pct: float


class OpCountReport(BaseModel):
    layers: List[LayerOpCount]
    naive_total: int
    streaming_total: int
    overall_reduction_pct: float
    # reported for a larger reference network; informational only
    reference_reduction_pct: float = 0.889


class BenchReport(BaseModel):
    analytic: OpCountReport
    instrumented_naive: Dict[str, int]
    instrumented_streaming: Dict[str, int]
    counts_match: bool


class MetricReport(BaseModel):
    reference: str = ""
    estimate: str = ""
    si_sdr_db: float
    phase_distance_deg: float = Field(ge=0.0, le=180.0)
    phase_gain_pct: Optional[float] = None


class EnhanceStats(BaseModel):
    backend: Literal["causal-stream", "noncausal-window"]
    frames: int
    lookahead_frames: int
    instrumented_mults: int
    elapsed_s: float
    ms_per_frame: float
    ops: OpCountReport


class ManifestRow(BaseModel):
    index: int
    seed: int
    snr_db: float
    measured_snr_db: float
    t60: float
    mixture: str
    direct: str
    reverb: str
    noise: str


class SimulationReport(BaseModel):
    count: int
    out_dir: str
    manifest: str
    rows: List[ManifestRow]


class OracleMixtureResult(BaseModel):
    seed: int
    snr_db: float
    t60: float
    si_sdr_direct_db: float
    si_sdr_noise_db: float
    max_bin_error: float


class OracleCheckReport(BaseModel):
    count: int
    seed: int
    threshold_db: float
    min_si_sdr_direct_db: Optional[float] = None
    min_si_sdr_noise_db: Optional[float] = None
    max_bin_error: Optional[float] = None
    mixtures: List[OracleMixtureResult] = Field(default_factory=list)
    passed: bool = True
