"""TE-NeXt encoder-decoder over sparse voxel tensors."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .layers import LayerNorm, Module, ModuleList, ResNetBasicBlock, SparseConv, TeNextBlock
from .sparse import SparseTensor, ones_features, quantize

# stem, 4 encoder levels, 4 decoder levels
DEFAULT_CHANNELS = (32, 32, 64, 128, 224, 160, 128, 96, 64)
TINY_CHANNELS = (16, 16, 32, 32, 64, 32, 32, 16, 16)

PRESETS = {
    "tenext": dict(channel_plan=DEFAULT_CHANNELS),
    "tiny": dict(channel_plan=TINY_CHANNELS, kernel_size=5),
}


@dataclass
class ModelConfig:
    channel_plan: tuple = DEFAULT_CHANNELS
    blocks_per_level: tuple = (1, 1, 1, 1, 1, 1, 1, 1)
    # encoder levels 0..3 (tensor stride 2**level) whose features are concatenated in the decoder
    skip_levels: tuple = (2, 3)
    kernel_size: int = 7
    stem_kernel_size: int = 5
    block_variant: str = "te-next"
    activation: str = "gelu"
    drop_path_rate: float = 0.0
    quantization_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.channel_plan = tuple(int(c) for c in self.channel_plan)
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        self.skip_levels = tuple(sorted(int(s) for s in self.skip_levels))
        self.validate()

    def validate(self):
        if len(self.channel_plan) != 9:
            raise ValueError("channel_plan needs 9 widths: stem, 4 encoder, 4 decoder")
        if len(self.blocks_per_level) != 8:
            raise ValueError("blocks_per_level needs 8 entries")
        if any(b < 0 for b in self.blocks_per_level):
            raise ValueError("blocks_per_level entries must be non-negative")
        if not set(self.skip_levels) <= {0, 1, 2, 3}:
            raise ValueError("skip_levels must be drawn from {0, 1, 2, 3}")
        if self.block_variant not in ("te-next", "resnet-basic"):
            raise ValueError(f"unknown block_variant {self.block_variant!r}")
        if self.block_variant == "te-next":
            widths = self._block_input_widths()
            bad = [w for w in widths if w % 4]
            if bad:
                raise ValueError(f"te-next blocks need channel widths divisible by 4, got {bad}")
        if self.kernel_size % 2 == 0 or self.stem_kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if not self.quantization_scale > 0:
            raise ValueError("quantization_scale must be positive")

    def _block_input_widths(self):
        c = self.channel_plan
        widths = list(c[1:5])
        for j in range(4):
            level = 3 - j
            widths.append(c[5 + j] + (c[level] if level in self.skip_levels else 0))
            widths.append(c[5 + j])
        return widths

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        kw = dict(PRESETS[name])
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


class _Stage(Module):
    """Resampling conv -> LayerNorm -> ReLU."""

    def __init__(self, conv: SparseConv, dtype):
        super().__init__()
        self.conv = conv
        self.norm = LayerNorm(conv.out_channels, dtype=dtype)

    def forward(self, x: SparseTensor) -> SparseTensor:
        y = self.norm(self.conv(x))
        return y.replace(ag.relu(y.feats))


class TENeXt(Module):
    def __init__(self, config: ModelConfig | None = None, dtype=np.float32):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        c = config.channel_plan

        def block(n_in, n_out):
            if config.block_variant == "te-next":
                return TeNextBlock(n_in, n_out, config.kernel_size, config.drop_path_rate,
                                   config.activation, rng=rng, dtype=dtype)
            return ResNetBasicBlock(n_in, n_out, 3, project=n_in != n_out,
                                    drop_path_rate=config.drop_path_rate, rng=rng, dtype=dtype)

        self.stem = _Stage(SparseConv(1, c[0], config.stem_kernel_size, rng=rng, dtype=dtype), dtype)
        self.down = ModuleList()
        self.enc_blocks = ModuleList()
        for i in range(4):
            self.down.append(_Stage(SparseConv(c[i], c[i + 1], 2, stride=2, rng=rng, dtype=dtype), dtype))
            self.enc_blocks.append(ModuleList(block(c[i + 1], c[i + 1]) for _ in range(config.blocks_per_level[i])))
        self.up = ModuleList()
        self.dec_blocks = ModuleList()
        prev = c[4]
        for j in range(4):
            level = 3 - j
            width = c[5 + j]
            self.up.append(_Stage(SparseConv(prev, width, 2, stride=2, transposed=True, rng=rng, dtype=dtype), dtype))
            n_in = width + (c[level] if level in config.skip_levels else 0)
            blocks = ModuleList()
            for _ in range(config.blocks_per_level[4 + j]):
                blocks.append(block(n_in, width))
                n_in = width
            if n_in != width:
                raise ValueError(f"decoder level {j} has a skip but no block to merge it")
            self.dec_blocks.append(blocks)
            prev = width
        self.head = SparseConv(prev, 1, 1, rng=rng, dtype=dtype)
        self.rng = np.random.default_rng(config.seed + 1)
        for m in self.modules():
            if isinstance(m, (TeNextBlock, ResNetBasicBlock)):
                m.rng = self.rng

    def forward(self, x: SparseTensor) -> ag.Tensor:
        """Per-voxel traversability probabilities, shape (N, 1), row-aligned with ``x``."""
        if x.n_channels != 1:
            raise ValueError(f"model expects 1 input channel, got {x.n_channels}")
        if x.stride != 1:
            raise ValueError(f"model input must be at stride 1, got {x.stride}")
        feats = x.feats
        if feats.dtype != self.dtype:
            feats = ag.Tensor(feats.data.astype(self.dtype))
        h = self.stem(x.replace(feats))
        skips = [h]
        for i in range(4):
            h = self.down[i](h)
            for b in self.enc_blocks[i]:
                h = b(h)
            skips.append(h)
        for j in range(4):
            level = 3 - j
            h = self.up[j](h)
            if level in self.config.skip_levels:
                enc = skips[level]
                if enc.map_key != h.map_key:
                    raise RuntimeError("decoder and encoder coordinate maps disagree")
                h = h.replace(ag.concat([h.feats, enc.feats], axis=1))
            for b in self.dec_blocks[j]:
                h = b(h)
        return ag.sigmoid(self.head(h).feats)

    def predict(self, x: SparseTensor) -> np.ndarray:
        """Eval-mode probabilities as a flat array, without recording a graph."""
        was = self.training
        self.eval()
        try:
            with ag.no_grad():
                return self.forward(x).data[:, 0].copy()
        finally:
            self.train(was)

    def predict_points(self, points: np.ndarray) -> np.ndarray:
        """Quantize a raw cloud, run inference, and broadcast voxel scores back to points."""
        cloud = ones_features(quantize(points, scale=self.config.quantization_scale, dtype=self.dtype))
        return self.predict(cloud)[cloud.inverse]


def predict_labels(probabilities, threshold: float = 0.5) -> np.ndarray:
    """1 (traversable) where ``p >= threshold``; ties go to traversable."""
    return (np.asarray(probabilities) >= threshold).astype(np.uint8)


def count_parameters(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))
