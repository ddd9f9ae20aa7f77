"""
SACCN encoder–decoder.

Encoder: five VGG16-style stages (2, 2, 3, 3, 3 convs of 3×3 + ReLU) with
2×2 max-pool between stages. Regional-attention dense connections feed
Conv2_2 and Conv3_3 forward into the inputs of stages 4 and 5:

    I3 = ↓2(Conv2_2)
    I4 = P(↓4(RAM(Conv2_2))) + ↓2(Conv3_3)
    I5 = P(↓8(RAM(Conv2_2))) + P(↓4(RAM(Conv3_3))) + ↓2(Conv4_3)

Decoder: SAM on the deepest map, then for k = 4, 3, 2

    E_k = RAM(Conv k) + P(D_{k+1})
    D_k = ↑2(Conv1×1([AMM(E_k); D_{k+1}]))

and a 1×1 conv + ReLU head at full input resolution. ``P`` is a 1×1
projection inserted only where source and target widths differ; ``↓m`` is
an m×m max-pool with stride m.

The ``NetConfig`` toggles build ablation variants. A disabled RAM, SAM or
AMM is the identity and owns no parameters. ``dense=False`` drops the
RAM terms of I4 and I5; ``skip=False`` drops RAM(Conv k) from E_k for
k = 4, 3, 2 so the decoder sees only D_{k+1}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from backend.errors import ConfigError, ShapeError
from backend.models.amm import AmmBlock
from backend.models.attention import RamBlock, SamBlock
from backend.models.layers import (
    Conv2dLayer,
    init_params,
    pool2d,
    upsample2x,
)
from backend.models.net_config import DOWNSAMPLE_FACTOR, NetConfig
from backend.models.params import ParamSet
from backend.models.tensor import Tensor, concat, no_grad
from backend.utils.scene import DensityMap

logger = logging.getLogger(__name__)

STAGE_DEPTHS: tuple[int, ...] = (2, 2, 3, 3, 3)


@dataclass
class EncoderMaps:
    conv2_2: Tensor
    conv3_3: Tensor
    conv4_3: Tensor
    conv5_3: Tensor
    i3: Tensor
    i4: Tensor
    i5: Tensor


def _downsample(x: Tensor, factor: int) -> Tensor:
    return pool2d("max", x, factor, factor)


class SaccnModel:
    """All layers and blocks of the network plus their ParamSet.

    Example
    -------
    >>> model = SaccnModel.build(NetConfig(base_width=8))
    >>> density = model.forward(Tensor(np.zeros((1, 3, 64, 64))))
    >>> density.shape
    (1, 1, 64, 64)
    """

    def __init__(self, config: NetConfig) -> None:
        config.validate()
        self.config: NetConfig = config
        self.params: ParamSet = ParamSet()
        self.__components: list = []
        widths = config.stage_widths

        # encoder stages
        self.stages: list[list[Conv2dLayer]] = []
        in_ch: int = config.input_channels
        for stage, (depth, width) in enumerate(zip(STAGE_DEPTHS, widths), start=1):
            layers: list[Conv2dLayer] = []
            for index in range(1, depth + 1):
                layers.append(
                    self.__add(Conv2dLayer(f"conv{stage}_{index}", in_ch, width, (3, 3), padding=(1, 1)))
                )
                in_ch = width
            self.stages.append(layers)

        w2, w3, w4, w5 = widths[1], widths[2], widths[3], widths[4]
        r, s = config.ram_reduction, config.ssa_reduction

        # dense connections
        self.dense_ram2: RamBlock | None = None
        self.dense_ram3: RamBlock | None = None
        self.dense_proj: dict[str, Conv2dLayer | None] = {}
        if config.dense:
            self.dense_ram2 = self.__ram("dense.ram2", w2)
            self.dense_ram3 = self.__ram("dense.ram3", w3)
            self.dense_proj = {
                "2to4": self.__projection("dense.proj2to4", w2, w3),
                "2to5": self.__projection("dense.proj2to5", w2, w4),
                "3to5": self.__projection("dense.proj3to5", w3, w4),
            }

        # skip connections and decoder
        skip_levels = (5, 4, 3, 2) if config.skip else (5,)
        self.skip_rams: dict[int, RamBlock | None] = {
            k: self.__ram(f"skip.ram{k}", widths[k - 1]) for k in skip_levels
        }
        self.sam: SamBlock | None = None
        if config.use_sam:
            self.sam = self.__add(SamBlock("sam", w5, s, mode=config.sam_mode))
        self.skip_proj: dict[int, Conv2dLayer | None] = {}
        self.amms: dict[int, AmmBlock | None] = {}
        self.fusions: dict[int, Conv2dLayer] = {}
        for k in (4, 3, 2):
            width, upper = widths[k - 1], widths[k]
            self.skip_proj[k] = self.__projection(f"skip.proj{k}", upper, width)
            self.amms[k] = None
            if config.use_amm:
                self.amms[k] = self.__add(AmmBlock(f"amm{k}", width, width, square=config.amm_square))
            self.fusions[k] = self.__add(Conv2dLayer(f"decoder.fuse{k}", width + upper, width, (1, 1)))
        self.head = self.__add(Conv2dLayer("head", widths[1], 1, (1, 1)))

    @classmethod
    def build(cls, config: NetConfig) -> "SaccnModel":
        """Construct and He-initialize from ``config.seed``."""
        model = cls(config)
        model.initialize(config.seed)
        logger.info(
            "Built SACCN: base_width=%d, widths=%s, variant=%s, params=%d",
            config.base_width,
            config.stage_widths,
            model.variant,
            model.param_count(),
        )
        return model

    def initialize(self, seed: int) -> None:
        for component in self.__components:
            if isinstance(component, Conv2dLayer):
                init_params(component, seed)
            else:
                component.initialize(seed)

    def param_count(self) -> int:
        return self.params.count()

    @property
    def variant(self) -> str:
        """``"full"`` or the list of components changed from the full network."""
        cfg = self.config
        changes: list[str] = []
        if not cfg.use_ram:
            changes.append("-ram")
        elif cfg.ram_mode != "full":
            changes.append(f"ram={cfg.ram_mode}")
        if not cfg.use_sam:
            changes.append("-sam")
        elif cfg.sam_mode != "both":
            changes.append(f"sam={cfg.sam_mode}")
        if not cfg.use_amm:
            changes.append("-amm")
        elif cfg.amm_square:
            changes.append("amm=square")
        if not cfg.dense:
            changes.append("-dense")
        if not cfg.skip:
            changes.append("-skip")
        return ",".join(changes) or "full"

    def __add(self, component):
        component.register(self.params)
        self.__components.append(component)
        return component

    def __ram(self, name: str, channels: int) -> RamBlock | None:
        if not self.config.use_ram:
            return None
        return self.__add(RamBlock(name, channels, self.config.ram_reduction, mode=self.config.ram_mode))

    def __projection(self, name: str, src: int, dst: int) -> Conv2dLayer | None:
        if src == dst:
            return None
        return self.__add(Conv2dLayer(name, src, dst, (1, 1)))

    @staticmethod
    def _project(x: Tensor, layer: Conv2dLayer | None) -> Tensor:
        return x if layer is None else layer(x)

    @staticmethod
    def _attend(x: Tensor, block) -> Tensor:
        return x if block is None else block(x)

    def _run_stage(self, x: Tensor, stage: int) -> Tensor:
        for layer in self.stages[stage - 1]:
            x = layer(x).relu()
        return x

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"network input must be N×C×H×W, got {x.shape}")
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"network expects {self.config.input_channels} input channels, got {x.shape[1]}"
            )
        if x.shape[2] % DOWNSAMPLE_FACTOR or x.shape[3] % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"input extents {x.shape[2]}×{x.shape[3]} are not divisible by {DOWNSAMPLE_FACTOR}"
            )

    def encoder_forward(self, x: Tensor) -> EncoderMaps:
        self.check_input(x)
        conv1 = self._run_stage(x, 1)
        conv2 = self._run_stage(_downsample(conv1, 2), 2)

        i3 = _downsample(conv2, 2)
        conv3 = self._run_stage(i3, 3)

        i4 = _downsample(conv3, 2)
        if self.config.dense:
            attended2 = self._attend(conv2, self.dense_ram2)
            i4 = self._project(_downsample(attended2, 4), self.dense_proj["2to4"]) + i4
        conv4 = self._run_stage(i4, 4)

        i5 = _downsample(conv4, 2)
        if self.config.dense:
            attended3 = self._attend(conv3, self.dense_ram3)
            i5 = (
                self._project(_downsample(attended2, 8), self.dense_proj["2to5"])
                + self._project(_downsample(attended3, 4), self.dense_proj["3to5"])
                + i5
            )
        conv5 = self._run_stage(i5, 5)
        return EncoderMaps(conv2, conv3, conv4, conv5, i3, i4, i5)

    def decoder_forward(self, maps: EncoderMaps) -> Tensor:
        skips: dict[int, Tensor] = {2: maps.conv2_2, 3: maps.conv3_3, 4: maps.conv4_3}
        e5 = self._attend(maps.conv5_3, self.skip_rams[5])
        decoded = upsample2x(self._attend(e5, self.sam))
        for k in (4, 3, 2):
            partner = skips[k]
            if decoded.shape[2:] != partner.shape[2:]:
                raise ShapeError(
                    f"decoder stage {k}: upsampled map {decoded.shape} does not match skip {partner.shape}"
                )
            e_k = self._project(decoded, self.skip_proj[k])
            if self.config.skip:
                e_k = self._attend(partner, self.skip_rams.get(k)) + e_k
            fused = self.fusions[k](concat([self._attend(e_k, self.amms[k]), decoded], axis=1))
            decoded = upsample2x(fused)
        return self.head(decoded).relu()

    def forward(self, x: Tensor) -> Tensor:
        """N×C_in×H×W image batch -> N×1×H×W density."""
        return self.decoder_forward(self.encoder_forward(x))

    __call__ = forward

    def predict(self, image: np.ndarray) -> DensityMap:
        """Density map for one H×W×C image in [0, 1], without recording."""
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        batch = Tensor(np.transpose(arr, (2, 0, 1))[None])
        with no_grad():
            density = self.forward(batch)
        return DensityMap(np.asarray(density.data[0, 0], dtype=np.float64))


def build(config: NetConfig) -> SaccnModel:
    if config.base_width < 1:
        raise ConfigError(f"base_width must be >= 1, got {config.base_width}")
    return SaccnModel.build(config)
