"""The assembled edge-guided non-local network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backbone import backbone_forward, build_backbone, global_block
from .config import NetworkConfig
from .decoder import build_decoder, contrast_feature, deconv_fuse, local_feature, predict_fullres, score_fusion
from .edge import build_condition_network, build_egb, condition_network, egb_forward, extract_edge_map
from .params import ParamStore
from .tensor import ShapeError, Tensor


@dataclass
class ForwardResult:
    sides: list
    fused: list
    contrast: list
    deconv: dict
    local: Tensor
    global_feature: Tensor
    logits: Tensor
    probs: Tensor
    saliency: Tensor
    condition: Optional[Tensor] = None
    extras: dict = field(default_factory=dict)


class ENFNet:
    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore(seed)
        build_backbone(config, self.params)
        if config.egb_levels:
            build_condition_network(config, self.params)
        for level in config.egb_levels:
            build_egb(config, self.params, level)
        build_decoder(config, self.params)

    def forward(self, image: Tensor, edge: Optional[Tensor] = None) -> ForwardResult:
        cfg = self.config
        if edge is None:
            edge = extract_edge_map(image)
        feats = backbone_forward(self.params, cfg, image)
        xg = global_block(self.params, cfg, feats.level5)

        cond = condition_network(self.params, cfg, edge) if cfg.egb_levels else None
        fused = []
        for level, x in enumerate(feats.sides, start=1):
            fused.append(egb_forward(self.params, level, cond, x) if level in cfg.egb_levels else x)
        contrast = [contrast_feature(xf) for xf in fused]

        deconv = {}
        d = None
        for level in (5, 4, 3, 2):
            d = deconv_fuse(self.params, level, fused[level - 1], contrast[level - 1], d)
            deconv[level] = d
        xl = local_feature(self.params, fused[0], contrast[0], deconv[2])
        saliency, probs, logits = score_fusion(self.params, xl, xg)
        return ForwardResult(
            sides=feats.sides,
            fused=fused,
            contrast=contrast,
            deconv=deconv,
            local=xl,
            global_feature=xg,
            logits=logits,
            probs=probs,
            saliency=saliency,
            condition=cond,
        )

    def supervised_output(self, result: ForwardResult) -> Tensor:
        if self.config.supervise_fullres:
            return predict_fullres(result.saliency)
        return result.saliency

    def predict(self, image, edge=None) -> np.ndarray:
        """Full-resolution foreground probabilities [N,1,S,S]; records nothing."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        if edge is not None and not isinstance(edge, Tensor):
            edge = Tensor(edge)
        return predict_fullres(self.forward(image, edge).saliency).data

    def bound(self, tensors) -> "ENFNet":
        """Shallow copy whose parameters are ``tensors`` (in parameter order)."""
        clone = ENFNet.__new__(ENFNet)
        clone.config = self.config
        clone.params = self.params.rebound(tensors)
        return clone

    def load_state(self, state) -> None:
        try:
            self.params.load_state(state)
        except ShapeError as exc:
            raise ShapeError(f"checkpoint does not fit this network geometry: {exc}") from None
