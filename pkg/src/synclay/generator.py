"""Generative pathway: cell embedding, mask generator, compositor, image net.

The pipeline is embed -> per-cell 64x64 mask -> bilinear warp of the masked
embedding into each bounding box on a D-channel canvas (summed where cells
overlap) -> U-shaped encoder-decoder to a Tanh RGB image. A small channel
reducer collapses the warped mask field to one channel for visualization; it
takes no part in any loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .layout import (
    BoundingBox,
    CellularLayout,
    LayoutError,
    compute_bbox,
    delaunay_graph,
    layout_cell_vectors,
)

MASK_SIDE = 64


@dataclass
class ModelConfig:
    """Shapes and variant switches of the synthesis model.

    ``embed_dim`` is the per-cell embedding width D; it also sets the channel
    count of the mask generator and of the intermediate tensor. ``combine``
    picks the overlap reduction of the compositor (summation by default, max
    behind the flag for ablation).
    """

    embed_dim: int = 32
    image_size: int = 256
    base_channels: int = 64
    n_types: int = 6
    variant: str = "baseline"
    combine: str = "sum"
    gcn_hidden: int = 32
    gcn_layers: int = 3
    dropout: float = 0.5

    def __post_init__(self) -> None:
        if self.variant not in ("baseline", "gcn"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.combine not in ("sum", "max"):
            raise ValueError(f"unknown combine mode {self.combine!r}")
        if self.image_size & (self.image_size - 1):
            raise ValueError("image_size must be a power of two")

    @property
    def vector_dim(self) -> int:
        return self.n_types + 6


class CellEmbedder(nn.Module):
    """Affine map from cellular vectors to D-dim embeddings."""

    def __init__(self, in_dim: int, embed_dim: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, embed_dim)

    def forward(self, vectors: torch.Tensor) -> torch.Tensor:
        if vectors.shape[-1] != self.proj.in_features:
            raise LayoutError(
                f"expected {self.proj.in_features}-dim cell vectors, "
                f"got {vectors.shape[-1]}"
            )
        return self.proj(vectors)


class GraphEmbedder(nn.Module):
    """Stacked graph convolutions over the cellular graph.

    Each layer projects node features, averages the projected messages over
    the neighborhood including the node itself, then applies ReLU. Isolated
    nodes therefore reduce to their self-message.
    """

    def __init__(self, in_dim: int, embed_dim: int, hidden: int = 32, layers: int = 3):
        super().__init__()
        dims = [in_dim] + [hidden] * (layers - 1) + [embed_dim]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(layers)
        )

    def forward(self, vectors: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        n = vectors.shape[0]
        if n == 0:
            return vectors.new_zeros((0, self.layers[-1].out_features))
        if adjacency.shape != (n, n):
            raise LayoutError(f"adjacency must be {n}x{n}, got {tuple(adjacency.shape)}")
        a_hat = adjacency.to(vectors.dtype) + torch.eye(n, dtype=vectors.dtype, device=vectors.device)
        a_hat = (a_hat > 0).to(vectors.dtype)
        degree = a_hat.sum(dim=1, keepdim=True)
        h = vectors
        for lin in self.layers:
            h = torch.relu(a_hat @ lin(h) / degree)
        return h


class MaskGeneratorBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(channels, channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class MaskGenerator(nn.Module):
    """D-dim embedding -> 1x64x64 sigmoid mask via six x2 upsampling blocks."""

    def __init__(self, embed_dim: int, side: int = MASK_SIDE):
        super().__init__()
        n_blocks = int(math.log2(side))
        if 2**n_blocks != side:
            raise ValueError("mask side must be a power of two")
        self.embed_dim = embed_dim
        self.blocks = nn.Sequential(*[MaskGeneratorBlock(embed_dim) for _ in range(n_blocks)])
        self.head = nn.Conv2d(embed_dim, 1, kernel_size=1)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.ndim != 2 or embeddings.shape[1] != self.embed_dim:
            raise LayoutError(
                f"expected (n, {self.embed_dim}) embeddings, got {tuple(embeddings.shape)}"
            )
        n = embeddings.shape[0]
        if n == 0:
            side = 2 ** len(self.blocks)
            return embeddings.new_zeros((0, 1, side, side))
        x = embeddings.view(n, self.embed_dim, 1, 1)
        x = self.blocks(x)
        return torch.sigmoid(self.head(x))


class ChannelReducer(nn.Module):
    """Collapses the D-channel cumulative mask field to one channel."""

    def __init__(self, in_channels: int = 32):
        super().__init__()
        channels = [in_channels, 16, 8, 4, 1]
        layers: list[nn.Module] = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            layers.append(nn.Conv2d(cin, cout, kernel_size=3, padding=1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _check_bbox(box: BoundingBox, canvas: tuple[int, int]) -> None:
    w, h = canvas
    if box.x0 < 0 or box.y0 < 0 or box.x1 > w or box.y1 > h:
        raise LayoutError(f"bbox {box} outside canvas {canvas}")
    if box.x1 <= box.x0 or box.y1 <= box.y0:
        raise LayoutError(f"degenerate bbox {box}")


def compose_intermediate(
    embeddings: torch.Tensor,
    masks: torch.Tensor,
    bboxes: Sequence[BoundingBox],
    canvas: tuple[int, int],
    combine: str = "sum",
) -> torch.Tensor:
    """Warp each masked embedding into its bbox on a D-channel canvas.

    The masked embedding (embedding broadcast over the mask grid) is
    resampled to the box size with half-pixel-centre bilinear interpolation;
    overlapping boxes are summed (or taken elementwise-max under
    ``combine="max"``). Differentiable in embeddings and masks.
    """

    n = embeddings.shape[0]
    if masks.ndim == 3:
        masks = masks.unsqueeze(1)
    if masks.shape[0] != n or len(bboxes) != n:
        raise LayoutError(
            f"aligned inputs required: {n} embeddings, {masks.shape[0]} masks, "
            f"{len(bboxes)} boxes"
        )
    w_canvas, h_canvas = canvas
    depth = embeddings.shape[1]
    out = embeddings.new_zeros((depth, h_canvas, w_canvas))
    for k in range(n):
        box = bboxes[k]
        _check_bbox(box, canvas)
        fielded = embeddings[k].view(depth, 1, 1) * masks[k]
        warped = F.interpolate(
            fielded.unsqueeze(0),
            size=(box.y1 - box.y0, box.x1 - box.x0),
            mode="bilinear",
            align_corners=False,
        )[0]
        if combine == "sum":
            out[:, box.y0 : box.y1, box.x0 : box.x1] += warped
        elif combine == "max":
            region = out[:, box.y0 : box.y1, box.x0 : box.x1]
            out[:, box.y0 : box.y1, box.x0 : box.x1] = torch.maximum(region, warped)
        else:
            raise ValueError(f"unknown combine mode {combine!r}")
    return out


class EncodeBlock(nn.Module):
    def __init__(self, cin: int, cout: int, normalize: bool = True, dropout: float = 0.0):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(cin, cout, 4, stride=2, padding=1)]
        if normalize:
            layers.append(nn.InstanceNorm2d(cout))
        layers.append(nn.LeakyReLU(0.2, inplace=True))
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class DecodeBlock(nn.Module):
    def __init__(self, cin: int, cout: int, dropout: float = 0.0):
        super().__init__()
        layers: list[nn.Module] = [
            nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
            nn.InstanceNorm2d(cout),
            nn.ReLU(inplace=True),
        ]
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.net(x), skip], dim=1)


class EncoderDecoder(nn.Module):
    """U-shaped image generator from the intermediate tensor.

    Encoder halves the spatial size down to 1x1 with channel schedule
    base * min(8, 2^i); the first and deepest Encode blocks skip instance
    normalization (the deepest sits at 1x1 where it is undefined). Decoder
    mirrors with skip concatenation; the three blocks on either side of the
    bottleneck use dropout. The head upsamples and applies an asymmetrically
    padded stride-1 4x4 convolution, which keeps the output at full size.
    """

    def __init__(
        self,
        in_channels: int = 32,
        image_size: int = 256,
        base_channels: int = 64,
        out_channels: int = 3,
        dropout: float = 0.5,
    ):
        super().__init__()
        levels = int(math.log2(image_size))
        if 2**levels != image_size or levels < 3:
            raise ValueError("image_size must be a power of two, at least 8")
        enc_ch = [base_channels * min(8, 2**i) for i in range(levels)]
        self.encoders = nn.ModuleList()
        for i, cout in enumerate(enc_ch):
            cin = in_channels if i == 0 else enc_ch[i - 1]
            self.encoders.append(
                EncodeBlock(
                    cin,
                    cout,
                    normalize=(i != 0 and i != levels - 1),
                    dropout=dropout if i >= levels - 3 else 0.0,
                )
            )
        self.decoders = nn.ModuleList()
        for i in range(levels - 1):
            cin = enc_ch[-1] if i == 0 else 2 * enc_ch[levels - 1 - i]
            cout = enc_ch[levels - 2 - i]
            self.decoders.append(DecodeBlock(cin, cout, dropout=dropout if i < 3 else 0.0))
        self.head = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.ZeroPad2d((1, 0, 1, 0)),
            nn.Conv2d(2 * enc_ch[0], out_channels, 4, padding=1),
            nn.Tanh(),
        )
        self.in_channels = in_channels
        self.image_size = image_size

    def forward(self, x: torch.Tensor, return_features: bool = False):
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != self.in_channels:
            raise LayoutError(
                f"expected {self.in_channels}-channel input, got {x.shape[1]}"
            )
        feats = []
        for enc in self.encoders:
            x = enc(x)
            feats.append(x)
        y = feats[-1]
        dec_feats = []
        for i, dec in enumerate(self.decoders):
            y = dec(y, feats[-2 - i])
            dec_feats.append(y)
        out = self.head(y)
        if squeeze:
            out = out.squeeze(0)
        if return_features:
            return out, feats, dec_feats
        return out


class SynthesisModel(nn.Module):
    """Bundle of the generator-path subnetworks plus layout glue."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedder = CellEmbedder(config.vector_dim, config.embed_dim)
        self.graph_embedder: Optional[GraphEmbedder] = None
        if config.variant == "gcn":
            self.graph_embedder = GraphEmbedder(
                config.vector_dim, config.embed_dim, config.gcn_hidden, config.gcn_layers
            )
        self.mask_generator = MaskGenerator(config.embed_dim, MASK_SIDE)
        self.image_generator = EncoderDecoder(
            in_channels=config.embed_dim,
            image_size=config.image_size,
            base_channels=config.base_channels,
            dropout=config.dropout,
        )
        self.channel_reducer = ChannelReducer(config.embed_dim)

    def embed(self, vectors: torch.Tensor, adjacency: Optional[torch.Tensor] = None) -> torch.Tensor:
        if self.graph_embedder is not None:
            if adjacency is None:
                raise LayoutError("gcn variant needs the cellular graph adjacency")
            return self.graph_embedder(vectors, adjacency)
        return self.embedder(vectors)

    def forward(
        self,
        vectors: torch.Tensor,
        bboxes: Sequence[BoundingBox],
        adjacency: Optional[torch.Tensor] = None,
        with_cumulative: bool = False,
    ) -> dict:
        canvas = (self.config.image_size, self.config.image_size)
        embeddings = self.embed(vectors, adjacency)
        masks = self.mask_generator(embeddings)
        intermediate = compose_intermediate(
            embeddings, masks, bboxes, canvas, combine=self.config.combine
        )
        image = self.image_generator(intermediate)
        out = {
            "embeddings": embeddings,
            "masks": masks,
            "intermediate": intermediate,
            "image": image,
        }
        if with_cumulative:
            cumulative = compose_intermediate(
                torch.ones_like(embeddings), masks, bboxes, canvas, combine="sum"
            )
            out["cumulative"] = self.channel_reducer(cumulative.unsqueeze(0))[0]
        return out

    def synthesize(
        self,
        layout: CellularLayout,
        rng: Optional[np.random.Generator] = None,
        with_cumulative: bool = False,
    ) -> dict:
        """Run the pipeline on a layout; per-cell noise comes from the cells'
        own seeds, falling back to ``rng`` for cells without one."""

        layout.validate()
        if layout.canvas != (self.config.image_size, self.config.image_size):
            raise LayoutError(
                f"layout canvas {layout.canvas} does not match the model size "
                f"{self.config.image_size}"
            )
        param = next(self.parameters())
        vectors_np = layout_cell_vectors(layout, rng)
        vectors = torch.as_tensor(vectors_np, dtype=param.dtype, device=param.device)
        bboxes = [compute_bbox(cell, layout.canvas) for cell in layout.cells]
        adjacency = None
        if self.graph_embedder is not None:
            n = len(layout.cells)
            adjacency = torch.zeros((n, n), dtype=param.dtype, device=param.device)
            if n > 1:
                graph = delaunay_graph(layout)
                for i, j, _ in graph.edges:
                    adjacency[i, j] = 1.0
                    adjacency[j, i] = 1.0
        return self.forward(vectors, bboxes, adjacency, with_cumulative=with_cumulative)
