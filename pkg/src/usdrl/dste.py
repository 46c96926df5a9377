"""Dense Spatio-Temporal Encoder.

Two parallel streams of stacked layers.  The temporal stream sees a sequence of
``T`` frame tokens, the spatial stream a sequence of ``M*V`` joint tokens.  Each
layer blends a Dense Shift Attention branch and a Convolutional Attention branch
with weights ``alpha`` (conv) and ``1 - alpha`` (dense shift).

All modules take batched ``[B][L][C]`` tensors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn


@dataclass
class EncoderConfig:
    in_channels: int = 3
    seq_len: int = 64
    num_joints: int = 25
    num_persons: int = 1
    embed_dim: int = 64
    repr_dim: int = 64
    proj_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    gap: int = 4
    alpha: float = 0.5
    kernel_size: int = 3
    causal: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gap < 1 or self.num_layers < 1 or self.kernel_size < 1:
            raise ValueError("gap, num_layers and kernel_size must be >= 1")
        for name in ("embed_dim", "repr_dim"):
            if getattr(self, name) % self.num_heads:
                raise ValueError(f"{name}={getattr(self, name)} is not divisible by num_heads={self.num_heads}")
        if self.in_channels not in (2, 3):
            raise ValueError("in_channels must be 2 or 3")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def spatial_len(self) -> int:
        return self.num_persons * self.num_joints

    def to_dict(self) -> dict:
        return asdict(self)

    # channel profiles for C_e / C_r / C_p
    @classmethod
    def paper(cls, **kw) -> "EncoderConfig":
        return cls(**{"embed_dim": 1024, "repr_dim": 1024, "proj_dim": 2048, "num_heads": 8, **kw})

    @classmethod
    def paper_small(cls, **kw) -> "EncoderConfig":
        return cls(**{"embed_dim": 512, "repr_dim": 512, "proj_dim": 1024, "num_heads": 8, **kw})

    @classmethod
    def desk(cls, **kw) -> "EncoderConfig":
        return cls(**kw)

    @classmethod
    def tiny(cls, **kw) -> "EncoderConfig":
        return cls(**{"seq_len": 6, "num_joints": 5, "num_persons": 1, "embed_dim": 8, "repr_dim": 8,
                      "proj_dim": 8, "num_heads": 2, **kw})


def causal_mask(length: int, device=None) -> Tensor:
    """Boolean ``[L][L]``; True where query ``i`` may not see key ``j > i``."""
    return torch.ones(length, length, dtype=torch.bool, device=device).triu(1)


class SelfAttention(nn.Module):
    """Pre-norm multi-head self-attention with a residual connection."""

    def __init__(self, dim: int, heads: int, causal: bool = False):
        super().__init__()
        self.heads, self.causal = heads, causal
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        q, k, v = self.qkv(self.norm(x)).view(B, L, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // self.heads)
        if self.causal:
            scores = scores.masked_fill(causal_mask(L, x.device), float("-inf"))
        attn = scores.softmax(dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(B, L, D)
        return x + self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, dim_in: int, dim_out: int):
        super().__init__()
        self.fc1 = nn.Linear(dim_in, 2 * dim_out)
        self.fc2 = nn.Linear(2 * dim_out, dim_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))


def shift_mask(length: int, gap: int, device=None, dtype=None) -> Tensor:
    """Row mask with ones at positions ``i % gap == 0``."""
    return (torch.arange(length, device=device) % gap == 0).to(dtype or torch.get_default_dtype())


def dense_shift(f: Tensor, f_h: Tensor, gap: int) -> Tensor:
    """Replace every ``gap``-th row of ``f`` by the globally mixed row of ``f_h``."""
    mask = shift_mask(f.shape[-2], gap, f.device, f.dtype)[:, None]
    return mask * f_h + (1 - mask) * f


class DenseShiftAttention(nn.Module):
    """Token-mixing MLP over the length axis, dense shift, then shared SA + FFN on both paths.

    ``w1``/``w2`` act on the length axis from the right (``F1 @ w1``, ``F1`` is
    ``[C][L]``), so column ``j`` of the product draws on rows ``i`` of ``w``;
    the causal variant keeps only ``i <= j``.
    """

    def __init__(self, length: int, dim_in: int, dim_out: int, heads: int, gap: int, causal: bool = False):
        super().__init__()
        self.length, self.gap, self.causal = length, gap, causal
        self.w1 = nn.Parameter(torch.empty(length, length))
        self.w2 = nn.Parameter(torch.empty(length, length))
        self.attn = SelfAttention(dim_in, heads, causal)
        self.ffn = FeedForward(dim_in, dim_out)
        if causal:
            self.register_buffer("tri", torch.ones(length, length).triu(), persistent=False)

    def token_mix(self, f: Tensor) -> Tensor:
        """Globally mixed features ``F_h`` returned in ``[B][L][C]`` layout."""
        w1, w2 = self.w1, self.w2
        if self.causal:
            w1, w2 = w1 * self.tri.to(w1.dtype), w2 * self.tri.to(w2.dtype)
        f1 = f.transpose(-1, -2)
        f_h = F.relu(f1 @ w1) @ w2 + f1
        return f_h.transpose(-1, -2)

    def shifted(self, f: Tensor) -> Tensor:
        return dense_shift(f, self.token_mix(f), self.gap)

    def forward(self, f: Tensor) -> Tensor:
        if f.shape[-2] != self.length:
            raise ValueError(f"DenseShiftAttention built for length {self.length}, got {f.shape[-2]}")
        return self.ffn(self.attn(self.shifted(f))) + self.ffn(self.attn(f))


class ConvAttention(nn.Module):
    """Depthwise 1-D convolution along the length axis, residual, then SA + FFN."""

    def __init__(self, dim_in: int, dim_out: int, heads: int, kernel_size: int, causal: bool = False):
        super().__init__()
        self.kernel_size, self.causal = kernel_size, causal
        self.conv = nn.Conv1d(dim_in, dim_in, kernel_size, groups=dim_in)
        self.attn = SelfAttention(dim_in, heads, causal)
        self.ffn = FeedForward(dim_in, dim_out)

    def convolve(self, f: Tensor) -> Tensor:
        k = self.kernel_size
        left = k - 1 if self.causal else (k - 1) // 2
        x = F.pad(f.transpose(-1, -2), (left, k - 1 - left))
        return self.conv(x).transpose(-1, -2)

    def forward(self, f: Tensor) -> Tensor:
        return self.ffn(self.attn(self.convolve(f) + f))


class DSTELayer(nn.Module):
    def __init__(self, length: int, dim_in: int, cfg: EncoderConfig, causal: bool):
        super().__init__()
        self.alpha = cfg.alpha
        self.dsa = DenseShiftAttention(length, dim_in, cfg.repr_dim, cfg.num_heads, cfg.gap, causal)
        self.ca = ConvAttention(dim_in, cfg.repr_dim, cfg.num_heads, cfg.kernel_size, causal)

    def forward(self, f: Tensor) -> Tensor:
        # degenerate weights skip the unused branch entirely
        if self.alpha == 1.0:
            return self.ca(f)
        if self.alpha == 0.0:
            return self.dsa(f)
        return self.alpha * self.ca(f) + (1.0 - self.alpha) * self.dsa(f)


class Stream(nn.Module):
    def __init__(self, length: int, cfg: EncoderConfig, causal: bool = False):
        super().__init__()
        self.length = length
        dims = [cfg.embed_dim] + [cfg.repr_dim] * (cfg.num_layers - 1)
        self.layers = nn.ModuleList(DSTELayer(length, d, cfg, causal) for d in dims)

    def forward(self, f: Tensor) -> Tensor:
        for layer in self.layers:
            f = layer(f)
        return f


class InputEmbedding(nn.Module):
    """Affine maps of the temporal view ``[T][M*V*C]`` and spatial view ``[M*V][T*C]``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        m, v, c, t = cfg.num_persons, cfg.num_joints, cfg.in_channels, cfg.seq_len
        self.temporal = nn.Linear(m * v * c, cfg.embed_dim)
        self.spatial = nn.Linear(t * c, cfg.embed_dim)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        expected = (cfg.seq_len, cfg.num_persons, cfg.num_joints, cfg.in_channels)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"input has per-sample shape {tuple(x.shape[1:])}, encoder expects {expected}")
        B = x.shape[0]
        x_t = x.reshape(B, cfg.seq_len, -1)
        x_s = x.permute(0, 2, 3, 1, 4).reshape(B, cfg.spatial_len, -1)
        return self.temporal(x_t), self.spatial(x_s)


class DSTE(nn.Module):
    """Temporal and spatial streams with independent parameters.

    Only the temporal stream is made causal; the spatial stream has no time axis.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.temporal = Stream(cfg.seq_len, cfg, causal=cfg.causal)
        self.spatial = Stream(cfg.spatial_len, cfg, causal=False)

    def forward(self, f_t: Tensor, f_s: Tensor) -> tuple[Tensor, Tensor]:
        return self.temporal(f_t), self.spatial(f_s)


def instance_embed(y_t: Tensor, y_s: Tensor) -> Tensor:
    """Max-pool each stream over its length axis and concatenate, temporal half first."""
    return torch.cat([y_t.amax(dim=-2), y_s.amax(dim=-2)], dim=-1)


def init_params(module: nn.Module, seed: int) -> nn.Module:
    """Uniform(+-1/sqrt(fan_in)) weights and biases, unit norm scales, in parameter-name order."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            owner = module.get_submodule(name.rsplit(".", 1)[0]) if "." in name else module
            if isinstance(owner, (nn.LayerNorm, nn.BatchNorm1d)):
                p.fill_(1.0 if leaf == "weight" else 0.0)
            else:
                if leaf == "bias":
                    weight = getattr(owner, "weight")
                    fan_in = math.prod(weight.shape[1:])
                else:
                    fan_in = p.shape[0] if leaf in ("w1", "w2") else math.prod(p.shape[1:])
                bound = 1.0 / math.sqrt(fan_in)
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
    return module
