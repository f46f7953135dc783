"""Noise-prediction network over m domains with one timestep per domain.

Layout follows the one-encoder/one-decoder-per-domain pattern: each domain has
its own encoder, decoder and time-embedding projection; encoder outputs meet in
a shared bottleneck (residual blocks around a single-head attention layer) and
the bottleneck output is routed back to each domain's decoder.

The bottleneck treats each domain's features as tokens and all its weights are
shared across domains, so permuting the domain branches together with their
inputs and timesteps permutes the outputs identically.

Two modes:
  "vector": per-domain residual MLPs, attention over the m domain tokens.
  "image":  per-domain conv encoder/decoder with downsampling and skip
            connections, attention over all spatial positions of all domains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    mode: str  # "vector" | "image"
    num_domains: int
    data_shape: tuple[int, ...]  # (k,) for vector, (C, H, W) for image
    hidden: int = 128
    depth: int = 3
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 2)
    num_res_blocks: int = 2
    num_groups: int = 8
    time_dim: int = 64
    cond_code: bool = False

    def __post_init__(self):
        if self.mode not in ("vector", "image"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.data_shape = tuple(self.data_shape)
        self.channel_mult = tuple(self.channel_mult)
        if self.mode == "image" and len(self.data_shape) != 3:
            raise ValueError("image mode expects data_shape (C, H, W)")
        if self.mode == "vector" and len(self.data_shape) != 1:
            raise ValueError("vector mode expects data_shape (k,)")


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal timestep embedding, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(t.device)
    args = t.double().unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeEmbedding(nn.Module):
    """Sinusoidal embedding followed by a small learned projection."""

    def __init__(self, time_dim: int, out_dim: int):
        super().__init__()
        self.time_dim = time_dim
        self.proj = nn.Sequential(nn.Linear(time_dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.proj[0].weight.dtype
        return self.proj(sinusoidal_embedding(t, self.time_dim).to(dtype))


class ResMLPBlock(nn.Module):
    def __init__(self, width: int, temb_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.emb = nn.Linear(temb_dim, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.fc1(F.silu(self.norm(x)))
        h = h + self.emb(F.silu(temb))
        return x + self.fc2(F.silu(h))


class ResBlock2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class TokenAttention(nn.Module):
    """Single-head dot-product self-attention over a token axis, (B, N, C)."""

    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)
        self.scale = channels ** -0.5

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x.transpose(1, 2)).transpose(1, 2)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        return x + self.proj(attn @ v)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class VectorBranch(nn.Module):
    """Encoder/decoder MLP pair for one domain, vector mode."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k = cfg.data_shape[0]
        h = cfg.hidden
        in_dim = k + (1 if cfg.cond_code else 0)
        self.time_mlp = TimeEmbedding(cfg.time_dim, h)
        self.in_proj = nn.Linear(in_dim, h)
        self.enc_blocks = nn.ModuleList(ResMLPBlock(h, h) for _ in range(cfg.depth))
        self.dec_in = nn.Linear(2 * h, h)
        self.dec_blocks = nn.ModuleList(ResMLPBlock(h, h) for _ in range(cfg.depth))
        self.out_norm = nn.LayerNorm(h)
        self.out = nn.Linear(h, k)

    def encode(self, x, temb):
        h = self.in_proj(x)
        for blk in self.enc_blocks:
            h = blk(h, temb)
        return h, h

    def decode(self, token, skip, temb):
        h = self.dec_in(torch.cat([token, skip], dim=-1))
        for blk in self.dec_blocks:
            h = blk(h, temb)
        return self.out(F.silu(self.out_norm(h)))


class ImageBranch(nn.Module):
    """Conv encoder/decoder U-Net half for one domain, image mode."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c_in, _, _ = cfg.data_shape
        widths = [cfg.base_channels * m for m in cfg.channel_mult]
        g = cfg.num_groups
        temb_dim = cfg.base_channels * 4
        self.temb_dim = temb_dim
        self.widths = widths
        self.n_blocks = cfg.num_res_blocks
        self.time_mlp = TimeEmbedding(cfg.time_dim, temb_dim)
        self.conv_in = nn.Conv2d(c_in + (1 if cfg.cond_code else 0), widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        cur = widths[0]
        for i, w in enumerate(widths):
            level = nn.ModuleList()
            for _ in range(cfg.num_res_blocks):
                level.append(ResBlock2d(cur, w, temb_dim, g))
                cur = w
            self.down_blocks.append(level)
            self.downs.append(Downsample(w) if i < len(widths) - 1 else nn.Identity())
        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            level = nn.ModuleList()
            level.append(ResBlock2d(cur + w, w, temb_dim, g))
            for _ in range(cfg.num_res_blocks - 1):
                level.append(ResBlock2d(w, w, temb_dim, g))
            cur = w
            self.up_blocks.append(level)
            self.ups.append(Upsample(w) if i > 0 else nn.Identity())
        self.out_norm = nn.GroupNorm(g, widths[0])
        self.conv_out = nn.Conv2d(widths[0], c_in, 3, padding=1)

    def encode(self, x, temb):
        skips = []
        h = self.conv_in(x)
        for level, down in zip(self.down_blocks, self.downs):
            for blk in level:
                h = blk(h, temb)
            skips.append(h)
            h = down(h)
        return h, skips

    def decode(self, token, skips, temb):
        h = token
        for level, up in zip(self.up_blocks, self.ups):
            h = torch.cat([h, skips.pop()], dim=1)
            for blk in level:
                h = blk(h, temb)
            h = up(h)
        return self.conv_out(F.silu(self.out_norm(h)))


class Bottleneck(nn.Module):
    """Shared middle: residual block, attention over all domain tokens, residual block.

    Weights are shared across domains (domains are folded into the batch for the
    residual blocks); time conditioning is the sum of the per-domain embeddings.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.mode == "vector":
            h = cfg.hidden
            self.block1 = ResMLPBlock(h, h)
            self.attn = TokenAttention(h, groups=1)
            self.block2 = ResMLPBlock(h, h)
        else:
            c = cfg.base_channels * cfg.channel_mult[-1]
            temb_dim = cfg.base_channels * 4
            self.block1 = ResBlock2d(c, c, temb_dim, cfg.num_groups)
            self.attn = TokenAttention(c, cfg.num_groups)
            self.block2 = ResBlock2d(c, c, temb_dim, cfg.num_groups)
        self.mode = cfg.mode

    def forward(self, tokens: list[torch.Tensor], temb_sum: torch.Tensor) -> list[torch.Tensor]:
        m = len(tokens)
        if self.mode == "vector":
            x = torch.stack(tokens, dim=1)  # (B, m, h)
            B = x.shape[0]
            temb = temb_sum.unsqueeze(1).expand(-1, m, -1).reshape(B * m, -1)
            x = self.block1(x.reshape(B * m, -1), temb).reshape(B, m, -1)
            x = self.attn(x)
            x = self.block2(x.reshape(B * m, -1), temb).reshape(B, m, -1)
            return [x[:, i] for i in range(m)]
        x = torch.stack(tokens, dim=1)  # (B, m, C, H, W)
        B, _, C, H, W = x.shape
        temb = temb_sum.unsqueeze(1).expand(-1, m, -1).reshape(B * m, -1)
        x = self.block1(x.reshape(B * m, C, H, W), temb)
        x = x.reshape(B, m, C, H, W).permute(0, 1, 3, 4, 2).reshape(B, m * H * W, C)
        x = self.attn(x)
        x = x.reshape(B, m, H, W, C).permute(0, 1, 4, 2, 3)
        x = self.block2(x.reshape(B * m, C, H, W), temb)
        x = x.reshape(B, m, C, H, W)
        return [x[:, i] for i in range(m)]


class DenoiserModel(nn.Module):
    """Per-domain branches around a shared attention bottleneck."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        branch_cls = VectorBranch if config.mode == "vector" else ImageBranch
        self.branches = nn.ModuleList(branch_cls(config) for _ in range(config.num_domains))
        self.bottleneck = Bottleneck(config)

    def forward(
        self,
        x: list[torch.Tensor],
        tvec: torch.Tensor,
        cond_code: torch.Tensor | None = None,
    ) -> list[torch.Tensor]:
        """Predict per-domain noise.

        x: list of m tensors (B, *data_shape); tvec: (B, m) integer timesteps;
        cond_code: optional (B, m) condition indicator, required iff the model
        was built with cond_code=True.
        """
        cfg = self.config
        m = cfg.num_domains
        if len(x) != m:
            raise ValueError(f"expected {m} domain inputs, got {len(x)}")
        if tvec.shape[-1] != m:
            raise ValueError(f"tvec has {tvec.shape[-1]} entries, expected {m}")
        if tvec.dim() == 1:
            tvec = tvec.unsqueeze(0).expand(x[0].shape[0], -1)
        if cfg.cond_code:
            if cond_code is None:
                cond_code = torch.zeros_like(tvec, dtype=x[0].dtype)
            if cond_code.dim() == 1:
                cond_code = cond_code.unsqueeze(0).expand(x[0].shape[0], -1)
        for i, xi in enumerate(x):
            if tuple(xi.shape[1:]) != cfg.data_shape:
                raise ValueError(
                    f"domain {i} input shape {tuple(xi.shape[1:])} != {cfg.data_shape}"
                )
            if not torch.isfinite(xi).all():
                raise ValueError(f"non-finite values in domain {i} input")

        tembs, tokens, skips = [], [], []
        for i, branch in enumerate(self.branches):
            temb = branch.time_mlp(tvec[:, i])
            xi = x[i]
            if cfg.cond_code:
                code = cond_code[:, i].to(xi.dtype)
                shape = (xi.shape[0], 1) + (1,) * (xi.dim() - 2)
                code = code.reshape(shape).expand(xi.shape[0], 1, *xi.shape[2:]) \
                    if xi.dim() > 2 else code.unsqueeze(-1)
                xi = torch.cat([xi, code], dim=1 if xi.dim() > 2 else -1)
            token, skip = branch.encode(xi, temb)
            tembs.append(temb)
            tokens.append(token)
            skips.append(skip)
        temb_sum = torch.stack(tembs, dim=0).sum(dim=0)
        mids = self.bottleneck(tokens, temb_sum)
        return [
            branch.decode(mid, skip, temb)
            for branch, mid, skip, temb in zip(self.branches, mids, skips, tembs)
        ]

    def named_arrays(self) -> dict[str, torch.Tensor]:
        return dict(self.named_parameters())


def masked_mse_loss(
    preds: list[torch.Tensor],
    targets: list[torch.Tensor],
    loss_mask: torch.Tensor,
) -> torch.Tensor:
    """Mean squared error over masked (sample, domain) views and their elements.

    loss_mask is (m,) or (B, m); a masked-out view contributes neither to the
    numerator nor to the element count.
    """
    B = preds[0].shape[0]
    m = len(preds)
    if loss_mask.dim() == 1:
        loss_mask = loss_mask.unsqueeze(0).expand(B, -1)
    if not loss_mask.any():
        raise ValueError("loss_mask is all zero: empty objective")
    total = preds[0].new_zeros(())
    count = preds[0].new_zeros(())
    for i in range(m):
        sq = (preds[i] - targets[i]) ** 2
        per_sample = sq.reshape(B, -1).sum(dim=1)
        n_elem = sq[0].numel()
        w = loss_mask[:, i].to(sq.dtype)
        total = total + (w * per_sample).sum()
        count = count + w.sum() * n_elem
    return total / count


def loss_and_gradients(
    model: DenoiserModel,
    x_noised: list[torch.Tensor],
    tvec: torch.Tensor,
    eps_target: list[torch.Tensor],
    loss_mask: torch.Tensor,
    cond_code: torch.Tensor | None = None,
) -> tuple[float, dict[str, torch.Tensor]]:
    """MSE between predicted and target noise over masked views, plus parameter grads."""
    model.zero_grad(set_to_none=True)
    preds = model(x_noised, tvec, cond_code)
    loss = masked_mse_loss(preds, eps_target, loss_mask)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


@dataclass
class PlateauState:
    patience: int = 10
    factor: float = 0.5
    best: float = math.inf
    bad_epochs: int = 0


@dataclass
class OptimizerState:
    """Adam moments plus a reduce-on-plateau learning-rate scheduler."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    plateau: PlateauState = field(default_factory=PlateauState)


def init_optimizer(model: DenoiserModel, lr: float, patience: int = 10, factor: float = 0.5) -> OptimizerState:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state = OptimizerState(lr=lr, plateau=PlateauState(patience=patience, factor=factor))
    for name, p in model.named_parameters():
        state.m[name] = torch.zeros_like(p, requires_grad=False)
        state.v[name] = torch.zeros_like(p, requires_grad=False)
    return state


def optimizer_step(model: DenoiserModel, grads: dict[str, torch.Tensor], state: OptimizerState) -> None:
    """One Adam update with bias correction. Aborts on non-finite gradients."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for name, p in model.named_parameters():
            g = grads[name]
            state.m[name].mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            state.v[name].mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            m_hat = state.m[name] / bc1
            v_hat = state.v[name] / bc2
            p.add_(-state.lr * m_hat / (v_hat.sqrt() + state.eps))


def plateau_update(state: OptimizerState, val_loss: float) -> bool:
    """Track validation loss; halve lr after `patience` epochs without improvement.

    Returns True when the learning rate was reduced this call.
    """
    pl = state.plateau
    if val_loss < pl.best:
        pl.best = val_loss
        pl.bad_epochs = 0
        return False
    pl.bad_epochs += 1
    if pl.bad_epochs > pl.patience:
        state.lr *= pl.factor
        pl.bad_epochs = 0
        return True
    return False
