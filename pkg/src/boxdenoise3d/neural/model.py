"""Proposal verification network.

Per proposal: three embeddings (geometry into ``g`` tokens, the nine
projected-point samples into nine tokens, the RoI block into one token), a
cross-attention from point tokens to geometry tokens followed by
self-attention over the point tokens, then the RoI token queries the result.
Proposals of one scene then attend to each other, and three MLP heads emit
class logits, a normalized center residual and a size residual.

Tensors are laid out batch-first inside the module: ``(N, tokens, d)`` for
intra-proposal attention and ``(scenes, proposals, d)`` for inter-proposal
attention.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ContractViolation
from ..featurize import GEO_DIM, N_POINTS, ROI_SIZE

ROI_CELLS = ROI_SIZE * ROI_SIZE


@dataclass(frozen=True)
class ModelConfig:
    d: int = 256
    g: int = 4
    heads: int = 8
    channels: int = 64
    num_classes: int = 3
    ff_mult: int = 2
    rescore: bool = True
    res_loc: bool = True
    res_dim: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if min(self.d, self.g, self.heads, self.channels, self.num_classes) < 1:
            raise ConfigError("model sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def mlp_block(d_in: int, d_out: int) -> nn.Sequential:
    """FC + LN + ReLU."""
    return nn.Sequential(nn.Linear(d_in, d_out), nn.LayerNorm(d_out), nn.ReLU())


class AttnBlock(nn.Module):
    """Multi-head attention with residual, then a 2-layer GELU MLP with residual."""

    def __init__(self, d: int, heads: int, ff_mult: int = 2):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(d, ff_mult * d), nn.GELU(), nn.Linear(ff_mult * d, d))
        self.last_weights: Optional[torch.Tensor] = None
        self.keep_weights = False

    def forward(self, q, kv, key_padding_mask=None):
        if q.shape[-1] != kv.shape[-1] or q.shape[0] != kv.shape[0]:
            raise ContractViolation(f"attention shape mismatch: q {tuple(q.shape)}, kv {tuple(kv.shape)}")
        out, w = self.attn(
            q, kv, kv, key_padding_mask=key_padding_mask, need_weights=self.keep_weights, average_attn_weights=False
        )
        self.last_weights = w
        x = q + out
        return x + self.ff(x)


def _head(d: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(mlp_block(d, d), mlp_block(d, d), nn.Linear(d, n_out))


class Verifier(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        d, c = cfg.d, cfg.channels
        self.embed_geo = mlp_block(GEO_DIM, cfg.g * d)
        self.embed_pt = mlp_block(c, d)
        self.embed_roi = mlp_block(ROI_CELLS * c, d)
        self.enc_cross = AttnBlock(d, cfg.heads, cfg.ff_mult)
        self.enc_self = AttnBlock(d, cfg.heads, cfg.ff_mult)
        self.dec_cross = AttnBlock(d, cfg.heads, cfg.ff_mult)
        self.inter = AttnBlock(d, cfg.heads, cfg.ff_mult)
        self.cls_head = _head(d, cfg.num_classes)
        self.loc_head = _head(d, 3)
        self.dim_head = _head(d, 3)
        with torch.no_grad():
            # start close to "no residual" and a low foreground prior
            for h in (self.loc_head, self.dim_head):
                nn.init.normal_(h[-1].weight, std=1e-3)
                nn.init.zeros_(h[-1].bias)
            nn.init.constant_(self.cls_head[-1].bias, -3.0)

    def attn_blocks(self) -> list[AttnBlock]:
        return [self.enc_cross, self.enc_self, self.dec_cross, self.inter]

    def encode(self, geo, pt, roi):
        """Per-proposal latent ``(N, d)`` from ``geo (N, 29)``, ``pt (N, 9, C)``, ``roi (N, 196, C)``."""
        n = geo.shape[0]
        c = self.cfg.channels
        if geo.shape != (n, GEO_DIM) or pt.shape != (n, N_POINTS, c) or roi.shape != (n, ROI_CELLS, c):
            raise ContractViolation(
                f"feature shapes {tuple(geo.shape)}, {tuple(pt.shape)}, {tuple(roi.shape)} do not fit C={c}"
            )
        z_geo = self.embed_geo(geo).reshape(n, self.cfg.g, self.cfg.d)
        z_pt = self.embed_pt(pt)
        z_roi = self.embed_roi(roi.reshape(n, ROI_CELLS * c)).unsqueeze(1)
        enc = self.enc_cross(z_pt, z_geo)
        enc = self.enc_self(enc, enc)
        return self.dec_cross(z_roi, enc).squeeze(1)

    def heads(self, feats):
        n = feats.shape[:-1]
        cfg = self.cfg
        zeros = lambda k: feats.new_zeros(*n, k)  # noqa: E731
        y = self.cls_head(feats) if cfg.rescore else zeros(cfg.num_classes)
        dp = self.loc_head(feats) if cfg.res_loc else zeros(3)
        dd = self.dim_head(feats) if cfg.res_dim else zeros(3)
        return y, dp, dd

    def forward(self, geo, pt, roi, counts: Optional[Sequence[int]] = None):
        """Outputs for a batch of scenes packed along the proposal axis.

        ``counts`` gives the number of proposals of each scene (default: one
        scene).  Proposals only attend to proposals of the same scene.
        Returns ``(y (N, L), dP (N, 3), dD (N, 3))``.
        """
        n = geo.shape[0]
        counts = [n] if counts is None else [int(k) for k in counts]
        if sum(counts) != n:
            raise ContractViolation(f"scene counts sum to {sum(counts)}, expected {n}")
        z = self.encode(geo, pt, roi)
        if len(counts) == 1:
            f = self.inter(z[None], z[None])[0]
        else:
            kmax = max(counts)
            idx = torch.cat([torch.arange(k) + i * kmax for i, k in enumerate(counts)])
            padded = z.new_zeros(len(counts) * kmax, z.shape[1]).index_copy(0, idx, z).reshape(len(counts), kmax, -1)
            mask = torch.arange(kmax)[None, :] >= torch.tensor(counts)[:, None]
            f = self.inter(padded, padded, key_padding_mask=mask).reshape(len(counts) * kmax, -1)[idx]
        return self.heads(f)


def canonical_order(geo: np.ndarray, pt: np.ndarray, roi: np.ndarray) -> np.ndarray:
    """Order of proposals by their full feature rows, lexicographically.

    Running the network on proposals in this order makes the outputs
    independent of the input order bit for bit.
    """
    flat = np.concatenate([geo.reshape(len(geo), -1), pt.reshape(len(pt), -1), roi.reshape(len(roi), -1)], axis=1)
    return np.lexsort(flat.T[::-1])


@torch.no_grad()
def predict_scene(model: Verifier, geo, pt, roi, dtype=torch.float64):
    """Inference on one scene's proposals in canonical order; numpy outputs in input order."""
    geo, pt, roi = (np.asarray(a) for a in (geo, pt, roi))
    order = canonical_order(geo, pt, roi)
    t = lambda a: torch.as_tensor(np.ascontiguousarray(a[order]), dtype=dtype)  # noqa: E731
    y, dp, dd = model(t(geo), t(pt), t(roi))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return y.numpy()[inv], dp.numpy()[inv], dd.numpy()[inv]
