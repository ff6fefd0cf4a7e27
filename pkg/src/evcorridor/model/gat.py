"""Graph attention layers for spatial coordination between intersections."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class GATLayer(nn.Module):
    """Additive-score graph attention over a dense adjacency mask.

    Scores follow LeakyReLU(a^T [W h_i || W h_j]); coefficients are
    normalized over the 1-hop neighborhood including self-loops. Heads are
    either concatenated (equal head splits of the output width) or averaged
    (each head produces the full output width).
    """

    def __init__(self, d_in: int, d_out: int, n_heads: int,
                 combine: str = "concat", ff_mult: int = 0):
        super().__init__()
        if combine not in ("concat", "mean"):
            raise ValueError("combine must be 'concat' or 'mean'")
        self.combine = combine
        self.n_heads = n_heads
        if combine == "concat":
            if d_out % n_heads:
                raise ValueError("d_out must divide evenly across heads")
            self.d_head = d_out // n_heads
        else:
            self.d_head = d_out
        self.proj = nn.Linear(d_in, n_heads * self.d_head, bias=False)
        self.att_src = nn.Parameter(torch.empty(n_heads, self.d_head))
        self.att_dst = nn.Parameter(torch.empty(n_heads, self.d_head))
        nn.init.normal_(self.att_src, std=0.02)
        nn.init.normal_(self.att_dst, std=0.02)
        self.leaky = nn.LeakyReLU(0.2)
        if ff_mult > 0:
            self.ff = nn.Sequential(
                nn.Linear(d_out, ff_mult * d_out), nn.GELU(),
                nn.Linear(ff_mult * d_out, d_out))
            self.ln = nn.LayerNorm(d_out)
        else:
            self.ff = None

    def attention(self, h: torch.Tensor,
                  adj: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (projected values, attention coefficients).

        h: (..., A, d_in); adj: (A, A) boolean with self-loops.
        alpha: (..., n_heads, A, A), rows summing to 1 over neighbors.
        """
        z = self.proj(h)                                   # (..., A, H*dh)
        z = z.view(*z.shape[:-1], self.n_heads, self.d_head)
        z = z.movedim(-2, -3)                              # (..., H, A, dh)
        s_src = (z * self.att_src[..., None, :]).sum(-1)   # (..., H, A)
        s_dst = (z * self.att_dst[..., None, :]).sum(-1)
        scores = self.leaky(s_src.unsqueeze(-1) + s_dst.unsqueeze(-2))
        scores = scores.masked_fill(~adj, float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        return z, alpha

    def forward(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        z, alpha = self.attention(h, adj)
        out = alpha @ z                                    # (..., H, A, dh)
        if self.combine == "concat":
            out = out.movedim(-3, -2).reshape(*h.shape[:-1], -1)
        else:
            out = out.mean(dim=-3)
        out = F.elu(out)
        if self.ff is not None:
            out = out + self.ff(self.ln(out))
        return out


class GATStack(nn.Module):
    """Two-layer enrichment: concat heads first, average heads second."""

    def __init__(self, d: int, n_heads: int = 4, ff_mult: int = 0):
        super().__init__()
        self.layer1 = GATLayer(d, d, n_heads, combine="concat", ff_mult=ff_mult)
        self.layer2 = GATLayer(d, d, n_heads, combine="mean", ff_mult=ff_mult)

    def forward(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        return self.layer2(self.layer1(h, adj), adj)


def grid_adjacency(rows: int, cols: int,
                   device: torch.device | str = "cpu") -> torch.Tensor:
    """Dense 1-hop grid adjacency with self-loops."""
    a = rows * cols
    adj = torch.zeros(a, a, dtype=torch.bool, device=device)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            adj[i, i] = True
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < rows and 0 <= c2 < cols:
                    adj[i, r2 * cols + c2] = True
    return adj
