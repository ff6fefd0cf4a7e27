"""Return-conditioned sequence models: DT, CDT, and the multi-agent MADT."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gat import GATStack

VARIANTS = ("dt", "cdt", "madt")


@dataclass
class ModelConfig:
    variant: str = "dt"
    d: int = 128
    n_layers: int = 4
    n_heads: int = 4
    context: int = 30
    k: int = 7                    # corridor slots (grid max corridor length)
    p: int = 4                    # phases per intersection
    t_max: int = 200
    dropout: float = 0.1
    causal_mask: bool = True
    d_ff_mult: int = 6
    head_hidden: int = 128
    mu_cost: float = 0.1          # cdt auxiliary loss weight
    # madt
    n_agents: int = 16
    gat_heads: int = 4
    gat_ff_mult: int = 12
    # featurization constants, set from dataset statistics before training
    rtg_loc: float = 0.0
    rtg_scale: float = 1000.0
    rtg2_loc: float = 0.0         # anchored (excess-over-ideal) feature
    rtg2_scale: float = 100.0
    rtg2_max: float = float("inf")   # best anchored value seen in training;
                                     # inference clips its feature here
    cost_loc: float = 0.0
    cost_scale: float = 1000.0
    step_cost_loc: float = 0.0
    step_cost_scale: float = 100.0
    cost_budget_ref: float = 0.0  # low-disruption episode cost reference
    # dispatch knob calibration: the anchored target is
    # g_star_cal + g_star_gain * G*, placing G*=0 at the best observed
    # corridor quality and G*=-400 at the data's 10th percentile
    g_star_cal: float = 0.0
    g_star_gain: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.d % self.n_heads:
            raise ValueError("hidden dim must divide across attention heads")

    @property
    def obs_dim(self) -> int:
        return self.k * (self.p + 6)

    @property
    def local_dim(self) -> int:
        return self.p + 6

    @property
    def tokens_per_step(self) -> int:
        return 4 if self.variant == "cdt" else 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "ModelConfig":
        """Paper-default shapes: DT/CDT use 4 layers and C=30; MADT 3 and C=20."""
        base = dict(variant=variant)
        if variant == "madt":
            base.update(n_layers=3, context=20)
        base.update(kw)
        return cls(**base)


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig, n_tokens: int):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.d_head = cfg.d // cfg.n_heads
        self.qkv = nn.Linear(cfg.d, 3 * cfg.d)
        self.proj = nn.Linear(cfg.d, cfg.d)
        self.attn_drop = nn.Dropout(cfg.dropout)
        self.out_drop = nn.Dropout(cfg.dropout)
        mask = torch.zeros(n_tokens, n_tokens)
        if cfg.causal_mask:
            mask = mask.masked_fill(
                torch.triu(torch.ones(n_tokens, n_tokens, dtype=torch.bool), 1),
                float("-inf"))
        self.register_buffer("causal_bias", mask, persistent=False)

    def forward(self, x: torch.Tensor,
                pad_bias: torch.Tensor | None = None) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)
        q = q.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_head)
        att = att + self.causal_bias[:t, :t]
        if pad_bias is not None:
            att = att + pad_bias[:, :, :t, :t]
        att = torch.softmax(att, dim=-1)
        att = self.attn_drop(att)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.out_drop(self.proj(y))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig, n_tokens: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d)
        self.attn = CausalSelfAttention(cfg, n_tokens)
        self.ln2 = nn.LayerNorm(cfg.d)
        d_ff = cfg.d_ff_mult * cfg.d
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d, d_ff), nn.GELU(), nn.Linear(d_ff, cfg.d),
            nn.Dropout(cfg.dropout))

    def forward(self, x: torch.Tensor,
                pad_bias: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), pad_bias)
        return x + self.mlp(self.ln2(x))


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.trunc_normal_(module.weight, std=0.02)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class _SequenceModelBase(nn.Module):
    """Shared machinery: padding bias construction and head readout."""

    cfg: ModelConfig

    def _pad_bias(self, mask: torch.Tensor) -> torch.Tensor | None:
        """Additive bias hiding left-padded timesteps from real tokens.

        mask: (B, C) True on real steps. Padded tokens keep their diagonal
        entry so their own softmax stays finite; their outputs are never
        read and never attended to by real tokens.
        """
        if bool(mask.all()):
            return None
        tps = self.cfg.tokens_per_step
        b, c = mask.shape
        t = c * tps
        token_real = mask.repeat_interleave(tps, dim=1)     # (B, T)
        bias = torch.zeros(b, 1, t, t, dtype=torch.float32, device=mask.device)
        bias.masked_fill_(~token_real[:, None, None, :], float("-inf"))
        idx = torch.arange(t, device=mask.device)
        bias[:, :, idx, idx] = 0.0
        return bias

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class DecisionTransformer(_SequenceModelBase):
    """Single-agent model over interleaved (return, state, action) tokens.

    The CDT variant inserts a cost-to-go token after the return token and
    adds a linear cost prediction head read from the cost token position.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.variant not in ("dt", "cdt"):
            raise ValueError("use MultiAgentDT for the madt variant")
        self.cfg = cfg
        d = cfg.d
        # the return token carries the raw return-to-go and its anchored
        # excess over the route's ideal remaining return
        self.embed_rtg = nn.Linear(2, d)
        self.ln_rtg = nn.LayerNorm(d)
        self.embed_state = nn.Linear(cfg.obs_dim, d)
        self.ln_state = nn.LayerNorm(d)
        self.embed_action = nn.Linear(cfg.k * cfg.p, d)
        self.ln_action = nn.LayerNorm(d)
        if cfg.variant == "cdt":
            self.embed_cost = nn.Linear(1, d)
            self.ln_cost = nn.LayerNorm(d)
            self.cost_head = nn.Linear(d, 1)
        self.pos_emb = nn.Embedding(cfg.t_max + 1, d)
        self.mod_emb = nn.Parameter(torch.zeros(cfg.tokens_per_step, d))
        self.sos_action = nn.Parameter(torch.zeros(d))
        n_tokens = cfg.tokens_per_step * cfg.context
        self.blocks = nn.ModuleList(
            [Block(cfg, n_tokens) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(d)
        self.heads = nn.ModuleList([
            nn.Sequential(nn.Linear(d, cfg.head_hidden), nn.GELU(),
                          nn.Linear(cfg.head_hidden, cfg.p))
            for _ in range(cfg.k)])
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mod_emb, std=0.02)
        nn.init.trunc_normal_(self.sos_action, std=0.02)

    def forward(self, rtg: torch.Tensor, obs: torch.Tensor,
                actions: torch.Tensor, timesteps: torch.Tensor,
                mask: torch.Tensor | None = None,
                ctg: torch.Tensor | None = None,
                rtg_anchored: torch.Tensor | None = None):
        """rtg/ctg: (B, C) raw values; obs: (B, C, obs_dim);
        actions: (B, C, K) int phase ids with -1 marking not-yet-taken slots;
        timesteps: (B, C) absolute indices; mask: (B, C) real-step flags;
        rtg_anchored: (B, C) excess of rtg over the ideal remaining return.

        Returns logits (B, C, K, P) and, for CDT, predicted z-scored cost.
        """
        cfg = self.cfg
        b, c = rtg.shape
        if mask is None:
            mask = torch.ones(b, c, dtype=torch.bool, device=rtg.device)
        if rtg_anchored is None:
            rtg_anchored = torch.zeros_like(rtg)

        rtg_feat = torch.stack(
            [(rtg - cfg.rtg_loc) / cfg.rtg_scale,
             (rtg_anchored - cfg.rtg2_loc) / cfg.rtg2_scale], dim=-1)
        e_r = self.ln_rtg(self.embed_rtg(rtg_feat))
        e_s = self.ln_state(self.embed_state(obs))
        act_clamped = actions.clamp(min=0)
        onehot = F.one_hot(act_clamped, cfg.p).view(b, c, cfg.k * cfg.p)
        e_a = self.ln_action(self.embed_action(
            onehot.to(self.embed_action.weight.dtype)))
        missing = (actions < 0).any(dim=-1)
        e_a = torch.where(missing.unsqueeze(-1), self.sos_action.expand(b, c, -1), e_a)

        pos = self.pos_emb(timesteps.clamp(0, cfg.t_max))
        if cfg.variant == "cdt":
            if ctg is None:
                raise ValueError("cdt forward needs cost-to-go values")
            cost_feat = ((ctg - cfg.cost_loc) / cfg.cost_scale).unsqueeze(-1)
            e_c = self.ln_cost(self.embed_cost(cost_feat))
            toks = torch.stack([e_r, e_c, e_s, e_a], dim=2)
        else:
            toks = torch.stack([e_r, e_s, e_a], dim=2)
        toks = toks + pos.unsqueeze(2) + self.mod_emb
        x = toks.view(b, c * cfg.tokens_per_step, cfg.d)

        pad_bias = self._pad_bias(mask)
        for block in self.blocks:
            x = block(x, pad_bias)
        x = self.ln_f(x)

        state_slot = 2 if cfg.variant == "cdt" else 1
        h_state = x[:, state_slot::cfg.tokens_per_step]      # (B, C, d)
        logits = torch.stack([head(h_state) for head in self.heads], dim=2)
        if cfg.variant == "cdt":
            h_cost = x[:, 1::cfg.tokens_per_step]
            return logits, self.cost_head(h_cost).squeeze(-1)
        return logits


class MultiAgentDT(_SequenceModelBase):
    """Parameter-shared per-agent streams with GAT-enriched state tokens.

    Every intersection runs the same transformer over its own
    (local return, enriched local state, local action) token stream; a
    learned agent identity embedding distinguishes the shared weights, and
    a two-layer GAT mixes neighbor information into the state tokens before
    sequencing.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.variant != "madt":
            raise ValueError("MultiAgentDT requires the madt variant")
        self.cfg = cfg
        d = cfg.d
        self.embed_rtg = nn.Linear(1, d)
        self.ln_rtg = nn.LayerNorm(d)
        self.embed_local = nn.Linear(cfg.local_dim, d)
        self.ln_local = nn.LayerNorm(d)
        self.gat = GATStack(d, n_heads=cfg.gat_heads, ff_mult=cfg.gat_ff_mult)
        self.ln_state = nn.LayerNorm(d)
        self.embed_action = nn.Linear(cfg.p, d)
        self.ln_action = nn.LayerNorm(d)
        self.pos_emb = nn.Embedding(cfg.t_max + 1, d)
        self.agent_emb = nn.Embedding(cfg.n_agents, d)
        self.mod_emb = nn.Parameter(torch.zeros(3, d))
        self.sos_action = nn.Parameter(torch.zeros(d))
        n_tokens = 3 * cfg.context
        self.blocks = nn.ModuleList(
            [Block(cfg, n_tokens) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Sequential(nn.Linear(d, cfg.head_hidden), nn.GELU(),
                                  nn.Linear(cfg.head_hidden, cfg.p))
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mod_emb, std=0.02)
        nn.init.trunc_normal_(self.sos_action, std=0.02)

    def forward(self, rtg: torch.Tensor, local_obs: torch.Tensor,
                actions: torch.Tensor, timesteps: torch.Tensor,
                adjacency: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        """rtg: (B, C, A) per-agent returns-to-go; local_obs: (B, C, A, local);
        actions: (B, C, A) ints with -1 for not-yet-taken; timesteps: (B, C);
        adjacency: (A, A) bool. Returns logits (B, C, A, P)."""
        cfg = self.cfg
        b, c, a = rtg.shape
        if mask is None:
            mask = torch.ones(b, c, dtype=torch.bool, device=rtg.device)

        rtg_feat = ((rtg - cfg.rtg_loc) / cfg.rtg_scale).unsqueeze(-1)
        e_r = self.ln_rtg(self.embed_rtg(rtg_feat))           # (B,C,A,d)
        h_local = self.ln_local(self.embed_local(local_obs))
        e_s = self.ln_state(self.gat(h_local, adjacency))
        onehot = F.one_hot(actions.clamp(min=0), cfg.p)
        e_a = self.ln_action(self.embed_action(
            onehot.to(self.embed_action.weight.dtype)))
        missing = (actions < 0).unsqueeze(-1)
        e_a = torch.where(missing, self.sos_action.expand_as(e_a), e_a)

        pos = self.pos_emb(timesteps.clamp(0, cfg.t_max))     # (B,C,d)
        ident = self.agent_emb(torch.arange(a, device=rtg.device))  # (A,d)
        toks = torch.stack([e_r, e_s, e_a], dim=3)            # (B,C,A,3,d)
        toks = toks + pos[:, :, None, None, :] + ident[None, None, :, None, :]
        toks = toks + self.mod_emb
        x = toks.permute(0, 2, 1, 3, 4).reshape(b * a, 3 * c, cfg.d)

        pad_bias = self._pad_bias(mask)
        if pad_bias is not None:
            pad_bias = pad_bias.repeat_interleave(a, dim=0)
        for block in self.blocks:
            x = block(x, pad_bias)
        x = self.ln_f(x)
        h_state = x[:, 1::3].view(b, a, c, cfg.d).permute(0, 2, 1, 3)
        return self.head(h_state)                              # (B,C,A,P)


def make_model(cfg: ModelConfig) -> nn.Module:
    if cfg.variant == "madt":
        return MultiAgentDT(cfg)
    return DecisionTransformer(cfg)


# -- objectives ----------------------------------------------------------------


def action_cross_entropy(logits: torch.Tensor, targets: torch.Tensor,
                         step_mask: torch.Tensor,
                         head_mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over real (timestep, head) pairs.

    logits: (B, C, K, P); targets: (B, C, K); step_mask: (B, C);
    head_mask: (B, K).
    """
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    valid = step_mask.unsqueeze(-1) & head_mask.unsqueeze(1)
    n = valid.sum()
    if n == 0:
        return logits.sum() * 0.0
    return -(picked * valid).sum() / n


def model_loss(model: nn.Module, batch: dict) -> tuple[torch.Tensor, dict]:
    """Training loss plus scalar diagnostics for one token batch."""
    cfg = model.cfg
    if cfg.variant == "madt":
        logits = model(batch["rtg"], batch["obs"], batch["actions"],
                       batch["timesteps"], batch["adjacency"], batch["mask"])
    elif cfg.variant == "cdt":
        logits, cost_pred = model(batch["rtg"], batch["obs"], batch["actions"],
                                  batch["timesteps"], batch["mask"],
                                  ctg=batch["ctg"],
                                  rtg_anchored=batch.get("rtg_anchored"))
    else:
        logits = model(batch["rtg"], batch["obs"], batch["actions"],
                       batch["timesteps"], batch["mask"],
                       rtg_anchored=batch.get("rtg_anchored"))
    ce = action_cross_entropy(logits, batch["targets"], batch["mask"],
                              batch["head_mask"])
    loss = ce
    diag = {"ce": float(ce.detach())}
    if cfg.variant == "cdt":
        cost_z = (batch["step_cost"] - cfg.step_cost_loc) / cfg.step_cost_scale
        sq = (cost_pred - cost_z) ** 2 * batch["mask"]
        cost_term = cfg.mu_cost * sq.sum(dim=1).mean()
        loss = loss + cost_term
        diag["cost_mse"] = float(cost_term.detach())
    with torch.no_grad():
        pred = logits.argmax(dim=-1)
        valid = batch["mask"].unsqueeze(-1) & batch["head_mask"].unsqueeze(1)
        correct = ((pred == batch["targets"]) & valid).sum()
        diag["accuracy"] = float(correct) / max(int(valid.sum()), 1)
    return loss, diag
