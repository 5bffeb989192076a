"""Graph variational autoencoder over joint coordinates.

Encodes each skeleton's (N, 3) coordinates into per-node latents (N, D) and
decodes back; both directions mix degree-normalized convolution with
edge-masked attention so features respect the bone graph. The latent space is
what the diffusion model operates in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gnn import GraphConv, ResidualSelfAttention, attention_mask, norm_adjacency
from .graphs import SkeletonGraph
from .nn import AdamW, Dense, Module


@dataclass
class VAEConfig:
    width: int = 128
    n_heads: int = 4
    d_latent: int = 8
    kl_beta: float = 1e-8
    recon_reduction: str = "sum"  # or "mean_per_joint"
    log_sigma_clamp: float = 10.0
    init_seed: int = 0

    def __post_init__(self):
        if self.recon_reduction not in ("sum", "mean_per_joint"):
            raise ValueError("recon_reduction must be 'sum' or 'mean_per_joint'")
        if self.width % self.n_heads:
            raise ValueError("width must be divisible by n_heads")


class GraphVAE(Module):
    """Encoder: embed -> conv -> attention x2 -> (mu, log_sigma) heads.
    Decoder mirrors it: embed -> attention x2 -> conv -> coordinate head."""

    def __init__(self, config: VAEConfig):
        rng = np.random.default_rng(config.init_seed)
        w, h = config.width, config.n_heads
        self.config = config
        self.embed = Dense(rng, 3, w)
        self.enc_conv = GraphConv(rng, w, w)
        self.enc_attn1 = ResidualSelfAttention(rng, w, h)
        self.enc_attn2 = ResidualSelfAttention(rng, w, h)
        self.mu_head = Dense(rng, w, config.d_latent)
        self.ls_head = Dense(rng, w, config.d_latent)
        self.dec_embed = Dense(rng, config.d_latent, w)
        self.dec_attn1 = ResidualSelfAttention(rng, w, h)
        self.dec_attn2 = ResidualSelfAttention(rng, w, h)
        self.dec_conv = GraphConv(rng, w, w)
        self.out_head = Dense(rng, w, 3)

    # -- encoder ------------------------------------------------------------

    def encode(self, x: np.ndarray, edges):
        n = x.shape[0]
        a_norm = norm_adjacency(n, edges)
        mask = attention_mask(n, edges)
        h0, c0 = self.embed.forward(x)
        h1, c1 = self.enc_conv.forward(h0, a_norm)
        h2, c2 = self.enc_attn1.forward(h1, mask)
        h3, c3 = self.enc_attn2.forward(h2, mask)
        mu, cm = self.mu_head.forward(h3)
        ls_raw, cl = self.ls_head.forward(h3)
        clamp = self.config.log_sigma_clamp
        ls = np.clip(ls_raw, -clamp, clamp)
        inside = (ls_raw > -clamp) & (ls_raw < clamp)
        return mu, ls, (c0, c1, c2, c3, cm, cl, inside)

    def encode_backward(self, ctx, dmu: np.ndarray, dls: np.ndarray) -> np.ndarray:
        c0, c1, c2, c3, cm, cl, inside = ctx
        dh3 = self.mu_head.backward(cm, dmu)
        dh3 = dh3 + self.ls_head.backward(cl, dls * inside)
        dh2 = self.enc_attn2.backward(c3, dh3)
        dh1 = self.enc_attn1.backward(c2, dh2)
        dh0 = self.enc_conv.backward(c1, dh1)
        return self.embed.backward(c0, dh0)

    # -- decoder ------------------------------------------------------------

    def decode(self, z: np.ndarray, edges):
        n = z.shape[0]
        a_norm = norm_adjacency(n, edges)
        mask = attention_mask(n, edges)
        h0, c0 = self.dec_embed.forward(z)
        h1, c1 = self.dec_attn1.forward(h0, mask)
        h2, c2 = self.dec_attn2.forward(h1, mask)
        h3, c3 = self.dec_conv.forward(h2, a_norm)
        x_rec, c4 = self.out_head.forward(h3)
        return x_rec, (c0, c1, c2, c3, c4)

    def decode_backward(self, ctx, dx: np.ndarray) -> np.ndarray:
        c0, c1, c2, c3, c4 = ctx
        dh3 = self.out_head.backward(c4, dx)
        dh2 = self.dec_conv.backward(c3, dh3)
        dh1 = self.dec_attn2.backward(c2, dh2)
        dh0 = self.dec_attn1.backward(c1, dh1)
        return self.dec_embed.backward(c0, dh0)

    # -- convenience --------------------------------------------------------

    def encode_mean(self, graph: SkeletonGraph) -> np.ndarray:
        """Deterministic latent (the posterior mean) for a skeleton."""
        mu, _, _ = self.encode(graph.joints, graph.edges)
        return mu

    def reconstruct(self, graph: SkeletonGraph) -> np.ndarray:
        x_rec, _ = self.decode(self.encode_mean(graph), graph.edges)
        return x_rec


def elbo_with_grads(model: GraphVAE, x: np.ndarray, edges,
                    eps: np.ndarray) -> dict:
    """One forward/backward pass; parameter gradients accumulate on the model.

    Reconstruction is the squared error summed over all entries (or divided
    by N under mean_per_joint); the divergence term is
    0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1).
    """
    cfg = model.config
    n = x.shape[0]
    mu, ls, enc_ctx = model.encode(x, edges)
    sigma = np.exp(ls)
    z = mu + sigma * eps
    x_rec, dec_ctx = model.decode(z, edges)

    diff = x_rec - x
    recon = float((diff * diff).sum())
    scale = 1.0
    if cfg.recon_reduction == "mean_per_joint":
        scale = 1.0 / n
        recon *= scale
    kl = float(0.5 * (mu * mu + sigma * sigma - 2.0 * ls - 1.0).sum())
    loss = recon + cfg.kl_beta * kl

    dx_rec = 2.0 * diff * scale
    dz = model.decode_backward(dec_ctx, dx_rec)
    dmu = dz + cfg.kl_beta * mu
    dls = dz * eps * sigma + cfg.kl_beta * (sigma * sigma - 1.0)
    model.encode_backward(enc_ctx, dmu, dls)
    return {"loss": loss, "recon": recon, "kl": kl}


@dataclass
class VAETrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    log_every: int = 100


def train_vae(graphs: list[SkeletonGraph], model_config: VAEConfig,
              train_config: VAETrainConfig,
              callback=None) -> tuple[GraphVAE, list[dict]]:
    """Train on a list of normalized skeletons; deterministic in the seeds."""
    if not graphs:
        raise ValueError("empty training set")
    model = GraphVAE(model_config)
    opt = AdamW(model.params(), lr=train_config.lr,
                weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    history = []
    for step in range(train_config.steps):
        idx = rng.integers(0, len(graphs), size=train_config.batch_size)
        opt.zero_grad()
        tot = {"loss": 0.0, "recon": 0.0, "kl": 0.0}
        for i in idx:
            g = graphs[int(i)]
            eps = rng.standard_normal((g.n_joints, model_config.d_latent))
            terms = elbo_with_grads(model, g.joints, g.edges, eps)
            for k in tot:
                tot[k] += terms[k]
        for p in model.params():
            p.grad /= train_config.batch_size
        opt.step()
        if step % train_config.log_every == 0 or step == train_config.steps - 1:
            entry = {"step": step,
                     **{k: v / train_config.batch_size for k, v in tot.items()}}
            history.append(entry)
            if callback is not None:
                callback(entry)
    return model, history


def mean_joint_error(model: GraphVAE, graph: SkeletonGraph) -> float:
    """Mean Euclidean distance between joints and their reconstruction."""
    x_rec = model.reconstruct(graph)
    return float(np.linalg.norm(x_rec - graph.joints, axis=1).mean())
