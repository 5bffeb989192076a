"""Latent graph diffusion: noise schedule, transformer denoiser, sampling.

The denoiser predicts the noise added to per-node latents. Each block runs
edge-masked self-attention over the nodes, cross-attention onto text tokens,
and a feed-forward net, all modulated by shift/scale/gate vectors computed
from the timestep conditioning through zero-initialized projections, so the
whole network is the identity-to-zero map at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gnn import MultiHeadAttention, attention_mask
from .graphs import SkeletonGraph, StrokeGraph2D
from .nn import (AdamW, Dense, LayerNorm, MLP, Module, gelu, gelu_grad,
                 sinusoidal_embedding)


class NoiseSchedule:
    """Discrete-time schedule: index t runs 1..T, alpha_bar has T+1 entries,
    alpha_bar[0] == 1 exactly and alpha_bar[T] == alpha_bar_floor for the
    cosine kind. The raw cosine curve is rescaled onto [floor, 1] instead of
    clipped so the sequence stays strictly decreasing."""

    def __init__(self, n_steps: int, kind: str = "cosine",
                 alpha_bar_floor: float = 1e-4):
        if n_steps < 1:
            raise ValueError("need at least one step")
        self.n_steps = n_steps
        self.kind = kind
        t = np.arange(n_steps + 1, dtype=np.float64)
        if kind == "cosine":
            s = 0.008
            f = np.cos(((t / n_steps + s) / (1.0 + s)) * np.pi / 2.0) ** 2
            raw = f / f[0]
            ab = alpha_bar_floor + (1.0 - alpha_bar_floor) \
                * (raw - raw[-1]) / (1.0 - raw[-1])
            ab[0] = 1.0
        elif kind == "linear":
            # the classic 1e-4..0.02 range at 1000 steps, rescaled so the
            # integrated noise is step-count independent
            betas = np.linspace(0.1 / n_steps, 20.0 / n_steps, n_steps)
            ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        else:
            raise ValueError(f"unknown schedule kind {kind!r}")
        self.alpha_bar = ab
        self.betas = np.concatenate([[0.0], 1.0 - ab[1:] / ab[:-1]])
        self.alphas = 1.0 - self.betas

    def noise_to(self, z0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
        """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
        ab = self.alpha_bar[t]
        return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def eps_loss(eps_hat: np.ndarray, eps: np.ndarray) -> float:
    """Squared error summed over every node and latent dimension."""
    d = eps_hat - eps
    return float((d * d).sum())


def guidance_mix(eps_uncond: np.ndarray, eps_cond: np.ndarray,
                 weight: float) -> np.ndarray:
    if weight == 1.0:
        return eps_cond
    return eps_uncond + weight * (eps_cond - eps_uncond)


@dataclass
class DiTConfig:
    width: int = 256
    n_blocks: int = 6
    n_heads: int = 4
    d_latent: int = 8
    d_text: int = 64
    n_text_tokens: int = 4
    use_stroke_condition: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.width % self.n_heads:
            raise ValueError("width must be divisible by n_heads")


class DiTBlock(Module):
    def __init__(self, rng: np.random.Generator, width: int, n_heads: int):
        self.norm1 = LayerNorm(width, affine=False)
        self.self_attn = MultiHeadAttention(rng, width, n_heads)
        self.norm_cross = LayerNorm(width, affine=False)
        self.cross_attn = MultiHeadAttention(rng, width, n_heads)
        self.norm2 = LayerNorm(width, affine=False)
        self.ffn = MLP(rng, width, 4 * width, width)
        self.mod = Dense(rng, width, 6 * width, zero_init=True)

    def forward(self, x: np.ndarray, tokens: np.ndarray | None,
                mask: np.ndarray, cond: np.ndarray):
        w = x.shape[1]
        pre = gelu(cond)
        mod_row, c_mod = self.mod.forward(pre[None, :])
        sh_sa, sc_sa, g_sa, sh_ff, sc_ff, g_ff = [
            mod_row[0, i * w:(i + 1) * w] for i in range(6)]

        h1, c_n1 = self.norm1.forward(x)
        h1m = h1 * (1.0 + sc_sa) + sh_sa
        sa, c_sa = self.self_attn.forward(h1m, h1m, mask)
        x1 = x + g_sa * sa

        if tokens is None:
            x2, c_nc, c_ca = x1, None, None
        else:
            hc, c_nc = self.norm_cross.forward(x1)
            ca, c_ca = self.cross_attn.forward(hc, tokens, None)
            x2 = x1 + ca

        h2, c_n2 = self.norm2.forward(x2)
        h2m = h2 * (1.0 + sc_ff) + sh_ff
        ff, c_ff = self.ffn.forward(h2m)
        x3 = x2 + g_ff * ff

        ctx = (c_mod, c_n1, c_sa, c_nc, c_ca, c_n2, c_ff,
               cond, sc_sa, g_sa, sc_ff, g_ff, h1, sa, h2, ff)
        return x3, ctx

    def backward(self, ctx, dy: np.ndarray):
        (c_mod, c_n1, c_sa, c_nc, c_ca, c_n2, c_ff,
         cond, sc_sa, g_sa, sc_ff, g_ff, h1, sa, h2, ff) = ctx

        dg_ff = (dy * ff).sum(axis=0)
        dh2m = self.ffn.backward(c_ff, dy * g_ff)
        dsc_ff = (dh2m * h2).sum(axis=0)
        dsh_ff = dh2m.sum(axis=0)
        dx2 = dy + self.norm2.backward(c_n2, dh2m * (1.0 + sc_ff))

        if c_ca is None:
            dx1, dtokens = dx2, None
        else:
            dhc, dtokens = self.cross_attn.backward(c_ca, dx2)
            dx1 = dx2 + self.norm_cross.backward(c_nc, dhc)

        dg_sa = (dx1 * sa).sum(axis=0)
        dq, dkv = self.self_attn.backward(c_sa, dx1 * g_sa)
        dh1m = dq + dkv
        dsc_sa = (dh1m * h1).sum(axis=0)
        dsh_sa = dh1m.sum(axis=0)
        dx = dx1 + self.norm1.backward(c_n1, dh1m * (1.0 + sc_sa))

        dmod = np.concatenate([dsh_sa, dsc_sa, dg_sa, dsh_ff, dsc_ff, dg_ff])
        dpre = self.mod.backward(c_mod, dmod[None, :])[0]
        dcond = dpre * gelu_grad(cond)
        return dx, dtokens, dcond


class Denoiser(Module):
    """Predicts the latent noise from (z_t, t, stroke joints, edges, text)."""

    def __init__(self, config: DiTConfig):
        rng = np.random.default_rng(config.init_seed)
        w = config.width
        self.config = config
        self.jxy_embed = Dense(rng, 2, w)
        self.in_proj = Dense(rng, w + config.d_latent, w)
        self.t_mlp = MLP(rng, w, w, w)
        self.text_proj = Dense(rng, config.d_text, config.n_text_tokens * w)
        self.blocks = [DiTBlock(rng, w, config.n_heads)
                       for _ in range(config.n_blocks)]
        self.norm_final = LayerNorm(w, affine=False)
        self.mod_final = Dense(rng, w, 2 * w, zero_init=True)
        self.head = Dense(rng, w, config.d_latent, zero_init=True)

    def forward(self, z_t: np.ndarray, t: int, jxy: np.ndarray, edges,
                c_text: np.ndarray | None):
        """c_text None means the unconditional branch: cross-attention is
        skipped entirely rather than attending onto a null token."""
        cfg = self.config
        w = cfg.width
        n = z_t.shape[0]
        if jxy.shape[0] != n:
            raise ValueError("stroke joints and latents disagree on node count")
        if not (1 <= t):
            raise ValueError("timestep must be >= 1")
        mask = attention_mask(n, edges)

        e_raw, c_e = self.jxy_embed.forward(jxy)
        e_scale = 1.0 if cfg.use_stroke_condition else 0.0
        x_in = np.concatenate([e_raw * e_scale, z_t], axis=1)
        x, c_in = self.in_proj.forward(x_in)

        t_feat = sinusoidal_embedding(t, w)
        cond_row, c_t = self.t_mlp.forward(t_feat[None, :])
        cond = cond_row[0]

        if c_text is None:
            tokens, c_tok = None, None
        else:
            tok_flat, c_tok = self.text_proj.forward(
                np.asarray(c_text, dtype=np.float64)[None, :])
            tokens = tok_flat.reshape(cfg.n_text_tokens, w)

        block_ctx = []
        for block in self.blocks:
            x, cb = block.forward(x, tokens, mask, cond)
            block_ctx.append(cb)

        hf, c_nf = self.norm_final.forward(x)
        modf, c_mf = self.mod_final.forward(gelu(cond)[None, :])
        shift, scale = modf[0, :w], modf[0, w:]
        hm = hf * (1.0 + scale) + shift
        eps_hat, c_h = self.head.forward(hm)

        ctx = (c_e, e_scale, c_in, c_t, c_tok, block_ctx,
               c_nf, c_mf, c_h, cond, scale, hf)
        return eps_hat, ctx

    def backward(self, ctx, d_eps: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients; returns the gradient w.r.t. z_t."""
        (c_e, e_scale, c_in, c_t, c_tok, block_ctx,
         c_nf, c_mf, c_h, cond, scale, hf) = ctx
        cfg = self.config
        w = cfg.width

        dhm = self.head.backward(c_h, d_eps)
        dscale = (dhm * hf).sum(axis=0)
        dshift = dhm.sum(axis=0)
        dmodf = np.concatenate([dshift, dscale])[None, :]
        dpre_f = self.mod_final.backward(c_mf, dmodf)[0]
        dcond = dpre_f * gelu_grad(cond)
        dx = self.norm_final.backward(c_nf, dhm * (1.0 + scale))

        dtokens = np.zeros((cfg.n_text_tokens, w))
        for block, cb in zip(reversed(self.blocks), reversed(block_ctx)):
            dx, dtok, dc = block.backward(cb, dx)
            if dtok is not None:
                dtokens += dtok
            dcond = dcond + dc

        if c_tok is not None:
            self.text_proj.backward(c_tok, dtokens.reshape(1, -1))
        self.t_mlp.backward(c_t, dcond[None, :])
        dx_in = self.in_proj.backward(c_in, dx)
        de = dx_in[:, :w] * e_scale
        self.jxy_embed.backward(c_e, de)
        return dx_in[:, w:]


@dataclass
class DiffusionExample:
    """One training item: clean latents plus their conditioning."""
    z0: np.ndarray
    jxy: np.ndarray
    edges: tuple
    c_text: np.ndarray


def residual_loss_and_grads(model: Denoiser, z_t: np.ndarray, t: int,
                            jxy: np.ndarray, edges, c_text: np.ndarray,
                            eps: np.ndarray,
                            grad_scale: float | None = 1.0) -> float:
    """||eps_hat - eps||^2 summed over nodes and dims; backprops into the
    model scaled by `grad_scale` (None skips the backward pass)."""
    eps_hat, ctx = model.forward(z_t, t, jxy, edges, c_text)
    diff = eps_hat - eps
    if grad_scale is not None:
        model.backward(ctx, 2.0 * diff * grad_scale)
    return float((diff * diff).sum())


@dataclass
class DiffusionTrainConfig:
    n_steps_schedule: int = 1000
    schedule_kind: str = "cosine"
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 128
    p_uncond: float = 0.1
    p_tag: float = 0.5
    seed: int = 0
    weight_decay: float = 0.0
    log_every: int = 100


def _train_step(model: Denoiser, schedule: NoiseSchedule, opt: AdamW,
                examples: list[DiffusionExample],
                rng: np.random.Generator,
                cfg: DiffusionTrainConfig) -> tuple[float, int]:
    idx = rng.integers(0, len(examples), size=cfg.batch_size)
    opt.zero_grad()
    total = 0.0
    dropped = 0
    for i in idx:
        ex = examples[int(i)]
        t = int(rng.integers(1, schedule.n_steps + 1))
        eps = rng.standard_normal(ex.z0.shape)
        drop = bool(rng.random() < cfg.p_uncond)
        dropped += drop
        c_text = None if drop else ex.c_text
        z_t = schedule.noise_to(ex.z0, t, eps)
        total += residual_loss_and_grads(
            model, z_t, t, ex.jxy, ex.edges, c_text, eps,
            grad_scale=1.0 / cfg.batch_size)
    if not np.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    opt.step()
    return total / cfg.batch_size, dropped


def train_denoiser(examples: list[DiffusionExample], model_config: DiTConfig,
                   train_config: DiffusionTrainConfig,
                   callback=None) -> tuple[Denoiser, NoiseSchedule, list[dict]]:
    """Noise-prediction training; every random draw comes from the seeded
    generator in a fixed order, so runs are reproducible bit for bit."""
    if not examples:
        raise ValueError("empty training set")
    model = Denoiser(model_config)
    schedule = NoiseSchedule(train_config.n_steps_schedule,
                             train_config.schedule_kind)
    opt = AdamW(model.params(), lr=train_config.lr,
                weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    history = []
    n_dropped = 0
    for step in range(train_config.steps):
        loss, dropped = _train_step(model, schedule, opt, examples, rng,
                                    train_config)
        n_dropped += dropped
        if step % train_config.log_every == 0 or step == train_config.steps - 1:
            entry = {"step": step, "loss": loss, "dropped": n_dropped}
            history.append(entry)
            if callback is not None:
                callback(entry)
    return model, schedule, history


def augment_prompt(caption: str, tags=(), view_tag: str | None = None,
                   rng: np.random.Generator | None = None,
                   p_tag: float = 0.5) -> str:
    """Append descriptive tags and the viewpoint tag to a caption.

    With an rng (training) each tag joins independently with probability
    p_tag; without one (validation) every available tag is included. The
    free view carries no usable viewpoint wording and is skipped.
    """
    pool = [str(t) for t in tags]
    if view_tag in ("front", "side", "top"):
        pool.append(f"{view_tag} view")
    parts = [caption]
    for tag in pool:
        if rng is None or rng.random() < p_tag:
            parts.append(tag)
    return ", ".join(p for p in parts if p)


def train_dit(records, vae_model, model_config: DiTConfig,
              train_config: DiffusionTrainConfig, encoder,
              stroke_config=None,
              callback=None) -> tuple[Denoiser, NoiseSchedule, list[dict]]:
    """Full conditioning pipeline on dataset records.

    Per batch item the seeded draws happen in a fixed order: record index,
    stroke simulation (view, jitter, rotation, scale), prompt tags, text
    drop, timestep, noise. Latent targets are the posterior means, computed
    once up front since the encoder is deterministic.
    """
    from .stroke import simulate_stroke

    if not records:
        raise ValueError("empty training set")
    for rec in records:
        if not rec.caption.strip():
            raise ValueError(f"record {rec.source_id!r} has an empty caption")
    model = Denoiser(model_config)
    schedule = NoiseSchedule(train_config.n_steps_schedule,
                             train_config.schedule_kind)
    opt = AdamW(model.params(), lr=train_config.lr,
                weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    z0s = [vae_model.encode_mean(rec.skeleton) for rec in records]
    history = []
    n_dropped = 0
    for step in range(train_config.steps):
        opt.zero_grad()
        total = 0.0
        for _ in range(train_config.batch_size):
            i = int(rng.integers(0, len(records)))
            rec = records[i]
            stroke = simulate_stroke(rec.skeleton, rng, stroke_config)
            prompt = augment_prompt(rec.caption, rec.tags, stroke.view_tag,
                                    rng, train_config.p_tag)
            drop = bool(rng.random() < train_config.p_uncond)
            n_dropped += drop
            c_text = None if drop else encoder.embed(prompt).vector
            t = int(rng.integers(1, schedule.n_steps + 1))
            eps = rng.standard_normal(z0s[i].shape)
            z_t = schedule.noise_to(z0s[i], t, eps)
            total += residual_loss_and_grads(
                model, z_t, t, stroke.joints2d, stroke.edges, c_text, eps,
                grad_scale=1.0 / train_config.batch_size)
        if not np.isfinite(total):
            raise FloatingPointError("non-finite training loss")
        opt.step()
        loss = total / train_config.batch_size
        if step % train_config.log_every == 0 or step == train_config.steps - 1:
            entry = {"step": step, "loss": loss, "dropped": n_dropped}
            history.append(entry)
            if callback is not None:
                callback(entry)
    return model, schedule, history


def steps_to_threshold(examples: list[DiffusionExample],
                       model_config: DiTConfig,
                       train_config: DiffusionTrainConfig,
                       threshold: float, eval_every: int = 25,
                       probes: list[tuple[int, int]] | None = None):
    """Train until the deterministic probe loss drops below `threshold`.

    Returns (steps_taken, final_probe_loss); steps_taken is None when the
    step budget in `train_config.steps` runs out first. Used to compare
    convergence speed between conditioning variants, so everything random
    is derived from the seeds and nothing depends on wall clock.
    """
    if not examples:
        raise ValueError("empty training set")
    model = Denoiser(model_config)
    schedule = NoiseSchedule(train_config.n_steps_schedule,
                             train_config.schedule_kind)
    if probes is None:
        probes = default_probes(schedule)
    opt = AdamW(model.params(), lr=train_config.lr,
                weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    loss = probe_loss(model, schedule, examples, probes)
    if loss < threshold:
        return 0, loss
    for step in range(1, train_config.steps + 1):
        _train_step(model, schedule, opt, examples, rng, train_config)
        if step % eval_every == 0 or step == train_config.steps:
            loss = probe_loss(model, schedule, examples, probes)
            if loss < threshold:
                return step, loss
    return None, loss


def probe_loss(model: Denoiser, schedule: NoiseSchedule,
               examples: list[DiffusionExample],
               probes: list[tuple[int, int]]) -> float:
    """Deterministic evaluation: mean over examples x fixed (t, noise seed)
    probes of the summed residual loss. Used to compare training runs."""
    total = 0.0
    count = 0
    for ex in examples:
        for t, seed in probes:
            eps = np.random.default_rng(seed).standard_normal(ex.z0.shape)
            z_t = schedule.noise_to(ex.z0, t, eps)
            total += residual_loss_and_grads(model, z_t, t, ex.jxy, ex.edges,
                                             ex.c_text, eps, grad_scale=None)
            count += 1
    return total / count


def default_probes(schedule: NoiseSchedule, n: int = 8,
                   seed0: int = 9000) -> list[tuple[int, int]]:
    ts = np.linspace(1, schedule.n_steps, n).round().astype(int)
    return [(int(t), seed0 + i) for i, t in enumerate(ts)]


# -- sampling ----------------------------------------------------------------

def sample_latents(model: Denoiser, schedule: NoiseSchedule,
                   jxy: np.ndarray, edges, c_text: np.ndarray,
                   rng: np.random.Generator, guidance: float = 3.0,
                   method: str = "ddpm",
                   ddim_steps: int | None = None) -> np.ndarray:
    """Draw z0 by reverse diffusion under classifier-free guidance.

    guidance == 1 evaluates the conditional branch only. `ddpm` is ancestral
    sampling over all T steps; `ddim` is the deterministic rule over
    `ddim_steps` evenly spaced times (all T when unset).
    """
    n = jxy.shape[0]
    d = model.config.d_latent
    z = rng.standard_normal((n, d))

    def predict(z_t, t):
        eps_c, _ = model.forward(z_t, t, jxy, edges, c_text)
        if guidance == 1.0:
            return eps_c
        eps_u, _ = model.forward(z_t, t, jxy, edges, None)
        return guidance_mix(eps_u, eps_c, guidance)

    ab = schedule.alpha_bar
    if method == "ddpm":
        for t in range(schedule.n_steps, 0, -1):
            eps_hat = predict(z, t)
            alpha = schedule.alphas[t]
            beta = schedule.betas[t]
            mean = (z - beta / np.sqrt(1.0 - ab[t]) * eps_hat) / np.sqrt(alpha)
            if t > 1:
                var = beta * (1.0 - ab[t - 1]) / (1.0 - ab[t])
                z = mean + np.sqrt(var) * rng.standard_normal(z.shape)
            else:
                z = mean
        return z
    if method == "ddim":
        k = ddim_steps or schedule.n_steps
        times = np.unique(np.linspace(0, schedule.n_steps, k + 1).round()
                          .astype(int))[::-1]
        for t_cur, t_next in zip(times[:-1], times[1:]):
            eps_hat = predict(z, int(t_cur))
            x0 = (z - np.sqrt(1.0 - ab[t_cur]) * eps_hat) / np.sqrt(ab[t_cur])
            z = np.sqrt(ab[t_next]) * x0 + np.sqrt(1.0 - ab[t_next]) * eps_hat
        return z
    raise ValueError(f"unknown sampling method {method!r}")


def sample_skeleton(model: Denoiser, vae_model, schedule: NoiseSchedule,
                    stroke: StrokeGraph2D, c_text: np.ndarray,
                    rng: np.random.Generator, guidance: float = 3.0,
                    method: str = "ddpm",
                    ddim_steps: int | None = None) -> SkeletonGraph:
    """Full pipeline step: stroke + text embedding -> decoded 3D skeleton."""
    z0 = sample_latents(model, schedule, stroke.joints2d, stroke.edges,
                        c_text, rng, guidance, method, ddim_steps)
    joints, _ = vae_model.decode(z0, stroke.edges)
    return SkeletonGraph(joints, stroke.edges)
