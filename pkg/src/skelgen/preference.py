"""Preference finetuning for the skeleton denoiser.

Candidates sampled per condition get scored, high-margin pairs become a
preference dataset, and the model is pushed toward winners against a frozen
reference copy of itself. The scorer is pluggable; the in-repo one is a
geometric proxy (stroke-fit in 2D), an external judge can stand behind the
same interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import expit

from .diffusion import Denoiser, NoiseSchedule, sample_skeleton
from .graphs import (SkeletonGraph, StrokeGraph2D, skeleton_from_json,
                     skeleton_to_json, stroke_from_json, stroke_to_json)
from .metrics import compare_2d
from .textenc import TextEncoder
from .nn import AdamW
from .util import canon_json


@dataclass(frozen=True)
class PreferenceCondition:
    """One generation condition: the stroke, its prompt, and a stable id so
    pair files can refer to it instead of inlining it."""

    stroke: StrokeGraph2D
    text: str = ""
    source_id: str = ""


@dataclass(frozen=True)
class CandidateSample:
    latents: np.ndarray
    skeleton: SkeletonGraph
    seed: int


@dataclass(frozen=True)
class PreferencePair:
    condition: PreferenceCondition
    winner: CandidateSample
    loser: CandidateSample
    s_win: float
    s_lose: float

    def __post_init__(self):
        if not self.s_win > self.s_lose:
            raise ValueError("winner must outscore loser")
        if self.winner.seed == self.loser.seed:
            raise ValueError("winner and loser share a seed")


@dataclass(frozen=True)
class DPOConfig:
    dpo_beta: float = 1000.0
    margin: float = 0.10
    steps: int = 1000
    lr: float = 5e-6
    log_every: int = 100

    def __post_init__(self):
        if self.dpo_beta <= 0.0:
            raise ValueError("dpo_beta must be positive")
        if self.margin < 0.0:
            raise ValueError("margin must be nonnegative")
        if self.steps < 0 or self.lr <= 0.0 or self.log_every < 1:
            raise ValueError("bad steps/lr/log_every")


@runtime_checkable
class Scorer(Protocol):
    def score(self, condition: PreferenceCondition,
              sample: CandidateSample) -> float: ...


class CdProxyScorer:
    """1 - clamp(2D joint chamfer to the conditioning stroke, 0, 1): a cheap
    deterministic stand-in for a learned alignment judge."""

    def score(self, condition: PreferenceCondition,
              sample: CandidateSample) -> float:
        report = compare_2d(sample.skeleton, condition.stroke)
        return 1.0 - float(np.clip(report.cd_j2j, 0.0, 1.0))


def generate_candidates(condition: PreferenceCondition, model: Denoiser,
                        vae_model, schedule: NoiseSchedule,
                        encoder: TextEncoder, k: int = 2,
                        seeds: Sequence[int] | None = None,
                        guidance: float = 3.0, method: str = "ddpm",
                        ddim_steps: int | None = None) -> list[CandidateSample]:
    """k samples for one condition, one per seed, reproducible per seed."""
    if seeds is None:
        seeds = tuple(range(k))
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) != len(set(seeds)):
        raise ValueError(f"candidate seeds must be distinct, got {seeds}")
    c_text = encoder.embed(condition.text).vector
    out = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        skeleton = sample_skeleton(model, vae_model, schedule,
                                   condition.stroke, c_text, rng,
                                   guidance, method, ddim_steps)
        z0 = vae_model.encode_mean(skeleton)
        out.append(CandidateSample(z0, skeleton, seed))
    return out


def build_pairs(conditions: Iterable[PreferenceCondition], model: Denoiser,
                vae_model, schedule: NoiseSchedule, encoder: TextEncoder,
                scorer: Scorer, margin: float = 0.10, seed0: int = 0,
                guidance: float = 3.0, method: str = "ddpm",
                ddim_steps: int | None = None
                ) -> tuple[list[PreferencePair], dict]:
    """Two candidates per condition; emit a pair when the score gap reaches
    the margin, count a skip otherwise."""
    pairs = []
    skipped = 0
    total = 0
    for i, cond in enumerate(conditions):
        total += 1
        cands = generate_candidates(cond, model, vae_model, schedule, encoder,
                                    k=2, seeds=(seed0 + 2 * i, seed0 + 2 * i + 1),
                                    guidance=guidance, method=method,
                                    ddim_steps=ddim_steps)
        scores = [float(scorer.score(cond, c)) for c in cands]
        gap = abs(scores[0] - scores[1])
        if gap < margin or gap == 0.0:
            skipped += 1
            continue
        hi, lo = (0, 1) if scores[0] > scores[1] else (1, 0)
        pairs.append(PreferencePair(cond, cands[hi], cands[lo],
                                    scores[hi], scores[lo]))
    return pairs, {"conditions": total, "pairs": len(pairs), "skipped": skipped}


def dpo_loss(model: Denoiser, ref: Denoiser, pair: PreferencePair,
             c_text: np.ndarray | None, t: int, eps_win: np.ndarray,
             eps_lose: np.ndarray, schedule: NoiseSchedule,
             dpo_beta: float, with_grads: bool = True) -> float:
    """softplus(beta * A) where A is the winner-vs-loser advantage of the
    reference model over the current one in denoising residuals.

    A = (|eps_w - model(zw_t)|^2 - |eps_w - ref(zw_t)|^2)
      - (|eps_l - model(zl_t)|^2 - |eps_l - ref(zl_t)|^2)

    With model == ref the bracket is exactly zero and the loss is ln 2 for
    any beta. Gradients flow only through the live model's two residuals.
    """
    if model.config != ref.config:
        raise ValueError("model and reference architectures differ")
    stroke = pair.condition.stroke
    jxy, edges = stroke.joints2d, stroke.edges
    zw_t = schedule.noise_to(pair.winner.latents, t, eps_win)
    zl_t = schedule.noise_to(pair.loser.latents, t, eps_lose)

    ew_hat, ctx_w = model.forward(zw_t, t, jxy, edges, c_text)
    el_hat, ctx_l = model.forward(zl_t, t, jxy, edges, c_text)
    rw_hat, _ = ref.forward(zw_t, t, jxy, edges, c_text)
    rl_hat, _ = ref.forward(zl_t, t, jxy, edges, c_text)

    dw = ew_hat - eps_win
    dl = el_hat - eps_lose
    lw = float((dw * dw).sum())
    ll = float((dl * dl).sum())
    rw = float(((rw_hat - eps_win) ** 2).sum())
    rl = float(((rl_hat - eps_lose) ** 2).sum())
    advantage = (lw - rw) - (ll - rl)

    if with_grads:
        scale = dpo_beta * float(expit(dpo_beta * advantage))
        model.backward(ctx_w, 2.0 * dw * scale)
        model.backward(ctx_l, 2.0 * dl * (-scale))
    return float(np.logaddexp(0.0, dpo_beta * advantage))


def clone_denoiser(model: Denoiser) -> Denoiser:
    twin = Denoiser(model.config)
    twin.load_state_dict(model.state_dict())
    return twin


def mean_score(conditions: Sequence[PreferenceCondition], model: Denoiser,
               vae_model, schedule: NoiseSchedule, encoder: TextEncoder,
               scorer: Scorer, eval_seed: int = 7000, guidance: float = 3.0,
               method: str = "ddpm", ddim_steps: int | None = None) -> float:
    """Mean scorer value over conditions, one sample each with a fixed
    per-condition seed so before/after comparisons are paired."""
    if not conditions:
        raise ValueError("no conditions to score")
    total = 0.0
    for i, cond in enumerate(conditions):
        cand = generate_candidates(cond, model, vae_model, schedule, encoder,
                                   k=1, seeds=(eval_seed + i,),
                                   guidance=guidance, method=method,
                                   ddim_steps=ddim_steps)[0]
        total += float(scorer.score(cond, cand))
    return total / len(conditions)


def dpo_finetune(model: Denoiser, vae_model, schedule: NoiseSchedule,
                 encoder: TextEncoder, pairs: Sequence[PreferencePair],
                 config: DPOConfig, seed: int = 0,
                 heldout: Sequence[PreferenceCondition] = (),
                 scorer: Scorer | None = None, guidance: float = 3.0,
                 method: str = "ddpm", ddim_steps: int | None = None,
                 eval_seed: int = 7000) -> tuple[Denoiser, dict]:
    """Push the model toward pair winners against a frozen copy of itself.

    Per step the draws are: pair index, timestep, winner noise, loser noise.
    The report carries pre/post mean scorer values on `heldout`, evaluated
    with identical sampling seeds so the comparison is paired.
    """
    if not pairs:
        raise ValueError("preference dataset is empty")
    ref = clone_denoiser(model)
    embeddings = [encoder.embed(p.condition.text).vector for p in pairs]
    opt = AdamW(model.params(), lr=config.lr)
    rng = np.random.default_rng(seed)

    def heldout_mean():
        if not heldout or scorer is None:
            return None
        return mean_score(heldout, model, vae_model, schedule, encoder,
                          scorer, eval_seed, guidance, method, ddim_steps)

    pre = heldout_mean()
    history = []
    for step in range(1, config.steps + 1):
        i = int(rng.integers(0, len(pairs)))
        t = int(rng.integers(1, schedule.n_steps + 1))
        shape = pairs[i].winner.latents.shape
        eps_win = rng.standard_normal(shape)
        eps_lose = rng.standard_normal(pairs[i].loser.latents.shape)
        opt.zero_grad()
        loss = dpo_loss(model, ref, pairs[i], embeddings[i], t,
                        eps_win, eps_lose, schedule, config.dpo_beta)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite preference loss at step {step}")
        opt.step()
        if step % config.log_every == 0 or step == config.steps:
            history.append({"step": step, "loss": loss})
    post = heldout_mean()
    report = {"steps": config.steps, "n_pairs": len(pairs),
              "pre_mean_score": pre, "post_mean_score": post,
              "history": history}
    return model, report


# ---------------------------------------------------------------------------
# Pair files: JSON-Lines, conditions by reference, samples inline.
# ---------------------------------------------------------------------------

def pair_to_json(pair: PreferencePair) -> dict:
    return {
        "condition_ref": pair.condition.source_id,
        "text": pair.condition.text,
        "winner": {"seed": pair.winner.seed,
                   "latents": pair.winner.latents.tolist(),
                   "skeleton": skeleton_to_json(pair.winner.skeleton)},
        "loser": {"seed": pair.loser.seed,
                  "latents": pair.loser.latents.tolist(),
                  "skeleton": skeleton_to_json(pair.loser.skeleton)},
        "s_win": pair.s_win,
        "s_lose": pair.s_lose,
    }


def pair_from_json(doc: dict, conditions_by_id: dict[str, PreferenceCondition]
                   ) -> PreferencePair:
    ref = doc["condition_ref"]
    if ref not in conditions_by_id:
        raise KeyError(f"unknown condition reference {ref!r}")

    def sample(part):
        return CandidateSample(np.asarray(part["latents"], dtype=np.float64),
                               skeleton_from_json(part["skeleton"]),
                               int(part["seed"]))

    return PreferencePair(conditions_by_id[ref], sample(doc["winner"]),
                          sample(doc["loser"]), float(doc["s_win"]),
                          float(doc["s_lose"]))


def write_pairs(path, pairs: Iterable[PreferencePair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(canon_json(pair_to_json(pair)) + "\n")


def read_pairs(path, conditions_by_id: dict[str, PreferenceCondition]
               ) -> list[PreferencePair]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(pair_from_json(json.loads(line), conditions_by_id))
    return out


def condition_to_json(condition: PreferenceCondition) -> dict:
    return {"source_id": condition.source_id,
            "text": condition.text,
            "stroke": stroke_to_json(condition.stroke)}


def condition_from_json(doc: dict) -> PreferenceCondition:
    return PreferenceCondition(stroke_from_json(doc["stroke"]),
                               str(doc.get("text", "")),
                               str(doc.get("source_id", "")))


def write_conditions(path, conditions: Iterable[PreferenceCondition]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cond in conditions:
            fh.write(canon_json(condition_to_json(cond)) + "\n")


def read_conditions(path) -> list[PreferenceCondition]:
    """Load conditions; source_ids must be unique so pair files can refer
    back unambiguously."""
    out = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cond = condition_from_json(json.loads(line))
            if cond.source_id in seen:
                raise ValueError(f"duplicate source_id {cond.source_id!r}")
            seen.add(cond.source_id)
            out.append(cond)
    return out
