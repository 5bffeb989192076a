"""Checkpoint container and run manifests.

Checkpoint layout: an 8-byte magic, a little-endian uint64 header length, a
canonical-JSON header, then the raw tensor payload. The header carries the
format version, a kind tag, a config echo, and per-tensor (shape, dtype,
offset) entries sorted by name; tensors are written C-contiguous
little-endian in that same order. Nothing in the file depends on time or
dict insertion order, so equal inputs produce byte-identical files.

Run manifests are small canonical-JSON documents (config echo, seed, code
version, input hashes) written beside outputs; two runs with equal manifests
must produce byte-identical outputs.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .diffusion import Denoiser, DiTConfig, NoiseSchedule
from .textenc import make_encoder
from .util import canon_json, sha256_bytes
from .vae import GraphVAE, VAEConfig

MAGIC = b"SKGCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed, truncated, or wrong-kind checkpoint file."""


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    config: dict
    state: dict[str, np.ndarray]
    extra: dict
    format_version: int = FORMAT_VERSION


def save_checkpoint(path, kind: str, config: dict,
                    state: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    names = sorted(state)
    tensors = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(state[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tensors.append({"name": name, "shape": list(arr.shape),
                        "dtype": arr.dtype.str, "offset": len(payload)})
        payload.extend(arr.tobytes())
    header = canon_json({"format_version": FORMAT_VERSION, "kind": kind,
                         "config": config, "tensors": tensors,
                         "extra": extra or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    header_len = int.from_bytes(blob[pos:pos + 8], "little")
    pos += 8
    try:
        header = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}")
    payload = blob[pos + header_len:]
    state = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = payload[spec["offset"]:spec["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated tensor {spec['name']!r}")
        state[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
    return Checkpoint(header["kind"], header["config"], state,
                      header.get("extra", {}), header["format_version"])


def _require_kind(ckpt: Checkpoint, kind: str, path) -> None:
    if ckpt.kind != kind:
        raise CheckpointError(
            f"{path}: expected a {kind!r} checkpoint, found {ckpt.kind!r}")


# -- typed wrappers -----------------------------------------------------------

def save_vae(path, model: GraphVAE, extra: dict | None = None) -> None:
    save_checkpoint(path, "vae", asdict(model.config), model.state_dict(), extra)


def load_vae(path) -> GraphVAE:
    ckpt = load_checkpoint(path)
    _require_kind(ckpt, "vae", path)
    model = GraphVAE(VAEConfig(**ckpt.config))
    model.load_state_dict(ckpt.state)
    return model


def save_denoiser(path, model: Denoiser, schedule: NoiseSchedule,
                  extra: dict | None = None) -> None:
    merged = dict(extra or {})
    merged["schedule"] = {"n_steps": schedule.n_steps, "kind": schedule.kind}
    save_checkpoint(path, "denoiser", asdict(model.config),
                    model.state_dict(), merged)


def load_denoiser(path) -> tuple[Denoiser, NoiseSchedule]:
    ckpt = load_checkpoint(path)
    _require_kind(ckpt, "denoiser", path)
    model = Denoiser(DiTConfig(**ckpt.config))
    model.load_state_dict(ckpt.state)
    sched = ckpt.extra["schedule"]
    return model, NoiseSchedule(sched["n_steps"], sched["kind"])


@dataclass
class PipelineBundle:
    """Everything generation needs, loaded from one file."""
    vae: GraphVAE
    denoiser: Denoiser
    schedule: NoiseSchedule
    encoder: object
    defaults: dict
    model_version: str = "unversioned"
    encoder_kind: str = "hash"


def save_pipeline(path, vae: GraphVAE, denoiser: Denoiser,
                  schedule: NoiseSchedule, encoder_kind: str = "hash",
                  defaults: dict | None = None) -> None:
    state = {f"vae.{k}": v for k, v in vae.state_dict().items()}
    state.update({f"dit.{k}": v for k, v in denoiser.state_dict().items()})
    config = {
        "vae": asdict(vae.config),
        "dit": asdict(denoiser.config),
        "schedule": {"n_steps": schedule.n_steps, "kind": schedule.kind},
        "text": {"kind": encoder_kind, "d_text": denoiser.config.d_text},
    }
    save_checkpoint(path, "pipeline", config, state,
                    {"defaults": defaults or {}})


def load_pipeline(path) -> PipelineBundle:
    ckpt = load_checkpoint(path)
    _require_kind(ckpt, "pipeline", path)
    vae = GraphVAE(VAEConfig(**ckpt.config["vae"]))
    vae.load_state_dict({k[4:]: v for k, v in ckpt.state.items()
                         if k.startswith("vae.")})
    denoiser = Denoiser(DiTConfig(**ckpt.config["dit"]))
    denoiser.load_state_dict({k[4:]: v for k, v in ckpt.state.items()
                              if k.startswith("dit.")})
    sched = ckpt.config["schedule"]
    text = ckpt.config["text"]
    encoder = make_encoder(text["kind"], text["d_text"])
    version = sha256_bytes(Path(path).read_bytes())[:12]
    return PipelineBundle(vae, denoiser,
                          NoiseSchedule(sched["n_steps"], sched["kind"]),
                          encoder, dict(ckpt.extra.get("defaults", {})),
                          version, text["kind"])


# -- run manifests ------------------------------------------------------------

def code_version() -> str:
    """git describe of the source tree, or 'unknown' outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True,
            text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def run_manifest(command: str, config: dict, seed: int,
                 inputs: dict[str, str] | None = None) -> dict:
    """Everything needed to reproduce a run; intentionally time-free."""
    return {
        "manifest_version": 1,
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": code_version(),
        "kernels_backend": kernels.backend(),
        "inputs": {name: sha256_file(p)
                   for name, p in sorted((inputs or {}).items())},
    }


def write_run_manifest(path, manifest: dict) -> None:
    Path(path).write_text(canon_json(manifest) + "\n", encoding="utf-8")
