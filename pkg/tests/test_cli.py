import json

import numpy as np
import pytest

from skelgen import checkpoint as ckpt
from skelgen import cli
from skelgen.diffusion import Denoiser, DiTConfig, NoiseSchedule
from skelgen.graphs import (DatasetRecord, loads_skeleton, loads_stroke,
                            normalize, read_manifest, skeleton_to_json,
                            write_manifest)
from skelgen.preference import PreferenceCondition, write_conditions
from skelgen.synth import random_tree_skeleton
from skelgen.vae import GraphVAE, VAEConfig

TINY = DiTConfig(width=8, n_blocks=1, n_heads=2, d_latent=3, d_text=5,
                 n_text_tokens=2, init_seed=4)
TINY_VAE = VAEConfig(width=8, n_heads=2, d_latent=3, init_seed=9)

CONFIG = {
    "vae": {"width": 8, "n_heads": 2, "d_latent": 3, "kl_beta": 1e-2,
            "init_seed": 9},
    "vae_train": {"steps": 60, "lr": 1e-2, "batch_size": 4, "seed": 0},
    "dit": {"width": 8, "n_blocks": 1, "n_heads": 2, "d_latent": 3,
            "d_text": 5, "n_text_tokens": 2, "init_seed": 4},
    "dit_train": {"n_steps_schedule": 6, "steps": 20, "lr": 1e-3,
                  "batch_size": 4, "seed": 0},
    "text": {"kind": "hash", "d_text": 5},
    "sample": {"guidance": 2.0},
    "dpo": {"dpo_beta": 2.0, "margin": 0.0, "steps": 3, "lr": 1e-6},
    "filter": {"categories": None},
}

STROKE_DOC = {
    "joints2d": [[0.0, 0.8], [0.0, 0.4], [0.0, 0.0], [-0.4, -0.6],
                 [0.4, -0.6]],
    "edges": [[0, 1], [1, 2], [2, 3], [2, 4]],
    "view": "front",
}


def make_records(seed=0, n=3):
    r = np.random.default_rng(seed)
    out = []
    for i in range(n):
        graph = normalize(random_tree_skeleton(r, 5))
        graph = graph.with_joints(graph.joints * 0.8)
        out.append(DatasetRecord(graph, f"a creature {i}", ("T-pose",),
                                 f"rec{i}"))
    return out


def perturbed(model, seed):
    r = np.random.default_rng(seed)
    for _, p in model.named_params():
        p.value += r.normal(0.0, 0.05, p.value.shape)
    return model


@pytest.fixture()
def workdir(tmp_path):
    write_manifest(make_records(), tmp_path / "records.jsonl")
    (tmp_path / "config.json").write_text(json.dumps(CONFIG))
    (tmp_path / "stroke.json").write_text(json.dumps(STROKE_DOC))
    return tmp_path


@pytest.fixture(scope="module")
def pipeline_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "pipeline.ckpt"
    ckpt.save_pipeline(path, perturbed(GraphVAE(TINY_VAE), 5),
                       perturbed(Denoiser(TINY), 6), NoiseSchedule(6),
                       defaults={"guidance": 2.0})
    return path


class TestConfig:
    def test_unknown_section_rejected(self, workdir, capsys):
        (workdir / "bad.json").write_text(json.dumps({"vea": {}}))
        code = cli.main(["filter", "--in", str(workdir / "records.jsonl"),
                         "--out", str(workdir / "f.jsonl"),
                         "--config", str(workdir / "bad.json")])
        assert code == 2
        assert "vea" in capsys.readouterr().err

    def test_unknown_section_key_rejected(self, workdir, capsys):
        doc = {"filter": {"min_joints": 1, "max_jionts": 9}}
        (workdir / "bad.json").write_text(json.dumps(doc))
        code = cli.main(["filter", "--in", str(workdir / "records.jsonl"),
                         "--out", str(workdir / "f.jsonl"),
                         "--config", str(workdir / "bad.json")])
        assert code == 2
        assert "max_jionts" in capsys.readouterr().err

    def test_unsupported_version_rejected(self, workdir, capsys):
        (workdir / "bad.json").write_text(json.dumps({"config_version": 2}))
        code = cli.main(["filter", "--in", str(workdir / "records.jsonl"),
                         "--out", str(workdir / "f.jsonl"),
                         "--config", str(workdir / "bad.json")])
        assert code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            cli.main(["frobnicate"])
        assert err.value.code == 2


class TestFilterAlignSimulate:
    def test_filter_writes_output_and_manifest(self, workdir, capsys):
        out = workdir / "filtered.jsonl"
        code = cli.main(["filter", "--in", str(workdir / "records.jsonl"),
                         "--out", str(out),
                         "--config", str(workdir / "config.json")])
        assert code == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["kept"] == 3
        assert len(read_manifest(out)) == 3
        run = json.loads((workdir / "filtered.jsonl.run.json").read_text())
        assert run["command"] == "filter"
        assert run["inputs"]["in"] == ckpt.sha256_file(
            workdir / "records.jsonl")

    def test_repeat_runs_are_byte_identical(self, workdir, capsys):
        argv = ["filter", "--in", str(workdir / "records.jsonl"),
                "--config", str(workdir / "config.json")]
        assert cli.main(argv + ["--out", str(workdir / "a.jsonl")]) == 0
        assert cli.main(argv + ["--out", str(workdir / "b.jsonl")]) == 0
        capsys.readouterr()
        assert (workdir / "a.jsonl").read_bytes() == \
            (workdir / "b.jsonl").read_bytes()
        assert (workdir / "a.jsonl.run.json").read_bytes() == \
            (workdir / "b.jsonl.run.json").read_bytes()

    def test_align_reports_methods(self, workdir, capsys):
        out = workdir / "aligned.jsonl"
        code = cli.main(["align", "--in", str(workdir / "records.jsonl"),
                         "--out", str(out)])
        assert code == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["aligned"] + stats["failed"] == stats["input"] == 3
        assert sum(stats["methods"].values()) == stats["aligned"]
        assert len(read_manifest(out)) == stats["aligned"]

    def test_simulate_strokes_deterministic(self, workdir, capsys):
        argv = ["simulate-strokes", "--in", str(workdir / "records.jsonl"),
                "--config", str(workdir / "config.json"), "--seed", "3"]
        assert cli.main(argv + ["--out", str(workdir / "s1.jsonl")]) == 0
        assert cli.main(argv + ["--out", str(workdir / "s2.jsonl")]) == 0
        capsys.readouterr()
        text = (workdir / "s1.jsonl").read_text()
        assert text == (workdir / "s2.jsonl").read_text()
        strokes = [loads_stroke(line) for line in text.splitlines()]
        assert [s.text for s in strokes] == [r.caption for r in make_records()]


class TestTrainingChain:
    def test_vae_dit_sample_chain(self, workdir, capsys):
        cfg = str(workdir / "config.json")
        vae_out = workdir / "vae.ckpt"
        pipe_out = workdir / "pipeline.ckpt"

        code = cli.main(["train-dit", "--data",
                         str(workdir / "records.jsonl"), "--vae",
                         str(vae_out), "--out", str(pipe_out),
                         "--config", cfg])
        assert code == 2
        assert "train-vae" in capsys.readouterr().err

        code = cli.main(["train-vae", "--data",
                         str(workdir / "records.jsonl"),
                         "--out", str(vae_out), "--config", cfg])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["steps"] == 60
        assert vae_out.exists()
        assert (workdir / "vae.ckpt.loss.csv").read_text().startswith("step,")
        assert json.loads((workdir / "vae.ckpt.run.json").read_text())[
            "command"] == "train-vae"

        code = cli.main(["train-dit", "--data",
                         str(workdir / "records.jsonl"), "--vae",
                         str(vae_out), "--out", str(pipe_out),
                         "--config", cfg])
        assert code == 0
        capsys.readouterr()
        bundle = ckpt.load_pipeline(pipe_out)
        assert bundle.schedule.n_steps == 6
        assert bundle.defaults == {"guidance": 2.0}

        argv = ["sample", "--ckpt", str(pipe_out), "--stroke",
                str(workdir / "stroke.json"), "--text", "a fox",
                "--seed", "7"]
        assert cli.main(argv) == 0
        first = capsys.readouterr().out
        skeleton = loads_skeleton(first)
        assert skeleton.n_joints == 5
        assert sorted(skeleton.edges) == sorted(
            tuple(e) for e in STROKE_DOC["edges"])
        assert cli.main(argv) == 0
        assert capsys.readouterr().out == first

        out_file = workdir / "sample.json"
        assert cli.main(argv + ["--out", str(out_file)]) == 0
        capsys.readouterr()
        assert loads_skeleton(out_file.read_text()).n_joints == 5
        run = json.loads((workdir / "sample.json.run.json").read_text())
        assert run["seed"] == 7

    def test_mismatched_latent_width_rejected(self, workdir, capsys):
        cfg = json.loads((workdir / "config.json").read_text())
        cfg["dit"]["d_latent"] = 4
        (workdir / "bad.json").write_text(json.dumps(cfg))
        vae_out = workdir / "vae.ckpt"
        assert cli.main(["train-vae", "--data",
                         str(workdir / "records.jsonl"), "--out",
                         str(vae_out),
                         "--config", str(workdir / "config.json")]) == 0
        capsys.readouterr()
        code = cli.main(["train-dit", "--data",
                         str(workdir / "records.jsonl"), "--vae",
                         str(vae_out), "--out", str(workdir / "p.ckpt"),
                         "--config", str(workdir / "bad.json")])
        assert code == 2
        assert "d_latent" in capsys.readouterr().err

    def test_sample_rejects_invalid_stroke(self, workdir, pipeline_ckpt,
                                           capsys):
        bad = dict(STROKE_DOC, edges=[[0, 1], [1, 9]])
        (workdir / "bad_stroke.json").write_text(json.dumps(bad))
        code = cli.main(["sample", "--ckpt", str(pipeline_ckpt), "--stroke",
                         str(workdir / "bad_stroke.json")])
        assert code == 2
        assert "/edges/1" in capsys.readouterr().err

    def test_internal_error_exits_1(self, workdir, capsys, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(cli, "train_vae", boom)
        code = cli.main(["train-vae", "--data",
                         str(workdir / "records.jsonl"),
                         "--out", str(workdir / "v.ckpt"),
                         "--config", str(workdir / "config.json")])
        assert code == 1
        assert "internal error" in capsys.readouterr().err


class TestEvalReport:
    def write_skeletons(self, path, seed, n=3):
        r = np.random.default_rng(seed)
        graphs = [normalize(random_tree_skeleton(r, 5)) for _ in range(n)]
        with open(path, "w", encoding="utf-8") as fh:
            for g in graphs:
                doc = skeleton_to_json(g)
                doc["category"] = "character"
                fh.write(json.dumps(doc) + "\n")
        return graphs

    def test_eval_then_report(self, workdir, capsys):
        self.write_skeletons(workdir / "pred.jsonl", 1)
        self.write_skeletons(workdir / "gt.jsonl", 2)
        out = workdir / "report.json"
        code = cli.main(["eval", "--pred", str(workdir / "pred.jsonl"),
                         "--gt", str(workdir / "gt.jsonl"),
                         "--out", str(out)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["overall"]["n"] == 3
        assert doc["overall"]["cd_j2j"] > 0
        assert "character" in doc["per_category"]

        code = cli.main(["report", str(out)])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("run,scope,cd_j2j")
        assert len(lines) == 3
        assert lines[1].startswith("report,overall,")

    def test_eval_count_mismatch_exits_2(self, workdir, capsys):
        self.write_skeletons(workdir / "pred.jsonl", 1, n=3)
        self.write_skeletons(workdir / "gt.jsonl", 2, n=2)
        code = cli.main(["eval", "--pred", str(workdir / "pred.jsonl"),
                         "--gt", str(workdir / "gt.jsonl")])
        assert code == 2
        assert "mismatch" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A pipeline overfit far enough that samples stay inside the unit
    frame, so proxy scores do not clamp to a tie."""
    from skelgen.diffusion import (DiffusionExample, DiffusionTrainConfig,
                                   train_denoiser)
    from skelgen.graphs import project
    from skelgen.textenc import HashTextEncoder
    from skelgen.vae import VAETrainConfig, train_vae

    r = np.random.default_rng(42)
    graphs = []
    for _ in range(2):
        g = normalize(random_tree_skeleton(r, 5))
        graphs.append(g.with_joints(g.joints * 0.7))
    encoder = HashTextEncoder(TINY.d_text)
    vae, _ = train_vae(graphs,
                       VAEConfig(width=8, n_heads=2, d_latent=3,
                                 kl_beta=1e-2, init_seed=9),
                       VAETrainConfig(steps=1500, lr=1e-2, batch_size=4,
                                      seed=0))
    examples = [DiffusionExample(vae.encode_mean(g),
                                 project(g, "front").joints2d, g.edges,
                                 encoder.embed("tree").vector)
                for g in graphs]
    model, schedule, _ = train_denoiser(
        examples, TINY,
        DiffusionTrainConfig(n_steps_schedule=8, steps=2000, lr=3e-3,
                             batch_size=8, seed=0))
    root = tmp_path_factory.mktemp("pref")
    path = root / "trained.ckpt"
    ckpt.save_pipeline(path, vae, model, schedule,
                       defaults={"guidance": 2.0})
    conds = [PreferenceCondition(project(g, "front"), "tree", f"c{i}")
             for i, g in enumerate(graphs)]
    cond_path = root / "conditions.jsonl"
    write_conditions(cond_path, conds)
    return path, cond_path


class TestPreferenceChain:
    def test_build_pairs_then_finetune(self, tmp_path, trained, capsys):
        ckpt_path, cond_path = trained
        pairs_out = tmp_path / "pairs.jsonl"
        code = cli.main(["build-pairs", "--ckpt", str(ckpt_path),
                         "--conditions", str(cond_path),
                         "--out", str(pairs_out),
                         "--margin", "0.0", "--seed0", "0"])
        assert code == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["conditions"] == 2
        assert stats["pairs"] >= 1
        assert stats["pairs"] + stats["skipped"] == 2

        tuned_out = tmp_path / "tuned.ckpt"
        config = tmp_path / "dpo.json"
        config.write_text(json.dumps({"dpo": CONFIG["dpo"]}))
        code = cli.main(["dpo-finetune", "--ckpt", str(ckpt_path),
                         "--pairs", str(pairs_out),
                         "--conditions", str(cond_path),
                         "--out", str(tuned_out),
                         "--config", str(config)])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["steps"] == 3
        assert "pre_mean_score" in report and "post_mean_score" in report
        assert tuned_out.exists()
        assert (tmp_path / "tuned.ckpt.loss.csv").exists()
        bundle = ckpt.load_pipeline(tuned_out)
        assert bundle.defaults == {"guidance": 2.0}

    def test_missing_checkpoint_exits_2(self, workdir, capsys):
        code = cli.main(["build-pairs", "--ckpt",
                         str(workdir / "nope.ckpt"),
                         "--conditions", str(workdir / "c.jsonl"),
                         "--out", str(workdir / "p.jsonl")])
        assert code == 2
        assert "not found" in capsys.readouterr().err


class TestServe:
    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code = cli.main(["serve", "--ckpt", str(tmp_path / "nope.ckpt")])
        assert code == 2
