"""End-to-end CLI behavior on the toy fixture: subcommand plumbing, exit
codes, determinism and the external score-ingestion path."""

import json

import numpy as np
import pytest

from melforge import cli, corpus, dsp


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tiny_cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(
        json.dumps(
            {
                "model": {
                    "width_scale": 0.03125,
                    "attention_dim": 16,
                    "embed_dim": 16,
                    "ssrn_width": 16,
                },
                "train": {
                    "batch_size": 4,
                    "max_iters": 3,
                    "checkpoint_every": 3,
                    "log_every": 1,
                    "disc_channels": 8,
                    "seed": 1,
                },
                "protocol": {"n_enroll": 2, "n_target": 4, "n_synth": 4},
            }
        )
    )
    return p


@pytest.fixture(scope="module")
def prepared_dir(toy_corpus, tmp_path_factory, tiny_cfg_file):
    out = tmp_path_factory.mktemp("prep")
    code = run_cli("prepare", toy_corpus, out, "--scheme", "all", "--config", tiny_cfg_file)
    assert code == 0
    return out


def test_prepare_outputs_and_idempotence(prepared_dir, toy_corpus, tiny_cfg_file):
    report = json.loads((prepared_dir / "split_report.json").read_text())
    assert report["train_utterances"] == 20
    assert report["test_speakers"] == 2
    assert (prepared_dir / "train.jsonl").exists()
    blobs = {
        p.name: p.read_bytes() for p in (prepared_dir / "features").glob("*.mfrg")
    }
    assert run_cli(
        "prepare", toy_corpus, prepared_dir, "--scheme", "all", "--config", tiny_cfg_file
    ) == 0
    for p in (prepared_dir / "features").glob("*.mfrg"):
        assert p.read_bytes() == blobs[p.name]


def test_prepare_missing_corpus_exit_2(tmp_path):
    assert run_cli("prepare", tmp_path / "nope", tmp_path / "out") == 2


@pytest.fixture(scope="module")
def trained_dir(prepared_dir, toy_corpus, tmp_path_factory, tiny_cfg_file):
    out = tmp_path_factory.mktemp("ckpt")
    cfg_path = prepared_dir / "config.json"  # resolved config incl. refs
    merged = json.loads(cfg_path.read_text())
    tiny = json.loads(tiny_cfg_file.read_text())
    merged["model"].update(tiny["model"])
    merged["train"].update(tiny["train"])
    cfg2 = out / "cfg.json"
    cfg2.write_text(json.dumps(merged))
    for m in ("t2m", "ssrn"):
        code = run_cli(
            "train", m,
            "--manifest", prepared_dir / "train.jsonl",
            "--embeddings", toy_corpus / "embeddings.mfem",
            "--out", out, "--config", cfg2,
        )
        assert code == 0
        assert (out / f"{m}_latest.mfck").exists()
        log_lines = (out / f"{m}_log.jsonl").read_text().splitlines()
        assert all(json.loads(l) for l in log_lines)
    return out


def test_synth_and_determinism(trained_dir, toy_corpus, tmp_path):
    text = tmp_path / "t.txt"
    text.write_text("ab c d.")
    args = [
        "synth",
        "--text", text,
        "--speaker", "spk0",
        "--embeddings", toy_corpus / "embeddings.mfem",
        "--t2m", trained_dir / "t2m_latest.mfck",
        "--ssrn", trained_dir / "ssrn_latest.mfck",
        "--out", tmp_path / "a.wav",
        "--attention", tmp_path / "att.csv",
        "--max-frames", 30,
    ]
    assert run_cli(*args) == 0
    wave = dsp.read_wav(tmp_path / "a.wav")
    assert wave.sample_rate == 22050
    att = (tmp_path / "att.csv").read_text().splitlines()
    assert att[0] == "frame,position"
    path = [int(l.split(",")[1]) for l in att[1:]]
    steps = np.diff([0] + path)
    assert np.all((steps >= 0) & (steps <= 2))
    sidecar = json.loads((tmp_path / "a.wav.json").read_text())
    assert "feature_hash" in sidecar
    # bit-identical on rerun with the same seed
    args[args.index(tmp_path / "a.wav")] = tmp_path / "b.wav"
    assert run_cli(*args) == 0
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_synth_hash_mismatch_exit_4(trained_dir, toy_corpus, tmp_path, prepared_dir):
    from melforge import train as tr

    ck = tr.load_checkpoint(trained_dir / "ssrn_latest.mfck")
    ck.feature_hash = "f" * 16
    tr.save_checkpoint(ck, tmp_path / "bad.mfck")
    text = tmp_path / "t.txt"
    text.write_text("ab.")
    code = run_cli(
        "synth", "--text", text, "--speaker", "spk0",
        "--embeddings", toy_corpus / "embeddings.mfem",
        "--t2m", trained_dir / "t2m_latest.mfck",
        "--ssrn", tmp_path / "bad.mfck",
        "--out", tmp_path / "x.wav",
    )
    assert code == 4


def test_eval_sv_builtin_and_ingested_match(prepared_dir, toy_corpus, tmp_path, tiny_cfg_file):
    pdir = tmp_path / "proto"
    common = [
        "eval-sv", "--protocol-dir", pdir,
        "--test-manifest", prepared_dir / "test.jsonl",
        "--synth-manifest", prepared_dir / "test.jsonl",
        "--config", tiny_cfg_file,
    ]
    assert run_cli(*common, "--embeddings", toy_corpus / "embeddings.mfem") == 0
    report1 = json.loads((pdir / "report.json").read_text())
    curve1 = (pdir / "curve.csv").read_text()
    assert (pdir / "trials.csv").exists()
    assert (pdir / "curve.gp").exists()
    # re-evaluate by ingesting the emitted scores: identical numbers
    scores_csv = pdir / "scores.csv"
    ingested = tmp_path / "proto2"
    ingested.mkdir()
    for name in ("trials.csv", "enrollment.json"):
        (ingested / name).write_bytes((pdir / name).read_bytes())
    assert run_cli(
        "eval-sv", "--protocol-dir", ingested, "--scores", scores_csv,
        "--config", tiny_cfg_file,
    ) == 0
    report2 = json.loads((ingested / "report.json").read_text())
    assert report1["eer"] == report2["eer"]
    assert report1["threshold"] == report2["threshold"]
    assert report1["spoof_rate"] == report2["spoof_rate"]
    assert curve1 == (ingested / "curve.csv").read_text()


def test_eval_sv_missing_scores_exit_5(prepared_dir, tmp_path, tiny_cfg_file, toy_corpus):
    pdir = tmp_path / "proto"
    assert run_cli(
        "eval-sv", "--protocol-dir", pdir,
        "--test-manifest", prepared_dir / "test.jsonl",
        "--synth-manifest", prepared_dir / "test.jsonl",
        "--config", tiny_cfg_file,
        "--embeddings", toy_corpus / "embeddings.mfem",
    ) == 0
    # drop half the scores
    lines = (pdir / "scores.csv").read_text().splitlines()
    (tmp_path / "partial.csv").write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    code = run_cli(
        "eval-sv", "--protocol-dir", pdir, "--scores", tmp_path / "partial.csv",
        "--config", tiny_cfg_file,
    )
    assert code == 5


def test_eval_antispoof_gmm_backend(toy_corpus, tmp_path):
    out = tmp_path / "anti"
    code = run_cli(
        "eval-antispoof",
        "--real", toy_corpus / "spk0",
        "--synth", toy_corpus / "spk1",
        "--backend", "gmm-lfcc",
        "--gmm-components", 2,
        "--gmm-iters", 5,
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["eer"] <= 1.0
    assert (out / "antispoof_scores.csv").exists()


def test_eval_antispoof_identical_sets_eer_half(toy_corpus, tmp_path):
    out = tmp_path / "anti2"
    code = run_cli(
        "eval-antispoof",
        "--real", toy_corpus / "spk0",
        "--synth", toy_corpus / "spk0",
        "--backend", "gmm-lfcc",
        "--gmm-components", 2,
        "--gmm-iters", 4,
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["eer"] == pytest.approx(0.5, abs=0.05)


def test_eval_antispoof_discriminator_backend(trained_dir, toy_corpus, tmp_path):
    out = tmp_path / "anti3"
    code = run_cli(
        "eval-antispoof",
        "--real", toy_corpus / "spk0",
        "--synth", toy_corpus / "spk1",
        "--backend", f"discriminator:{trained_dir / 't2m_latest.mfck'}:v1",
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["backend"].endswith(":v1")
    # v2 needs parameters the base checkpoint lacks -> compatibility exit
    code = run_cli(
        "eval-antispoof",
        "--real", toy_corpus / "spk0",
        "--synth", toy_corpus / "spk1",
        "--backend", f"discriminator:{trained_dir / 't2m_latest.mfck'}:v2",
        "--out", tmp_path / "anti4",
    )
    assert code == 4


def test_fixture_subcommand(tmp_path):
    assert run_cli("fixture", tmp_path / "toy", "--seed", "5") == 0
    man = corpus.build_manifest(tmp_path / "toy")
    assert len(man) == 20


def test_env_seed_override(monkeypatch):
    from melforge.config import load_config

    monkeypatch.setenv("MELFORGE_SEED", "777")
    cfg = load_config()
    assert cfg.train.seed == 777
    assert cfg.protocol.seed == 777
    monkeypatch.delenv("MELFORGE_SEED")
    assert load_config().train.seed == 0
