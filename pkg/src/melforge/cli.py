"""Command-line orchestration for the full pipeline.

Subcommands: prepare, train, synth, eval-sv, eval-antispoof, fixture.
Exit codes are a stable contract: 0 success, 2 corpus/input problems,
3 training abort, 4 checkpoint/config compatibility, 5 protocol mismatch.
Every subcommand is deterministic given (inputs, config, seed); the
resolved configuration is echoed to stderr and its feature hash embedded
in all outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus, dsp, fixture, model, textproc, train
from . import eval as ev
from .autodiff import Tensor
from .config import RunConfig, feature_hash, load_config
from .errors import (
    CompatibilityError,
    CorpusError,
    FormatError,
    MelforgeError,
    ProtocolError,
    TrainingAborted,
)

EXIT_CODES = {
    CorpusError: 2,
    FormatError: 2,
    TrainingAborted: 3,
    CompatibilityError: 4,
    ProtocolError: 5,
}


def _echo_config(cfg: RunConfig) -> None:
    print(
        json.dumps({"resolved_config": cfg.to_dict(), "feature_hash": feature_hash(cfg.dsp)}),
        file=sys.stderr,
    )


def _load_cfg(args) -> RunConfig:
    overrides: dict = {"train": {}, "protocol": {}}
    if getattr(args, "seed", None) is not None:
        overrides["train"]["seed"] = args.seed
        overrides["protocol"]["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["train"]["max_iters"] = args.steps
    cfg = load_config(getattr(args, "config", None), overrides)
    _echo_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = corpus.build_manifest(args.corpus_root)
    scheme = corpus.SplitScheme.named(args.scheme, cfg.protocol.seed)
    train_man, test_man = corpus.make_split(manifest, scheme)
    ref_lin, ref_mel = corpus.corpus_reference_levels(train_man, cfg.dsp)
    fcfg = cfg.dsp.with_refs(ref_lin, ref_mel)
    train_feat = corpus.precompute_features(train_man, fcfg, out / "features", jobs=args.jobs)
    test_feat = corpus.precompute_features(test_man, fcfg, out / "features", jobs=args.jobs)
    corpus.save_manifest(train_feat, out / "train.jsonl")
    corpus.save_manifest(test_feat, out / "test.jsonl")
    report = {
        "scheme": scheme.name,
        "train_speakers": len(train_feat.speakers()),
        "test_speakers": len(test_feat.speakers()),
        "train_utterances": len(train_feat),
        "test_utterances": len(test_feat),
        "ref_lin": ref_lin,
        "ref_mel": ref_mel,
        "feature_hash": feature_hash(fcfg),
    }
    (out / "split_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "config.json").write_text(
        json.dumps(replace(cfg, dsp=fcfg).to_dict(), indent=2, sort_keys=True)
    )
    print(
        f"prepared {report['train_utterances']} train / {report['test_utterances']} test"
        f" utterances ({report['train_speakers']} train / {report['test_speakers']} test"
        f" speakers, scheme {scheme.name})"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = corpus.load_manifest(args.manifest)
    store = corpus.load_embeddings(args.embeddings)
    samples = train.load_training_samples(manifest, store)
    resume = None
    if args.resume:
        resume = train.load_checkpoint(
            args.resume, expect_hash=feature_hash(cfg.dsp), force=args.force
        )
    loop = train.train_t2m if args.model == "t2m" else train.train_ssrn
    log_path = out / f"{args.model}_log.jsonl"
    last = None
    for ckpt in loop(samples, cfg, log_path=log_path, resume=resume):
        path = out / f"{args.model}_{ckpt.iteration:07d}.mfck"
        train.save_checkpoint(ckpt, path)
        last = path
        print(f"checkpoint: {path}")
    if last is not None:
        latest = out / f"{args.model}_latest.mfck"
        latest.write_bytes(last.read_bytes())
        print(f"latest: {latest}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _params_from(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


def cmd_synth(args) -> int:
    t2m_ck = train.load_checkpoint(args.t2m)
    ssrn_ck = train.load_checkpoint(args.ssrn)
    if t2m_ck.feature_hash != ssrn_ck.feature_hash and not args.force:
        raise CompatibilityError(
            f"checkpoint feature hashes differ: {t2m_ck.feature_hash} vs"
            f" {ssrn_ck.feature_hash} (use --force to override)"
        )
    run_cfg = RunConfig.from_dict(t2m_ck.config)
    if args.config:
        user_cfg = load_config(args.config)
        if feature_hash(user_cfg.dsp) != t2m_ck.feature_hash and not args.force:
            raise CompatibilityError(
                "config feature hash does not match the checkpoint"
                " (use --force to override)"
            )
        run_cfg = user_cfg
    _echo_config(run_cfg)
    seed = run_cfg.train.seed
    vocab = textproc.CharVocab(t2m_ck.vocab)
    raw = Path(args.text).read_text(encoding="utf-8")
    text = textproc.normalize_text(raw, vocab)
    seq = textproc.encode(text, vocab)
    store = corpus.load_embeddings(args.embeddings)
    if args.speaker not in store:
        raise CorpusError(f"speaker {args.speaker!r} not in embedding store")
    spk = store[args.speaker]
    mcfg = model.ModelConfig.from_dict(run_cfg.model.to_dict())
    dmel, att, path = model.t2m_generate(
        seq.indices,
        spk,
        _params_from(t2m_ck.params),
        mcfg,
        max_frames=args.max_frames,
    )
    lin = model.ssrn_forward(dmel, _params_from(ssrn_ck.params), mcfg).data
    mag = dsp.denormalize_db(lin, run_cfg.dsp.ref_lin, run_cfg.dsp.gl_sharpen)
    wave = dsp.griffin_lim(
        mag,
        iters=run_cfg.dsp.gl_iters,
        win=run_cfg.dsp.win,
        hop=run_cfg.dsp.hop,
        sample_rate=run_cfg.dsp.sample_rate,
        seed=seed,
    )
    dsp.write_wav(wave, args.out)
    sidecar = {
        "feature_hash": t2m_ck.feature_hash,
        "seed": seed,
        "text": text,
        "speaker": args.speaker,
        "frames": int(dmel.shape[1]),
        "attention_path": [int(p) for p in path],
    }
    Path(str(args.out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    if args.attention:
        with open(args.attention, "w", encoding="utf-8") as f:
            f.write("frame,position\n")
            for i, p in enumerate(path):
                f.write(f"{i},{p}\n")
    print(f"synthesized {dmel.shape[1]} frames -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval-sv
# ---------------------------------------------------------------------------


def cmd_eval_sv(args) -> int:
    cfg = _load_cfg(args)
    pdir = Path(args.protocol_dir)
    pdir.mkdir(parents=True, exist_ok=True)
    trials_path = pdir / "trials.csv"
    enroll_path = pdir / "enrollment.json"
    if trials_path.exists() and enroll_path.exists():
        trials = ev.read_trial_csv(trials_path)
        enrollment = json.loads(enroll_path.read_text())
    else:
        if not (args.test_manifest and args.synth_manifest):
            raise ProtocolError(
                "no protocol in directory; provide --test-manifest and --synth-manifest"
                " to build one"
            )
        test_man = corpus.load_manifest(args.test_manifest)
        synth_man = corpus.load_manifest(args.synth_manifest)
        enrollment, trials = ev.build_protocol(test_man, synth_man, cfg.protocol)
        ev.write_trial_csv(trials, trials_path)
        enroll_path.write_text(json.dumps(enrollment, indent=2, sort_keys=True))
    if args.scores:
        score_map = ev.read_score_csv(args.scores)
        missing = [t.trial_id for t in trials if t.trial_id not in score_map]
        if missing:
            raise ProtocolError(
                f"score CSV missing {len(missing)} trials: " + ", ".join(missing[:10])
            )
        scores = np.array([score_map[t.trial_id] for t in trials])
    elif args.embeddings:
        store = corpus.load_embeddings(args.embeddings)
        models = {}
        for spk, utts in enrollment.items():
            missing = [u for u in utts if u not in store]
            if missing:
                raise ProtocolError(f"missing enrollment embeddings: {missing}")
            models[spk] = ev.enroll([store[u].vector for u in utts])
        scores = ev.score_trials(models, trials, store)
    else:
        raise ProtocolError("provide either --embeddings or --scores")
    ev.write_score_csv(trials, scores, pdir / "scores.csv")
    target = scores[[t.source == "real" and t.is_target for t in trials]]
    nontarget = scores[[t.source == "real" and not t.is_target for t in trials]]
    synth = scores[[t.source == "synthetic" for t in trials]]
    eer, threshold = ev.compute_eer(target, nontarget)
    sr = ev.spoof_rate(synth, threshold)
    curve = ev.sr_frr_curve(target, synth, nontarget)
    ev.write_curve_csv(curve, pdir / "curve.csv")
    (pdir / "curve.gp").write_text(
        "set datafile separator ','\n"
        "set xlabel 'Spoof rate'\nset ylabel 'False rejection rate'\n"
        "plot 'curve.csv' every ::1 using 2:3 with lines title 'SR vs FRR'\n"
    )
    report = {
        "eer": eer,
        "threshold": threshold,
        "spoof_rate": sr,
        "n_target": int(target.size),
        "n_nontarget": int(nontarget.size),
        "n_synthetic": int(synth.size),
        "feature_hash": feature_hash(cfg.dsp),
    }
    (pdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval-antispoof
# ---------------------------------------------------------------------------


def _wav_list(path_or_dir) -> list[Path]:
    p = Path(path_or_dir)
    if p.is_dir():
        files = sorted(p.rglob("*.wav"))
    else:
        files = [p]
    if not files:
        raise CorpusError(f"no wav files under {p}")
    return files


def _lfcc_backend(real_files, synth_files, args):
    def feats(files):
        per_utt = []
        for f in files:
            wave = dsp.read_wav(f)
            per_utt.append(dsp.lfcc(wave).coeffs.T.astype(np.float64))  # (T, D)
        return per_utt

    real_feats, synth_feats = feats(real_files), feats(synth_files)
    gmm_real, _ = ev.gmm_fit_em(
        np.vstack(real_feats), args.gmm_components, iters=args.gmm_iters, seed=args.seed or 0
    )
    gmm_synth, _ = ev.gmm_fit_em(
        np.vstack(synth_feats), args.gmm_components, iters=args.gmm_iters, seed=args.seed or 0
    )
    real_scores = [ev.antispoof_score(x, gmm_real, gmm_synth) for x in real_feats]
    synth_scores = [ev.antispoof_score(x, gmm_real, gmm_synth) for x in synth_feats]
    return real_scores, synth_scores


def _discriminator_backend(real_files, synth_files, spec_str):
    parts = spec_str.split(":")
    if len(parts) != 3 or parts[0] != "discriminator":
        raise CorpusError(
            f"bad backend {spec_str!r}; expected discriminator:CKPT:VARIANT"
        )
    _, ckpt_path, variant = parts
    ck = train.load_checkpoint(ckpt_path)
    run_cfg = RunConfig.from_dict(ck.config)
    mcfg = run_cfg.model
    in_channels = mcfg.n_mels if ck.model_id == "t2m" else mcfg.n_bins
    dcfg = model.DiscriminatorConfig(
        in_channels=in_channels, channels=run_cfg.train.disc_channels, variant=variant
    )
    params = _params_from(ck.disc_params)
    needed = set(model.init_discriminator_params(dcfg, np.random.default_rng(0)))
    missing = needed - set(params)
    if missing:
        raise CompatibilityError(
            f"checkpoint lacks parameters for variant {variant!r}: {sorted(missing)}"
            " (train with train.disc_variant set)"
        )

    def score(path) -> float:
        wave = dsp.read_wav(path)
        if wave.sample_rate != run_cfg.dsp.sample_rate:
            wave = dsp.resample(wave, run_cfg.dsp.sample_rate)
        lin, _, dmel = dsp.wave_to_features(wave, run_cfg.dsp)
        spec = dmel.values if ck.model_id == "t2m" else lin.values
        return float(model.discriminator_forward(spec, dcfg, params).data)

    return [score(f) for f in real_files], [score(f) for f in synth_files]


def cmd_eval_antispoof(args) -> int:
    cfg = _load_cfg(args)
    real_files = _wav_list(args.real)
    synth_files = _wav_list(args.synth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.backend == "gmm-lfcc":
        real_scores, synth_scores = _lfcc_backend(real_files, synth_files, args)
    elif args.backend.startswith("discriminator:"):
        real_scores, synth_scores = _discriminator_backend(
            real_files, synth_files, args.backend
        )
    else:
        raise CorpusError(f"unknown backend {args.backend!r}")
    eer = ev.antispoof_eer(real_scores, synth_scores)
    with open(out / "antispoof_scores.csv", "w", encoding="utf-8") as f:
        f.write("file,source,score\n")
        for files, scores, src in (
            (real_files, real_scores, "real"),
            (synth_files, synth_scores, "synthetic"),
        ):
            for p, s in zip(files, scores):
                f.write(f"{p},{src},{s:.10g}\n")
    report = {
        "backend": args.backend,
        "eer": eer,
        "n_real": len(real_files),
        "n_synthetic": len(synth_files),
        "feature_hash": feature_hash(cfg.dsp),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# fixture
# ---------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    root = fixture.write_fixture_corpus(args.out, seed=args.seed or 0)
    print(f"fixture corpus written to {root}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="melforge",
        description="Adversarial TTS pipeline and speaker-verification spoofing evaluation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prepare", help="build manifests, splits and feature caches")
    prep.add_argument("corpus_root")
    prep.add_argument("out")
    prep.add_argument("--scheme", default="s3", choices=sorted(corpus.SPLIT_SCHEMES))
    prep.add_argument("--seed", type=int)
    prep.add_argument("--config")
    prep.add_argument("--jobs", type=int, default=1)
    prep.set_defaults(func=cmd_prepare)

    tr = sub.add_parser("train", help="adversarial training of t2m or ssrn")
    tr.add_argument("model", choices=("t2m", "ssrn"))
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--embeddings", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--steps", type=int)
    tr.add_argument("--resume")
    tr.add_argument("--force", action="store_true")
    tr.set_defaults(func=cmd_train)

    sy = sub.add_parser("synth", help="synthesize speech from text")
    sy.add_argument("--text", required=True, help="UTF-8 text file")
    sy.add_argument("--speaker", required=True, help="key into the embedding store")
    sy.add_argument("--embeddings", required=True)
    sy.add_argument("--t2m", required=True)
    sy.add_argument("--ssrn", required=True)
    sy.add_argument("--out", required=True)
    sy.add_argument("--attention", help="write the attention path CSV here")
    sy.add_argument("--max-frames", type=int, default=400)
    sy.add_argument("--config")
    sy.add_argument("--force", action="store_true")
    sy.set_defaults(func=cmd_synth)

    es = sub.add_parser("eval-sv", help="speaker-verification spoofing evaluation")
    es.add_argument("--protocol-dir", required=True)
    es.add_argument("--test-manifest")
    es.add_argument("--synth-manifest")
    es.add_argument("--embeddings")
    es.add_argument("--scores", help="ingest an external score CSV instead of scoring")
    es.add_argument("--config")
    es.add_argument("--seed", type=int)
    es.set_defaults(func=cmd_eval_sv)

    ea = sub.add_parser("eval-antispoof", help="real-vs-synthetic classifier EER")
    ea.add_argument("--real", required=True, help="directory of real wavs")
    ea.add_argument("--synth", required=True, help="directory of synthetic wavs")
    ea.add_argument(
        "--backend", default="gmm-lfcc", help="gmm-lfcc or discriminator:CKPT:VARIANT"
    )
    ea.add_argument("--out", required=True)
    ea.add_argument("--gmm-components", type=int, default=64)
    ea.add_argument("--gmm-iters", type=int, default=20)
    ea.add_argument("--config")
    ea.add_argument("--seed", type=int)
    ea.set_defaults(func=cmd_eval_antispoof)

    fx = sub.add_parser("fixture", help="write the bundled toy corpus")
    fx.add_argument("out")
    fx.add_argument("--seed", type=int)
    fx.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MelforgeError as e:
        print(f"error: {e}", file=sys.stderr)
        for etype, code in EXIT_CODES.items():
            if isinstance(e, etype):
                return code
        return 2


if __name__ == "__main__":
    sys.exit(main())
