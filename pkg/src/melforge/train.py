"""Adversarial training loops and checkpointing.

Each outer step runs ``n_critic`` critic updates (Wasserstein loss with
gradient penalty on interpolates between real features and teacher-forced
predictions) followed by one generator update on the combined
reconstruction + adversarial objective.  Everything is deterministic given
(seed, config, data): batches, interpolation draws and parameter
initialization all come from one seeded generator consumed in a fixed
order.

Checkpoints are binary: magic "MFCK", version, a JSON metadata block, then
a tensor table of little-endian float32 buffers (parameters and optimizer
moments), giving bit-exact round trips.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses, model
from .autodiff import AdamState, Tensor, adam_step
from .config import RunConfig, feature_hash
from .corpus import EmbeddingStore, Manifest
from .dsp import read_feature_cache
from .errors import CompatibilityError, FormatError, TrainingAborted
from .model import DiscriminatorConfig
from .textproc import CharVocab, encode

CKPT_MAGIC = b"MFCK"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    model_id: str  # "t2m" | "ssrn"
    iteration: int
    params: dict[str, np.ndarray]
    disc_params: dict[str, np.ndarray]
    opt: dict[str, dict[str, np.ndarray]]  # "m"/"v" tables
    opt_t: int
    disc_opt: dict[str, dict[str, np.ndarray]]
    disc_opt_t: int
    vocab: str
    feature_hash: str
    config: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def _write_tensor_table(f, table: dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(table)))
    for name in sorted(table):
        arr = np.ascontiguousarray(table[name], dtype="<f4")
        nb = name.encode("utf-8")
        f.write(struct.pack("<H", len(nb)))
        f.write(nb)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _read_tensor_table(f, path) -> dict[str, np.ndarray]:
    raw = f.read(4)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated at offset {f.tell()}")
    (count,) = struct.unpack("<I", raw)
    table = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            buf = f.read(size * 4)
            if len(buf) != size * 4:
                raise FormatError(f"{path}: truncated tensor {name!r} at offset {f.tell()}")
            table[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        except struct.error as e:
            raise FormatError(f"{path}: truncated at offset {f.tell()} ({e})") from e
    return table


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "model_id": ckpt.model_id,
        "iteration": ckpt.iteration,
        "vocab": ckpt.vocab,
        "feature_hash": ckpt.feature_hash,
        "config": ckpt.config,
        "opt_t": ckpt.opt_t,
        "disc_opt_t": ckpt.disc_opt_t,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for table in (
            ckpt.params,
            ckpt.disc_params,
            ckpt.opt.get("m", {}),
            ckpt.opt.get("v", {}),
            ckpt.disc_opt.get("m", {}),
            ckpt.disc_opt.get("v", {}),
        ):
            _write_tensor_table(f, table)


def load_checkpoint(path, expect_hash: str | None = None, force: bool = False) -> Checkpoint:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != CKPT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint header")
        version, mlen = struct.unpack("<II", head[4:])
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        blob = f.read(mlen)
        if len(blob) != mlen:
            raise FormatError(f"{path}: truncated metadata at offset {f.tell()}")
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: bad metadata block ({e})") from e
        params = _read_tensor_table(f, path)
        disc_params = _read_tensor_table(f, path)
        m = _read_tensor_table(f, path)
        v = _read_tensor_table(f, path)
        dm = _read_tensor_table(f, path)
        dv = _read_tensor_table(f, path)
    if expect_hash is not None and meta["feature_hash"] != expect_hash and not force:
        raise CompatibilityError(
            f"{path}: feature hash {meta['feature_hash']} != expected {expect_hash}"
            " (use force to override)"
        )
    return Checkpoint(
        model_id=meta["model_id"],
        iteration=meta["iteration"],
        params=params,
        disc_params=disc_params,
        opt={"m": m, "v": v},
        opt_t=meta.get("opt_t", 0),
        disc_opt={"m": dm, "v": dv},
        disc_opt_t=meta.get("disc_opt_t", 0),
        vocab=meta["vocab"],
        feature_hash=meta["feature_hash"],
        config=meta.get("config", {}),
    )


def _to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: t.data.astype(np.float32, copy=True) for k, t in params.items()}


def _restore(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    for k, t in params.items():
        if k not in arrays:
            raise FormatError(f"checkpoint missing parameter {k!r}")
        if arrays[k].shape != t.data.shape:
            raise FormatError(
                f"checkpoint parameter {k!r} has shape {arrays[k].shape}, "
                f"model expects {t.data.shape}"
            )
        t.data = arrays[k].astype(t.data.dtype, copy=True)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    utterance_id: str
    speaker_id: str
    text_idx: np.ndarray
    dmel: np.ndarray  # (M, Td)
    lin: np.ndarray  # (F, T)
    spk: np.ndarray  # (S,)


def load_training_samples(
    manifest: Manifest, store: EmbeddingStore, vocab: CharVocab | None = None
) -> list[Sample]:
    vocab = vocab or CharVocab()
    samples = []
    for r in manifest.records:
        if not r.features:
            raise FormatError(
                f"{r.utterance_id}: manifest has no feature caches; run prepare first"
            )
        key = r.utterance_id if r.utterance_id in store else r.speaker_id
        samples.append(
            Sample(
                utterance_id=r.utterance_id,
                speaker_id=r.speaker_id,
                text_idx=encode(r.text, vocab).indices,
                dmel=read_feature_cache(r.features["dmel"]),
                lin=read_feature_cache(r.features["lin"]),
                spk=store[key].vector,
            )
        )
    return samples


def _pad_stack(arrs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """(B, C, Tmax) plus (B, 1, Tmax) validity mask."""
    b = len(arrs)
    c = arrs[0].shape[0]
    tmax = max(a.shape[1] for a in arrs)
    out = np.zeros((b, c, tmax), dtype=np.float32)
    mask = np.zeros((b, 1, tmax), dtype=np.float32)
    for i, a in enumerate(arrs):
        out[i, :, : a.shape[1]] = a
        mask[i, :, : a.shape[1]] = 1.0
    return out, mask


def _pad_texts(texts: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    b = len(texts)
    nmax = max(t.size for t in texts)
    idx = np.zeros((b, nmax), dtype=np.int64)
    mask = np.zeros((b, nmax), dtype=np.float32)
    for i, t in enumerate(texts):
        idx[i, : t.size] = t
        mask[i, : t.size] = 1.0
    return idx, mask


class BatchIterator:
    """Length-bucketed fixed-size batches in a deterministic shuffled order.

    The trailing group wraps around so every batch has exactly
    ``batch_size`` samples (interpolates need paired real/fake shapes).
    """

    def __init__(self, samples: list[Sample], batch_size: int, rng, length_key):
        order = sorted(range(len(samples)), key=lambda i: length_key(samples[i]))
        self._groups = []
        for i in range(0, len(order), batch_size):
            group = order[i : i + batch_size]
            while len(group) < batch_size:
                group = group + order[: batch_size - len(group)]
            self._groups.append(group)
        self._samples = samples
        self._rng = rng
        self._queue: list[list[int]] = []

    def next(self) -> list[Sample]:
        if not self._queue:
            perm = self._rng.permutation(len(self._groups))
            self._queue = [self._groups[i] for i in perm]
        group = self._queue.pop()
        return [self._samples[i] for i in group]


# ---------------------------------------------------------------------------
# update steps
# ---------------------------------------------------------------------------


def critic_update(
    real: np.ndarray,
    fake: np.ndarray,
    disc_forward,
    disc_params: dict[str, Tensor],
    opt: AdamState,
    rng: np.random.Generator,
    gp_weight: float,
) -> dict[str, float]:
    """One WGAN-GP critic step.

    ``disc_forward`` maps a (B, ...) tensor to per-sample scores.  The
    interpolate gradients come from a recorded backward pass, so the
    penalty's second-order gradients reach the critic parameters.
    """
    b = real.shape[0]
    u = rng.uniform(size=(b,) + (1,) * (real.ndim - 1)).astype(real.dtype)
    x_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    d_real = disc_forward(Tensor(real))
    d_fake = disc_forward(Tensor(fake))
    d_hat = disc_forward(x_hat)
    (grads_hat,) = ad.backward_differentiable(ad.tsum(d_hat), [x_hat])
    loss = losses.wgan_critic_loss(d_real, d_fake, grads_hat, gp_weight)
    names = list(disc_params)
    gs = ad.grad(loss, [disc_params[n] for n in names])
    adam_step(disc_params, {n: g.data for n, g in zip(names, gs)}, opt)
    with ad.no_grad():
        norms = np.sqrt(
            np.sum(grads_hat.data.reshape(b, -1) ** 2, axis=1)
        )
    return {
        "critic_loss": float(loss.data),
        "wasserstein": float(np.mean(d_real.data) - np.mean(d_fake.data)),
        "grad_norm": float(norms.mean()),
    }


def generator_update(
    loss_recon: Tensor,
    loss_gan: Tensor | None,
    gen_params: dict[str, Tensor],
    opt: AdamState,
) -> dict[str, float]:
    if loss_gan is None:
        total = loss_recon
        stats = None
    else:
        stats = losses.GanBatchStats(float(loss_recon.data), float(loss_gan.data))
        total = losses.combine_losses(loss_recon, loss_gan, stats)
    if not np.isfinite(total.data):
        raise TrainingAborted(f"non-finite generator loss {float(total.data)}")
    names = list(gen_params)
    gs = ad.grad(total, [gen_params[n] for n in names])
    adam_step(gen_params, {n: g.data for n, g in zip(names, gs)}, opt)
    out = {"recon": float(loss_recon.data), "total": float(total.data)}
    if loss_gan is not None:
        out["gan"] = float(loss_gan.data)
        out["ratio"] = stats.mean_recon / max(abs(stats.mean_gan), losses.RATIO_GUARD)
    return out


def _adam(cfg) -> AdamState:
    return AdamState(alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def _restore_opt(opt: AdamState, tables: dict[str, dict[str, np.ndarray]], t: int) -> None:
    opt.m = {k: v.copy() for k, v in tables.get("m", {}).items()}
    opt.v = {k: v.copy() for k, v in tables.get("v", {}).items()}
    opt.t = t


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def train_t2m(
    samples: list[Sample],
    run_cfg: RunConfig,
    log_path=None,
    resume: Checkpoint | None = None,
    vocab: CharVocab | None = None,
):
    """Yields a Checkpoint every ``checkpoint_every`` steps and at the end."""
    yield from _train_loop(samples, run_cfg, "t2m", log_path, resume, vocab)


def train_ssrn(
    samples: list[Sample],
    run_cfg: RunConfig,
    log_path=None,
    resume: Checkpoint | None = None,
    vocab: CharVocab | None = None,
):
    yield from _train_loop(samples, run_cfg, "ssrn", log_path, resume, vocab)


def _train_loop(samples, run_cfg, model_id, log_path, resume, vocab):
    tcfg = run_cfg.train
    mcfg = run_cfg.model
    vocab = vocab or CharVocab()
    rng = np.random.default_rng(tcfg.seed)
    if model_id == "t2m":
        gen_params = model.init_t2m_params(mcfg, rng)
        dcfg = DiscriminatorConfig(
            in_channels=mcfg.n_mels,
            channels=tcfg.disc_channels,
            variant=tcfg.disc_variant,
        )
        length_key = lambda s: s.dmel.shape[1]
    else:
        gen_params = model.init_ssrn_params(mcfg, rng)
        dcfg = DiscriminatorConfig(
            in_channels=mcfg.n_bins,
            channels=tcfg.disc_channels,
            variant=tcfg.disc_variant,
        )
        length_key = lambda s: s.lin.shape[1]
    disc_params = model.init_discriminator_params(dcfg, rng)
    gen_opt, disc_opt = _adam(tcfg), _adam(tcfg)
    start = 0
    if resume is not None:
        if resume.model_id != model_id:
            raise CompatibilityError(
                f"checkpoint is for {resume.model_id!r}, not {model_id!r}"
            )
        _restore(gen_params, resume.params)
        _restore(disc_params, resume.disc_params)
        _restore_opt(gen_opt, resume.opt, resume.opt_t)
        _restore_opt(disc_opt, resume.disc_opt, resume.disc_opt_t)
        start = resume.iteration
    batches = BatchIterator(samples, tcfg.batch_size, rng, length_key)
    fhash = feature_hash(run_cfg.dsp)
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            model_id=model_id,
            iteration=step,
            params=_to_arrays(gen_params),
            disc_params=_to_arrays(disc_params),
            opt={"m": dict(gen_opt.m), "v": dict(gen_opt.v)},
            opt_t=gen_opt.t,
            disc_opt={"m": dict(disc_opt.m), "v": dict(disc_opt.v)},
            disc_opt_t=disc_opt.t,
            vocab=vocab.chars,
            feature_hash=fhash,
            config=run_cfg.to_dict(),
        )

    disc_fwd = lambda x: model.discriminator_forward(x, dcfg, disc_params)
    try:
        for step in range(start, tcfg.max_iters):
            t0 = time.perf_counter()
            gan_on = step >= tcfg.gan_start_step
            critic_stats = {}
            n_critic_done = 0
            if gan_on:
                # one generated batch is scored against fresh real batches
                # in all n_critic updates (only the critic moves here)
                fake = _fake_batch(batches.next(), model_id, gen_params, mcfg)
                for _ in range(tcfg.n_critic):
                    real = _real_batch(batches.next(), model_id, mcfg)
                    real_a, fake_a = _align_time(real, fake)
                    critic_stats = critic_update(
                        real_a, fake_a, disc_fwd, disc_params, disc_opt, rng,
                        tcfg.gp_weight,
                    )
                    n_critic_done += 1
            batch = batches.next()
            recon, gan_loss = _generator_losses(
                batch, model_id, gen_params, mcfg, disc_fwd if gan_on else None
            )
            gen_stats = generator_update(recon, gan_loss, gen_params, gen_opt)
            if not all(np.isfinite(v) for v in gen_stats.values()):
                raise TrainingAborted(f"non-finite loss at step {step}")
            if log_f and ((step + 1) % tcfg.log_every == 0 or step == start):
                entry = {
                    "step": step + 1,
                    "model": model_id,
                    "critic_updates": n_critic_done,
                    "generator_updates": 1,
                    "wall_ms": round(1e3 * (time.perf_counter() - t0), 3),
                    **{f"critic_{k}": v for k, v in critic_stats.items()},
                    **gen_stats,
                }
                log_f.write(json.dumps(entry, sort_keys=True) + "\n")
                log_f.flush()
            if (step + 1) % tcfg.checkpoint_every == 0 or step + 1 == tcfg.max_iters:
                yield snapshot(step + 1)
    finally:
        if log_f:
            log_f.close()


def _t2m_batch(batch, mcfg, gen_params, with_grad: bool):
    texts, tmask = _pad_texts([s.text_idx for s in batch])
    dmel, fmask = _pad_stack([s.dmel for s in batch])
    spk = np.stack([s.spk for s in batch]).astype(np.float32)
    ctx = ad.set_grad_enabled(with_grad)
    with ctx:
        y, a = model.t2m_teacher_forced(texts, dmel, spk, gen_params, mcfg, tmask)
    return texts, tmask, dmel, fmask, y, a


def _ssrn_batch(batch, mcfg, gen_params, with_grad: bool):
    dmel, _ = _pad_stack([s.dmel for s in batch])
    factor = mcfg.downsample
    t_out = dmel.shape[2] * factor
    lin_raw = [s.lin for s in batch]
    lin = np.zeros((len(batch), mcfg.n_bins, t_out), dtype=np.float32)
    mask = np.zeros((len(batch), 1, t_out), dtype=np.float32)
    for i, a in enumerate(lin_raw):
        t = min(a.shape[1], t_out)
        lin[i, :, :t] = a[:, :t]
        mask[i, :, :t] = 1.0
    with ad.set_grad_enabled(with_grad):
        y = model.ssrn_forward(dmel, gen_params, mcfg)
    return lin, mask, y


def _real_batch(batch, model_id, mcfg) -> np.ndarray:
    """Padded real feature batch with padding zeroed."""
    if model_id == "t2m":
        dmel, fmask = _pad_stack([s.dmel for s in batch])
        return (dmel * fmask).astype(np.float32)
    factor = mcfg.downsample
    lin, mask = _pad_stack([s.lin for s in batch])
    t_out = -(-lin.shape[2] // factor) * factor
    if t_out != lin.shape[2]:
        lin = np.pad(lin, ((0, 0), (0, 0), (0, t_out - lin.shape[2])))
        mask = np.pad(mask, ((0, 0), (0, 0), (0, t_out - mask.shape[2])))
    return (lin * mask).astype(np.float32)


def _fake_batch(batch, model_id, gen_params, mcfg) -> np.ndarray:
    """Detached generated feature batch with padding zeroed."""
    if model_id == "t2m":
        _, _, _, fmask, y, _ = _t2m_batch(batch, mcfg, gen_params, with_grad=False)
        return (y.data * fmask).astype(np.float32)
    _, mask, y = _ssrn_batch(batch, mcfg, gen_params, with_grad=False)
    return (y.data * mask).astype(np.float32)


def _align_time(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad the shorter of two (B, C, T) batches to a common T."""
    t = max(a.shape[2], b.shape[2])
    if a.shape[2] < t:
        a = np.pad(a, ((0, 0), (0, 0), (0, t - a.shape[2])))
    if b.shape[2] < t:
        b = np.pad(b, ((0, 0), (0, 0), (0, t - b.shape[2])))
    return a, b


def _generator_losses(batch, model_id, gen_params, mcfg, disc_fwd):
    if model_id == "t2m":
        texts, tmask, dmel, fmask, y, a = _t2m_batch(
            batch, mcfg, gen_params, with_grad=True
        )
        w, amask = _guided_batch(tmask, fmask)
        recon = losses.recon_loss_t2m(y, Tensor(dmel), a, w, mask=fmask, attn_mask=amask)
        fake_masked = ad.mul(y, Tensor(fmask))
    else:
        lin, mask, y = _ssrn_batch(batch, mcfg, gen_params, with_grad=True)
        recon = losses.recon_loss_ssrn(y, Tensor(lin), mask=mask)
        fake_masked = ad.mul(y, Tensor(mask))
    gan_loss = None
    if disc_fwd is not None:
        gan_loss = losses.wgan_generator_loss(disc_fwd(fake_masked))
    return recon, gan_loss


def _guided_batch(tmask: np.ndarray, fmask: np.ndarray):
    """Per-sample guided weight grids (true N_i x T_i denominators) and a
    validity mask, both padded to the batch shape."""
    b, nmax = tmask.shape
    t_frames = fmask.shape[2]
    w = np.zeros((b, nmax, t_frames), dtype=np.float32)
    m = np.zeros((b, nmax, t_frames), dtype=np.float32)
    for i in range(b):
        n = int(tmask[i].sum())
        t = int(fmask[i, 0].sum())
        w[i, :n, :t] = losses.guided_weights(n, t)
        m[i, :n, :t] = 1.0
    return w, m
