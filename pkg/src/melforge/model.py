"""Synthesis networks and critics.

Text2Mel = text encoder (K, V) + audio/speaker encoder (Q) + attention +
causal audio decoder predicting time-downsampled mel frames.  SSRN restores
full time resolution and linear-frequency bins with two stride-2 transposed
convolutions.  Critics are unbounded scalar scorers over (mel-)spectrograms;
variants v1/v2 drop an average-pooling stage / insert an extra convolution.

Channel widths follow the usual dilated-conv TTS layout scaled by
``width_scale``; layer normalization precedes the hidden ReLU activations.
Output-layer biases start negative because normalized spectrogram targets
are mostly at the floor.

Parameters live in flat name->Tensor dicts so checkpoints and the optimizer
can treat every model uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, nn, ops

OUT_BIAS_INIT = -2.0
GATE_BIAS_INIT = -1.0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 43
    n_mels: int = 80
    n_bins: int = 513
    attention_dim: int = 128
    embed_dim: int = 128
    speaker_dim: int = 512
    width_scale: float = 0.25
    downsample: int = 4
    t2m_width: int | None = None  # explicit overrides of the scaled widths
    ssrn_width: int | None = None

    @property
    def t2m_channels(self) -> int:
        if self.t2m_width is not None:
            return self.t2m_width
        return max(8, round(256 * self.width_scale))

    @property
    def ssrn_channels(self) -> int:
        if self.ssrn_width is not None:
            return self.ssrn_width
        return max(8, round(512 * self.width_scale))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Critic stack layout. ``variant`` alters the base stack: v1 removes an
    average-pooling layer, v2 inserts an extra convolutional layer."""

    in_channels: int
    channels: int
    variant: str = "base"

    def __post_init__(self):
        if self.variant not in ("base", "v1", "v2"):
            raise ValueError(f"unknown discriminator variant {self.variant!r}")

    def layers(self) -> list[str]:
        """Ordered stage names; tests count pools/convs per variant here."""
        stack = ["pool1", "conv_in", "hw1", "conv1", "hw2"]
        if self.variant != "v1":
            stack.append("pool2")
        if self.variant == "v2":
            stack.append("conv2")
        stack += ["gpool", "head"]
        return stack


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Unit-norm identity vector from an external extractor."""

    vector: np.ndarray
    speaker_id: str = ""

    def __post_init__(self):
        norm = float(np.linalg.norm(self.vector))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-4:
            raise ValueError(
                f"speaker embedding must be unit-norm (got ||v||={norm:.6f}); "
                "normalize on load"
            )


def unit_normalized(vec: np.ndarray, speaker_id: str = "") -> SpeakerEmbedding:
    v = np.asarray(vec, dtype=np.float32)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite embedding")
    return SpeakerEmbedding(v / n, speaker_id)


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


def _add_conv(params, name, rng, cin, cout, k, ln=False, bias_init=0.0):
    params[f"{name}.w"] = nn.kaiming_uniform(rng, (cout, cin, k), fan_in=cin * k)
    b = nn.zeros_param((cout,))
    if bias_init:
        b.data += bias_init
    params[f"{name}.b"] = b
    if ln:
        params[f"{name}.ln_g"] = nn.ones_param((cout,))
        params[f"{name}.ln_b"] = nn.zeros_param((cout,))


def _add_highway(params, name, rng, c, k):
    params[f"{name}.w"] = nn.kaiming_uniform(rng, (2 * c, c, k), fan_in=c * k)
    b = nn.zeros_param((2 * c,))
    b.data[:c] += GATE_BIAS_INIT  # bias gates toward pass-through at init
    params[f"{name}.b"] = b


def _conv(params, name, x, dilation=1, causal=False, activation=None):
    w, b = params[f"{name}.w"], params[f"{name}.b"]
    y = nn.conv1d(x, w, b, dilation=dilation, causal=causal)
    if f"{name}.ln_g" in params:
        y = nn.layer_norm(y, params[f"{name}.ln_g"], params[f"{name}.ln_b"])
    if activation is not None:
        y = activation(y)
    return y


def _highway(params, name, x, dilation=1, causal=False):
    return nn.highway_block(
        x, params[f"{name}.w"], params[f"{name}.b"], dilation=dilation, causal=causal
    )


TENC_DILATIONS = (1, 3, 9, 27, 1, 3, 9, 27)
ASENC_DILATIONS = (1, 3, 9, 27, 1, 3)
ADEC_DILATIONS = (1, 3, 9, 27, 1, 1)
SSRN_BLOCK_DILATIONS = (1, 3)


def init_t2m_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    c = cfg.t2m_channels
    d = cfg.attention_dim
    # text encoder
    p["tenc.emb.w"] = nn.kaiming_uniform(
        rng, (cfg.vocab_size, cfg.embed_dim), fan_in=cfg.embed_dim
    )
    _add_conv(p, "tenc.c0", rng, cfg.embed_dim, 2 * c, 1, ln=True)
    _add_conv(p, "tenc.c1", rng, 2 * c, 2 * c, 1)
    for i, _ in enumerate(TENC_DILATIONS):
        _add_highway(p, f"tenc.hw{i}", rng, 2 * c, 3)
    _add_highway(p, "tenc.hwk1a", rng, 2 * c, 1)
    _add_highway(p, "tenc.hwk1b", rng, 2 * c, 1)
    _add_conv(p, "tenc.out", rng, 2 * c, 2 * d, 1)
    # audio/speaker encoder
    _add_conv(p, "asenc.c0", rng, cfg.n_mels, c, 1, ln=True)
    _add_conv(p, "asenc.c1", rng, c, c, 1)
    p["asenc.spk.w"] = nn.kaiming_uniform(rng, (c, cfg.speaker_dim), fan_in=cfg.speaker_dim)
    p["asenc.spk.b"] = nn.zeros_param((c,))
    for i, _ in enumerate(ASENC_DILATIONS):
        _add_highway(p, f"asenc.hw{i}", rng, c, 3)
    _add_conv(p, "asenc.out", rng, c, d, 1)
    # audio decoder
    _add_conv(p, "adec.c0", rng, 2 * d, c, 1, ln=True)
    for i, _ in enumerate(ADEC_DILATIONS):
        _add_highway(p, f"adec.hw{i}", rng, c, 3)
    _add_conv(p, "adec.c1", rng, c, c, 1, ln=True)
    _add_conv(p, "adec.out", rng, c, cfg.n_mels, 1, bias_init=OUT_BIAS_INIT)
    return p


def init_ssrn_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    s = cfg.ssrn_channels
    _add_conv(p, "ssrn.c0", rng, cfg.n_mels, s, 1)
    for i, _ in enumerate(SSRN_BLOCK_DILATIONS):
        _add_highway(p, f"ssrn.pre{i}", rng, s, 3)
    for stage in (0, 1):
        p[f"ssrn.up{stage}.w"] = nn.kaiming_uniform(rng, (s, s, 2), fan_in=2 * s)
        p[f"ssrn.up{stage}.b"] = nn.zeros_param((s,))
        for i, _ in enumerate(SSRN_BLOCK_DILATIONS):
            _add_highway(p, f"ssrn.post{stage}{i}", rng, s, 3)
    _add_conv(p, "ssrn.c1", rng, s, 2 * s, 1, ln=True)
    _add_conv(p, "ssrn.out", rng, 2 * s, cfg.n_bins, 1, bias_init=OUT_BIAS_INIT)
    return p


def init_discriminator_params(
    dcfg: DiscriminatorConfig, rng: np.random.Generator
) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    c = dcfg.channels
    _add_conv(p, "disc.conv_in", rng, dcfg.in_channels, c, 1, ln=True)
    _add_highway(p, "disc.hw1", rng, c, 3)
    _add_conv(p, "disc.conv1", rng, c, c, 3, ln=True)
    _add_highway(p, "disc.hw2", rng, c, 3)
    if dcfg.variant == "v2":
        _add_conv(p, "disc.conv2", rng, c, c, 3, ln=True)
    p["disc.head.w"] = nn.kaiming_uniform(rng, (c, 1), fan_in=c)
    p["disc.head.b"] = nn.zeros_param((1,))
    return p


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _promote_idx(text_idx) -> tuple[np.ndarray, bool]:
    idx = np.asarray(text_idx)
    if idx.ndim == 1:
        return idx[None, :], True
    if idx.ndim == 2:
        return idx, False
    raise ValueError(f"text indices must be (N,) or (B, N), got {idx.shape}")


def _promote(x, channels: int):
    x = ad.as_tensor(x)
    if x.ndim == 2:
        x = ops.reshape(x, (1,) + x.shape)
        squeeze = True
    elif x.ndim == 3:
        squeeze = False
    else:
        raise ValueError(f"expected 2-D or 3-D input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {x.shape[1]}")
    return x, squeeze


def tenc_forward(text_idx, params, cfg: ModelConfig):
    """Text -> (K, V), each (B, d, N)."""
    idx, squeeze = _promote_idx(text_idx)
    if idx.shape[1] == 0:
        raise ValueError("empty text sequence")
    emb = ops.embedding(params["tenc.emb.w"], idx)  # (B, N, E)
    x = ops.swapaxes(emb, 1, 2)  # (B, E, N)
    x = _conv(params, "tenc.c0", x, activation=ops.relu)
    x = _conv(params, "tenc.c1", x)
    for i, dil in enumerate(TENC_DILATIONS):
        x = _highway(params, f"tenc.hw{i}", x, dilation=dil)
    x = _highway(params, "tenc.hwk1a", x)
    x = _highway(params, "tenc.hwk1b", x)
    kv = _conv(params, "tenc.out", x)
    d = cfg.attention_dim
    k = ops.narrow(kv, 1, 0, d)
    v = ops.narrow(kv, 1, d, d)
    if squeeze:
        k = ops.reshape(k, k.shape[1:])
        v = ops.reshape(v, v.shape[1:])
    return k, v


def asenc_forward(prev_mel, spk, params, cfg: ModelConfig):
    """Shifted mel prefix (B, M, T) + speaker embedding (B, S) -> Q (B, d, T).

    The mel branch is causal; the speaker branch is projected to the trunk
    width, broadcast over time, and summed in before the shared layers.
    """
    x, squeeze = _promote(prev_mel, cfg.n_mels)
    spk_t = ad.as_tensor(spk)
    if spk_t.ndim == 1:
        spk_t = ops.reshape(spk_t, (1, -1))
    if spk_t.shape[-1] != cfg.speaker_dim:
        raise ValueError(
            f"speaker embedding dim {spk_t.shape[-1]}, expected {cfg.speaker_dim}"
        )
    x = _conv(params, "asenc.c0", x, causal=True, activation=ops.relu)
    x = _conv(params, "asenc.c1", x, causal=True)
    proj = ops.add(
        ops.matmul(spk_t, ops.swapaxes(params["asenc.spk.w"], 0, 1)),
        ops.reshape(params["asenc.spk.b"], (1, -1)),
    )  # (B, c)
    x = ops.add(x, ops.reshape(proj, proj.shape + (1,)))
    for i, dil in enumerate(ASENC_DILATIONS):
        x = _highway(params, f"asenc.hw{i}", x, dilation=dil, causal=True)
    q = _conv(params, "asenc.out", x, causal=True)
    if squeeze:
        q = ops.reshape(q, q.shape[1:])
    return q


def attend(k, v, q, text_mask: np.ndarray | None = None):
    """Scaled dot-product attention.

    A = column-softmax(K^T Q / sqrt(d)) over text positions; context = V A.
    ``text_mask`` (B, N) in {0,1} excludes padded positions.  Returns
    (A, context) shaped (B, N, T) and (B, d, T).
    """
    k, v, q = ad.as_tensor(k), ad.as_tensor(v), ad.as_tensor(q)
    squeeze = k.ndim == 2
    if squeeze:
        k = ops.reshape(k, (1,) + k.shape)
        v = ops.reshape(v, (1,) + v.shape)
        q = ops.reshape(q, (1,) + q.shape)
    d = k.shape[1]
    scores = ops.mul(ops.matmul(ops.swapaxes(k, 1, 2), q), 1.0 / np.sqrt(d))
    if text_mask is not None:
        bias = np.where(np.asarray(text_mask)[:, :, None] > 0, 0.0, -1e9)
        scores = ops.add(scores, Tensor(bias.astype(scores.dtype)))
    a = ops.softmax(scores, axis=1)
    context = ops.matmul(v, a)
    if squeeze:
        a = ops.reshape(a, a.shape[1:])
        context = ops.reshape(context, context.shape[1:])
    return a, context


def adec_forward(context_and_q, params, cfg: ModelConfig):
    """Causal decoder over [context; Q] (B, 2d, T) -> mel frames in (0, 1)."""
    x, squeeze = _promote(context_and_q, 2 * cfg.attention_dim)
    x = _conv(params, "adec.c0", x, causal=True, activation=ops.relu)
    for i, dil in enumerate(ADEC_DILATIONS):
        x = _highway(params, f"adec.hw{i}", x, dilation=dil, causal=True)
    x = _conv(params, "adec.c1", x, causal=True, activation=ops.relu)
    y = ops.sigmoid(_conv(params, "adec.out", x, causal=True))
    if squeeze:
        y = ops.reshape(y, y.shape[1:])
    return y


def shift_right(frames):
    """Teacher-forcing input: drop the last frame, prepend an all-zero one."""
    frames = ad.as_tensor(frames)
    t = frames.shape[-1]
    return ops.pad_time(ops.narrow(frames, -1, 0, t - 1), 1, 0)


def t2m_teacher_forced(
    text_idx,
    target_mel,
    spk,
    params,
    cfg: ModelConfig,
    text_mask: np.ndarray | None = None,
):
    """All frames predicted in one parallel pass from the shifted target.

    Returns (Y, A): predictions shaped like ``target_mel`` and the attention
    matrix for the losses.
    """
    k, v = tenc_forward(text_idx, params, cfg)
    q = asenc_forward(shift_right(target_mel), spk, params, cfg)
    a, context = attend(k, v, q, text_mask)
    cat_axis = 0 if ad.as_tensor(context).ndim == 2 else 1
    y = adec_forward(ops.concat([context, q], axis=cat_axis), params, cfg)
    return y, a


def t2m_generate(
    text_idx,
    spk,
    params,
    cfg: ModelConfig,
    max_frames: int = 200,
    stop_energy: float = 0.02,
    stop_run: int = 10,
):
    """Frame-by-frame constrained decoding.

    At each step the attention column is masked to the window
    [p_prev, p_prev + 2] (p starts at 0), renormalized, and the new position
    is its argmax (ties -> lowest index).  The emitted path is therefore
    monotone with steps in {0, 1, 2}.  Generation stops once the path has
    reached the last character and ``stop_run`` consecutive frames have mean
    magnitude below ``stop_energy``, or at ``max_frames``.

    Returns (mel (M, T), attention (N, T), path list of length T).
    """
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    idx = np.asarray(text_idx)
    if idx.ndim != 1:
        raise ValueError("generation takes a single unbatched text sequence")
    n = idx.size
    spk_vec = spk.vector if isinstance(spk, SpeakerEmbedding) else np.asarray(spk)
    dt = params["adec.out.w"].data.dtype
    with ad.no_grad():
        k, v = tenc_forward(idx, params, cfg)
        k_np, v_np = k.data, v.data  # (d, N)
        d = k_np.shape[0]
        frames: list[np.ndarray] = []
        contexts: list[np.ndarray] = []
        att_cols: list[np.ndarray] = []
        path: list[int] = []
        p_prev = 0
        low_run = 0
        for t in range(max_frames):
            prefix = np.zeros((cfg.n_mels, t + 1), dtype=dt)
            if frames:
                prefix[:, 1:] = np.stack(frames, axis=1)
            q = asenc_forward(prefix, spk_vec.astype(dt), params, cfg).data
            scores = (k_np.T @ q[:, -1]) / np.sqrt(d)  # (N,)
            window = np.full(n, -np.inf)
            lo, hi = p_prev, min(p_prev + 2, n - 1)
            window[lo : hi + 1] = scores[lo : hi + 1]
            col = np.exp(window - window[lo : hi + 1].max())
            col /= col.sum()
            p_t = int(np.argmax(col))
            path.append(p_t)
            att_cols.append(col)
            contexts.append(v_np @ col)
            ctx = np.stack(contexts, axis=1)  # (d, t+1)
            dec_in = np.concatenate([ctx, q], axis=0)
            y = adec_forward(dec_in.astype(dt), params, cfg).data
            frame = y[:, -1]
            frames.append(frame)
            p_prev = p_t
            low_run = low_run + 1 if frame.mean() < stop_energy else 0
            if p_t >= n - 1 and low_run >= stop_run:
                break
    mel = np.stack(frames, axis=1)
    att = np.stack(att_cols, axis=1)
    return mel, att, path


def ssrn_forward(dmel, params, cfg: ModelConfig):
    """Downsampled mel (B, M, T4) -> linear spectrogram (B, F, 4*T4) in (0,1)."""
    x, squeeze = _promote(dmel, cfg.n_mels)
    x = _conv(params, "ssrn.c0", x)
    for i, dil in enumerate(SSRN_BLOCK_DILATIONS):
        x = _highway(params, f"ssrn.pre{i}", x, dilation=dil)
    for stage in (0, 1):
        x = nn.conv1d_transposed(
            x, params[f"ssrn.up{stage}.w"], params[f"ssrn.up{stage}.b"], stride=2
        )
        for i, dil in enumerate(SSRN_BLOCK_DILATIONS):
            x = _highway(params, f"ssrn.post{stage}{i}", x, dilation=dil)
    x = _conv(params, "ssrn.c1", x, activation=ops.relu)
    y = ops.sigmoid(_conv(params, "ssrn.out", x))
    if squeeze:
        y = ops.reshape(y, y.shape[1:])
    return y


def discriminator_forward(spec, dcfg: DiscriminatorConfig, params):
    """Wasserstein critic: (B, C, T) -> (B,) unbounded scores."""
    x, squeeze = _promote(spec, dcfg.in_channels)
    for layer in dcfg.layers():
        if layer == "conv_in":
            x = _conv(params, "disc.conv_in", x, activation=ops.relu)
        elif layer.startswith("hw"):
            x = _highway(params, f"disc.{layer}", x, dilation=3 if layer == "hw2" else 1)
        elif layer.startswith("conv"):
            x = _conv(params, f"disc.{layer}", x, activation=ops.relu)
        elif layer.startswith("pool"):
            x = _mean_pool2(x)
        elif layer == "gpool":
            x = ops.mean(x, axis=2)  # adaptive average pool over time
        elif layer == "head":
            x = ops.add(
                ops.matmul(x, params["disc.head.w"]),
                ops.reshape(params["disc.head.b"], (1, 1)),
            )
    score = ops.reshape(x, (x.shape[0],))
    if squeeze:
        score = ops.reshape(score, ())
    return score


def _mean_pool2(x):
    b, c, t = x.shape
    if t % 2:
        x = ops.pad_time(x, 0, 1)
        t += 1
    return ops.mean(ops.reshape(x, (b, c, t // 2, 2)), axis=3)
