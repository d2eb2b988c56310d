"""Spoofing evaluation engine.

Builds the verification trial protocol (enrollment + target / non-target /
synthetic trials), scores trials by cosine similarity against enrollment
models, calibrates the threshold at the equal error rate, and reports the
spoof rate and the SR-vs-FRR trade-off curve.  Anti-spoofing baselines:
a diagonal-covariance GMM likelihood-ratio classifier over cepstral
features, and the trained critics themselves (whitebox variants).

Score convention everywhere: higher = more likely target / real.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .config import ProtocolConfig
from .corpus import EmbeddingStore, Manifest
from .errors import ProtocolError

VAR_FLOOR = 1e-4


@dataclass(frozen=True)
class Trial:
    trial_id: str
    claimed_speaker: str
    utterance_id: str
    source: str  # "real" | "synthetic"
    is_target: bool

    def __post_init__(self):
        if self.source not in ("real", "synthetic"):
            raise ValueError(f"bad trial source {self.source!r}")
        if self.source == "synthetic" and not self.is_target:
            raise ValueError("synthetic trials always claim their target identity")


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    frr: float
    far: float
    sr: float


# ---------------------------------------------------------------------------
# protocol construction and scoring
# ---------------------------------------------------------------------------


def build_protocol(
    test_manifest: Manifest,
    synth_manifest: Manifest,
    cfg: ProtocolConfig,
) -> tuple[dict[str, list[str]], list[Trial]]:
    """Enrollment utterances and the full trial list.

    Per test speaker: ``n_enroll`` real utterances are held out for
    enrollment, ``n_target`` real target trials and ``n_synth`` synthetic
    trials are drawn, and every real trial utterance is additionally claimed
    as each other test speaker (non-target trials for EER calibration).
    """
    rng = np.random.default_rng(cfg.seed)
    real_by_spk = test_manifest.by_speaker()
    synth_by_spk = synth_manifest.by_speaker()
    speakers = sorted(real_by_spk)
    shortfalls = []
    for spk in speakers:
        need_real = cfg.n_enroll + cfg.n_target
        have_real = len(real_by_spk.get(spk, ()))
        have_synth = len(synth_by_spk.get(spk, ()))
        if have_real < need_real:
            shortfalls.append(f"{spk}: {have_real} real utterances, need {need_real}")
        if have_synth < cfg.n_synth:
            shortfalls.append(f"{spk}: {have_synth} synthetic utterances, need {cfg.n_synth}")
    if shortfalls:
        raise ProtocolError("insufficient utterances: " + "; ".join(shortfalls))

    enrollment: dict[str, list[str]] = {}
    trial_utts: dict[str, list[str]] = {}
    trials: list[Trial] = []
    for spk in speakers:
        utts = sorted(r.utterance_id for r in real_by_spk[spk])
        picked = list(rng.permutation(utts))
        enrollment[spk] = sorted(picked[: cfg.n_enroll])
        trial_utts[spk] = sorted(picked[cfg.n_enroll : cfg.n_enroll + cfg.n_target])
        synth_utts = sorted(r.utterance_id for r in synth_by_spk[spk])
        synth_picked = sorted(list(rng.permutation(synth_utts))[: cfg.n_synth])
        for utt in trial_utts[spk]:
            trials.append(Trial(f"tgt-{spk}-{utt}", spk, utt, "real", True))
        for utt in synth_picked:
            trials.append(Trial(f"spf-{spk}-{utt}", spk, utt, "synthetic", True))
    for spk in speakers:  # cross-speaker claims over the same trial utterances
        for other in speakers:
            if other == spk:
                continue
            for utt in trial_utts[spk]:
                trials.append(Trial(f"imp-{other}-{utt}", other, utt, "real", False))
    return enrollment, trials


def enroll(embeddings: list[np.ndarray]) -> np.ndarray:
    """Unit-normalized mean of the enrollment embeddings."""
    if not embeddings:
        raise ValueError("enrollment needs at least one embedding")
    mean = np.mean(np.stack(embeddings), axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise ValueError("enrollment embeddings cancel out")
    return mean / norm


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm embedding in scoring")
    return float(np.dot(a, b) / (na * nb))


def score_trials(
    enrollment_models: dict[str, np.ndarray],
    trials: list[Trial],
    store: EmbeddingStore,
) -> np.ndarray:
    """Cosine similarity of each trial utterance against the claimed
    speaker's enrollment model."""
    missing = [t.trial_id for t in trials if t.utterance_id not in store]
    if missing:
        raise ProtocolError(f"missing embeddings for trials: {', '.join(missing[:10])}"
                            + ("..." if len(missing) > 10 else ""))
    return np.array(
        [
            cosine_score(
                enrollment_models[t.claimed_speaker], store[t.utterance_id].vector
            )
            for t in trials
        ]
    )


# ---------------------------------------------------------------------------
# EER / spoof rate / curves
# ---------------------------------------------------------------------------


def _threshold_grid(scores: np.ndarray) -> np.ndarray:
    """Midpoints of adjacent sorted scores plus -inf/+inf sentinels."""
    s = np.sort(scores)
    mids = np.unique((s[1:] + s[:-1]) / 2.0) if s.size > 1 else np.empty(0)
    return np.concatenate(([-np.inf], mids, [np.inf]))


def _rates(thresholds, target, nontarget):
    t = np.asarray(target)
    n = np.asarray(nontarget)
    frr = np.array([np.mean(t < th) for th in thresholds])
    far = np.array([np.mean(n >= th) for th in thresholds])
    return frr, far


def compute_eer(
    target_scores, nontarget_scores
) -> tuple[float, float]:
    """(EER, threshold) by linear interpolation where FRR crosses FAR.

    FRR(th) = fraction of targets < th; FAR(th) = fraction of non-targets
    >= th; thresholds sweep the midpoints of adjacent sorted scores.
    """
    target = np.asarray(target_scores, dtype=np.float64)
    nontarget = np.asarray(nontarget_scores, dtype=np.float64)
    if target.size == 0 or nontarget.size == 0:
        raise ValueError("both score sets must be non-empty")
    thresholds = _threshold_grid(np.concatenate([target, nontarget]))
    frr, far = _rates(thresholds, target, nontarget)
    diff = frr - far
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(frr[i]), float(thresholds[i])
    f0, f1 = frr[i - 1], frr[i]
    a0, a1 = far[i - 1], far[i]
    s = (a0 - f0) / ((f1 - f0) + (a0 - a1))
    eer = f0 + s * (f1 - f0)
    t0, t1 = thresholds[i - 1], thresholds[i]
    if not np.isfinite(t0):
        t0 = t1
    if not np.isfinite(t1):
        t1 = t0
    return float(eer), float(t0 + s * (t1 - t0))


def spoof_rate(synthetic_scores, threshold: float) -> float:
    """Fraction of synthetic trials accepted at the given threshold."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    s = np.asarray(synthetic_scores, dtype=np.float64)
    return float(np.mean(s >= threshold))


def sr_frr_curve(
    target_scores, synthetic_scores, nontarget_scores=None
) -> list[OperatingPoint]:
    """Operating points over all midpoint thresholds, sorted by threshold.

    SR is non-increasing and FRR non-decreasing along the sweep.  FAR is
    populated when non-target scores are given, else NaN.
    """
    target = np.asarray(target_scores, dtype=np.float64)
    synth = np.asarray(synthetic_scores, dtype=np.float64)
    if target.size == 0 or synth.size == 0:
        raise ValueError("both score sets must be non-empty")
    thresholds = _threshold_grid(np.concatenate([target, synth]))
    points = []
    for th in thresholds:
        frr = float(np.mean(target < th))
        sr = float(np.mean(synth >= th))
        far = float(np.mean(np.asarray(nontarget_scores) >= th)) if nontarget_scores is not None else float("nan")
        points.append(OperatingPoint(float(th), frr, far, sr))
    return points


# ---------------------------------------------------------------------------
# GMM-EM anti-spoofing baseline
# ---------------------------------------------------------------------------


@dataclass
class DiagonalGmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D), floored

    def component_log_likelihood(self, x: np.ndarray) -> np.ndarray:
        """(N, K) log p(x | component) + log weight."""
        x = np.atleast_2d(x)
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff * diff / self.variances[None], axis=2)
        logdet = np.sum(np.log(2.0 * np.pi * self.variances), axis=1)
        return -0.5 * (quad + logdet[None, :]) + np.log(self.weights)[None, :]

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        """(N,) per-point log likelihood."""
        return logsumexp(self.component_log_likelihood(x), axis=1)


def gmm_fit_em(
    features: np.ndarray,
    n_components: int,
    iters: int = 50,
    seed: int = 0,
) -> tuple[DiagonalGmm, list[float]]:
    """Diagonal-covariance EM with seeded point-pick initialization.

    Returns the model and the per-iteration total log-likelihood history
    (non-decreasing within numerical tolerance).  Components that lose all
    responsibility mass are re-seeded at the globally worst-fit point.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be (N, D), got {x.shape}")
    n, d = x.shape
    if n_components < 1:
        raise ValueError("need at least one component")
    if n < n_components:
        raise ValueError(f"{n} points cannot support {n_components} components")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=n_components, replace=False)
    global_var = np.maximum(x.var(axis=0), VAR_FLOOR)
    gmm = DiagonalGmm(
        weights=np.full(n_components, 1.0 / n_components),
        means=x[idx].copy(),
        variances=np.tile(global_var, (n_components, 1)),
    )
    history: list[float] = []
    for _ in range(max(iters, 1)):
        comp_ll = gmm.component_log_likelihood(x)  # (N, K)
        total = logsumexp(comp_ll, axis=1)
        history.append(float(np.sum(total)))
        resp = np.exp(comp_ll - total[:, None])  # (N, K)
        nk = resp.sum(axis=0)
        degenerate = nk < 1e-10
        if np.any(degenerate):
            worst = int(np.argmin(total))
            for k in np.where(degenerate)[0]:
                gmm.means[k] = x[worst]
                gmm.variances[k] = global_var
                nk[k] = 1.0
            gmm.weights = nk / nk.sum()
            continue
        gmm.weights = nk / n
        gmm.means = (resp.T @ x) / nk[:, None]
        second = (resp.T @ (x * x)) / nk[:, None]
        gmm.variances = np.maximum(second - gmm.means**2, VAR_FLOOR)
    history.append(float(np.sum(gmm.log_likelihood(x))))
    return gmm, history


def antispoof_score(
    features: np.ndarray, gmm_real: DiagonalGmm, gmm_synth: DiagonalGmm
) -> float:
    """Mean per-frame log-likelihood ratio (real over synthetic)."""
    if gmm_real.means.shape[1] != gmm_synth.means.shape[1]:
        raise ValueError("anti-spoofing models have mismatched feature dimensions")
    x = np.asarray(features, dtype=np.float64)
    return float(np.mean(gmm_real.log_likelihood(x) - gmm_synth.log_likelihood(x)))


def antispoof_eer(real_scores, synthetic_scores) -> float:
    """EER of the real-vs-synthetic classifier (real is the target class)."""
    eer, _ = compute_eer(real_scores, synthetic_scores)
    return eer


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

SCORE_FIELDS = ("trial_id", "claimed_speaker", "source", "is_target", "score")
CURVE_FIELDS = ("threshold", "SR", "FRR", "FAR")


def write_score_csv(trials: list[Trial], scores, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SCORE_FIELDS)
        for t, s in zip(trials, scores):
            writer.writerow(
                [t.trial_id, t.claimed_speaker, t.source, int(t.is_target), repr(float(s))]
            )


def read_score_csv(path) -> dict[str, float]:
    """trial_id -> score."""
    out: dict[str, float] = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(SCORE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ProtocolError(f"{path}: score CSV missing columns {sorted(missing)}")
        for row in reader:
            out[row["trial_id"]] = float(row["score"])
    return out


def write_curve_csv(points: list[OperatingPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_FIELDS)
        for p in points:
            writer.writerow(
                [repr(p.threshold), repr(p.sr), repr(p.frr), repr(p.far)]
            )


def write_trial_csv(trials: list[Trial], path) -> None:
    """Trial list without scores; external systems fill in the score column."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("trial_id", "claimed_speaker", "utterance_id", "source", "is_target"))
        for t in trials:
            writer.writerow(
                [t.trial_id, t.claimed_speaker, t.utterance_id, t.source, int(t.is_target)]
            )


def read_trial_csv(path) -> list[Trial]:
    trials = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            trials.append(
                Trial(
                    trial_id=row["trial_id"],
                    claimed_speaker=row["claimed_speaker"],
                    utterance_id=row["utterance_id"],
                    source=row["source"],
                    is_target=bool(int(row["is_target"])),
                )
            )
    return trials
