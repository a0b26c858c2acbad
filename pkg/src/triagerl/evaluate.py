"""Checkpoint evaluation and permutation feature importance.

Evaluation replays one greedy episode per warning (fuzzing permitted unless
masked) and scores the terminal decisions with the full metric report.
Importance shuffles one feature column at a time, re-evaluates with fuzzing
masked, and ranks features by the mean F1 drop.
"""

from __future__ import annotations

import numpy as np

from .env import TriageAction, TriageEnv
from .errors import DigestMismatch
from .features import MANIFEST, FeatureManifest, FeatureVector, normalize
from .metrics import EvalReport, PredictionRecord, compute_metrics
from .policy import SelectMode, forward_cache, softmax
from .trainer import PolicyCheckpoint, play_episode
from .warnings import Label, WarningRecord

FUZZ_NOT_RUN_ONEHOT = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])


def _check_digests(ckpt: PolicyCheckpoint, vectors: dict[str, FeatureVector], manifest):
    if ckpt.manifest_digest != manifest.digest:
        raise DigestMismatch(
            f"checkpoint digest {ckpt.manifest_digest} != manifest digest {manifest.digest}"
        )
    for v in vectors.values():
        if v.manifest_digest != ckpt.manifest_digest:
            raise DigestMismatch(
                f"feature digest {v.manifest_digest} != checkpoint digest {ckpt.manifest_digest}"
            )


def _normalized_episodes(ckpt, records, vectors, manifest):
    return [(r, normalize(vectors[r.id], ckpt.normalizer, manifest).values) for r in records]


def evaluate_checkpoint(
    ckpt: PolicyCheckpoint,
    records: list[WarningRecord],
    vectors: dict[str, FeatureVector],
    backend,
    mode: SelectMode = SelectMode.GREEDY,
    mask_fuzz: bool = False,
    rng=None,
    manifest: FeatureManifest = MANIFEST,
) -> tuple[EvalReport, list[PredictionRecord]]:
    """Play every warning (greedy by default) and report metrics plus verdicts."""
    _check_digests(ckpt, vectors, manifest)
    episodes = _normalized_episodes(ckpt, records, vectors, manifest)
    env = TriageEnv(feature_dim=len(manifest), reward_spec=ckpt.reward_spec)
    predictions = [
        play_episode(ckpt.params, env, rec, feats, backend, mask_fuzz, mode, rng)
        for rec, feats in episodes
    ]
    labels = {r.id: r.label for r in records}
    return compute_metrics(predictions, labels), predictions


def masked_batch_predictions(
    params, features_matrix: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fuzz-masked greedy decisions for many warnings at once.

    Returns (predicted_tp bool array, tp-probability scores). Equivalent to
    running mask-fuzz greedy episodes one at a time.
    """
    n = features_matrix.shape[0]
    states = np.hstack([features_matrix, np.tile(FUZZ_NOT_RUN_ONEHOT, (n, 1))])
    probs = softmax(forward_cache(params, states)["logits"])
    p_tp = probs[:, TriageAction.CLASSIFY_TP]
    p_fp = probs[:, TriageAction.CLASSIFY_FP]
    scores = p_tp / (p_tp + p_fp)
    # Greedy tie-break matches the fixed action order: TP wins ties.
    predicted_tp = p_tp >= p_fp
    return predicted_tp, scores


def _masked_f1(params, features_matrix: np.ndarray, positives: np.ndarray) -> float:
    predicted_tp, _ = masked_batch_predictions(params, features_matrix)
    tp = int(np.sum(predicted_tp & positives))
    fp = int(np.sum(predicted_tp & ~positives))
    fn = int(np.sum(~predicted_tp & positives))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def permutation_importance(
    ckpt: PolicyCheckpoint,
    records: list[WarningRecord],
    vectors: dict[str, FeatureVector],
    repeats: int = 1,
    seed: int = 0,
    manifest: FeatureManifest = MANIFEST,
) -> list[dict]:
    """Rank features by mean F1 drop when their column is shuffled.

    Evaluation runs with fuzzing masked so the ranking reflects the static
    decision surface only. Shuffles are seeded; identical seeds give
    identical rankings. Constant columns drop exactly 0.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    _check_digests(ckpt, vectors, manifest)
    episodes = _normalized_episodes(ckpt, records, vectors, manifest)
    matrix = np.stack([feats for _, feats in episodes])
    positives = np.array([r.label is Label.TRUE_POSITIVE for r, _ in episodes], dtype=bool)

    baseline = _masked_f1(ckpt.params, matrix, positives)
    rng = np.random.default_rng(seed)
    results = []
    for j, entry in enumerate(manifest.entries):
        drops = []
        for _ in range(repeats):
            perm = rng.permutation(len(episodes))
            shuffled = matrix.copy()
            shuffled[:, j] = matrix[perm, j]
            drops.append(baseline - _masked_f1(ckpt.params, shuffled, positives))
        results.append({"feature": entry.name, "mean_drop": float(np.mean(drops))})
    results.sort(key=lambda r: -r["mean_drop"])
    return results


def write_importance(results: list[dict]) -> bytes:
    lines = [f"{rank}\t{r['feature']}\t{r['mean_drop']!r}" for rank, r in enumerate(results, 1)]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")
