"""Evaluation Harness -- embed, attack, decode and aggregate over a test split.

For every test cloud:
  - embed its assigned watermark
  - apply each attack with a per-(cloud, attack) seed
  - decode with the SVD extractor and, when a decoder is given, the network
  - score bits against the truth and geometry against the watermarked cloud

Clouds run in parallel; results land in index slots so the reduction order
(and therefore the bundle) does not depend on scheduling. Clouds that raise
a WatermarkError are skipped with a reason; more than 10% skipped aborts.
A learned-decoder failure on a cloud keeps its SVD samples and drops only
its DL samples; the run aborts only when the decoder fails on every cloud.

Usage:
    bundle = run_evaluation(manifest, EmbedConfig(), decoder=NeuralBitDecoder(ckpt))
    render_report(bundle, "report/")
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from point_watermark import watermark_config as cfg
from point_watermark.attacks import AttackKind, AttackSpec, apply_attack, default_attacks
from point_watermark.block_svd import EmbedConfig, EmbedKey, Watermark, embed, extract
from point_watermark.checkpoint import Checkpoint
from point_watermark.dataset_manifest import DatasetManifest, ManifestEntry
from point_watermark.errors import (
    CheckpointConfigMismatch,
    ConfigError,
    EmptyDataset,
    EmptyScoreSet,
    EvaluationAborted,
    WatermarkError,
)
from point_watermark.fidelity_metrics import (
    MetricSample,
    aggregate,
    metric_sample,
    roc_auc,
    roc_curve,
)
from point_watermark.neural_decoder import decode_logits, predicted_bits
from point_watermark.seeding import derive_seed, make_rng, stable_hash64

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, Dict[str, Any]], None]

SVD = "SVD"
DL = "DL"


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------

class BitDecoder(Protocol):
    """Anything that maps a batch of clouds to (B, n_bits) logits."""

    n_bits: int

    def decode_logits(self, clouds: Sequence[np.ndarray]) -> np.ndarray: ...


class NeuralBitDecoder:
    """BitDecoder backed by a trained checkpoint."""

    def __init__(self, checkpoint: Checkpoint) -> None:
        self.checkpoint = checkpoint
        self.model = checkpoint.to_model()
        self.n_bits = checkpoint.config.n_bits

    def decode_logits(self, clouds: Sequence[np.ndarray]) -> np.ndarray:
        return decode_logits(self.model, clouds)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    """Mean and std of every metric for one (attack, decoder) pair."""

    attack: str
    kind: str
    decoder: str
    n_samples: int
    stats: Dict[str, Tuple[float, float]]

    def mean(self, metric: str) -> float:
        return self.stats[metric][0]

    def std(self, metric: str) -> float:
        return self.stats[metric][1]


@dataclass
class GapRow:
    attack: str
    kind: str
    svd_accuracy: float
    dl_accuracy: float

    @property
    def gap(self) -> float:
        return self.dl_accuracy - self.svd_accuracy


@dataclass
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    n_positive: int
    n_negative: int


@dataclass
class TrendCheck:
    """Pass/fail record for one expected trend."""

    name: str
    passed: bool
    issues: List[str] = field(default_factory=list)


@dataclass
class ReportBundle:
    rows: List[ResultRow] = field(default_factory=list)
    gaps: List[GapRow] = field(default_factory=list)
    roc: Optional[RocResult] = None
    trend_checks: List[TrendCheck] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)
    decoder_skipped: List[Tuple[str, str]] = field(default_factory=list)   # SVD rows kept, DL rows lack these clouds
    n_clouds: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def row(self, attack: str, decoder: str) -> Optional[ResultRow]:
        for r in self.rows:
            if r.attack == attack and r.decoder == decoder:
                return r
        return None


@dataclass
class CloudOutcome:
    """Per-cloud samples, keyed by (attack index, decoder)."""

    path: str
    bits: Watermark
    samples: Dict[Tuple[int, str], MetricSample] = field(default_factory=dict)
    probabilities: Optional[np.ndarray] = None   # decoder output on the watermarked cloud
    error: Optional[str] = None
    decoder_error: Optional[str] = None


# ---------------------------------------------------------------------------
# Ownership scores
# ---------------------------------------------------------------------------

def ownership_score(probabilities: Sequence[float], bits: Any) -> float:
    """Mean over bits of p_i where the claim says 1, else 1 - p_i."""
    p = np.asarray(probabilities, dtype=np.float64)
    b = Watermark.coerce(bits).as_array()
    return float(np.mean(np.where(b == 1, p, 1.0 - p)))


def ownership_scores(
    prob_rows: Sequence[Sequence[float]],
    bits_rows: Sequence[Any],
    negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD,
    seed: int = 0,
) -> Tuple[List[float], List[float]]:
    """Scores for the true pattern (positives) and for random wrong patterns (negatives).

    Wrong patterns are uniform over the 2^n - 1 patterns that differ from the truth.
    """
    positives: List[float] = []
    negatives: List[float] = []
    for j, (probs, bits) in enumerate(zip(prob_rows, bits_rows)):
        wm = Watermark.coerce(bits)
        n = len(wm)
        truth = wm.to_int()
        positives.append(ownership_score(probs, wm))
        rng = make_rng(seed, j)
        for _ in range(negatives_per_cloud):
            value = int(rng.integers((1 << n) - 1))
            if value >= truth:
                value += 1
            negatives.append(ownership_score(probs, Watermark.from_int(value, n)))
    return positives, negatives


def roc_from_probabilities(
    prob_rows: Sequence[Sequence[float]],
    bits_rows: Sequence[Any],
    negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD,
    seed: int = 0,
) -> RocResult:
    pos, neg = ownership_scores(prob_rows, bits_rows, negatives_per_cloud, seed)
    thresholds, tpr, fpr = roc_curve(pos, neg)
    return RocResult(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=roc_auc(pos, neg),
                     n_positive=len(pos), n_negative=len(neg))


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def embed_entry(manifest: DatasetManifest, entry: ManifestEntry,
                embed_config: EmbedConfig) -> Tuple[np.ndarray, EmbedKey]:
    """Watermark the entry's cloud with its assigned bits."""
    c = embed_config
    return embed(manifest.load_cloud(entry), entry.bits, c.alpha, c.mode,
                 normalized_embedding=c.normalized_embedding, max_iterations=c.max_iterations)


class EvaluationRunner:
    """Runs the embed -> attack -> decode -> score pipeline over manifest entries.

    Args:
        embed_config: Embedding mode, strength and loop settings.
        attacks: Attacks in report order (default: Clean + catalogue).
        decoder: Optional learned decoder; without it only SVD rows are produced.
        attack_seed: Root seed for per-cloud attack randomness.
        max_workers: Thread pool size; 1 runs sequentially.
        progress_callback: Optional callback for progress events.
    """

    def __init__(
        self,
        embed_config: EmbedConfig,
        attacks: Optional[Sequence[AttackSpec]] = None,
        decoder: Optional[BitDecoder] = None,
        attack_seed: int = 0,
        max_workers: int = 1,
        progress_callback: Optional[ProgressCallback] = None,
    ) -> None:
        self.embed_config = embed_config
        self.attacks = list(attacks) if attacks is not None else default_attacks()
        if not self.attacks:
            raise ConfigError("attack list is empty")
        self.decoder = decoder
        self.attack_seed = attack_seed
        self.max_workers = max(1, max_workers)
        self.progress_callback = progress_callback

    def _emit(self, event: str, data: Dict[str, Any]) -> None:
        if self.progress_callback:
            self.progress_callback(event, data)

    def evaluate_cloud(self, manifest: DatasetManifest, entry: ManifestEntry) -> CloudOutcome:
        outcome = CloudOutcome(path=entry.path, bits=entry.bits)
        try:
            wm_cloud, key = embed_entry(manifest, entry, self.embed_config)
            path_stream = stable_hash64(entry.path)
            attacked: List[np.ndarray] = []
            for i, spec in enumerate(self.attacks):
                instance = spec.with_seed(derive_seed(self.attack_seed, path_stream, i))
                cloud = apply_attack(wm_cloud, instance)
                attacked.append(cloud)
                outcome.samples[(i, SVD)] = metric_sample(entry.bits, extract(cloud, key), wm_cloud, cloud)
        except WatermarkError as exc:
            outcome.error = f"{type(exc).__name__}: {exc}"
            return outcome

        if self.decoder is not None:
            try:
                logits = self.decoder.decode_logits(attacked + [wm_cloud])
                dl_samples = {}
                for i, cloud in enumerate(attacked):
                    decoded = Watermark(tuple(predicted_bits(logits[i])))
                    dl_samples[(i, DL)] = metric_sample(entry.bits, decoded, wm_cloud, cloud)
            except WatermarkError as exc:
                outcome.decoder_error = f"{type(exc).__name__}: {exc}"
            else:
                outcome.samples.update(dl_samples)
                outcome.probabilities = _sigmoid(logits[-1])
        return outcome

    def run(self, manifest: DatasetManifest, entries: Sequence[ManifestEntry],
            negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD, roc_seed: int = 0) -> ReportBundle:
        if not entries:
            raise EmptyDataset("no clouds to evaluate")
        if self.decoder is not None and self.decoder.n_bits != manifest.n_bits:
            raise CheckpointConfigMismatch(
                f"decoder reads {self.decoder.n_bits} bits, manifest assigns {manifest.n_bits}"
            )

        self._emit("evaluation_started", {"clouds": len(entries), "attacks": len(self.attacks)})
        slots: List[Optional[CloudOutcome]] = [None] * len(entries)
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = {pool.submit(self.evaluate_cloud, manifest, e): i for i, e in enumerate(entries)}
            for future in as_completed(futures):
                index = futures[future]
                outcome = future.result()
                slots[index] = outcome
                if outcome.error:
                    logger.warning("skipping %s: %s", outcome.path, outcome.error)
                    self._emit("cloud_skipped", {"path": outcome.path, "reason": outcome.error})
                else:
                    if outcome.decoder_error:
                        logger.warning("learned decoder skipped %s: %s", outcome.path, outcome.decoder_error)
                        self._emit("decoder_skipped", {"path": outcome.path, "reason": outcome.decoder_error})
                    self._emit("cloud_completed", {"path": outcome.path, "index": index,
                                                   "total": len(entries)})

        outcomes = [o for o in slots if o is not None]
        skipped = [(o.path, o.error) for o in outcomes if o.error]
        good = [o for o in outcomes if not o.error]
        if len(skipped) > cfg.ABORT_FAILURE_FRACTION * len(entries) or not good:
            raise EvaluationAborted(
                f"{len(skipped)} of {len(entries)} clouds failed (limit "
                f"{cfg.ABORT_FAILURE_FRACTION:.0%}); first: {skipped[0][0]}: {skipped[0][1]}"
            )

        decoded = [o for o in good if not o.decoder_error]
        decoder_skipped = [(o.path, o.decoder_error) for o in good if o.decoder_error]
        if self.decoder is not None and not decoded:
            raise EvaluationAborted(
                f"learned decoder failed on all {len(good)} clouds; "
                f"first: {decoder_skipped[0][0]}: {decoder_skipped[0][1]}"
            )

        bundle = ReportBundle(skipped=skipped, decoder_skipped=decoder_skipped, n_clouds=len(good))
        sources = {SVD: good, DL: decoded}
        decoders = [SVD] + ([DL] if self.decoder is not None else [])
        for i, spec in enumerate(self.attacks):
            for name in decoders:
                samples = [o.samples[(i, name)] for o in sources[name]]
                bundle.rows.append(ResultRow(attack=spec.label, kind=spec.kind.value, decoder=name,
                                             n_samples=len(samples), stats=aggregate(samples)))
            if self.decoder is not None:
                bundle.gaps.append(GapRow(
                    attack=spec.label,
                    kind=spec.kind.value,
                    svd_accuracy=bundle.row(spec.label, SVD).mean("accuracy"),
                    dl_accuracy=bundle.row(spec.label, DL).mean("accuracy"),
                ))

        if self.decoder is not None:
            bundle.roc = roc_from_probabilities(
                [o.probabilities for o in decoded], [o.bits for o in decoded], negatives_per_cloud, roc_seed
            )
        bundle.trend_checks = trend_checks(bundle)
        bundle.config = {
            "embed": self.embed_config.to_dict(),
            "attacks": [a.to_dict() for a in self.attacks],
            "attack_seed": self.attack_seed,
            "decoder": DL if self.decoder is not None else None,
            "n_bits": manifest.n_bits,
            "n_points": manifest.n_points,
            "sample_seed": manifest.seed,
        }
        self._emit("evaluation_completed", {"clouds": len(good), "skipped": len(skipped),
                                            "decoder_skipped": len(decoder_skipped),
                                            "auc": bundle.roc.auc if bundle.roc else None})
        return bundle


def _entries(manifest: DatasetManifest, limit: Optional[int]) -> List[ManifestEntry]:
    entries = manifest.test
    if limit is not None:
        entries = entries[:max(0, limit)]
    return entries


def run_evaluation(
    manifest: DatasetManifest,
    embed_config: EmbedConfig,
    decoder: Optional[BitDecoder] = None,
    attacks: Optional[Sequence[AttackSpec]] = None,
    attack_seed: int = 0,
    limit: Optional[int] = None,
    max_workers: int = 1,
    negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD,
    roc_seed: int = 0,
    progress_callback: Optional[ProgressCallback] = None,
) -> ReportBundle:
    """Evaluate the manifest's test split (first ``limit`` clouds when set)."""
    runner = EvaluationRunner(embed_config, attacks, decoder, attack_seed, max_workers, progress_callback)
    return runner.run(manifest, _entries(manifest, limit), negatives_per_cloud, roc_seed)


def ownership_roc(
    manifest: DatasetManifest,
    embed_config: EmbedConfig,
    decoder: BitDecoder,
    negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD,
    seed: int = 0,
    limit: Optional[int] = None,
    max_workers: int = 1,
) -> RocResult:
    """ROC of true-pattern scores against wrong-pattern scores on watermarked test clouds."""
    entries = _entries(manifest, limit)
    if decoder.n_bits != manifest.n_bits:
        raise CheckpointConfigMismatch(
            f"decoder reads {decoder.n_bits} bits, manifest assigns {manifest.n_bits}"
        )

    def watermarked(entry: ManifestEntry) -> Optional[np.ndarray]:
        try:
            wm_cloud, _ = embed_entry(manifest, entry, embed_config)
        except WatermarkError as exc:
            logger.warning("skipping %s: %s", entry.path, exc)
            return None
        return wm_cloud

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        clouds = list(pool.map(watermarked, entries))
    kept = [(c, e) for c, e in zip(clouds, entries) if c is not None]
    if not kept:
        raise EmptyScoreSet("no watermarked clouds to score")
    logits = decoder.decode_logits([c for c, _ in kept])
    return roc_from_probabilities(_sigmoid(logits), [e.bits for _, e in kept], negatives_per_cloud, seed)


# ---------------------------------------------------------------------------
# Trend checks
# ---------------------------------------------------------------------------

def trend_checks(bundle: ReportBundle) -> List[TrendCheck]:
    """Expected qualitative outcomes, each as a pass/fail record."""
    checks: List[TrendCheck] = []

    clean = [r for r in bundle.rows if r.kind == AttackKind.CLEAN.value and r.decoder == SVD]
    if clean:
        acc = clean[0].mean("accuracy")
        checks.append(TrendCheck("svd_clean_exact", acc == 1.0,
                                 [] if acc == 1.0 else [f"clean SVD accuracy {acc:.6f} != 1"]))

    benign = [r for r in bundle.rows if r.attack in cfg.SVD_BENIGN_ATTACKS and r.decoder == SVD]
    if benign:
        low = [f"{r.attack}: {r.mean('accuracy'):.3f} < {cfg.BENIGN_ACCURACY_GATE}"
               for r in benign if r.mean("accuracy") < cfg.BENIGN_ACCURACY_GATE]
        checks.append(TrendCheck("svd_benign_robust", not low, low))

    favoured = [g for g in bundle.gaps if g.attack in cfg.DL_FAVOURED_ATTACKS]
    if favoured:
        wrong = [f"{g.attack}: gap {g.gap:+.3f}" for g in favoured if not g.gap > 0]
        needed = min(cfg.GAP_SIGN_MIN_MATCHES, len(favoured))
        checks.append(TrendCheck("dl_gap_sign", len(favoured) - len(wrong) >= needed, wrong))
    return checks


def format_bundle(bundle: ReportBundle) -> str:
    """Short text summary for terminals and logs."""
    lines = [f"Evaluated {bundle.n_clouds} clouds ({len(bundle.skipped)} skipped)"]
    for r in bundle.rows:
        lines.append(f"  {r.attack:<34} {r.decoder:<3}  acc={r.mean('accuracy'):.3f}"
                     f"  psnr={r.mean('psnr'):.2f}")
    if bundle.roc:
        lines.append(f"  Ownership AUC: {bundle.roc.auc:.3f}")
    for c in bundle.trend_checks:
        lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}")
    return "\n".join(lines)

