"""Novel-slot detection: MSP and GDA detectors, validation-set threshold
calibration, and the NS override of in-domain predictions.

MSP flags a token when its maximum posterior probability falls below a
threshold. GDA fits one Gaussian per class with a shared regularized
covariance and flags by distance: "minimum" (smallest class distance above
a threshold) or "difference" (largest minus smallest distance below one).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .corpus import CorpusSplit
from .crf import TaggerModel, posterior_marginals, viterbi_decode
from .features import TokenFeatureMatrix

METHODS = ("msp", "gda")
DETECT_OBJECTIVES = ("binary", "multiple", "binary+multiple")
DISTANCE_STRATEGIES = ("minimum", "difference")
METRICS = ("mahalanobis", "euclidean")

# a 2-class softmax maximum is always >= 0.5, so binary MSP thresholds at
# or below 0.5 can never flag anything
BINARY_MSP_FLOOR = 0.5


class DetectError(Exception):
    pass


class MissingMarginals(DetectError):
    pass


class EmptyClass(DetectError):
    pass


class SingularCovariance(DetectError):
    pass


class NoNovelInVal(DetectError):
    pass


@dataclass(frozen=True)
class GdaModel:
    labels: tuple[str, ...]
    means: np.ndarray  # (C, d)
    covariance: np.ndarray  # (d, d), already regularized
    precision: np.ndarray  # inverse of the regularized covariance
    metric: str = "mahalanobis"
    lam: float = 0.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class DetectorConfig:
    method: str
    objective: str
    distance_strategy: str | None = None
    metric: str = "mahalanobis"
    threshold: float | None = None
    threshold_binary: float | None = None
    threshold_multiple: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.objective not in DETECT_OBJECTIVES:
            raise ValueError(f"objective must be one of {DETECT_OBJECTIVES}")
        if self.objective == "binary+multiple" and self.method != "msp":
            raise ValueError("binary+multiple is only defined for MSP")
        if (self.distance_strategy is not None) != (self.method == "gda"):
            raise ValueError("distance_strategy must be given iff method is gda")
        if self.distance_strategy is not None and self.distance_strategy not in DISTANCE_STRATEGIES:
            raise ValueError(f"distance_strategy must be one of {DISTANCE_STRATEGIES}")

    def describe(self) -> str:
        parts = [self.method, self.objective]
        if self.distance_strategy:
            parts.append(self.distance_strategy)
        return "+".join(parts)


@dataclass(frozen=True)
class PredictionSet:
    """Per utterance: in-domain Viterbi tags, the NS mask, and the final
    tags with flagged tokens overridden to "NS"."""

    ind_tags: tuple[tuple[str, ...], ...]
    ns_mask: tuple[tuple[bool, ...], ...]
    final_tags: tuple[tuple[str, ...], ...]

    @classmethod
    def from_mask(
        cls,
        ind_tags: Sequence[Sequence[str]],
        ns_mask: Sequence[Sequence[bool]],
    ) -> "PredictionSet":
        final = tuple(
            tuple("NS" if m else t for t, m in zip(tags, mask))
            for tags, mask in zip(ind_tags, ns_mask)
        )
        return cls(
            tuple(tuple(t) for t in ind_tags),
            tuple(tuple(bool(m) for m in mask) for mask in ns_mask),
            final,
        )


def msp_score(marginal_row: np.ndarray) -> float:
    """Confidence of one token: the maximum posterior probability."""
    return float(np.max(marginal_row))


def msp_detect(
    binary_max: np.ndarray | None,
    multiple_max: np.ndarray | None,
    cfg: DetectorConfig,
) -> np.ndarray:
    """NS mask over tokens from per-token maximum probabilities."""
    if cfg.objective in ("binary", "binary+multiple") and binary_max is None:
        raise MissingMarginals("binary marginals required")
    if cfg.objective in ("multiple", "binary+multiple") and multiple_max is None:
        raise MissingMarginals("multiple marginals required")
    if cfg.objective == "binary":
        return binary_max < _required(cfg.threshold, "threshold")
    if cfg.objective == "multiple":
        return multiple_max < _required(cfg.threshold, "threshold")
    return (binary_max < _required(cfg.threshold_binary, "threshold_binary")) & (
        multiple_max < _required(cfg.threshold_multiple, "threshold_multiple")
    )


def _required(value: float | None, name: str) -> float:
    if value is None:
        raise ValueError(f"{name} is not set; calibrate or pass it explicitly")
    return value


def _as_dense(X) -> np.ndarray:
    return X.toarray() if sp.issparse(X) else np.asarray(X)


def gda_fit(
    X,
    labels: Sequence[str],
    classes: Sequence[str] | None = None,
    lam: float | None = None,
    metric: str = "mahalanobis",
) -> GdaModel:
    """Per-class means with a shared pooled covariance, regularized by
    lam * I. lam=None uses the scale-aware default 1e-3 * trace / d."""
    labels = np.asarray(labels)
    n, d = X.shape
    if len(labels) != n:
        raise ValueError(f"{n} rows but {len(labels)} labels")
    class_list = tuple(classes) if classes is not None else tuple(sorted(set(labels)))

    means = np.zeros((len(class_list), d))
    counts = np.zeros(len(class_list))
    for c, name in enumerate(class_list):
        mask = labels == name
        counts[c] = mask.sum()
        if counts[c] == 0:
            raise EmptyClass(f"class {name!r} has no support tokens")
        rows = X[np.flatnonzero(mask)]
        means[c] = np.asarray(rows.sum(axis=0)).ravel() / counts[c]

    # pooled within-class covariance via the total second moment
    second = _as_dense(X.T @ X) / n
    between = (means * counts[:, None]).T @ means / n
    cov = second - between
    cov = (cov + cov.T) / 2

    if lam is None:
        lam = 1e-3 * np.trace(cov) / d
        if lam <= 0:
            lam = 1e-3
    elif lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    cov_reg = cov + lam * np.eye(d)
    try:
        chol = scipy.linalg.cho_factor(cov_reg, lower=True)
        precision = scipy.linalg.cho_solve(chol, np.eye(d))
    except scipy.linalg.LinAlgError as e:
        raise SingularCovariance(
            f"covariance not invertible with lam={lam:g}; increase lam"
        ) from e
    precision = (precision + precision.T) / 2
    return GdaModel(class_list, means, cov_reg, precision, metric, lam)


def gda_distances(model: GdaModel, X, chunk: int = 8192) -> np.ndarray:
    """(N, C) distances from each row to each class mean."""
    P = model.precision if model.metric == "mahalanobis" else None
    mu = model.means
    if P is not None:
        Pmu = P @ mu.T  # (d, C)
        mm = np.einsum("cd,cd->c", mu @ P, mu)
    else:
        Pmu = mu.T
        mm = np.einsum("cd,cd->c", mu, mu)

    n = X.shape[0]
    out = np.empty((n, mu.shape[0]))
    for start in range(0, n, chunk):
        rows = X[start : start + chunk]
        cross = np.asarray(rows @ Pmu)
        if sp.issparse(rows):
            xs = rows @ P if P is not None else rows
            xx = np.asarray(rows.multiply(xs).sum(axis=1)).ravel()
        else:
            xs = rows @ P if P is not None else rows
            xx = (rows * xs).sum(axis=1)
        sq = xx.reshape(-1, 1) - 2 * cross + mm[None, :]
        out[start : start + chunk] = np.sqrt(np.clip(sq, 0.0, None))
    return out


def gda_detect(
    model: GdaModel, x: np.ndarray, strategy: str, threshold: float
) -> tuple[bool, np.ndarray]:
    """Flag one token and return its per-class distances."""
    if strategy not in DISTANCE_STRATEGIES:
        raise ValueError(f"strategy must be one of {DISTANCE_STRATEGIES}")
    dists = gda_distances(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    if strategy == "minimum":
        return bool(dists.min() > threshold), dists
    return bool(dists.max() - dists.min() < threshold), dists


def gda_scores(model: GdaModel, X, strategy: str) -> np.ndarray:
    """Per-token detector score: min distance, or max minus min distance."""
    dists = gda_distances(model, X)
    if strategy == "minimum":
        return dists.min(axis=1)
    return dists.max(axis=1) - dists.min(axis=1)


def score_orientation(cfg: DetectorConfig) -> str:
    """Which side of the threshold is flagged NS: "below" or "above"."""
    if cfg.method == "msp" or cfg.distance_strategy == "difference":
        return "below"
    return "above"


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    f1: float
    flagged: int


def _candidates(scores: np.ndarray, floor: float | None = None) -> np.ndarray:
    u = np.unique(scores)
    mids = (u[:-1] + u[1:]) / 2
    cand = np.concatenate([[-np.inf], mids, [np.inf]])
    if floor is not None:
        cand = np.concatenate([[floor], cand[cand > floor]])
    return cand


def _sweep(
    scores: np.ndarray,
    is_ns: np.ndarray,
    orientation: str,
    candidates: np.ndarray,
    eligible: np.ndarray | None = None,
    total_ns: int | None = None,
) -> CalibrationResult:
    """Best-F1 threshold over the candidate set; ties prefer fewer flags.

    `eligible` restricts which tokens the threshold can flag (used for the
    combined MSP sweep); recall denominators always count all NS tokens.
    """
    total_ns = int(is_ns.sum()) if total_ns is None else total_ns
    sub_scores = scores if eligible is None else scores[eligible]
    sub_ns = is_ns if eligible is None else is_ns[eligible]
    order = np.argsort(sub_scores, kind="stable")
    s_sorted = sub_scores[order]
    cum_ns = np.concatenate([[0], np.cumsum(sub_ns[order])])

    if orientation == "below":
        ks = np.searchsorted(s_sorted, candidates, side="left")
        flagged = ks.astype(float)
        tp = cum_ns[ks].astype(float)
    else:
        ks = np.searchsorted(s_sorted, candidates, side="right")
        flagged = (len(s_sorted) - ks).astype(float)
        tp = (cum_ns[-1] - cum_ns[ks]).astype(float)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(flagged > 0, tp / flagged, 0.0)
        recall = tp / total_ns if total_ns else np.zeros_like(tp)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)

    best_f1 = f1.max()
    contenders = np.flatnonzero(f1 == best_f1)
    winner = contenders[np.argmin(flagged[contenders])]
    return CalibrationResult(float(candidates[winner]), float(100 * best_f1), int(flagged[winner]))


def calibrate_threshold(
    scores: np.ndarray,
    is_ns: np.ndarray,
    orientation: str,
    floor: float | None = None,
) -> CalibrationResult:
    """Pick the threshold maximizing NS token F1 on validation scores.

    Candidates are midpoints of consecutive sorted unique scores plus the
    infinite endpoints (plus the floor, for the binary MSP dead zone)."""
    scores = np.asarray(scores, dtype=np.float64)
    is_ns = np.asarray(is_ns, dtype=bool)
    if not is_ns.any() or is_ns.all():
        raise NoNovelInVal("calibration needs both NS and non-NS validation tokens")
    return _sweep(scores, is_ns, orientation, _candidates(scores, floor))


def calibrate_combined_msp(
    binary_scores: np.ndarray,
    multiple_scores: np.ndarray,
    is_ns: np.ndarray,
    passes: int = 2,
) -> tuple[float, float, float]:
    """Coordinate sweep for the two MSP thresholds: alternately optimize
    the binary and multiple thresholds, two passes. Binary candidates stay
    above the 0.5 dead-zone floor. Returns (theta_b, theta_m, val F1)."""
    binary_scores = np.asarray(binary_scores, dtype=np.float64)
    multiple_scores = np.asarray(multiple_scores, dtype=np.float64)
    is_ns = np.asarray(is_ns, dtype=bool)
    if not is_ns.any() or is_ns.all():
        raise NoNovelInVal("calibration needs both NS and non-NS validation tokens")

    total_ns = int(is_ns.sum())
    theta_b, theta_m = np.inf, np.inf
    best = CalibrationResult(np.inf, -1.0, 0)
    for _ in range(passes):
        res = _sweep(
            binary_scores, is_ns, "below",
            _candidates(binary_scores, floor=BINARY_MSP_FLOOR),
            eligible=multiple_scores < theta_m, total_ns=total_ns,
        )
        theta_b = res.threshold
        res = _sweep(
            multiple_scores, is_ns, "below",
            _candidates(multiple_scores),
            eligible=binary_scores < theta_b, total_ns=total_ns,
        )
        theta_m = res.threshold
        best = res
    return theta_b, theta_m, best.f1


def max_marginals(model: TaggerModel, feats: Sequence[TokenFeatureMatrix]) -> np.ndarray:
    """Max posterior probability for every token of a split, concatenated."""
    return np.concatenate(
        [posterior_marginals(model, f).max(axis=1) for f in feats]
    )


def stack_features(feats: Sequence[TokenFeatureMatrix]):
    if sp.issparse(feats[0].vectors):
        return sp.vstack([f.vectors for f in feats], format="csr")
    return np.concatenate([f.vectors for f in feats], axis=0)


def detector_scores(
    cfg: DetectorConfig,
    feats: Sequence[TokenFeatureMatrix],
    multiple_tagger: TaggerModel | None = None,
    binary_tagger: TaggerModel | None = None,
    gda: GdaModel | None = None,
) -> dict[str, np.ndarray]:
    """Per-token scores of a split for the configured detector."""
    out: dict[str, np.ndarray] = {}
    if cfg.method == "msp":
        if cfg.objective in ("multiple", "binary+multiple"):
            if multiple_tagger is None:
                raise MissingMarginals("multiple tagger required")
            out["multiple"] = max_marginals(multiple_tagger, feats)
        if cfg.objective in ("binary", "binary+multiple"):
            if binary_tagger is None:
                raise MissingMarginals("binary tagger required")
            out["binary"] = max_marginals(binary_tagger, feats)
    else:
        if gda is None:
            raise DetectError("gda model required")
        out["gda"] = gda_scores(gda, stack_features(feats), cfg.distance_strategy)
    return out


def ns_mask_from_scores(cfg: DetectorConfig, scores: dict[str, np.ndarray]) -> np.ndarray:
    if cfg.method == "msp":
        return msp_detect(scores.get("binary"), scores.get("multiple"), cfg)
    s = scores["gda"]
    theta = _required(cfg.threshold, "threshold")
    if cfg.distance_strategy == "minimum":
        return s > theta
    return s < theta


def run_detection(
    multiple_tagger: TaggerModel,
    split: CorpusSplit,
    feats: Sequence[TokenFeatureMatrix],
    cfg: DetectorConfig,
    binary_tagger: TaggerModel | None = None,
    gda: GdaModel | None = None,
) -> PredictionSet:
    """In-domain Viterbi tags from the multiple tagger, the configured NS
    mask, and the final tags with flagged tokens (including O) overridden."""
    if len(feats) != len(split.utterances):
        raise DetectError("features not aligned with the split")
    ind_tags = [viterbi_decode(multiple_tagger, f) for f in feats]
    flat = ns_mask_from_scores(
        cfg, detector_scores(cfg, feats, multiple_tagger, binary_tagger, gda)
    )
    masks = []
    pos = 0
    for utt in split.utterances:
        masks.append(tuple(bool(v) for v in flat[pos : pos + len(utt)]))
        pos += len(utt)
    return PredictionSet.from_mask(ind_tags, masks)


def write_predictions(
    path: str | Path, split: CorpusSplit, preds: PredictionSet
) -> None:
    """Three-column CoNLL: token, gold tag, final predicted tag."""
    blocks = []
    for utt, final in zip(split.utterances, preds.final_tags):
        blocks.append(
            "\n".join(
                f"{tok} {gold} {pred}"
                for tok, gold, pred in zip(utt.tokens, utt.tags, final)
            )
        )
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def read_predictions(path: str | Path) -> tuple[list[list[str]], list[list[str]]]:
    """Read a 3-column prediction file; returns (gold, predicted) tags."""
    gold: list[list[str]] = []
    pred: list[list[str]] = []
    cur_g: list[str] = []
    cur_p: list[str] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields:
            if cur_g:
                gold.append(cur_g)
                pred.append(cur_p)
                cur_g, cur_p = [], []
            continue
        if len(fields) != 3:
            raise ValueError(f"{path}:{line_no}: expected 'token gold pred', got {line!r}")
        cur_g.append(fields[1])
        cur_p.append(fields[2])
    if cur_g:
        gold.append(cur_g)
        pred.append(cur_p)
    return gold, pred
