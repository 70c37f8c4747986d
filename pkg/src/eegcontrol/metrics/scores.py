"""Distribution-level and semantic scores for generated images."""

from __future__ import annotations

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import xlogy

from ..errors import MetricError

log = logging.getLogger(__name__)


def inception_score_from_probs(probs: np.ndarray, splits: int = 10) -> Tuple[float, float]:
    """``exp(E_x KL(p(y|x) || p(y)))`` per split; returns mean and std over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"class posteriors must be (N, K), got {p.shape}")
    if splits < 1 or p.shape[0] < splits:
        raise ValueError(f"need at least {splits} images for {splits} splits, got {p.shape[0]}")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = (xlogy(part, part) - xlogy(part, marginal)).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(generated_images, class_predictor: Callable, splits: int = 10) -> Tuple[float, float]:
    """IS of ``generated_images`` under ``class_predictor`` (images -> class probabilities)."""
    n = len(generated_images)
    if n < splits:
        raise ValueError(f"need at least {splits} images for {splits} splits, got {n}")
    return inception_score_from_probs(class_predictor(generated_images), splits)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(real_features, generated_features, *, tol: float = 1e-8) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The trace of the matrix square root is taken from the eigenvalues of
    the symmetric product ``S_r^{1/2} S_g S_r^{1/2}``; eigenvalues slightly
    below zero (round-off on near-singular covariances) are clipped.
    """
    xr = np.asarray(real_features, dtype=np.float64)
    xg = np.asarray(generated_features, dtype=np.float64)
    if xr.ndim != 2 or xg.ndim != 2:
        raise ValueError("feature sets must be 2-D (N, dim)")
    if xr.shape[1] != xg.shape[1]:
        raise ValueError(f"feature dimension mismatch: {xr.shape[1]} vs {xg.shape[1]}")
    if xr.shape[0] < 2 or xg.shape[0] < 2:
        raise ValueError("each feature set needs at least 2 vectors")
    mu_r, mu_g = xr.mean(0), xg.mean(0)
    cov_r = np.atleast_2d(np.cov(xr, rowvar=False))
    cov_g = np.atleast_2d(np.cov(xg, rowvar=False))
    root_r = _psd_sqrt(cov_r)
    prod = root_r @ cov_g @ root_r
    w = np.linalg.eigvalsh((prod + prod.T) / 2)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol * scale:
        log.warning("FID: covariance product has eigenvalue %.3g; clipped to 0", w.min())
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    value = float(((mu_r - mu_g) ** 2).sum() + np.trace(cov_r) + np.trace(cov_g) - 2.0 * tr_sqrt)
    if not np.isfinite(value):
        raise MetricError("FID is not finite", {
            "mean_norms": (float(np.linalg.norm(mu_r)), float(np.linalg.norm(mu_g))),
            "min_eigenvalue": float(w.min(initial=np.nan)),
        })
    return max(value, 0.0)


def nway_topk_from_scores(gt_scores, gen_scores, n_way: int = 50, k: int = 1, seed: int = 0) -> float:
    """N-way top-k accuracy from classifier scores of ground-truth and generated images.

    The target is the classifier's top class on the ground-truth image.
    Each trial draws ``n_way - 1`` distractor classes without replacement;
    it succeeds when fewer than ``k`` candidates outscore the target on the
    generated image.
    """
    gt = np.asarray(gt_scores, dtype=np.float64)
    gen = np.asarray(gen_scores, dtype=np.float64)
    if gt.shape != gen.shape or gt.ndim != 2:
        raise ValueError(f"score arrays must share shape (N, K), got {gt.shape} and {gen.shape}")
    n, num_classes = gt.shape
    if n == 0:
        raise ValueError("no pairs to score")
    if n_way < 2:
        raise ValueError("n_way must be >= 2")
    if n_way > num_classes:
        raise ValueError(f"n_way={n_way} exceeds the classifier's {num_classes} classes")
    if not 1 <= k < n_way:
        raise ValueError(f"k must satisfy 1 <= k < n_way, got k={k}, n_way={n_way}")
    rng = np.random.default_rng(seed)
    targets = gt.argmax(axis=1)
    hits = 0
    for i in range(n):
        target = targets[i]
        others = rng.choice(num_classes - 1, size=n_way - 1, replace=False)
        others = others + (others >= target)  # skip the target index
        better = int((gen[i, others] > gen[i, target]).sum())
        hits += better < k
    return hits / n


def nway_topk_acc(manifest, classifier: Callable, n_way: Optional[int] = None, k: Optional[int] = None,
                  seed: int = 0) -> float:
    """N-way top-k accuracy over an :class:`EvalManifest` with one shared classifier."""
    gt, gen = manifest.load_images()
    n_way = manifest.n_way if n_way is None else n_way
    k = manifest.k if k is None else k
    score = getattr(classifier, "predict_proba", classifier)
    return nway_topk_from_scores(score(gt), score(gen), n_way, k, seed)
