from .classifier import ImageClassifier, train_image_classifier
from .lpips import lpips, lpips_pairs
from .report import EvalEntry, EvalManifest, MetricsReport, evaluate_images, evaluate_run, write_report
from .scores import fid, inception_score, inception_score_from_probs, nway_topk_acc, nway_topk_from_scores

__all__ = [
    "EvalEntry",
    "EvalManifest",
    "ImageClassifier",
    "MetricsReport",
    "evaluate_images",
    "evaluate_run",
    "fid",
    "inception_score",
    "inception_score_from_probs",
    "lpips",
    "lpips_pairs",
    "nway_topk_acc",
    "nway_topk_from_scores",
    "train_image_classifier",
    "write_report",
]
