"""Evaluation metrics and the ``key = value`` report format."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

PSNR_CAP = 99.0


def psnr(reference, test, max_value=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise DimensionError(f"shape mismatch {reference.shape} vs {test.shape}")
    if not max_value > 0:
        raise DomainError("max_value must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_value ** 2 / mse))


def mean_psnr(reference, test, max_value=1.0):
    """Average of the per-image PSNR over rows, each capped at 99 dB."""
    reference = np.atleast_2d(reference)
    test = np.atleast_2d(test)
    if reference.shape != test.shape:
        raise DimensionError(f"shape mismatch {reference.shape} vs {test.shape}")
    return float(np.mean([min(psnr(r, t, max_value), PSNR_CAP) for r, t in zip(reference, test)]))


def error_rate(predicted, truth):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DimensionError("predicted and truth lengths differ")
    if truth.size == 0:
        raise DomainError("error rate of an empty set")
    return float(np.mean(predicted != truth))


def per_class_errors(predicted, truth, num_classes):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    out = np.full(num_classes, np.nan)
    for k in range(num_classes):
        mask = truth == k
        if mask.any():
            out[k] = np.mean(predicted[mask] != k)
    return out


@dataclass(frozen=True)
class EvalReport:
    n_examples: int
    psnr_db: float = None
    error_rate: float = None
    per_class_errors: tuple = None
    extra: tuple = ()  # additional (key, value) pairs, e.g. the noisy-input PSNR

    def __post_init__(self):
        if self.psnr_db is None and self.error_rate is None and self.per_class_errors is None:
            raise DomainError("a report needs at least one metric")

    def items(self):
        out = {"n_examples": str(self.n_examples)}
        if self.psnr_db is not None:
            out["psnr_db"] = _fmt_db(self.psnr_db)
        if self.error_rate is not None:
            out["error_rate"] = f"{self.error_rate:.6f}"
        if self.per_class_errors is not None:
            out["per_class_errors"] = ", ".join(
                "nan" if np.isnan(e) else f"{e:.6f}" for e in self.per_class_errors)
        for key, value in self.extra:
            out[key] = _fmt_db(value) if key.endswith("_db") else str(value)
        return sorted(out.items())

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def _fmt_db(value):
    return f"{min(float(value), PSNR_CAP):.4f}"


def report(n_examples, psnr_db=None, error_rate=None, per_class_errors=None, **extra):
    """Build an :class:`EvalReport`; extra keyword metrics are carried through verbatim."""
    pce = None if per_class_errors is None else tuple(float(e) for e in per_class_errors)
    return EvalReport(int(n_examples), psnr_db, error_rate, pce, tuple(sorted(extra.items())))


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            out[key] = value
    return out
