"""Experiment stages driven by a :class:`RunConfig`: data, pretraining,
fine-tuning, evaluation and cross-validation."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (ImageSet, TripletDataset, binarize, load_idx, load_multiview, make_triplets,
                   split, synth_multiview)
from .errors import DimensionError, DomainError, FormatError
from .finetune import classify, finetune, forward_multiview, forward_restore
from .metrics import error_rate, mean_psnr, per_class_errors, report
from .network import BranchSpec, pretrain_kfan
from .rng import NOISE, PRETRAIN, SPLIT, SYNTH, make_rng


@dataclass(frozen=True)
class Prepared:
    train: TripletDataset
    test: TripletDataset
    num_classes: int
    image_shape: tuple = None  # (height, width) for image tasks


def _resolve(data_dir, name):
    path = Path(name)
    if not path.is_absolute() and data_dir is not None:
        path = Path(data_dir) / path
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    return path


def load_images(cfg, data_dir, which):
    images = load_idx(_resolve(data_dir, getattr(cfg, f"{which}_images")))
    labels = load_idx(_resolve(data_dir, getattr(cfg, f"{which}_labels")))
    if not isinstance(images, ImageSet) or isinstance(labels, ImageSet):
        raise FormatError(f"{which} files must hold images and labels, in that order", 0)
    if len(images) != labels.shape[0]:
        raise DimensionError(f"{len(images)} {which} images but {labels.shape[0]} labels")
    images = ImageSet(images.images, images.height, images.width, labels)
    return binarize(images, cfg.binarize) if cfg.binarize > 0 else images


def _pick(n, wanted, what):
    if wanted is None:
        return n
    if wanted > n:
        raise DomainError(f"{what} = {wanted} exceeds the {n} available records")
    return wanted


def _image_splits(cfg, data_dir):
    pool = load_images(cfg, data_dir, "train")
    if cfg.test_images:
        test = load_images(cfg, data_dir, "test")
        order = make_rng(cfg.seed, SPLIT).permutation(len(pool))
        train = pool.subset(order[:_pick(len(pool), cfg.n_train, "n_train")])
        test_order = make_rng(cfg.seed, SPLIT, 1).permutation(len(test))
        test = test.subset(test_order[:_pick(len(test), cfg.n_test, "n_test")])
        return train, test
    # carve train and test from one pool
    n = len(pool)
    n_test = cfg.n_test if cfg.n_test is not None else n // 5
    n_train = cfg.n_train if cfg.n_train is not None else n - n_test
    if n_train + n_test > n:
        raise DomainError(f"n_train + n_test = {n_train + n_test} exceeds the {n} images")
    order = make_rng(cfg.seed, SPLIT).permutation(n)
    return pool.subset(order[:n_train]), pool.subset(order[n_train:n_train + n_test])


def clean_images(cfg, data_dir):
    """The clean train and test :class:`ImageSet` pair selected by the config."""
    return _image_splits(cfg, data_dir)


def multiview_records(cfg, data_dir):
    if cfg.dataset == "multiview-synth":
        return synth_multiview(cfg.synth_config(), make_rng(cfg.seed, SYNTH))
    return load_multiview(_resolve(data_dir, cfg.multiview_file))


def prepare_data(cfg, data_dir=None, fold=None):
    """Train/test triplets for the configured task.

    Image data: noisy copies of clean images, train and test corrupted with
    separate noise streams. Multiview data: fold ``fold`` (default
    ``cfg.fold``) of a seeded k-fold partition is the test set.
    """
    if cfg.dataset == "idx":
        train_img, test_img = _image_splits(cfg, data_dir)
        k = int(max(train_img.labels.max(), test_img.labels.max())) + 1
        noise = cfg.noise_config()
        train = make_triplets(train_img, noise, cfg.copies, make_rng(cfg.seed, NOISE, 0), k)
        test = make_triplets(test_img, noise, 1, make_rng(cfg.seed, NOISE, 1), k)
        return Prepared(train, test, k, (train_img.height, train_img.width))
    records = multiview_records(cfg, data_dir)
    fold = cfg.fold if fold is None else fold
    folds = split(len(records), k_folds=cfg.folds, seed=cfg.seed)
    test_idx = folds[fold]
    train_idx = np.concatenate([f for i, f in enumerate(folds) if i != fold])
    return Prepared(records.subset(train_idx), records.subset(test_idx), records.dims[2])


def branch_specs(cfg, prepared):
    dims = dict(zip("xyz", prepared.train.dims))
    specs = []
    for b in cfg.branches:
        if b.visible is not None and b.visible != dims[b.name]:
            raise DimensionError(
                f"branch {b.name} declares visible = {b.visible} but the data has {dims[b.name]}")
        specs.append(BranchSpec(b.name, dims[b.name], tuple(b.hidden)))
    return sorted(specs, key=lambda s: s.name)


def run_pretrain(cfg, prepared, fold=0):
    """Layer-wise then joint CD on the training triplets."""
    specs = branch_specs(cfg, prepared)
    return pretrain_kfan(specs, cfg.shared_dim, prepared.train.as_dict(), cfg.train_config(),
                         cfg.joint_config(), make_rng(cfg.seed, PRETRAIN, fold))


def run_finetune(cfg, net, prepared):
    return finetune(net, prepared.train, cfg.finetune_config(), cfg.lbfgs_config())


@dataclass(frozen=True)
class Predictions:
    labels: np.ndarray
    label_probs: np.ndarray
    restored: np.ndarray = None


def predict(cfg, net, dataset):
    if cfg.task == "restore_label":
        restored, probs = forward_restore(net, dataset.x)
        return Predictions(classify(probs), probs, restored)
    probs = forward_multiview(net, dataset.x, dataset.y)
    return Predictions(classify(probs), probs)


def evaluate(cfg, net, dataset, num_classes=None):
    """Metrics on ``dataset``; returns ``(EvalReport, Predictions)``.

    For restoration the PSNR compares restored probabilities with the clean
    targets; ``noisy_psnr_db`` is the same measure for the untouched input.
    """
    pred = predict(cfg, net, dataset)
    truth = dataset.labels
    k = num_classes or dataset.z.shape[1]
    err = error_rate(pred.labels, truth)
    pce = per_class_errors(pred.labels, truth, k)
    if cfg.task == "restore_label":
        rep = report(len(dataset), psnr_db=mean_psnr(dataset.y, pred.restored), error_rate=err,
                     per_class_errors=pce, noisy_psnr_db=mean_psnr(dataset.y, dataset.x))
    else:
        rep = report(len(dataset), error_rate=err, per_class_errors=pce)
    return rep, pred


@dataclass(frozen=True)
class CrossValidation:
    fold_errors: tuple
    report: object
    predicted: np.ndarray
    truth: np.ndarray


def cross_validate(cfg, data_dir=None, progress=None):
    """Pretrain, fine-tune and test once per fold; pooled error over all held-out records."""
    if cfg.dataset == "idx":
        raise DomainError("cross-validation applies to multiview data")
    fold_errors, predicted, truth = [], [], []
    k = None
    for fold in range(cfg.folds):
        prepared = prepare_data(cfg, data_dir, fold)
        k = prepared.num_classes
        net = run_finetune(cfg, run_pretrain(cfg, prepared, fold), prepared).net
        pred = predict(cfg, net, prepared.test)
        fold_errors.append(error_rate(pred.labels, prepared.test.labels))
        predicted.append(pred.labels)
        truth.append(prepared.test.labels)
        if progress is not None:
            progress(fold, fold_errors[-1])
    predicted = np.concatenate(predicted)
    truth = np.concatenate(truth)
    extra = {f"fold_{i:02d}_error": f"{e:.6f}" for i, e in enumerate(fold_errors)}
    rep = report(len(truth), error_rate=error_rate(predicted, truth),
                 per_class_errors=per_class_errors(predicted, truth, k), folds=cfg.folds, **extra)
    return CrossValidation(tuple(fold_errors), rep, predicted, truth)
