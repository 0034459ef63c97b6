"""Command-line driver for the two-stage K-fan pipeline.

Every subcommand reads a run config, writes the effective config and seed
into the run directory, and exchanges networks through checkpoint files::

    kfan pretrain --config mnist-small --out runs/mnist
    kfan finetune --config mnist-small --out runs/mnist
    kfan eval     --config mnist-small --out runs/mnist

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

import argparse
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import ImageSet, write_idx, write_multiview
from .errors import ConfigError, KFanError, NumericError
from .gradcheck import gradcheck_suite
from .metrics import PSNR_CAP, psnr
from .network import BranchSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("pretrain", "finetune", "eval", "denoise", "classify", "make-noise", "gradcheck",
            "crossval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="kfan", description="Train and evaluate K-fan deep networks.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True,
                        help="config file, or a bundled config name such as mnist-small")
    parser.add_argument("--seed", type=_seed, help="unsigned 64-bit seed (overrides the config)")
    parser.add_argument("--data-dir", default="data", help="directory holding dataset files")
    parser.add_argument("--out", help="run directory (default runs/<config name>)")
    parser.add_argument("--task", choices=("restore-label", "multiview"))
    parser.add_argument("--checkpoint", help="network to load instead of the run default")
    return parser


def _seed(text):
    value = int(text, 10)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


class Run:
    """Paths and bookkeeping for one run directory."""

    def __init__(self, cfg, out, data_dir):
        self.cfg = cfg
        self.out = Path(out)
        self.data_dir = data_dir
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        (self.out / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")

    def path(self, name):
        return self.out / name

    def figure(self, name):
        folder = self.out / "figures"
        folder.mkdir(exist_ok=True)
        return folder / name

    def network(self, checkpoint, default):
        return load_checkpoint(checkpoint or self.path(default))


def cmd_pretrain(run, args):
    prepared = pipeline.prepare_data(run.cfg, run.data_dir)
    net = pipeline.run_pretrain(run.cfg, prepared)
    save_checkpoint(net, run.path("pretrained.kfan"))
    print(run.path("pretrained.kfan"))


def cmd_finetune(run, args):
    from .plotting import loss_curve

    prepared = pipeline.prepare_data(run.cfg, run.data_dir)
    net = run.network(args.checkpoint, "pretrained.kfan")
    result = pipeline.run_finetune(run.cfg, net, prepared)
    save_checkpoint(result.net, run.path("finetuned.kfan"))
    lines = ["iteration\tloss"] + [f"{i}\t{v:.10g}" for i, v in enumerate(result.history)]
    run.path("finetune_history.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if run.cfg.figures:
        loss_curve(result.history, run.figure("finetune_loss.png"))
    print(f"status\t{result.status}\niterations\t{len(result.history) - 1}\n"
          f"final_loss\t{result.history[-1]:.10g}")


def cmd_eval(run, args):
    prepared = pipeline.prepare_data(run.cfg, run.data_dir)
    net = run.network(args.checkpoint, "finetuned.kfan")
    rep, pred = pipeline.evaluate(run.cfg, net, prepared.test, prepared.num_classes)
    text = rep.to_text()
    run.path("report.txt").write_text(text, encoding="utf-8")
    if run.cfg.figures:
        _eval_figures(run, prepared, pred, rep)
    sys.stdout.write(text)


def _eval_figures(run, prepared, pred, rep):
    from .plotting import confusion_matrix_plot, per_class_error_bars, restoration_grid

    test = prepared.test
    if pred.restored is not None:
        h, w = prepared.image_shape
        restoration_grid(test.y, test.x, pred.restored, h, w, run.figure("restoration.png"))
    per_class_error_bars(rep.per_class_errors, run.figure("per_class_error.png"))
    confusion_matrix_plot(pred.labels, test.labels, prepared.num_classes,
                          run.figure("confusion.png"))


def cmd_denoise(run, args):
    if run.cfg.task != "restore_label":
        raise UsageError("denoise needs the restore-label task")
    prepared = pipeline.prepare_data(run.cfg, run.data_dir)
    net = run.network(args.checkpoint, "finetuned.kfan")
    pred = pipeline.predict(run.cfg, net, prepared.test)
    test = prepared.test
    h, w = prepared.image_shape
    write_idx(run.path("denoised-images-idx3-ubyte.gz"), ImageSet(pred.restored, h, w))
    rows = ["index\tlabel\tpredicted\tnoisy_psnr_db\trestored_psnr_db"]
    for i, (clean, noisy, restored) in enumerate(zip(test.y, test.x, pred.restored)):
        rows.append(f"{i}\t{test.labels[i]}\t{pred.labels[i]}\t"
                    f"{min(psnr(clean, noisy), PSNR_CAP):.4f}\t"
                    f"{min(psnr(clean, restored), PSNR_CAP):.4f}")
    _write_tsv(run.path("denoised.tsv"), rows)


def cmd_classify(run, args):
    prepared = pipeline.prepare_data(run.cfg, run.data_dir)
    net = run.network(args.checkpoint, "finetuned.kfan")
    pred = pipeline.predict(run.cfg, net, prepared.test)
    k = pred.label_probs.shape[1]
    rows = ["index\tlabel\tpredicted\t" + "\t".join(f"p{c}" for c in range(k))]
    for i, probs in enumerate(pred.label_probs):
        rows.append(f"{i}\t{prepared.test.labels[i]}\t{pred.labels[i]}\t"
                    + "\t".join(f"{p:.6f}" for p in probs))
    _write_tsv(run.path("predictions.tsv"), rows)


def _write_tsv(path, rows):
    text = "\n".join(rows) + "\n"
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_make_noise(run, args):
    cfg = run.cfg
    if cfg.dataset != "idx":
        records = pipeline.multiview_records(cfg, run.data_dir)
        write_multiview(run.path("multiview.kmvd"), records)
        print(run.path("multiview.kmvd"))
        return
    prepared = pipeline.prepare_data(cfg, run.data_dir)
    h, w = prepared.image_shape
    for part in ("train", "test"):
        triplets = getattr(prepared, part)
        for kind, images in (("noisy", triplets.x), ("clean", triplets.y)):
            path = run.path(f"{part}-{kind}-images-idx3-ubyte.gz")
            write_idx(path, ImageSet(images, h, w))
            print(path)
        path = run.path(f"{part}-labels-idx1-ubyte.gz")
        write_idx(path, triplets.labels)
        print(path)


def cmd_gradcheck(run, args):
    # architecture from the config; visible widths come from the data when not declared
    if any(b.visible is None for b in run.cfg.branches):
        specs = pipeline.branch_specs(run.cfg, pipeline.prepare_data(run.cfg, run.data_dir))
    else:
        specs = [BranchSpec(b.name, b.visible, b.hidden) for b in run.cfg.branches]
    result = gradcheck_suite(n_nets=20, seed=run.cfg.seed, specs=specs,
                             shared_dim=run.cfg.shared_dim, lam=run.cfg.lam)
    rows = ["net\ttask\tmax_relative_error"]
    rows += [f"{i}\t{task}\t{err:.3e}" for i, task, err in result.errors]
    _write_tsv(run.path("gradcheck.tsv"), rows)
    if not result.passed:
        raise NumericError(f"gradient check failed: max relative error {result.max_error:.3e}")


def cmd_crossval(run, args):
    from .plotting import confusion_matrix_plot, per_class_error_bars

    cv = pipeline.cross_validate(run.cfg, run.data_dir)
    text = cv.report.to_text()
    run.path("report.txt").write_text(text, encoding="utf-8")
    if run.cfg.figures:
        per_class_error_bars(cv.report.per_class_errors, run.figure("per_class_error.png"))
        confusion_matrix_plot(cv.predicted, cv.truth, len(cv.report.per_class_errors),
                              run.figure("confusion.png"))
    sys.stdout.write(text)


HANDLERS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "denoise": cmd_denoise,
    "classify": cmd_classify,
    "make-noise": cmd_make_noise,
    "gradcheck": cmd_gradcheck,
    "crossval": cmd_crossval,
}


def run(argv=None):
    """Parse ``argv``, execute the subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
        cfg = cfg.with_overrides(seed=args.seed, task=args.task)
        out = args.out or Path("runs") / Path(args.config).name.removesuffix(".cfg")
        HANDLERS[args.command](Run(cfg, out, args.data_dir), args)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (KFanError, OSError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)


def _fail(code, exc):
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"kfan: error: {message}", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
