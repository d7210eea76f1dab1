"""Command-line entry point: train, infer, eval, eval-video, ablate, metrics.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Each
training-style command writes its artifacts into a run directory named by
timestamp plus config hash. The DESHADOW_DATA_ROOT environment variable
supplies a default dataset root.
"""
import csv
import os
import sys
import time
from pathlib import Path

import click

from . import inference
from .config import ConfigError, config_hash, dump_config, load_config
from .data import load_dataset
from .trainer import LOG_FIELDS, train

DATA_ROOT_ENV = "DESHADOW_DATA_ROOT"


def _default_root():
    return os.environ.get(DATA_ROOT_ENV)


def _make_run_dir(out_root, cfg):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(out_root) / f"{stamp}-{config_hash(cfg)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


@click.group()
def cli():
    """Weakly-supervised shadow removal: training, inference, evaluation."""


@cli.command("train")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data-root", default=None, help="overrides [data].root / $DESHADOW_DATA_ROOT")
@click.option("--out", "out_root", default="runs", show_default=True)
@click.option("--resume", default=None, type=click.Path(exists=True))
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="override any config key, e.g. --set seed=7 --set tau=15")
def cmd_train(config_path, data_root, out_root, resume, sets):
    """Train the full model from a TOML config."""
    overrides = _parse_sets(sets)
    cfg, data = load_config(config_path, overrides)
    root = data_root or data.get("root") or _default_root()
    if not root:
        raise click.UsageError("no dataset root: use --data-root, [data].root, or $DESHADOW_DATA_ROOT")
    index = load_dataset(root, data.get("split", "train"))
    run_dir = _make_run_dir(out_root, cfg)
    (run_dir / "config.toml").write_text(dump_config(cfg, {"root": str(root), "split": index.split}))
    click.echo(f"run dir: {run_dir}")

    def progress(step, epoch, row):
        if step % 50 == 0 or step == 1:
            click.echo(f"step {step} epoch {epoch} total {row['total']:.4f} dis {row['dis']:.4f}")

    final = train(index, cfg, run_dir, resume=resume, progress=progress)
    click.echo(f"final checkpoint: {final}")


@cli.command("infer")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--mask", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--size", default=inference.TEST_SIZE, show_default=True)
def cmd_infer(checkpoint, image, mask, out, size):
    """Remove the shadow from one image given its mask."""
    inference.remove_shadow(image, mask, checkpoint, out, size=size)
    click.echo(f"wrote {out}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data-root", default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--mask-source", type=click.Choice(["gt", "provided"]), default="gt", show_default=True)
@click.option("--mask-dir", default=None, type=click.Path(exists=True))
@click.option("--size", default=inference.TEST_SIZE, show_default=True)
@click.option("--out", "out_dir", default="eval_out", show_default=True)
def cmd_eval(checkpoint, data_root, split, mask_source, mask_dir, size, out_dir):
    """Evaluate a checkpoint on a split with GT shadow-free images."""
    root = data_root or _default_root()
    if not root:
        raise click.UsageError("no dataset root: use --data-root or $DESHADOW_DATA_ROOT")
    index = load_dataset(root, split)
    report = inference.evaluate(index, checkpoint, mask_source=mask_source,
                                mask_dir=mask_dir, size=size,
                                out_dir=Path(out_dir) / "images")
    _write_report(report, out_dir)


@cli.command("eval-video")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--video-root", required=True, type=click.Path(exists=True))
@click.option("--threshold", default=80, show_default=True)
@click.option("--alt-threshold", default=40, show_default=True)
@click.option("--size", default=inference.TEST_SIZE, show_default=True)
@click.option("--out", "out_dir", default="eval_video_out", show_default=True)
def cmd_eval_video(checkpoint, video_root, threshold, alt_threshold, size, out_dir):
    """Evaluate on a video dataset against per-video Vmax references."""
    report = inference.evaluate_video(video_root, checkpoint, threshold=threshold,
                                      alt_threshold=alt_threshold, size=size,
                                      out_dir=Path(out_dir) / "frames")
    _write_report(report, out_dir)


@cli.command("ablate")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("-m", "--matrix", "matrix_path", required=True, type=click.Path(exists=True),
              help="TOML file with [[variant]] tables: name plus override keys")
@click.option("--data-root", default=None)
@click.option("--out", "out_root", default="runs", show_default=True)
def cmd_ablate(config_path, matrix_path, data_root, out_root):
    """Run a grid of config variants sequentially and merge their results."""
    import tomli

    with open(matrix_path, "rb") as fh:
        matrix = tomli.load(fh)
    variants = matrix.get("variant")
    if not variants:
        raise click.UsageError("matrix file has no [[variant]] tables")
    rows = []
    for var in variants:
        name = var.pop("name", None)
        if not name:
            raise click.UsageError("every [[variant]] needs a name")
        cfg, data = load_config(config_path, var)
        root = data_root or data.get("root") or _default_root()
        if not root:
            raise click.UsageError("no dataset root")
        index = load_dataset(root, data.get("split", "train"))
        run_dir = Path(out_root) / f"ablate-{name}-{config_hash(cfg)}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.toml").write_text(dump_config(cfg, {"root": str(root)}))
        click.echo(f"variant {name}: {run_dir}")
        train(index, cfg, run_dir)
        rows.append({"variant": name, "run_dir": str(run_dir), **_tail_losses(run_dir)})
    merged = Path(out_root) / "ablation_summary.csv"
    with open(merged, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"summary: {merged}")


@cli.command("metrics")
@click.option("--pred-dir", required=True, type=click.Path(exists=True))
@click.option("--gt-dir", required=True, type=click.Path(exists=True))
@click.option("--mask-dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="metrics_out", show_default=True)
def cmd_metrics(pred_dir, gt_dir, mask_dir, out_dir):
    """Score a directory of predictions against GT images and masks."""
    report = inference.metrics_over_dirs(pred_dir, gt_dir, mask_dir)
    _write_report(report, out_dir)


def _parse_sets(sets):
    overrides = {}
    for item in sets:
        if "=" not in item:
            raise click.UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if raw.lower() in ("true", "false"):
            value = raw.lower() == "true"
        else:
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
        overrides[key.strip()] = value
    return overrides


def _tail_losses(run_dir, n=10):
    """Mean of the last n logged loss rows of a run."""
    with open(Path(run_dir) / "training_log.csv") as fh:
        rows = list(csv.DictReader(fh))[-n:]
    out = {}
    for name in LOG_FIELDS[2:]:
        out[f"mean_{name}"] = sum(float(r[name]) for r in rows) / len(rows)
    return out


def _write_report(report, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "report.csv")
    report.to_json(out_dir / "report.json")
    click.echo(f"rmse shadow/nonshadow/all: {report.rmse_shadow:.3f} / "
               f"{report.rmse_nonshadow:.3f} / {report.rmse_all:.3f}")
    click.echo(f"report written to {out_dir}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except Exception as exc:  # runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
