"""``snn`` command line: synth, train, perturb, ablate, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Set ``SNN_THREADS`` to cap the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, help_text
from .cma import build_model, required_inputs
from .events import EVT1ParseError, load_dataset, write_frequency_csv, write_manifest
from .events.codec import ensure_writable, save_sample
from .events.synth import synth_splits
from .nn import checkpoint
from .report import ReportError, final_accuracy, plot_bars, render_bundle
from .train import RunReport, evaluate_perturbed, format_perturbed, percentage_drop, train

log = logging.getLogger("snnfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
STRATEGIES = (("TA", "SA"), ("TA", "TA"), ("SA", "SA"), ("SA", "TA"))


class DataError(RuntimeError):
    pass


# -- data ---------------------------------------------------------------------------


class Data:
    def __init__(self, train, test, class_names):
        self.train, self.test, self.class_names = train, test, class_names

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def load_data(cfg: ExperimentConfig, seed: int) -> Data:
    manifest = cfg["data.manifest"]
    if not manifest:
        synth = cfg.synth_config()
        tr, te = synth_splits(synth, seed, cfg["data.train_per_class"], cfg["data.test_per_class"])
        return Data(tr, te, synth.class_names())
    try:
        tr, te = load_dataset(manifest)
    except (OSError, EVT1ParseError, ValueError) as e:
        raise DataError(f"data.manifest: {e}") from None
    if not tr:
        raise DataError(f"data.manifest: {manifest} lists no training samples")
    names_file = Path(manifest).parent / "classes.txt"
    if names_file.exists():
        names = names_file.read_text().split()
    else:
        names = [str(i) for i in range(max(s.label for s in tr + te) + 1)]
    if max(s.label for s in tr + te) >= len(names):
        raise DataError(f"data.manifest: labels exceed the {len(names)} names in {names_file}")
    return Data(tr, te, names)


def resolve_pair(cfg: ExperimentConfig, names: list[str]) -> tuple[int, int] | None:
    parts = [p.strip() for p in cfg["perturbation.pair"].split(",") if p.strip()]
    if len(parts) == 2 and all(p in names for p in parts):
        return names.index(parts[0]), names.index(parts[1])
    if parts:
        log.info("pair %s not among class names; pair accuracy skipped", ",".join(parts))
    return None


# -- bundle ---------------------------------------------------------------------------


def write_text(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def epochs_rows(seed: int, report: RunReport) -> list[str]:
    return [f"{seed},{line}" for line in report.epochs_csv().splitlines()[1:]]


def _mean(xs) -> float:
    xs = [x for x in xs if x == x]
    return sum(xs) / len(xs) if xs else float("nan")


def run_one(cfg: ExperimentConfig, seed: int, data: Data, fusion=None, on_epoch=None):
    tcfg = cfg.train_config(seed)
    spec = cfg.model_spec(data.n_classes)
    fusion = fusion or cfg.fusion_config()
    return train(tcfg, spec, fusion, data.train, data.test, on_epoch=on_epoch)


def cmd_synth(cfg: ExperimentConfig, out: Path) -> None:
    if cfg["data.manifest"]:
        raise ConfigError(["data.manifest: synth writes a new dataset; leave the manifest empty"])
    try:
        out = ensure_writable(out)
    except OSError as e:
        raise DataError(f"--out: {e}") from None
    synth = cfg.synth_config()
    seed = cfg["train.seed"]
    train_set, test_set = synth_splits(synth, seed, cfg["data.train_per_class"], cfg["data.test_per_class"])
    entries = []
    for split, samples in (("train", train_set), ("test", test_set)):
        for i, s in enumerate(samples):
            rel = f"{split}/{i:05d}"
            save_sample(out / rel, s)
            entries.append((rel, s.label, s.scenario, split))
    write_manifest(out / "manifest.txt", entries)
    (out / "classes.txt").write_text("\n".join(synth.class_names()) + "\n")
    write_frequency_csv(out / "frequency.csv", train_set + test_set, synth.class_names())
    write_text(out / "config.ini", cfg.echo())
    print(f"{len(entries)} samples, {synth.num_classes} classes -> {out / 'manifest.txt'}")


def cmd_train(cfg: ExperimentConfig, out: Path) -> None:
    out = ensure_writable(out)
    rows, finals, lines = [], [], []
    confusion = None
    names = None
    t0 = time.perf_counter()
    for seed in cfg.seeds():
        data = load_data(cfg, seed)
        names = data.class_names
        model, report = run_one(cfg, seed, data)
        rows += epochs_rows(seed, report)
        finals.append(report.final_test_acc)
        lines.append(f"seed {seed}: final test accuracy {report.final_test_acc:.2f}")
        if report.confusion is not None:
            confusion = report.confusion if confusion is None else confusion + report.confusion
        if cfg["output.checkpoint"]:
            checkpoint.save(out / f"model_seed{seed}.ckpt", model, {
                "fusion": cfg["fusion.mode"], "n_classes": data.n_classes, "T": cfg["train.T"], "seed": seed,
            })
    write_text(out / "config.ini", cfg.echo())
    write_text(out / "epochs.csv", "seed,epoch,train_loss,train_acc,test_acc\n" + "\n".join(rows) + "\n")
    if confusion is not None:
        write_text(out / "confusion.csv", RunReport(confusion=confusion).confusion_csv(names))
    summary = [
        f"fusion mode: {cfg['fusion.mode']}",
        f"latency: {cfg['train.t_lat_us'] / 1000:g} ms (dt {cfg['train.dt_us'] / 1000:g} ms x T {cfg['train.T']})",
        *lines,
        f"mean final test accuracy over {len(finals)} seed(s): {_mean(finals):.2f}",
        f"wall time: {time.perf_counter() - t0:.1f} s",
    ]
    write_text(out / "summary.txt", "\n".join(summary) + "\n")
    if cfg["output.plots"]:
        render_bundle(out, out)
    print("\n".join(summary))


def cmd_perturb(cfg: ExperimentConfig, out: Path, ckpt: str | None) -> None:
    fusion = cfg.fusion_config()
    if "event" not in required_inputs(fusion.mode):
        raise ConfigError([f"fusion.mode: {fusion.mode} has no event input to perturb"])
    if ckpt is not None and not Path(ckpt).exists():
        raise DataError(f"--checkpoint: {ckpt} does not exist")
    out = ensure_writable(out)
    rows = ["seed,condition,accuracy,pair_accuracy,drop_pct"]
    acc = {"baseline": [], "#Expt1": [], "#Expt2": []}
    pair_acc = {k: [] for k in acc}
    for seed in cfg.seeds():
        data = load_data(cfg, seed)
        tcfg = cfg.train_config(seed)
        spec = cfg.model_spec(data.n_classes)
        pair = resolve_pair(cfg, data.class_names)
        if ckpt is None:
            model, _ = train(tcfg, spec, fusion, data.train, data.test)
        else:
            model = build_model(replace(spec, neuron=tcfg.neuron_params()), fusion, tcfg.T, 0)
            try:
                _, blobs = checkpoint.load(ckpt)
                checkpoint.load_into(model, blobs)
            except (checkpoint.CheckpointError, ValueError) as e:
                raise DataError(f"--checkpoint: {e}") from None
        results = {
            "baseline": evaluate_perturbed(model, "baseline", tcfg, fusion, data.test, pair=pair),
            "#Expt1": evaluate_perturbed(model, "confusion", tcfg, fusion, data.test, pair=pair),
        }
        if fusion.mode == "none-event":
            results["#Expt2"] = evaluate_perturbed(
                model, "elimination", tcfg, fusion, data.test, data.train, spec, pair,
                replicate=cfg["perturbation.replicate"],
            )
        base = results["baseline"].accuracy
        for name, r in results.items():
            drop = 0.0 if name == "baseline" else -percentage_drop(base, r.accuracy)
            rows.append(f"{seed},{name},{r.accuracy:.4f},{r.pair_accuracy:.4f},{drop:.4f}")
            acc[name].append(r.accuracy)
            pair_acc[name].append(r.pair_accuracy)
    write_text(out / "config.ini", cfg.echo())
    write_text(out / "perturb.csv", "\n".join(rows) + "\n")
    base = _mean(acc["baseline"])
    summary = [f"fusion mode: {fusion.mode}; seeds: {' '.join(map(str, cfg.seeds()))}",
               f"baseline: {base:.2f}"]
    for name, label in (("#Expt1", "spike timing confusion"), ("#Expt2", "temporal elimination")):
        if acc[name]:
            summary.append(f"{name} ({label}): {format_perturbed(base, _mean(acc[name]))}")
        else:
            summary.append(f"{name} ({label}): n/a (defined for the event-only model)")
    if any(x == x for x in pair_acc["baseline"]):
        summary.append("pair accuracy: " + ", ".join(
            f"{k} {_mean(v):.2f}" for k, v in pair_acc.items() if v))
    write_text(out / "summary.txt", "\n".join(summary) + "\n")
    if cfg["output.plots"]:
        render_bundle(out, out)
    print("\n".join(summary))


def ablation_variants(cfg: ExperimentConfig) -> list[tuple[str, str, object]]:
    base = cfg.fusion_config(mode="CMA")
    n_conv = cfg["model.n_conv"]
    placement = base.placement or n_conv
    out = [("strategy", f"{ea}/{fa}", replace(base, event_attn=ea, frame_attn=fa, placement=placement))
           for ea, fa in STRATEGIES]
    out += [("placement", f"block{k}", replace(base, event_attn="TA", frame_attn="SA", placement=k))
            for k in range(1, n_conv + 1)]
    return out


def cmd_ablate(cfg: ExperimentConfig, out: Path) -> None:
    variants = ablation_variants(cfg)
    out = ensure_writable(out)
    rows = ["group,variant,event_attn,frame_attn,placement,seed,test_acc"]
    means: dict[tuple[str, str], list[float]] = {}
    for seed in cfg.seeds():
        data = load_data(cfg, seed)  # identical data and seed across variants
        for group, name, fusion in variants:
            _, report = run_one(cfg, seed, data, fusion)
            rows.append(f"{group},{name},{fusion.event_attn},{fusion.frame_attn},{fusion.placement},{seed},"
                        f"{report.final_test_acc:.4f}")
            means.setdefault((group, name), []).append(report.final_test_acc)
            log.info("%s %s seed %d: %.2f", group, name, seed, report.final_test_acc)
    write_text(out / "config.ini", cfg.echo())
    write_text(out / "ablation.csv", "\n".join(rows) + "\n")
    summary = []
    for group in ("strategy", "placement"):
        items = [(n, _mean(v)) for (g, n), v in means.items() if g == group]
        summary.append(f"{group}: " + ", ".join(f"{n} {m:.2f}" for n, m in items))
        ranked = sorted(items, key=lambda kv: -kv[1])
        summary.append(f"  ordering: {' > '.join(n for n, _ in ranked)}")
    write_text(out / "summary.txt", "\n".join(summary) + "\n")
    if cfg["output.plots"]:
        render_bundle(out, out)
    print("\n".join(summary))


def cmd_report(bundles: list[Path], out: Path | None) -> None:
    written = []
    for b in bundles:
        if not b.is_dir():
            raise DataError(f"{b}: not a bundle directory")
        target = ensure_writable(out) if out else b
        written += render_bundle(b, target)
    with_epochs = [b for b in bundles if (b / "epochs.csv").exists()]
    if len(with_epochs) > 1:
        labels = []
        for b in with_epochs:
            try:
                labels.append(ExperimentConfig.load(b / "config.ini")["fusion.mode"])
            except ConfigError:
                labels.append(b.name)
        target = ensure_writable(out) if out else with_epochs[0].parent
        p = target / "comparison.svg"
        plot_bars(labels, [final_accuracy(b) for b in with_epochs], p, title="final test accuracy")
        written.append(p)
    for p in written:
        print(p)


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI experiment config")
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.dir)")
    common.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="snn",
        description="Spiking event/frame fusion experiments.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n\n" + help_text()
               + "\nexit codes: 0 ok, 2 config error, 3 data error, 4 runtime error"
               + "\nSNN_THREADS caps the numerical thread pool.",
    )
    parser.add_argument("--version", action="version", version=f"snn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset to disk")
    p = sub.add_parser("train", parents=[common], help="train one fusion mode and write a report bundle")
    p.add_argument("--binarize", action="store_true", help="clip event counts to {0,1}")
    p = sub.add_parser("perturb", parents=[common], help="baseline / timing confusion / elimination study")
    p.add_argument("--checkpoint", metavar="FILE", help="evaluate this trained model instead of training one")
    p.add_argument("--replicate", type=int, metavar="T", help="repeat the eliminated frame T times")
    p.add_argument("--binarize", action="store_true", help="clip event counts to {0,1}")
    sub.add_parser("ablate", parents=[common], help="CMA attention-assignment and placement sweep")
    p = sub.add_parser("report", help="render SVG plots from bundle CSVs")
    p.add_argument("bundles", nargs="+", type=Path, metavar="BUNDLE")
    p.add_argument("--out", metavar="DIR", help="write plots here instead of into each bundle")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "binarize", False):
        overrides.append("train.binarize=true")
    if getattr(args, "replicate", None) is not None:
        overrides.append(f"perturbation.replicate={args.replicate}")
    cfg = ExperimentConfig.load(args.config, overrides)
    if args.out:
        cfg = cfg.set("output.dir", args.out)
    return cfg


def _dispatch(args) -> None:
    if args.command == "report":
        cmd_report(args.bundles, Path(args.out) if args.out else None)
        return
    cfg = _config(args)
    out = Path(cfg["output.dir"])
    if args.command == "synth":
        cmd_synth(cfg, out)
    elif args.command == "train":
        cmd_train(cfg, out)
    elif args.command == "perturb":
        cmd_perturb(cfg, out, args.checkpoint)
    elif args.command == "ablate":
        cmd_ablate(cfg, out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    threads = os.environ.get("SNN_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            try:
                n = int(threads)
            except ValueError:
                raise ConfigError([f"SNN_THREADS: expected an integer, got {threads!r}"]) from None
            with threadpool_limits(limits=n):
                _dispatch(args)
        else:
            _dispatch(args)
    except ConfigError as e:
        print(f"snn: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ReportError, EVT1ParseError, checkpoint.CheckpointError) as e:
        print(f"snn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"snn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # anything else is a bug or numerical failure
        log.debug("runtime error", exc_info=True)
        print(f"snn: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
