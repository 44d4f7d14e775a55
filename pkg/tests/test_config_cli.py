import subprocess
import sys
from pathlib import Path

import pytest

from snnfuse.cli import STRATEGIES, ablation_variants, main
from snnfuse.config import DEFAULTS, ConfigError, ExperimentConfig, help_text
from snnfuse.events import read_evt1, read_manifest
from snnfuse.report import ReportError, read_csv

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.ini"


def run(*argv):
    return main([str(a) for a in argv])


def same_echo(a, b):
    """Config echoes match apart from the output directory line."""
    strip = lambda p: [ln for ln in p.read_text().splitlines() if not ln.startswith("dir = ")]
    return strip(a) == strip(b)


# -- config ------------------------------------------------------------------------------


def test_echo_round_trip():
    cfg = ExperimentConfig.load(TINY, ["fusion.mode=MF", "train.seed=7"])
    again = ExperimentConfig.from_text(cfg.echo())
    assert again.values == cfg.values
    assert again.echo() == cfg.echo()
    assert ExperimentConfig.from_text(ExperimentConfig.default().echo()).values == ExperimentConfig.default().values


def test_every_default_key_is_addressable():
    cfg = ExperimentConfig.default()
    for section, keys in DEFAULTS.items():
        for key in keys:
            assert f"{key} = " in help_text()
            assert cfg[f"{section}.{key}"] == DEFAULTS[section][key]


def test_builders():
    cfg = ExperimentConfig.load(TINY, ["train.repeats=3", "train.seed=5"])
    assert cfg.seeds() == [5, 6, 7]
    assert cfg.train_config(6).seed == 6
    assert cfg.model_spec(8).n_classes == 8
    assert cfg.fusion_config().mode == "CMA"
    assert cfg.synth_config().duration_us == 200_000


def test_short_latency_row_parses():
    cfg = ExperimentConfig.from_text("", ["fusion.mode=none-event", "train.dt_us=10000", "train.T=20"])
    assert cfg.train_config().t_lat_us == 200_000


def test_errors_are_listed_exhaustively():
    text = "[model]\nn_conv = x\nbogus = 1\n[train]\nlr = -1\n[fusion]\nmode = XF\n[nope]\na = 1\n"
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text(text)
    problems = info.value.problems
    joined = "\n".join(problems)
    assert "model.n_conv: expected an integer" in joined
    assert "model.bogus: unknown key" in joined
    assert "nope: unknown section" in joined
    assert any(p.startswith("train.lr") for p in problems)
    assert any(p.startswith("fusion.mode") and "none-event" in p for p in problems)


def test_override_syntax_errors():
    with pytest.raises(ConfigError, match="section.key=value"):
        ExperimentConfig.from_text("", ["train.lr"])
    with pytest.raises(ConfigError, match="syntax"):
        ExperimentConfig.from_text("no section header\n")
    with pytest.raises(ConfigError, match="boolean"):
        ExperimentConfig.from_text("", ["output.plots=maybe"])


def test_zero_samples_rejected():
    with pytest.raises(ConfigError, match="data.train_per_class"):
        ExperimentConfig.from_text("", ["data.train_per_class=0"])


# -- cli -----------------------------------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    assert run("train", "--config", TINY, "--set", "fusion.mode=nope", "--out", tmp_path / "a") == 2
    assert "valid: none-event" in capsys.readouterr().err
    assert run("train", "--config", tmp_path / "missing.ini") == 2
    assert run("perturb", "--config", TINY, "--set", "fusion.mode=none-frame", "--out", tmp_path / "b") == 2
    assert run("train", "--config", TINY, "--set", f"data.manifest={tmp_path / 'none.txt'}",
               "--out", tmp_path / "c") == 3
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty") == 3
    with pytest.raises(SystemExit) as info:
        run("frobnicate")
    assert info.value.code == 2


def test_help_lists_defaults():
    out = subprocess.run([sys.executable, "-m", "snnfuse.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "[fusion]" in out.stdout and "mode = CMA" in out.stdout and "exit codes" in out.stdout


def test_synth_writes_dataset(tmp_path):
    out = tmp_path / "ds"
    assert run("synth", "--config", TINY, "--out", out) == 0
    assert len((out / "classes.txt").read_text().split()) == 8
    entries = read_manifest(out / "manifest.txt")
    assert len(entries) == 8 * 3
    assert len({label for _, label, _, _ in entries}) == 8
    first = out / entries[0][0]
    assert len(read_evt1(first / "events.evt1")) > 0
    assert any(first.glob("*.ppm"))
    again = tmp_path / "ds2"
    assert run("synth", "--config", TINY, "--out", again) == 0
    assert same_echo(out / "config.ini", again / "config.ini")
    for p in out.rglob("*"):
        if p.is_file() and p.name != "config.ini":
            assert p.read_bytes() == (again / p.relative_to(out)).read_bytes(), p


def test_train_bundle_from_manifest_is_reproducible(tmp_path):
    ds = tmp_path / "ds"
    assert run("synth", "--config", TINY, "--out", ds) == 0
    args = ["train", "--config", TINY, "--set", f"data.manifest={ds / 'manifest.txt'}", "--set", "fusion.mode=MF"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert same_echo(tmp_path / "a" / "config.ini", tmp_path / "b" / "config.ini")
    for name in ("epochs.csv", "confusion.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    rows = read_csv(tmp_path / "a" / "epochs.csv", ("seed", "epoch", "test_acc"))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert (tmp_path / "a" / "confusion.csv").read_text().startswith("true\\pred,")
    assert "mean final test accuracy" in (tmp_path / "a" / "summary.txt").read_text()


def test_perturb_from_checkpoint(tmp_path):
    common = ["--config", TINY, "--set", "fusion.mode=none-event", "--set", "data.label_mode=motion"]
    assert run("train", *common, "--set", "output.checkpoint=true", "--out", tmp_path / "t") == 0
    ckpt = tmp_path / "t" / "model_seed0.ckpt"
    assert ckpt.exists()
    assert run("perturb", *common, "--checkpoint", ckpt, "--out", tmp_path / "p") == 0
    rows = read_csv(tmp_path / "p" / "perturb.csv", ("condition", "accuracy"))
    assert [r["condition"] for r in rows] == ["baseline", "#Expt1", "#Expt2"]
    summary = (tmp_path / "p" / "summary.txt").read_text()
    assert "#Expt1 (spike timing confusion)" in summary
    assert run("perturb", *common, "--checkpoint", tmp_path / "nope.ckpt", "--out", tmp_path / "q") == 3
    mismatched = ["--config", TINY, "--set", "fusion.mode=none-event", "--set", "model.hidden=8"]
    assert run("perturb", *mismatched, "--checkpoint", ckpt, "--out", tmp_path / "r") == 3


def test_ablation_variants_cover_strategies_and_placements():
    cfg = ExperimentConfig.load(TINY, ["model.n_conv=3", "model.channels=4,8,8"])
    variants = ablation_variants(cfg)
    strategy = [(f.event_attn, f.frame_attn) for g, _, f in variants if g == "strategy"]
    assert strategy == list(STRATEGIES)
    assert [f.placement for g, _, f in variants if g == "placement"] == [1, 2, 3]


def test_report_plots_are_deterministic(tmp_path):
    bundle = tmp_path / "b"
    bundle.mkdir()
    (bundle / "epochs.csv").write_text("seed,epoch,train_loss,train_acc,test_acc\n0,1,0.2,50,40\n0,2,0.1,70,60\n")
    (bundle / "config.ini").write_text(ExperimentConfig.default().echo())
    assert run("report", bundle, "--out", tmp_path / "p1") == 0
    assert run("report", bundle, "--out", tmp_path / "p2") == 0
    a, b = (tmp_path / "p1" / "accuracy.svg").read_bytes(), (tmp_path / "p2" / "accuracy.svg").read_bytes()
    assert a == b and a.startswith(b"<?xml")
    (bundle / "epochs.csv").write_text("")
    assert run("report", bundle) == 3
    with pytest.raises(ReportError, match="no data rows"):
        (bundle / "epochs.csv").write_text("seed,epoch,train_loss,train_acc,test_acc\n")
        read_csv(bundle / "epochs.csv")
