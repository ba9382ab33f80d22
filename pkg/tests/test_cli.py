import argparse
import csv

import numpy as np
import pytest

from softarm import artifacts as art
from softarm import cli
from softarm.control import report_from_csv, report_metrics
from softarm.models import params_digest

SMOKE = """\
datagen.total_frames = 120
train.epochs_forward = 2
train.epochs_inverse = 1
traj.n_waypoints = 8
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMOKE + f"out = {tmp_path / 'out'}\n")
    return str(path)


def run(*argv):
    return cli.main(list(argv))


def _ns(**kw):
    base = dict(config=None, seed=None, frames=None, lam=None, loss=None, out=None)
    base.update(kw)
    return argparse.Namespace(**base)


def test_config_precedence(config):
    cfg = cli.resolve_config(_ns(config=config), environ={})
    assert cfg.data.total_frames == 120 and cfg.n_waypoints == 8
    cfg = cli.resolve_config(_ns(config=config, frames=50, seed=4, loss="ic", lam=0.5), environ={})
    assert cfg.data.total_frames == 50 and cfg.train.variant == "f+i+c" and cfg.train.lam == 0.5
    assert cfg.data.seed == 4 and cfg.train.seed == 4
    cfg = cli.resolve_config(_ns(config=config, seed=4), environ={cli.SEED_ENV: "9"})
    assert cfg.seed == 9 and cfg.data.seed == 9


@pytest.mark.parametrize("text", ["bogus.key = 1\n", "train.variant = zz\n", "no equals sign\n"])
def test_bad_config_exits_2(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert run("gen-data", "--config", str(path), "--out", str(tmp_path)) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        run("train", "sideways")
    assert exc.value.code == 2


def test_help_mentions_seed_env(capsys):
    with pytest.raises(SystemExit):
        run("--help")
    assert cli.SEED_ENV in capsys.readouterr().out


def test_gen_data_smoke_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("gen-data", "--frames", "100", "--out", str(a), "--seed", "3") == 0
    assert run("gen-data", "--frames", "100", "--out", str(b), "--seed", "3") == 0
    ta, tb = (a / "data.csv").read_text(), (b / "data.csv").read_text()
    assert ta.split("---\n", 1)[1] == tb.split("---\n", 1)[1]
    ds = art.load_dataset(a / "data.csv")
    assert len(ds) == 100 and ds.extra["seed"] == "3"


def test_missing_dependencies_exit_3(tmp_path, config):
    assert run("train", "forward", "--config", config) == 3
    assert run("gen-data", "--config", config) == 0
    assert run("train", "inverse", "--config", config, "--loss", "c") == 3
    assert run("track", "--config", config, "--loss", "c") == 3


def test_pipeline_end_to_end(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert run("gen-data", "--config", config) == 0
    assert run("train", "forward", "--config", config) == 0
    assert (out / "forward.loss.csv").exists()
    for loss in ("i", "ic", "c"):
        assert run("train", "inverse", "--config", config, "--loss", loss) == 0
    fwd = art.load_checkpoint(out / "forward.ckpt")
    invs = [art.load_checkpoint(out / f"inverse-{t}.ckpt") for t in ("i", "ic", "c")]
    assert {ck.meta["forward_fingerprint"] for ck in invs} == {params_digest(fwd.params)}
    assert {ck.config.variant for ck in invs} == {"f+i", "f+i+c", "f+c"}
    assert invs[0].run_config["datagen.total_frames"] == "120"
    assert run("eval", "--config", config) == 0
    assert "inverse f+c" in capsys.readouterr().out

    assert run("track", "--config", config, "--loss", "c", "--traj", "circle") == 0
    rep = report_from_csv((out / "track-c-circle.csv").read_text())
    assert len(rep) == 8
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("circle")][0]
    assert f"{report_metrics(rep)[0]:7.3f}" in line
    assert run("track", "--config", config, "--loss", "c") == 0
    assert "all " in capsys.readouterr().out
    assert all((out / f"track-c-{k}.svg").exists() for k in ("circle", "ushape", "figure8", "star"))

    assert run("plot", "--config", config, str(out / "track-c-star.csv"), str(out / "forward.loss.csv")) == 0
    assert (out / "forward.loss.svg").read_text().startswith("<svg")


def test_retrain_same_seed_identical_blocks(tmp_path, config):
    out = tmp_path / "out"
    run("gen-data", "--config", config)
    run("train", "forward", "--config", config)
    first = (out / "forward.ckpt").read_text()
    run("train", "forward", "--config", config)
    assert art.parameter_blocks(first) == art.parameter_blocks((out / "forward.ckpt").read_text())


def test_fingerprint_mismatch_exits_4(tmp_path, config):
    run("gen-data", "--config", config)
    run("train", "forward", "--config", config)
    other = tmp_path / "other.cfg"
    other.write_text(SMOKE + f"out = {tmp_path / 'out'}\nplant.s0 = 110.0\n")
    assert run("eval", "--config", str(other)) == 4


def test_truncated_artifact_exits_nonzero(tmp_path, config):
    run("gen-data", "--config", config)
    path = tmp_path / "out" / "data.csv"
    path.write_text(path.read_text()[:2000])
    assert run("train", "forward", "--config", config) == 1


def test_ablation_table(tmp_path, config, capsys):
    assert run("ablate", "--config", config, "--seeds", "1,2") == 0
    out = tmp_path / "out"
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {r["variant"] for r in rows} == {"f+i", "f+i+c", "f+c"}
    text = (out / "ablation.txt").read_text()
    assert text.count(" med ") == 3
    for ref in ("43.94", "36.03", "30.47"):
        assert ref in text
    rows = cli.read_ablation_csv(out / "ablation.csv")
    summary, ok, _ = cli.ablation_summary(rows)
    med = {v: np.median([r["mean"] for r in rows if r["variant"] == v]) for v in ("f+i", "f+i+c", "f+c")}
    assert ok == (med["f+c"] < med["f+i+c"] < med["f+i"])
    assert ("PASS" if ok else "FAIL") in text.splitlines()[-2]


def test_ablation_partial_failure_exits_5(tmp_path, config, monkeypatch):
    real = cli._ablation_cell

    def flaky(cfg, variant, seed, epochs):
        if variant == "f+i+c":
            raise RuntimeError("injected failure")
        return real(cfg, variant, seed, epochs)

    monkeypatch.setattr(cli, "_ablation_cell", flaky)
    assert run("ablate", "--config", config, "--seeds", "1") == 5
    assert len(cli.read_ablation_csv(tmp_path / "out" / "ablation.csv")) == 2
