import csv
import json
import math

import numpy as np
import pytest

from deltabose import __version__, cli
from deltabose import semigroup as sg
from deltabose.errors import DomainError
from deltabose.spaces import uniform_axis

FAST_FK = ["--eps_list=0.2", "--t_list=0.1", "--nsamples=2000", "--n_side=16"]


def _rows(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        return first, list(csv.reader(fh))


def test_precedence_cli_over_file_over_defaults(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# sweep\na = 0.25\nseed = 7  # trailing comment\neps_list = 0.2, 0.1\n")
    cfg = cli.load_config(f, ["--seed=9"])
    assert cfg.a == 0.25 and cfg.seed == 9 and cfg.eps_list == (0.2, 0.1)
    assert cfg.theta == cli.Config().theta
    assert cli.load_config(None, ["--lmax=none", "--dt=none"]).lmax is None
    assert cli.load_config(None, ["--t-list=-0.0,1"]).t_list == (0.0, 1.0)


def test_canonical_round_trip_and_hash(tmp_path):
    cfg = cli.load_config(None, ["--eps_list=0.3,0.1", "--lmax=4", "--out=x"])
    f = tmp_path / "c.cfg"
    f.write_text(cfg.canonical())
    again = cli.load_config(f, ["--out=y"])
    assert again.canonical() == cfg.canonical()
    assert again.hash == cfg.hash
    assert cli.load_config(None, ["--seed=1"]).hash != cli.Config().hash


@pytest.mark.parametrize("bad", [["--nope=1"], ["--eps_list=1.5"], ["--eps_list="],
                                 ["--seed=x"], ["seed=1"], ["--n=4"], ["--h=7"],
                                 ["--norm_families=hk_comp,foo"]])
def test_invalid_config(bad):
    with pytest.raises(DomainError):
        cli.load_config(None, bad)


def test_main_reports_bad_config(capsys):
    assert cli.main(["normcheck", "--eps_list=2"]) == 2
    assert "eps" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_fk_vs_duhamel_output_and_determinism(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["fk-vs-duhamel", f"--out={a}", *FAST_FK]) == 0
    monkeypatch.setenv("DELTABOSE_WORKERS", "3")
    assert cli.main(["fk-vs-duhamel", f"--out={b}", *FAST_FK]) == 0
    for name in ("fk_vs_duhamel.csv", "fk_vs_duhamel_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    first, rows = _rows(a / "fk_vs_duhamel.csv")
    cfg = cli.load_config(None, FAST_FK)
    assert first == f"# deltabose {__version__} config {cfg.hash}\n"
    assert rows[0][:3] == ["eps", "t", "probe"] and len(rows) == 1 + len(cli.PROBE_POINTS)
    assert rows[1][0] == "0.20000000000000001"
    summary = json.loads((a / "fk_vs_duhamel_summary.json").read_text())
    assert summary["config_hash"] == cfg.hash and summary["version"] == __version__


def test_converge_zero_time_and_unweighted(tmp_path):
    over = ["--eps_list=0.2", "--t_list=0,0.3", "--h=0.5", "--L=4", "--n_side=16", "--a=0"]
    cfg = cli.load_config(None, [*over, f"--out={tmp_path}"])
    cli.run_convergence(cfg)
    _, rows = _rows(tmp_path / "converge.csv")
    assert rows[0] == ["eps", "t", "dist_weighted", "stderr"]
    assert float(rows[1][2]) == 0.0
    # a = 0: plain grid L^2 distance
    f = sg.GaussianState.centered(2, 1.0)
    ctx = sg.SemigroupContext(n_side=16)
    ax = uniform_axis(4.0, 0.5)
    g = f.on_grid((ax,) * 4, "cr")
    d = (sg.duhamel_apply(f, 0.3, 0.2, grid=g, ctx=ctx).output.values
         - sg.limiting_apply(f, 0.3, grid=g, ctx=ctx).output.values)
    ref = math.sqrt(float(np.sum(d * d * g.trapezoid_weights())))
    assert float(rows[2][2]) == pytest.approx(ref, rel=1e-12)
    assert float(rows[2][3]) > 0


def test_specfun_report_small(tmp_path):
    cfg = cli.load_config(None, ["--beps_eps_list=0.2", "--beps_t_list=0.25",
                                 "--series_nsamples=4000", "--j_t_list=0.1,1",
                                 f"--out={tmp_path}"])
    files = cli.run_specfun_report(cfg)
    assert {p.name for p in files} >= {"j.csv", "c_eps.csv", "b_eps.csv", "specfun_summary.json"}
    _, rows = _rows(tmp_path / "j.csv")
    assert rows[0] == ["t", "j_theta", "tol"] and len(rows) == 3
    _, rows = _rows(tmp_path / "c_eps.csv")
    assert len(rows) == 1 + 100
    summary = json.loads((tmp_path / "specfun_summary.json").read_text())
    assert summary["pass"], summary["checks"]


def test_normcheck_summary(tmp_path):
    cfg = cli.load_config(None, ["--norm_families=hk_comp", "--nsamples=5000",
                                 f"--out={tmp_path}"])
    files = cli.run_normcheck(cfg)
    summary = json.loads(files[-1].read_text())
    assert summary["pass"] and summary["families"] == {"hk_comp": True}
    report = json.loads((tmp_path / "normcheck_hk_comp.json").read_text())["report"]
    assert report["family"] == "hk_comp"
    assert all("fitted_c" in c for c in report["checks"])
