import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from circspace import cli
from circspace.io import read_archive, read_sites, write_archive, write_sites
from circspace.mcmc import ChainConfig, ChainOutput
from circspace.spatial import SiteTable
from circspace.wrapped import WgspPosterior, WgspPriors

from oracles import wrap_krig_single_draw

DEMO = """\
# 20 synthetic sites, 2 chains x 5000 iterations
model = wrapped
n_iter = 5000
burnin = 1500
thin = 5
adapt_end = 1500
n_chains = 2
seed = 0
data = sites.csv
output = post
"""


def run(*args, env=None):
    return CliRunner().invoke(cli.main, [str(a) for a in args], env=env, catch_exceptions=False)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """Simulated data, a demo config and its fitted archive."""
    d = tmp_path_factory.mktemp("demo")
    res = run("simulate", "--n-sites", 20, "--width", 100, "--height", 100, "--seed", 3,
              "-p", "sigma2=0.1", "-p", "phi=0.05", "--out", d / "sites.csv")
    assert res.exit_code == 0, res.output
    (d / "demo.cfg").write_text(DEMO)
    t0 = time.perf_counter()
    res = run("fit", d / "demo.cfg")
    elapsed = time.perf_counter() - t0
    return d, res, elapsed


@pytest.mark.parametrize("cmd", ["describe", "simulate", "fit", "krig", "eval"])
def test_help(cmd):
    res = run(cmd, "--help")
    assert res.exit_code == 0 and "Usage" in res.output


def test_describe_outputs(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("site_id,x,y,direction\na,0,0,10\nb,1000,0,40\nc,0,1000,350\n")
    res = run("describe", p, "--out", tmp_path / "sum.csv", "--rose", tmp_path / "rose.csv")
    assert res.exit_code == 0
    header, values = rows(tmp_path / "sum.csv")
    assert header == ["n", "mean_dir_rad", "median_dir_rad", "variance", "std_dev"]
    var, sd = float(values[3]), float(values[4])
    assert sd == pytest.approx(math.sqrt(-2 * math.log(1 - var)), abs=1e-6)
    rose = rows(tmp_path / "rose.csv")
    assert rose[0] == ["bin_start_rad", "bin_start_deg", "count"]
    assert len(rose) == 17 and sum(int(r[2]) for r in rose[1:]) == 3


def test_describe_singleton(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("site_id,x,y,direction\na,0,0,123\n")
    res = run("describe", p, "--out", tmp_path / "o.csv", "--bins", 8)
    assert res.exit_code == 0
    assert float(rows(tmp_path / "o.csv")[1][3]) == 0.0


def test_simulate_examples(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run("simulate", "--seed", 5, "--n-sites", 30, "--out", out).exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.latent.csv").exists()

    flat = tmp_path / "flat.csv"
    res = run("simulate", "-p", "mu=1.2", "-p", "sigma2=1e-12", "--layout", "grid", "--n-sites", 25,
              "--direction-unit", "rad", "--out", flat)
    assert res.exit_code == 0
    t = read_sites(flat, direction_unit="rad")
    assert np.all(np.abs(t.direction - 1.2) < 1e-5)

    proj = tmp_path / "p.csv"
    res = run("simulate", "--model", "projected", "-p", "mu1=0", "-p", "mu2=0", "-p", "rho=0",
              "--out", proj)
    assert res.exit_code == 0
    assert rows(tmp_path / "p.latent.csv")[0] == ["site_id", "latent_1", "latent_2"]


def test_simulate_bad_param_exit_2(tmp_path):
    res = run("simulate", "-p", "kappa=3", "--out", tmp_path / "x.csv")
    assert res.exit_code == 2 and "kappa" in res.output
    res = run("simulate", "-p", "sigma2=-1", "--out", tmp_path / "x.csv")
    assert res.exit_code == 2


def test_fit_demo_fast_and_readable(demo):
    d, res, elapsed = demo
    assert res.exit_code == 0, res.output
    assert elapsed < 60
    assert "psrf" in res.output and "acceptance" in res.output
    post, run_cfg = read_archive(d / "post")
    assert post.model == "wrapped" and post.n_draws == 2 * 700
    assert run_cfg.chain.n_iter == 5000


def test_fit_rerun_byte_identical(demo, tmp_path):
    d, _, _ = demo
    assert run("fit", d / "demo.cfg", "--out", tmp_path / "again").exit_code == 0
    for f in (d / "post").iterdir():
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


def test_fit_seed_override_from_env(demo, tmp_path):
    d, _, _ = demo
    res = run("fit", d / "demo.cfg", "--out", tmp_path / "s7", env={"CIRCSPACE_SEED": "7"})
    assert res.exit_code == 0
    post, _ = read_archive(tmp_path / "s7")
    assert [c.seed for c in post.chains] == [7, 8]


def test_fit_validation_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n_iter = 100\nburnin = 100\nadapt_end = 50\ndata = x.csv\noutput = o\n")
    res = run("fit", cfg)
    assert res.exit_code == 2 and "burnin" in res.output
    cfg.write_text("output = o\n")
    assert run("fit", cfg).exit_code == 2
    assert not (tmp_path / "o").exists()


def test_fit_numerical_failure_exit_3(tmp_path):
    (tmp_path / "dup.csv").write_text(
        "site_id,x,y,direction\n" + "".join(f"s{i},{1000 * (i % 5)},0,{10 * i}\n" for i in range(8)))
    (tmp_path / "c.cfg").write_text(
        "n_iter = 200\nburnin = 100\nadapt_start = 0\nadapt_end = 100\ndata = dup.csv\noutput = o\n")
    res = run("fit", tmp_path / "c.cfg")
    assert res.exit_code == 3 and "numerical failure" in res.output
    assert not (tmp_path / "o").exists()


def test_fit_not_converged_exit_4(demo, tmp_path, monkeypatch):
    d, _, _ = demo
    monkeypatch.setattr(cli, "PSRF_THRESHOLD", 1.0)
    res = run("fit", d / "demo.cfg", "--out", tmp_path / "nc", "--seed", 1)
    assert res.exit_code == 4 and "not converged" in res.output
    assert (tmp_path / "nc" / "manifest.json").exists()


def test_krig_coincident_and_empty(demo, tmp_path):
    d, _, _ = demo
    data = read_sites(d / "sites.csv")
    tg = tmp_path / "t.csv"
    x0, y0 = float(data.easting[4] * 1000), float(data.northing[4] * 1000)
    tg.write_text(f"target_id,x,y\nhit,{x0!r},{y0!r}\nmid,50000,50000\n")
    res = run("krig", d / "post", tg, "--out", tmp_path / "pred.csv", "--draws-out", tmp_path / "draws.csv")
    assert res.exit_code == 0, res.output
    out = rows(tmp_path / "pred.csv")
    assert out[0] == ["target_id", "direction_rad", "direction_deg", "concentration"]
    assert float(out[1][1]) == pytest.approx(data.direction[4], rel=1e-5)
    assert float(out[1][3]) == 1.0
    assert 0 <= float(out[2][3]) <= 1
    assert len(rows(tmp_path / "draws.csv")) == 1 + 2 * 1400

    empty = tmp_path / "e.csv"
    empty.write_text("target_id,x,y\n")
    assert run("krig", d / "post", empty, "--out", tmp_path / "none.csv").exit_code == 0
    assert rows(tmp_path / "none.csv") == [["target_id", "direction_rad", "direction_deg", "concentration"]]


def test_krig_mismatches_exit_2(demo, tmp_path):
    d, _, _ = demo
    tg = tmp_path / "t.csv"
    tg.write_text("target_id,x,y\nq,1000,1000\n")
    assert run("krig", d / "post", tg, "--model", "projected", "--out", tmp_path / "p.csv").exit_code == 2
    other = tmp_path / "other.csv"
    t = read_sites(d / "sites.csv")
    write_sites(other, SiteTable(("zz",) + t.site_id[1:], t.easting, t.northing, t.direction))
    res = run("krig", d / "post", tg, "--data", other, "--out", tmp_path / "p.csv")
    assert res.exit_code == 2 and "zz" in res.output and t.site_id[0] in res.output


def test_krig_fixed_draw_fixture_matches_oracle(tmp_path):
    coords = np.array([[0.0, 0.0], [12.0, 3.0], [5.0, 9.0]])
    x = np.array([0.4, 1.1, 5.9])
    k = np.array([0, 1, -1])
    mu, sigma2, phi = 0.9, 0.6, 0.07
    draws = {"mu": np.array([mu]), "sigma2": np.array([sigma2]), "phi": np.array([phi]), "k": k[None, :]}
    post = WgspPosterior([ChainOutput(draws, {}, 0)], ("a", "b", "c"), coords, x, WgspPriors(),
                         ChainConfig(n_iter=10, burnin=5, thin=5, n_chains=1, adapt_start=0, adapt_end=5))
    write_archive(post, tmp_path / "fx")
    (tmp_path / "t.csv").write_text("target_id,x,y\nt,3000,4000\n")
    assert run("krig", tmp_path / "fx", tmp_path / "t.csv", "--out", tmp_path / "o.csv").exit_code == 0
    _, row = rows(tmp_path / "o.csv")
    gc, gs, _, _ = wrap_krig_single_draw(x, k, mu, sigma2, phi, coords, np.array([3.0, 4.0]))
    assert float(row[1]) == pytest.approx(math.atan2(gs, gc) % (2 * math.pi), rel=1e-5)
    assert float(row[3]) == pytest.approx(math.hypot(gc, gs), rel=1e-5)


def test_eval_reports_scores(demo, tmp_path):
    d, _, _ = demo
    cfg = tmp_path / "q.cfg"
    cfg.write_text(f"n_iter = 1500\nburnin = 500\nadapt_end = 500\nthin = 2\ndata = {d / 'sites.csv'}\n")
    res = run("eval", cfg, "--n-valid", 5, "--split-seed", 2, "--out", tmp_path / "rep.csv")
    assert res.exit_code == 0, res.output
    assert "APE" in res.output and "CRPS" in res.output and "split_seed 2" in res.output
    rep = rows(tmp_path / "rep.csv")
    assert rep[0] == ["site_id", "truth_rad", "predicted_rad", "circ_error"]
    assert len(rep) == 1 + 5 + 2
    errors = [float(r[3]) for r in rep[1:6]]
    assert float(rep[6][3]) == pytest.approx(np.mean(errors), rel=1e-5)
    again = run("eval", cfg, "--n-valid", 5, "--split-seed", 2, "--out", tmp_path / "rep2.csv")
    assert again.exit_code == 0
    assert (tmp_path / "rep.csv").read_bytes() == (tmp_path / "rep2.csv").read_bytes()


def test_eval_accepts_archive_and_rejects_bad_split(demo, tmp_path):
    d, _, _ = demo
    res = run("eval", d / "post", "--n-valid", 20)
    assert res.exit_code == 2 and "n_valid" in res.output


def test_eval_smooth_field_beats_circular_variance(tmp_path):
    # strongly correlated field: kriging should beat the marginal spread
    sites = tmp_path / "smooth.csv"
    res = run("simulate", "--n-sites", 40, "--width", 100, "--height", 100, "--seed", 11,
              "-p", "sigma2=0.5", "-p", "phi=0.01", "--out", sites)
    assert res.exit_code == 0
    cfg = tmp_path / "s.cfg"
    cfg.write_text(f"n_iter = 3000\nburnin = 1000\nadapt_end = 1000\nthin = 4\ndata = {sites}\n")
    res = run("eval", cfg, "--n-valid", 10, "--out", tmp_path / "r.csv")
    assert res.exit_code == 0
    ape = float(rows(tmp_path / "r.csv")[-2][3])
    data = read_sites(sites)
    R = math.hypot(np.cos(data.direction).mean(), np.sin(data.direction).mean())
    assert ape < 1 - R
