import json
import os
import subprocess
import sys

import numpy as np
import pytest

from entropic_deconv import DiscreteMeasure, Sample, canonical_json, dirac
from entropic_deconv.cli import main, run
from entropic_deconv.report import RunConfig


@pytest.fixture
def measures(tmp_path):
    mu = tmp_path / "mu.json"
    nu = tmp_path / "nu.json"
    dirac([0.0]).save(mu)
    dirac([2.0]).save(nu)
    return str(mu), str(nu)


@pytest.fixture
def sample_file(tmp_path):
    path = tmp_path / "sample.csv"
    Sample(np.array([[0.1], [3.9], [0.4], [4.2], [-0.3]])).save_csv(path)
    return str(path)


GAUSS = '{"kind":"gaussian","sigma2":1.0}'


def test_run_sinkhorn_dirac_pair(measures):
    mu, nu = measures
    cfg = RunConfig("sinkhorn", {"mu": mu, "nu": nu, "cost": GAUSS, "sigma2": 1.0})
    report = run(cfg)
    assert report.payload["objective"] == pytest.approx(2.0, abs=1e-12)
    assert report.payload["marginal_error"] <= 1e-10
    assert "coupling" not in report.payload


def test_run_sinkhorn_emit_coupling(measures):
    mu, nu = measures
    cfg = RunConfig(
        "sinkhorn",
        {"mu": mu, "nu": nu, "cost": GAUSS, "sigma2": 1.0, "emit_coupling": True},
    )
    report = run(cfg)
    assert report.payload["coupling"]["mass"] == [[1.0]]


def test_run_relaxed(measures):
    mu, nu = measures
    cfg = RunConfig("relaxed", {"p": mu, "nu": nu, "cost": GAUSS, "sigma2": 1.0})
    report = run(cfg)
    assert report.payload["value"] == pytest.approx(2.0, abs=1e-12)
    assert len(report.payload["per_row_values"]) == 1
    assert report.payload["x_marginal"]["weights"] == [1.0]


def test_run_mle_and_project(sample_file):
    cls = '{"kind":"grid","atoms":[0.0,1.0,2.0,3.0,4.0]}'
    mle_cfg = RunConfig("mle", {"sample": sample_file, "class": cls, "noise": GAUSS})
    mle_report = run(mle_cfg)
    assert mle_report.payload["objective_kind"] == "neg_log_likelihood"
    assert mle_report.payload["converged"]

    pr_cfg = RunConfig(
        "project",
        {"sample": sample_file, "class": cls, "cost": GAUSS, "sigma2": 1.0,
         "mode": "entropic"},
    )
    pr_report = run(pr_cfg)
    assert pr_report.payload["objective_kind"] == "entropic_projection"

    rel_cfg = RunConfig(
        "project",
        {"sample": sample_file, "class": cls, "cost": GAUSS, "sigma2": 1.0,
         "mode": "relaxed"},
    )
    rel_report = run(rel_cfg)
    mle_w = mle_report.payload["estimate"]["weights"]
    rel_w = rel_report.payload["estimate"]["weights"]
    assert np.allclose(mle_w, rel_w, atol=1e-12)


def test_run_generate_writes_csv(tmp_path, measures):
    mu, _ = measures
    out = str(tmp_path / "draws.csv")
    cfg = RunConfig("generate", {"pstar": mu, "noise": GAUSS, "n": 25}, seed=11, out=out)
    report = run(cfg)
    assert report.payload["n"] == 25
    back = Sample.load_csv(out)
    assert back.n == 25
    # byte-identical regeneration from the same seed
    out2 = str(tmp_path / "draws2.csv")
    run(RunConfig("generate", {"pstar": mu, "noise": GAUSS, "n": 25}, seed=11, out=out2))
    assert open(out).read() == open(out2).read()


def test_payload_determinism_across_runs(measures):
    mu, nu = measures
    cfg = RunConfig("sinkhorn", {"mu": mu, "nu": nu, "cost": GAUSS, "sigma2": 0.3})
    a = run(cfg).payload_json()
    b = run(cfg).payload_json()
    assert a == b


def test_report_roundtrip_byte_identical(measures):
    mu, nu = measures
    report = run(RunConfig("relaxed", {"p": mu, "nu": nu, "cost": GAUSS, "sigma2": 1.0}))
    text = report.to_json()
    assert canonical_json(json.loads(text)) == text


def test_certify_via_run_with_seed_file(tmp_path):
    seeds = tmp_path / "seeds.json"
    seeds.write_text(json.dumps({"lemma1": [0, 1]}))
    cfg = RunConfig("certify", {"claim": "lemma1", "seeds_file": str(seeds)})
    report = run(cfg)
    assert report.payload["all_pass"]
    assert report.payload["reports"][0]["claim_id"] == "lemma1"
    assert report.payload["reports"][0]["pass"]


def test_cli_main_certify_exit_zero(tmp_path, capsys):
    seeds = tmp_path / "seeds.json"
    seeds.write_text(json.dumps({"lemma1": [0]}))
    out = tmp_path / "report.json"
    code = main(["certify", "--claim", "lemma1", "--seeds", str(seeds),
                 "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())["payload"]
    assert payload["all_pass"] is True


def test_cli_main_malformed_measure_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 1, "atoms": [[0.0]]}')
    nu = tmp_path / "nu.json"
    dirac([1.0]).save(nu)
    code = main(["sinkhorn", "--mu", str(bad), "--nu", str(nu),
                 "--cost", GAUSS, "--sigma2", "1.0"])
    assert code == 2
    err = capsys.readouterr().err
    assert "weights" in err


def test_cli_main_missing_file(tmp_path, capsys):
    nu = tmp_path / "nu.json"
    dirac([1.0]).save(nu)
    code = main(["sinkhorn", "--mu", str(tmp_path / "absent.json"), "--nu", str(nu),
                 "--cost", GAUSS, "--sigma2", "1.0"])
    assert code == 2


def test_cli_main_stdout_report(measures, capsys):
    mu, nu = measures
    code = main(["sinkhorn", "--mu", mu, "--nu", nu, "--cost", GAUSS, "--sigma2", "1.0"])
    assert code == 0
    out = capsys.readouterr().out
    doc = json.loads(out)
    assert doc["payload"]["objective"] == pytest.approx(2.0)
    assert doc["config"]["command"] == "sinkhorn"


def test_cli_figures_written(tmp_path, measures):
    mu, nu = measures
    figdir = tmp_path / "figs"
    code = main(["sinkhorn", "--mu", mu, "--nu", nu, "--cost", GAUSS,
                 "--sigma2", "1.0", "--figures", str(figdir),
                 "--out", str(tmp_path / "r.json")])
    assert code == 0
    assert (figdir / "sinkhorn_trace.png").stat().st_size > 0
    assert (figdir / "sinkhorn_trace.csv").read_text().startswith("iteration,")


def test_certify_figures_written(tmp_path):
    seeds = tmp_path / "seeds.json"
    seeds.write_text(json.dumps({"lemma1": [0]}))
    figdir = tmp_path / "figs"
    cfg = RunConfig(
        "certify",
        {"claim": "lemma1", "seeds_file": str(seeds), "figures": str(figdir)},
    )
    report = run(cfg)
    assert report.payload["all_pass"]
    assert (figdir / "lemma1_residuals.png").stat().st_size > 0
    rows = (figdir / "lemma1_residuals.csv").read_text().strip().splitlines()
    assert rows[0] == "seed,max_residual"
    assert len(rows) == 2


def test_console_entry_point(measures, tmp_path):
    mu, nu = measures
    script = os.path.join(os.path.dirname(sys.executable), "entropic-deconv")
    cmd = [script] if os.path.exists(script) else [sys.executable, "-m", "entropic_deconv.cli"]
    out = tmp_path / "r.json"
    proc = subprocess.run(
        cmd + ["sinkhorn", "--mu", mu, "--nu", nu, "--cost", GAUSS,
               "--sigma2", "1.0", "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["payload"]["objective"] == pytest.approx(2.0)


def test_exploratory_flag_payload(tmp_path):
    seeds = tmp_path / "seeds.json"
    seeds.write_text(json.dumps({"lemma1": [0]}))
    cfg = RunConfig(
        "certify",
        {"claim": "lemma1", "seeds_file": str(seeds), "exploratory": True},
        seed=0,
    )
    report = run(cfg)
    rows = report.payload["exploratory"]["rows"]
    assert [r["n"] for r in rows] == [10, 40, 160]
