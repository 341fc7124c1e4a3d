import json
import math

import numpy as np
import pytest

from robustprice.cli import main
from robustprice.experiments import (ExperimentConfig, PreconditionError, convergence_csv_text, minimize_claim,
                                     resolve, run_convergence, run_property_suite)
from robustprice.market import dump_market, market_to_dict, read_market


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_na_check_ok(capsys):
    code, out, _ = _run(capsys, "na-check", "--market", "binomial")
    assert code == 0 and "verdict: NA holds" in out


def test_na_check_fails_with_certificate(tmp_path, capsys):
    data = market_to_dict(read_market(resolve("binomial.json")))
    data["nodes"][2]["price"] = [1.5]
    path = tmp_path / "arb.json"
    path.write_text(json.dumps(data))
    code, out, _ = _run(capsys, "na-check", "--market", str(path))
    assert code == 1 and "arbitrage=[1.0]" in out


def test_superhedge_csv(tmp_path, capsys):
    csv = tmp_path / "sh.csv"
    code, out, _ = _run(capsys, "superhedge", "--market", "binomial", "--dual", "--csv", str(csv))
    assert code == 0 and "dual = 0.333333333333333" in out
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("# robustprice-csv v1")
    assert lines[1] == "node_id,t,pi_t,h1"
    node, t, pi, h = lines[2].split(",")
    assert float(pi) == pytest.approx(1 / 3, abs=1e-12) and float(h) == pytest.approx(2 / 3, abs=1e-12)


def test_indiff_csv_rows_are_rederivable(tmp_path, capsys):
    from robustprice.robust import indifference_price
    from robustprice.utility import CARA
    csv = tmp_path / "i.csv"
    code, _, _ = _run(capsys, "indiff", "--market", "trinomial1", "--utility", "cara_geometric", "--x", "1",
                      "--n", "2", "--csv", str(csv))
    assert code == 0
    header, row = csv.read_text().splitlines()[1:]
    assert header == "n,gamma_or_param,u0,uG,p,pB,pi,pi_sub,gap"
    vals = dict(zip(header.split(","), row.split(",")))
    m = read_market(resolve("trinomial1.json"))
    again = indifference_price(m, CARA(4.0, anchor=1.0), m.claim, 1.0, tol=1e-10)
    assert float(vals["p"]) == again.p
    assert float(vals["uG"]) == pytest.approx(float(vals["u0"]), rel=1e-8)


def test_ce_subcommand(capsys):
    code, out, _ = _run(capsys, "ce", "--market", "binomial", "--utility", "cara_geometric")
    assert code == 0 and out.startswith("e(G) = ")


def test_missing_file_is_io_error(capsys):
    code, _, err = _run(capsys, "superhedge", "--market", "/no/such/file.json")
    assert code == 3 and "error" in err


def test_bad_json_is_parse_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{oops")
    code, _, err = _run(capsys, "na-check", "--market", str(path))
    assert code == 3 and "line 1" in err


def test_converge_outputs(tmp_path, capsys):
    csv, svg = tmp_path / "c.csv", tmp_path / "c.svg"
    code, out, _ = _run(capsys, "converge", "--n-range", "1", "12", "--csv", str(csv), "--svg", str(svg))
    assert code == 0 and "verdict: converged" in out
    text = csv.read_text()
    assert text.startswith("# robustprice-csv v1 convergence")
    assert svg.read_text().startswith("<svg") and "polyline" in svg.read_text()


def test_convergence_refuses_zero_claim(tmp_path):
    data = market_to_dict(read_market(resolve("trinomial2.json")))
    data["claim"] = {k: 0.0 for k in data["claim"]}
    path = tmp_path / "zero.json"
    path.write_text(json.dumps(data))
    with pytest.raises(PreconditionError, match="not q.s. zero"):
        run_convergence(ExperimentConfig(market=str(path)))


def test_convergence_refuses_arbitrage(tmp_path):
    data = market_to_dict(read_market(resolve("binomial.json")))
    data["nodes"][2]["price"] = [1.5]
    path = tmp_path / "arb.json"
    path.write_text(json.dumps(data))
    with pytest.raises(PreconditionError, match="arbitrage direction"):
        run_convergence(ExperimentConfig(market=str(path), n_range=(1, 3)))


def test_random_cara_audit_blocks_without_waiver():
    with pytest.raises(PreconditionError, match="audits failed"):
        run_convergence(ExperimentConfig(utility="random_cara.json", n_range=(1, 5)))
    rep = run_convergence(ExperimentConfig(utility="random_cara.json", n_range=(1, 5), waive_audits=True))
    assert not rep.audits["u1"]


def test_convergence_report_is_consistent():
    rep = run_convergence(ExperimentConfig(n_range=(1, 8)))
    for r in rep.rows:
        assert r["gap_p"] == pytest.approx(rep.pi - r["p"], abs=1e-12)
    assert convergence_csv_text(rep) == convergence_csv_text(run_convergence(ExperimentConfig(n_range=(1, 8))))


def test_minimize_claim_shrinks():
    fails = lambda g: g[2] > 0.4
    out = minimize_claim(fails, np.array([0.3, 0.9, 0.77, 0.1]))
    np.testing.assert_array_equal(out, [0.0, 0.0, 1.0, 0.0])


def test_mutation_is_detected(tmp_path):
    text, bad = run_property_suite(ExperimentConfig(n_markets=8, mutation="drop-charged-constraint",
                                                    counterexample_dir=str(tmp_path)))
    assert bad > 0 and "duality-gap: FAIL" in text
    files = sorted(tmp_path.iterdir())
    assert files
    record = json.loads(files[0].read_text())
    assert record["property"] == "duality-gap" and "claim" in record["market"]


def test_prop_suite_cli_exit_codes(capsys, tmp_path):
    code, out, _ = _run(capsys, "prop-suite", "--n-markets", "3")
    assert code == 0 and out.endswith("verdict: PASS\n")
    code, out, _ = _run(capsys, "prop-suite", "--n-markets", "8", "--mutation", "drop-charged-constraint",
                        "--counterexample-dir", str(tmp_path))
    assert code == 2
