import json
import subprocess
import sys

import numpy as np
import pytest

from hedonic.cli import main
from hedonic.documents import dumps, loads, parse_allocation, parse_market, serialize_market, to_csv
from hedonic.errors import ParseError
from hedonic.market import worked_example


@pytest.fixture
def market_file(tmp_path):
    path = tmp_path / "market.json"
    assert main(["example", "-o", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestDocuments:
    def test_market_round_trip_is_identity(self, example):
        text = serialize_market(example, {"kind": "logit"})
        spec, het = parse_market(text)
        assert het.kind == "logit"
        assert serialize_market(spec, {"kind": "logit"}) == text

    def test_neg_inf_is_a_string(self, example):
        alpha = example.alpha.copy()
        alpha[0, 0] = -np.inf
        text = serialize_market(example.replace(alpha=alpha))
        assert '"-inf"' in text
        spec, _ = parse_market(text)
        assert spec.alpha[0, 0] == -np.inf

    def test_floats_round_trip(self):
        x = [0.1, 1 / 3, -2.5e-300, 1e300]
        assert json.loads(dumps(x)) == x

    def test_parse_error_location(self):
        with pytest.raises(ParseError) as info:
            loads('{\n  "a": [1, 2,,]\n}')
        assert info.value.line == 2 and info.value.column > 1

    @pytest.mark.parametrize(
        "mutate, fragment",
        [
            (lambda d: d.pop("alpha"), "missing key 'alpha'"),
            (lambda d: d["alpha"][0].append(1), "ragged"),
            (lambda d: d["producers"][0].update(mass="x"), "mass"),
            (lambda d: d["gamma"][0].__setitem__(0, "inf"), "gamma"),
            (lambda d: d["producers"][0].update(mass=-1), "negative"),
            (lambda d: d.update(heterogeneity={"kind": "probit"}), "kind"),
        ],
    )
    def test_malformed_market(self, example, mutate, fragment):
        doc = json.loads(serialize_market(example))
        mutate(doc)
        with pytest.raises(ParseError, match=fragment):
            parse_market(json.dumps(doc))

    def test_empirical_draws_file(self, tmp_path, example):
        draws = {"producers": [[[0, 0, 0, 0]]] * 4, "consumers": [[[0, 0, 0, 0]]] * 3, "seed": 1}
        (tmp_path / "d.json").write_text(json.dumps(draws))
        doc = json.loads(serialize_market(example, {"kind": "empirical", "draws_file": "d.json"}))
        spec, het = parse_market(json.dumps(doc), base_dir=tmp_path)
        assert het.kind == "empirical" and het.seed == 1

    def test_allocation_dimension_mismatch(self, example):
        with pytest.raises(ParseError, match="dimensions"):
            parse_allocation({"p": [0, 0], "mu_xz": [[0]], "mu_zy": [[0]]}, example)

    def test_csv(self):
        text = to_csv({"p": [1.0, 2.0], "mu": [[0.5]], "label": "x", "d": {"w": 3.0}})
        assert text.splitlines() == ["table,row,column,value", "p,0,,1", "p,1,,2", "mu,0,0,0.5", "d.w,,,3"]


class TestCli:
    def test_solve_flow_json(self, capsys, market_file):
        code, out, _ = run(capsys, "solve-flow", market_file, "--bounds", "--format", "json")
        assert code == 0
        doc = json.loads(out)
        assert doc["p"] == [-7, -5, -4]
        assert doc["bounds"]["p_max"] == [-4, -2, -4]
        assert doc["extremal_duals"]["v_min"] == [8, 6, 10]
        assert doc["welfare"] == 31
        assert doc["diagnostics"]["verification"]["all_clear"] is True
        assert doc["input_digest"].startswith("sha256:")

    def test_solve_then_verify(self, capsys, market_file, tmp_path):
        result = tmp_path / "result.json"
        assert main(["solve-flow", str(market_file), "--format", "json", "-o", str(result)]) == 0
        code, out, _ = run(capsys, "verify", market_file, result, "--format", "json")
        assert code == 0 and json.loads(out)["all_clear"] is True

    def test_verify_reports_violations(self, capsys, market_file, tmp_path):
        result = tmp_path / "bad.json"
        result.write_text(json.dumps({"p": [0, 0, 0], "mu_xz": np.zeros((4, 3)).tolist(), "mu_zy": np.zeros((3, 3)).tolist()}))
        code, out, _ = run(capsys, "verify", market_file, result, "--format", "json")
        doc = json.loads(out)
        assert code == 0 and doc["all_clear"] is False and doc["rationality_violations"]

    def test_solve_logit_then_identify(self, capsys, market_file, tmp_path):
        result = tmp_path / "logit.json"
        assert main(["solve-logit", str(market_file), "--format", "json", "-o", str(result)]) == 0
        for method in ("logit", "generic"):
            code, out, _ = run(capsys, "identify", result, result, "--method", method, "--format", "json")
            assert code == 0
            alpha = np.array(json.loads(out)["alpha_hat"])
            assert np.max(np.abs(alpha - worked_example().alpha)) < 1e-8

    def test_solve_logit_max_iter(self, capsys, market_file):
        code, out, err = run(capsys, "solve-logit", market_file, "--max-iter", "1", "--format", "json")
        assert code == 3
        assert "no convergence" in err
        assert json.loads(out)["converged"] is False

    def test_identify_boundary_share(self, capsys, tmp_path):
        shares = tmp_path / "s.json"
        shares.write_text(json.dumps({"supply_shares": [[0, 1]], "demand_shares": [[0.5, 0.5]], "n": [1], "m": [1]}))
        prices = tmp_path / "p.json"
        prices.write_text(json.dumps({"p": [0]}))
        code, _, err = run(capsys, "identify", shares, prices)
        assert code == 4 and "opt-out" in err

    def test_malformed_input_exit_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"producers": [\n}')
        code, _, err = run(capsys, "solve-flow", bad)
        assert code == 2 and "line" in err

    def test_missing_file_exit_2(self, capsys, tmp_path):
        code, _, _ = run(capsys, "solve-flow", tmp_path / "nope.json")
        assert code == 2

    def test_zero_agents_is_usage_error(self, capsys, market_file):
        with pytest.raises(SystemExit) as info:
            main(["simulate", str(market_file), "--agents", "0"])
        assert info.value.code == 2

    def test_simulate_is_deterministic(self, capsys, market_file):
        outs = [run(capsys, "simulate", market_file, "--agents", 500, "--seed", 11, "--format", "json")[1] for _ in range(2)]
        assert outs[0] == outs[1]
        other = run(capsys, "simulate", market_file, "--agents", 500, "--seed", 12, "--format", "json")[1]
        assert other != outs[0]

    @pytest.mark.parametrize("fmt", ["text", "csv"])
    def test_other_formats(self, capsys, market_file, fmt):
        code, out, _ = run(capsys, "solve-flow", market_file, "--format", fmt)
        assert code == 0
        if fmt == "csv":
            assert out.startswith("table,row,column,value\n") and "welfare,,,31" in out
        else:
            assert "welfare: 31" in out

    def test_module_entry_point(self, market_file):
        out = subprocess.run(
            [sys.executable, "-m", "hedonic", "solve-flow", str(market_file), "--format", "json"],
            capture_output=True, text=True, check=True,
        )
        assert json.loads(out.stdout)["welfare"] == 31
