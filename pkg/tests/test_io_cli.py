from __future__ import annotations

import json

import numpy as np
import pytest

from subsetprior import io
from subsetprior.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from subsetprior.errors import InputFormatError
from subsetprior.gaussian import GaussianApprox
from subsetprior.subspace import projection_from_basis
from subsetprior.tilt import DrawMatrix, Provenance, weight


def test_matrix_csv_roundtrip_is_exact(tmp_path):
    M = np.random.default_rng(0).standard_normal((7, 3)) * 1e-7
    io.write_matrix_csv(tmp_path / "m.csv", M, ["a", "b", "c"])
    back, cols = io.read_matrix_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back, M)
    assert cols == ("a", "b", "c")


@pytest.mark.parametrize(
    "text",
    [
        "# shape: 2x2\na,b\n1,2\n",
        "a,b\n1,2\n3\n",
        "a,b\n1,x\n",
        "a,b\n",
        "# shape: axb\na,b\n1,2\n",
    ],
)
def test_malformed_csv_rejected(tmp_path, text):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(InputFormatError):
        io.read_matrix_csv(f)


def test_headerless_csv_gets_default_names(tmp_path):
    f = tmp_path / "h.csv"
    f.write_text("1,2\n3,4\n")
    M, cols = io.read_matrix_csv(f)
    assert cols == ("c1", "c2") and M.shape == (2, 2)


def test_weighted_csv_and_sidecar(tmp_path):
    X = DrawMatrix(np.random.default_rng(1).standard_normal((20, 3)), Provenance.BASE_POSTERIOR, 5)
    wd = weight(X, projection_from_basis(np.array([[1.0], [1.0], [-1.0]])), 2.5)
    side = io.write_weighted_csv(tmp_path / "w.csv", wd)
    meta = json.loads(side.read_text())
    assert meta["nu"] == 2.5 and meta["K"] == 20 and meta["seed"] == 5
    back = io.read_weighted_csv(tmp_path / "w.csv")
    np.testing.assert_array_equal(back.log_w1, wd.log_w1)
    np.testing.assert_array_equal(back.log_w, wd.log_w)


def test_phi_table_needs_two_columns(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("phi,mass\n0.5,1\n1.0,3\n")
    v, m = io.load_phi_table(f)
    np.testing.assert_array_equal(v, [0.5, 1.0])
    f.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(InputFormatError):
        io.load_phi_table(f)


def test_json_encodes_non_finite_values():
    assert json.loads(io.dumps_json({"x": float("inf"), "y": np.float64(1.5)})) == {"x": "inf", "y": 1.5}


# ---------------------------------------------------------------------------


@pytest.fixture
def draws(tmp_path):
    rng = np.random.default_rng(2)
    io.write_matrix_csv(tmp_path / "post.csv", rng.standard_normal((2000, 3)) + [0.5, 0.5, -0.5])
    io.write_matrix_csv(tmp_path / "prior.csv", 2 * rng.standard_normal((2000, 3)))
    io.write_matrix_csv(tmp_path / "basis.csv", np.array([[1.0], [1.0], [-1.0]]))
    return tmp_path


def run(d, *args):
    code = main([*args, "--out", str(d / "out")])
    man = json.loads((d / "out" / "manifest.json").read_text())
    assert man["exit_code"] == code
    return code, man


def test_tilt_select_nu_smoke(draws):
    d = draws
    code, man = run(d, "tilt", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"),
                    "--basis", str(d / "basis.csv"), "--select-nu", "--resample", "100")
    assert code == EXIT_OK
    res = json.loads((d / "out" / "tilt.json").read_text())
    assert res["nu_star"] >= 0 and "profile" in res
    assert (d / "out" / "profile.csv").exists() and (d / "out" / "resampled.csv").exists()
    assert set(man["inputs"]) == {str(d / "post.csv"), str(d / "prior.csv"), str(d / "basis.csv")}
    assert "tilt.json" in man["outputs"]


def test_select_nu_and_gaussian_tilt(draws):
    d = draws
    code, _ = run(d, "select-nu", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"),
                  "--basis", str(d / "basis.csv"))
    assert code == EXIT_OK
    (d / "g.json").write_text(GaussianApprox(np.zeros(3), np.eye(3)).to_json())
    code, _ = run(d, "gaussian-tilt", "--gaussian", str(d / "g.json"), "--basis", str(d / "basis.csv"), "--nu", "3")
    assert code == EXIT_OK
    S = np.array(json.loads((d / "out" / "gaussian_tilt.json").read_text())["covariance"])
    assert S[0, 1] / np.sqrt(S[0, 0] * S[1, 1]) == pytest.approx(0.5, abs=1e-12)


def test_usage_errors_exit_2_with_manifest(draws):
    d = draws
    base = ["tilt", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"), "--basis", str(d / "basis.csv")]
    assert run(d, *base)[0] == EXIT_USAGE  # neither --nu nor --select-nu
    assert run(d, *base, "--nu", "1", "--select-nu")[0] == EXIT_USAGE
    code, man = run(d, "tilt", "--bogus")
    assert code == EXIT_USAGE and man["status"] == "usage-error"
    assert run(d, "gibbs", "--prior", str(d / "prior.csv"), "--family", "power", "--phi-prior", "gamma:2,1",
               "--nu", "1")[0] == EXIT_USAGE  # discrete mode without --posterior


def test_io_errors_exit_4(draws):
    d = draws
    code, man = run(d, "tilt", "--posterior", str(d / "missing.csv"), "--prior", str(d / "prior.csv"),
                    "--basis", str(d / "basis.csv"), "--nu", "1")
    assert code == EXIT_IO and man["error"]["type"] in ("FileNotFoundError", "InputFormatError")
    (d / "junk.csv").write_text("a,b,c\n1,2,oops\n")
    code, man = run(d, "tilt", "--posterior", str(d / "junk.csv"), "--prior", str(d / "prior.csv"),
                    "--basis", str(d / "basis.csv"), "--nu", "1")
    assert code == EXIT_IO and man["error"]["type"] == "InputFormatError"


def test_numeric_errors_exit_3_with_module_error_name(draws, capsys):
    d = draws
    io.write_matrix_csv(d / "rank1.csv", np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))
    code, man = run(d, "tilt", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"),
                    "--basis", str(d / "rank1.csv"), "--nu", "1")
    assert code == EXIT_NUMERIC and man["error"]["type"] == "RankDeficiencyError"
    assert "RankDeficiencyError" in capsys.readouterr().err


def test_gibbs_power_family_uses_at_most_fifteen_phi_values(draws):
    d = draws
    code, _ = run(d, "gibbs", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"),
                  "--family", "power", "--phi-prior", "gamma:2,1:Q=15", "--nu", "1.0", "--draws", "3000")
    assert code == EXIT_OK
    M, cols = io.read_matrix_csv(d / "out" / "trace.csv")
    phi = M[:, cols.index("phi")]
    assert 1 < np.unique(phi).size <= 15
    res = json.loads((d / "out" / "gibbs.json").read_text())
    assert sum(r["mass"] for r in res["phi_posterior_table"]) == pytest.approx(1.0)


def test_low_ess_is_reported_as_warning(draws):
    d = draws
    code, man = run(d, "tilt", "--posterior", str(d / "post.csv"), "--prior", str(d / "prior.csv"),
                    "--basis", str(d / "basis.csv"), "--nu", "500")
    assert code == EXIT_OK
    assert any("LowESSWarning" in w for w in man["warnings"])
    res = json.loads((d / "out" / "tilt.json").read_text())
    assert res["warnings"] == man["warnings"]


def test_simstudy_bytes_identical_across_runs_and_threads(tmp_path):
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
        code = main(["simstudy", "anova", "--scenario", "homo", "--reps", "4", "--draws", "400", "--seed", "7",
                     "--threads", threads, "--out", str(tmp_path / name)])
        assert code == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir() if p.name != "manifest.json"})
    assert outs[0] == outs[1] == outs[2]
    assert "simstudy_anova.json" in outs[0]
