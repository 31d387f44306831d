import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import second_moment
from spdfit import io, pipeline
from spdfit.cli import main
from spdfit.exceptions import InputError


def write_spec(path, **kw):
    spec = io.ExperimentSpec(**kw)
    spec.save(path)
    return path


def gaussian_sim(n=20, q=3, seed=5):
    return {"simulate": {"distribution": "gaussian", "n": n, "seed": seed,
                         "sigma": {"kind": "diag", "values": [4.0, 1.0, 0.25][:q]}}}


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- CSV --------------------------------------------------------------------

def test_dataset_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((7, 3))
    io.write_dataset_csv(tmp_path / "d.csv", x)
    d = io.read_dataset_csv(tmp_path / "d.csv")
    assert np.array_equal(d.points, x)
    assert read_csv_rows(tmp_path / "d.csv")[0] == ["x1", "x2", "x3"]


def test_weight_column(tmp_path):
    (tmp_path / "d.csv").write_text("a,weight,b\n1,3,2\n4,1,5\n")
    d = io.read_dataset_csv(tmp_path / "d.csv")
    assert np.array_equal(d.points, [[1.0, 2.0], [4.0, 5.0]])
    assert np.allclose(d.weights, [0.75, 0.25])


@pytest.mark.parametrize("body,fragment", [
    ("a,b\n1,2\n3\n", ":3: expected 2 fields"),
    ("a,b\n1,2\n3,x\n", ":3: non-numeric"),
    ("a,b\n1,2\n\n3,inf\n", ":4: non-finite"),
    ("1,2\n3,4\n", ":1: expected a header"),
    ("a,b\n", "no observations"),
    ("", "empty file"),
])
def test_malformed_csv_names_line(tmp_path, body, fragment):
    (tmp_path / "d.csv").write_text(body)
    with pytest.raises(InputError, match=fragment):
        io.read_dataset_csv(tmp_path / "d.csv")


def test_matrix_roundtrip(tmp_path):
    m = np.array([[2.0, 0.1], [0.1, 1.0 / 3.0]])
    io.write_matrix_csv(tmp_path / "m.csv", m)
    assert np.array_equal(io.read_matrix_csv(tmp_path / "m.csv"), m)


def test_rows_csv_writes_nan_as_empty(tmp_path):
    io.write_rows_csv(tmp_path / "r.csv", ("a", "b"), [{"a": 1.5, "b": float("nan")}])
    assert read_csv_rows(tmp_path / "r.csv") == [["a", "b"], ["1.5", ""]]


# --- specs ------------------------------------------------------------------

def test_sigma_from_spec():
    assert np.array_equal(io.sigma_from_spec({"kind": "identity", "q": 2}), np.eye(2))
    assert np.array_equal(np.diag(io.sigma_from_spec({"kind": "spiked", "q": 5})),
                          [100, 25, 9, 4, 1])
    with pytest.raises(InputError):
        io.sigma_from_spec({"kind": "banded"})
    with pytest.raises(InputError):
        io.sigma_from_spec({"kind": "diag"})


penalties = st.one_of(
    st.none(),
    st.sampled_from(["Pi0", "Pi1", "Pi2", "pi0", "pi1", "pi2"]).map(lambda k: {"kind": k}),
    st.floats(0.1, 3.0).map(lambda c: {"kind": "exp", "base": {"kind": "pi1"}, "c": c}),
)
rhos = st.one_of(
    st.sampled_from([{"name": "gaussian"}, {"name": "tyler"}]),
    st.floats(0.5, 10.0).map(lambda nu: {"name": "tdist", "nu": nu}),
)


@settings(max_examples=60, deadline=None)
@given(rho=rhos, penalty=penalties, alpha=st.floats(0.0, 1e3),
       alphas=st.one_of(st.none(), st.lists(st.floats(0.01, 1e4), min_size=1, max_size=5)),
       n=st.integers(2, 100), seed=st.integers(0, 2**31), tol=st.floats(1e-14, 1e-4))
def test_spec_roundtrip(rho, penalty, alpha, alphas, n, seed, tol):
    spec = io.ExperimentSpec(rho=rho, penalty=penalty, alpha=alpha, alphas=alphas,
                             data={"simulate": {"distribution": "cauchy", "n": n, "seed": seed,
                                                "sigma": {"kind": "identity", "q": 3}}},
                             solver={"grad_tol": tol}).validate()
    again = io.ExperimentSpec.loads(spec.dumps())
    assert again == spec
    assert again.dumps() == spec.dumps()


def test_spec_rejects_bad_input():
    with pytest.raises(InputError, match="unknown spec fields"):
        io.ExperimentSpec.from_dict({"rho": {"name": "tyler"}, "colour": 1})
    with pytest.raises(InputError, match="exactly one"):
        io.ExperimentSpec(data={}).validate()
    with pytest.raises(InputError, match="unknown solver"):
        io.ExperimentSpec(data={"file": "x.csv"}, solver={"speed": 2}).validate()
    with pytest.raises(InputError, match="JSON"):
        io.ExperimentSpec.loads("{not json")


# --- CLI --------------------------------------------------------------------

def test_simulate_is_deterministic(tmp_path):
    spec = write_spec(tmp_path / "s.json", rho={"name": "gaussian"}, data=gaussian_sim())
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()
    meta = json.loads((tmp_path / "a/metadata.json").read_text())
    assert meta["seed"] == 5 and "Philox" in meta["rng"]
    main(["simulate", "--spec", str(spec), "--seed", "6", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a/data.csv").read_bytes() != (tmp_path / "c/data.csv").read_bytes()


def test_fit_gaussian_matches_second_moment(tmp_path):
    x = np.array([[1.0, 0.5, -0.2], [-0.3, 2.0, 0.1], [0.8, -1.1, 0.7], [0.2, 0.3, -1.5]])
    io.write_dataset_csv(tmp_path / "d.csv", x)
    spec = write_spec(tmp_path / "s.json", rho={"name": "gaussian"},
                      data={"file": str(tmp_path / "d.csv")})
    assert main(["fit", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 0
    sigma = io.read_matrix_csv(tmp_path / "o/sigma_hat.csv")
    m = second_moment(x)
    assert np.linalg.norm(sigma - m) <= 1e-8 * np.linalg.norm(m)
    report = json.loads((tmp_path / "o/report.json").read_text())
    assert report["converged"] and report["errors"] is None
    trace = read_csv_rows(tmp_path / "o/trace.csv")
    assert trace[0] == ["iteration", "objective", "grad_norm", "step_eps", "step_decrease",
                        "halvings"]


def test_malformed_input_exit_code(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("a,b\n1,2\n3,oops\n")
    spec = write_spec(tmp_path / "s.json", rho={"name": "gaussian"},
                      data={"file": str(tmp_path / "d.csv")})
    assert main(["fit", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "input" and "d.csv:3" in err["message"]


def test_missing_spec_exit_code(tmp_path):
    assert main(["fit", "--spec", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_non_coercive_exit_code(tmp_path, capsys):
    # all points on one line: tyler has no minimizer
    io.write_dataset_csv(tmp_path / "d.csv", np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]]))
    spec = write_spec(tmp_path / "s.json", rho={"name": "tyler"},
                      data={"file": str(tmp_path / "d.csv")})
    assert main(["fit", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "non_coercive" and err["report"]["status"] == "fail"
    assert main(["check", "--spec", str(spec)]) == 2
    report = json.loads(capsys.readouterr().out)
    assert report["status"] == "fail" and report["witness_dim"] == 1


def test_check_passes_on_good_data(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.json", rho={"name": "tyler"}, data=gaussian_sim())
    assert main(["check", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o/coercivity.json").read_text())["status"] == "pass"


def test_cv_report_columns(tmp_path, monkeypatch):
    spec = write_spec(tmp_path / "s.json", rho={"name": "tdist", "nu": 2.0},
                      penalty={"kind": "Pi1"}, alphas=[0.5, 2.0, 8.0], data=gaussian_sim(n=8))
    monkeypatch.setenv("SPDFIT_THREADS", "2")
    assert main(["cv", "--spec", str(spec), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.delenv("SPDFIT_THREADS")
    assert main(["fit", "--spec", str(spec), "--out", str(tmp_path / "b")]) == 0
    rows = read_csv_rows(tmp_path / "a/cv.csv")
    assert tuple(rows[0]) == io.REPORT_COLUMNS
    assert len(rows) == 4
    # simulated data has a known truth, so the error columns are filled
    assert all(cell != "" for r in rows[1:] for cell in r)
    # thread count does not change the numbers
    a = [r[:5] for r in rows]
    b = [r[:5] for r in read_csv_rows(tmp_path / "b/cv.csv")]
    assert a == b


def test_bad_thread_variable(tmp_path, monkeypatch):
    spec = write_spec(tmp_path / "s.json", rho={"name": "gaussian"}, penalty={"kind": "Pi1"},
                      alphas=[1.0], data=gaussian_sim(n=5))
    monkeypatch.setenv("SPDFIT_THREADS", "many")
    assert main(["cv", "--spec", str(spec), "--out", str(tmp_path)]) == 1


def test_unwritable_output(tmp_path):
    spec = write_spec(tmp_path / "s.json", rho={"name": "gaussian"}, data=gaussian_sim())
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--spec", str(spec), "--out", str(blocker / "sub")]) == 1


def test_reproduce_example_small(tmp_path, monkeypatch):
    monkeypatch.setattr(pipeline, "EXAMPLE_Q", 4)
    monkeypatch.setattr(pipeline, "EXAMPLE_N", 10)
    monkeypatch.setattr(pipeline, "EXAMPLE_ALPHAS", (0.5, 2.0, 8.0))
    assert main(["reproduce-example", "--seeds", "2", "--out", str(tmp_path)]) == 0
    long = read_csv_rows(tmp_path / "example_long.csv")
    assert tuple(long[0]) == ("seed", "panel", "log2_alpha", "value")
    assert len(long) == 1 + 2 * 3 * 4
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seeds"] == [0, 1]
    assert sum(summary["argmin_counts"].values()) == 2
    argmin = read_csv_rows(tmp_path / "example_argmin.csv")
    assert len(argmin) == 3


def test_u_shape_helper():
    assert pipeline.is_u_shaped([3, 2, 1, 1, 2, 5])
    assert pipeline.is_u_shaped([1, 2, 3])
    assert not pipeline.is_u_shaped([3, 1, 2, 1.5, 4])
