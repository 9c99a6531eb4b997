import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

import premia
from premia.cli import main
from premia.panel_io import RawPanel, write_csv

from conftest import make_panel


def _write_panel(tmp_path, R, F, stem=""):
    dates = tuple(f"{1990 + t // 12}-{t % 12 + 1:02d}" for t in range(len(R)))
    r = tmp_path / f"{stem}returns.csv"
    f = tmp_path / f"{stem}factors.csv"
    write_csv(RawPanel(dates, tuple(f"P{i + 1}" for i in range(R.shape[1])), R), r)
    write_csv(RawPanel(dates, tuple(f"F{i + 1}" for i in range(F.shape[1])), F), f)
    return str(r), str(f)


@pytest.fixture
def files(tmp_path):
    R, F = make_panel(0, T=150, N=6, K=2, e_scale=0.2, intercept=0.3)
    return _write_panel(tmp_path, R, F)


@pytest.fixture
def zoo_files(tmp_path):
    rng = np.random.default_rng(2)
    F = rng.normal(size=(120, 7))
    R = 0.2 + F[:, :3] @ rng.normal(size=(3, 6)) + rng.normal(size=(120, 6))
    return _write_panel(tmp_path, R, F, "zoo_")


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _schema(name):
    text = resources.files("premia").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _commands(files, zoo_files, tmp_path):
    r, f = files
    zr, zf = zoo_files
    shard = str(tmp_path / "shard.bin")
    return [
        ("firstpass", ["firstpass", "--returns", r, "--factors", f]),
        ("estimate", ["estimate", "--returns", r, "--factors", f]),
        ("jis", ["jis", "--returns", r, "--factors", f, "--zero-beta", "zero"]),
        ("drlm-cs", ["drlm-cs", "--returns", r, "--factors", f, "--grid=-2:2:0.25,-2:2:0.25"]),
        ("simulate", ["simulate", "--experiment", "size-surface", "--reps", "100", "--T", "120",
                      "--beta-scales", "3", "--e-scales", "0,1", "--seed", "4"]),
        ("zoo-scan", ["zoo-scan", "--returns", zr, "--factors", zf, "--k", "2", "--out", shard,
                      "--audit", "20"]),
        ("zoo-summarize", ["zoo-summarize", shard, "--bins", "10"]),
    ]


def test_every_subcommand_validates_and_is_deterministic(capsys, files, zoo_files, tmp_path):
    for name, argv in _commands(files, zoo_files, tmp_path):
        code, first, _ = _run(capsys, argv)
        assert code == 0, name
        doc = json.loads(first)
        jsonschema.validate(doc, _schema(name))
        assert doc["config"]["subcommand"] == name
        assert doc["config"]["toolkit_version"] == premia.__version__
        code, second, _ = _run(capsys, argv)
        assert code == 0 and first == second, name


def test_inputs_are_hashed(capsys, files):
    code, out, _ = _run(capsys, ["jis", "--returns", files[0], "--factors", files[1]])
    inputs = json.loads(out)["config"]["inputs"]
    assert set(inputs) == set(files)
    assert all(len(h) == 64 for h in inputs.values())


def test_estimate_contents(capsys, files):
    _, out, _ = _run(capsys, ["estimate", "--returns", files[0], "--factors", files[1]])
    res = json.loads(out)["result"]
    assert res["fm"]["names"] == ["lambda_0", "F1", "F2"]
    assert res["fm"]["se_kind"] == "plain" and res["fm_shanken"]["se_kind"] == "shanken"
    assert res["cue"]["method"] == "CUE"


def test_drlm_csv(capsys, files, tmp_path):
    out_csv = tmp_path / "grid.csv"
    code, out, _ = _run(capsys, ["drlm-cs", "--returns", files[0], "--factors", files[1],
                                 "--grid=-1:1:0.5,-1:1:0.5", "--csv", str(out_csv)])
    assert code == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "F1,F2,drlm,reject_raw,reject_final"
    assert len(lines) == 26


def test_missing_file_exit_2(capsys, files, tmp_path):
    code, out, err = _run(capsys, ["jis", "--returns", str(tmp_path / "none.csv"),
                                   "--factors", files[1]])
    assert code == 2 and out == ""
    assert "none.csv" in err


def test_bad_grid_exit_2(capsys, files):
    code, _, err = _run(capsys, ["drlm-cs", "--returns", files[0], "--factors", files[1],
                                 "--grid", "0:1:0.1"])
    assert code == 2 and "--grid" in err


def test_collinear_betas_exit_3(capsys, tmp_path):
    rng = np.random.default_rng(0)
    f1 = rng.normal(size=200)
    F = np.column_stack([f1, f1 + 1e-13 * rng.normal(size=200)])
    R = rng.normal(size=(200, 5)) + np.outer(f1, np.linspace(1, 2, 5))
    r, f = _write_panel(tmp_path, R, F)
    code, out, err = _run(capsys, ["estimate", "--returns", r, "--factors", f])
    assert code == 3 and out == ""
    assert "rank-deficient cross-section regressors" in err or "singular" in err


def test_rank_deficient_regressors_exit_3(capsys, tmp_path):
    # betas proportional across two factors: the second-pass design loses rank
    rng = np.random.default_rng(1)
    T = 200
    g = rng.normal(size=T)
    F = np.column_stack([g + rng.normal(size=T), g - rng.normal(size=T)])
    loading = np.linspace(1, 2, 5)
    # returns load on the sum of the two factors only -> beta columns identical
    R = np.outer(F.sum(axis=1), loading)
    R += 1e-9 * rng.normal(size=R.shape)
    r, f = _write_panel(tmp_path, R, F)
    code, out, err = _run(capsys, ["estimate", "--returns", r, "--factors", f, "--zero-beta", "zero"])
    assert code == 3
    assert "rank-deficient cross-section regressors" in err


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.strip() == f"premia {premia.__version__} (schema 1)"


def test_reference_differencing(capsys, files):
    code, out, _ = _run(capsys, ["jis", "--returns", files[0], "--factors", files[1],
                                 "--reference", "P6"])
    res = json.loads(out)["result"]
    assert code == 0 and res["N"] == 5 and res["zero_beta_mode"] == "reference_differenced"
    _, base, _ = _run(capsys, ["jis", "--returns", files[0], "--factors", files[1]])
    assert res["J"] == pytest.approx(json.loads(base)["result"]["J"], rel=1e-9)
