import json

import pytest

from rdslab.cli import main


@pytest.fixture
def block_dir(tmp_path):
    assert main(["synth", "block", "--seed", "3", "--out", str(tmp_path / "net")]) == 0
    return tmp_path / "net"


def test_exact_block_model(capsys):
    assert main(["exact", "--E", "10", "--F", "10", "--H", "10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["M"]["sd"] == pytest.approx(0.1382, abs=1e-4)
    assert out["C"]["design_effect"] == pytest.approx(4.88, abs=1e-3)


def test_exact_inline_matrix(capsys):
    assert main(["exact", "--matrix", "[[0.9, 0.1], [0.1, 0.9]]", "--values", "0", "1", "--size", "10"]) == 0
    assert json.loads(capsys.readouterr().out)["chain"]["lambda2"] == pytest.approx(0.8)


def test_exact_on_network(block_dir, capsys):
    args = ["exact", "--edges", str(block_dir / "edges.txt"), "--attributes", str(block_dir / "attributes.csv"), "--attribute", "Y"]
    assert main(args) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["nodes"] == 200 and out["walk"]["sd"] > out["category_chain"]["sd"]


def test_sample_estimate_fomtest_pipeline(block_dir, tmp_path, capsys):
    edges, attrs = str(block_dir / "edges.txt"), str(block_dir / "attributes.csv")
    forest = str(tmp_path / "forest.csv")
    assert main(["sample", "--edges", edges, "--attributes", attrs, "--size", "150", "--seed", "1", "--out", forest]) == 0
    out = str(tmp_path / "est.json")
    assert main(["estimate", "--forest", forest, "--attribute", "Y", "--bootstrap", "50", "--seed", "2", "--out", out]) == 0
    est = json.loads(open(out).read())
    assert set(est) == {"vhe", "vhewbc", "vhehom2", "vhehom3", "sbe"}
    assert all(v["variance"] >= 0 for v in est.values())
    capsys.readouterr()
    assert main(["fomtest", "--level", "network", "--edges", edges, "--attributes", attrs, "--attribute", "Y", "--alpha", "0.001"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "not-FOM"
    assert main(["fomtest", "--level", "sample", "--forest", forest, "--attribute", "Y"]) == 0
    assert json.loads(capsys.readouterr().out)["n_obs"] > 0


def test_cohesion(tmp_path, capsys):
    (tmp_path / "k4.txt").write_text("1 2\n1 3\n1 4\n2 3\n2 4\n3 4\n")
    assert main(["cohesion", "--edges", str(tmp_path / "k4.txt")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mean"] == 3 and out["exhaustive"]


def test_experiment_command(tmp_path):
    cfg = {
        "networks": [{"id": "b", "synth": {"kind": "block", "E": 240, "F": 240, "H": 240}}],
        "attributes": ["Y"],
        "replications": 4,
        "rds": {"sample_size": 40},
        "estimators": ["vhe", "vhepop"],
        "master_seed": 5,
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["experiment", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.csv").exists() and (tmp_path / "out" / "manifest.json").exists()


def test_exit_codes(tmp_path):
    assert main(["nonsense"]) == 1
    assert main(["exact"]) == 1
    assert main(["estimate", "--forest", str(tmp_path / "missing.csv"), "--attribute", "Y"]) == 2
    (tmp_path / "bad.txt").write_text("1 2 3 4\n")
    assert main(["cohesion", "--edges", str(tmp_path / "bad.txt")]) == 2
    assert main(["exact", "--matrix", "[[0, 0.9, 0.1], [0.1, 0, 0.9], [0.9, 0.1, 0]]", "--values", "0", "1", "1"]) == 3
    assert main(["fomtest", "--level", "sample", "--attribute", "Y"]) == 1
