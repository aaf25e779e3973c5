import json

import pytest

from app import run
from utils.app_utils import load_config
from tests.conftest import M1_ALPHA_STAR, M1_BETA_STAR

SYMMETRIC_TEXT = "dim 2\njump 1 0 0.25\njump -1 0 0.25\njump 0 1 0.25\njump 0 -1 0.25\n"


def key_values(text: str) -> dict:
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    monkeypatch.delenv("MARTIN_CONFIG", raising=False)
    config = load_config()
    config["experiments"].update({"x_scale": 1, "x_pad": 6, "y_scale": 1, "y_pad": 6, "doubling": "none"})
    config["max_workers"] = 2
    path = tmp_path / "small.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def with_config(path, **overrides):
    config = json.loads(path.read_text(encoding="utf-8"))
    for section, values in overrides.items():
        config[section].update(values)
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


class TestValidate:
    def test_good_model(self, m1_file, capsys):
        assert run(["validate", "--model", str(m1_file)]) == 0
        out = key_values(capsys.readouterr().out)
        assert out["period"] == "2"
        assert out["ok"] == "true"
        assert out["left_continuous"] == "true"

    def test_failed_hypothesis(self, tmp_path, capsys):
        path = tmp_path / "symmetric.model"
        path.write_text(SYMMETRIC_TEXT, encoding="utf-8")
        assert run(["validate", "--model", str(path)]) == 2
        assert "mean is zero" in capsys.readouterr().err


class TestInputErrors:
    def test_malformed_model(self, tmp_path):
        path = tmp_path / "bad.model"
        path.write_text("dim 2\njump 1 0 0.7\njump 0 1 0.7\n", encoding="utf-8")
        assert run(["validate", "--model", str(path)]) == 2

    def test_missing_model(self, tmp_path):
        assert run(["validate", "--model", str(tmp_path / "absent.model")]) == 2

    def test_undecodable_model(self, tmp_path, capsys):
        path = tmp_path / "binary.model"
        path.write_bytes(b"\xff\xfe")
        assert run(["validate", "--model", str(path)]) == 2
        assert "UTF-8" in capsys.readouterr().err

    def test_unknown_option(self, m1_file):
        assert run(["validate", "--model", str(m1_file), "--frobnicate"]) == 2

    def test_bad_tolerance(self, m1_file):
        assert run(["geometry", "--model", str(m1_file), "--q", "1,0", "--tol", "-1"]) == 2

    def test_missing_config(self, m1_file, tmp_path):
        assert run(["validate", "--model", str(m1_file), "--config", str(tmp_path / "none.json")]) == 2

    def test_monte_carlo_needs_a_seed(self, m1_file, capsys):
        assert run(["mc", "--model", str(m1_file), "--oracle", "boundary", "--paths", "10"]) == 2
        assert "seed" in capsys.readouterr().err


class TestGeometry:
    def test_tangent_direction(self, m1_file, capsys):
        assert run(["geometry", "--model", str(m1_file), "--q", "1,0"]) == 0
        out = key_values(capsys.readouterr().out)
        alpha, beta = (float(c) for c in out["a"].split(","))
        assert alpha == pytest.approx(M1_ALPHA_STAR, abs=1e-7)
        assert beta == pytest.approx(M1_BETA_STAR, abs=1e-7)
        assert out["class"] == "tangent"

    def test_vertical_section(self, m1_file, capsys):
        assert run(["geometry", "--model", str(m1_file), "--alpha", "0", "--K", "40"]) == 0
        out = key_values(capsys.readouterr().out)
        assert float(out["lambda_truncated"]) <= float(out["lambda_plus"])
        assert out["boundary_point"].startswith("0,")

    def test_needs_an_option(self, m1_file):
        assert run(["geometry", "--model", str(m1_file)]) == 2


class TestHarmonicAndGreen:
    def test_harmonic_table(self, m1_file, capsys):
        assert run(["harmonic", "--model", str(m1_file), "--a", "0,0", "--z", "0,1", "--z", "3,2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "z,h,explicit,residual"
        assert lines[1].startswith('"0,1",')
        h, explicit = (float(c) for c in lines[1].split(",")[2:4])
        assert h == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert explicit == pytest.approx(h, rel=1e-9)

    def test_green_to_file(self, m1_file, small_config, tmp_path):
        out = tmp_path / "green.csv"
        code = run(
            ["green", "--model", str(m1_file), "--target", "0,3", "--z", "0,3", "--z", "0,0",
             "--config", str(small_config), "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "z,green"
        assert float(lines[1].split(",")[-1]) >= 1.0
        assert float(lines[2].split(",")[-1]) == 0.0

    def test_non_convergence_exits_one(self, m1_file, small_config, capsys):
        config = with_config(small_config, green={"max_sweeps": 1})
        code = run(["green", "--model", str(m1_file), "--target", "0,3", "--z", "0,3", "--config", str(config)])
        assert code == 1
        assert "sweeps=1" in capsys.readouterr().err


class TestExperiments:
    def test_failed_targets_are_reported(self, m1_file, small_config, capsys):
        config = with_config(small_config, green={"max_sweeps": 1})
        code = run(
            ["ratio", "--model", str(m1_file), "--q", "1,1", "--z", "0,2", "--z0", "0,1",
             "--targets", "list:2,2;3,3", "--config", str(config)]
        )
        assert code == 1
        assert "failed=killed-0,killed-1" in capsys.readouterr().err

    def test_ratio(self, m1_file, small_config, capsys):
        code = run(
            ["ratio", "--model", str(m1_file), "--q", "1,1", "--z", "0,2", "--z0", "0,1",
             "--targets", "list:2,2;3,3;4,4", "--config", str(small_config), "--ld-check"]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "n,abs_zn,kernel,limit,abs_err"
        assert len([l for l in lines if l[0].isdigit()]) == 3
        comments = dict(l[2:].split("=", 1) for l in lines if l.startswith("# ld_"))
        assert float(comments["ld_threshold"]) == pytest.approx(-0.1)
        assert "ld_fitted_rate" in comments
        assert comments["ld_passed"] in ("true", "false")
        assert comments["ld_final_passed"] in ("true", "false")

    def test_shiftcheck(self, m1_file, small_config, capsys):
        code = run(
            ["shiftcheck", "--model", str(m1_file), "--z", "0,2", "--w", "1,0",
             "--targets", "diag:3..4:1", "--config", str(small_config)]
        )
        assert code == 0
        assert capsys.readouterr().out.startswith("n,abs_zn,kernel,limit,abs_err\n3,")

    def test_neyspitzer_blocks(self, m1_file, small_config, capsys):
        code = run(
            ["neyspitzer", "--model", str(m1_file), "--q", "1,1", "--z", "0,0", "--z", "1,0",
             "--targets", "diag:3..3:1", "--config", str(small_config)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "# z=0,0\n" in out and "# z=1,0\n" in out

    def test_rate(self, m1_file, capsys):
        assert run(["rate", "--model", str(m1_file), "--q", "1,0", "--path", "0:0,1;2:0,1"]) == 0
        out = key_values(capsys.readouterr().out)
        assert float(out["cost"]) == pytest.approx(M1_ALPHA_STAR, abs=1e-8)
        assert float(out["rate_free"]) > 0.0


class TestMonteCarlo:
    def test_reproducible(self, m1_file, tmp_path):
        outputs = []
        for k in range(2):
            out = tmp_path / f"mc{k}.txt"
            code = run(
                ["mc", "--model", str(m1_file), "--oracle", "green", "--source", "0,2", "--target", "0,2",
                 "--paths", "2000", "--horizon", "200", "--seed", "12", "--out", str(out)]
            )
            assert code == 0
            outputs.append(out.read_text(encoding="utf-8"))
        assert outputs[0] == outputs[1]
        assert key_values(outputs[0])["n_paths"] == "2000"

    def test_boundary_oracle(self, m1_file, capsys):
        code = run(
            ["mc", "--model", str(m1_file), "--oracle", "boundary", "--y0", "1",
             "--paths", "5000", "--horizon", "1000", "--seed", "4"]
        )
        assert code == 0
        out = key_values(capsys.readouterr().out)
        assert abs(float(out["estimate"]) - 1.0 / 3.0) <= 4.0 * float(out["std_error"]) + 1e-3
