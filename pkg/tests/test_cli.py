import json

import numpy as np
import pytest

from cubetop import cli, imagio


@pytest.fixture
def stack_dir(tmp_path):
    frames = np.random.default_rng(0).poisson(3, (20, 24, 24))
    path = tmp_path / "stack"
    imagio.save_stack(imagio.ImageStack.from_frames(frames), path, "pgm_dir")
    return path


def run(tmp_path, command, config, *flags):
    cfg = tmp_path / f"{command}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / f"out_{command}"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *flags])
    return code, out


def test_detect(tmp_path, stack_dir):
    config = {
        "stack": {"path": str(stack_dir)},
        "region": {"polygon": [[2, 2], [20, 2], [20, 20], [2, 20]], "rect": [0, 0, 22, 22]},
        "sigma": 2.0,
        "m": 10,
        "overlay": True,
    }
    code, out = run(tmp_path, "detect", config)
    assert code == 0
    lines = (out / "detections.csv").read_text().splitlines()
    assert lines[0] == "x,y,lifetime"
    # default eta comes from the sigma lookup
    assert all(float(line.split(",")[2]) > 1.0 for line in lines[1:])
    assert imagio.read_pgm(out / "overlay.pgm").shape == (22, 22)


def test_summarize_rows(tmp_path, stack_dir):
    config = {"stack": {"path": str(stack_dir)}, "m": 1, "statistics": ["entropy", "alps", "count"]}
    code, out = run(tmp_path, "summarize", config, "--threads", "2")
    assert code == 0
    lines = (out / "timeseries.csv").read_text().splitlines()
    assert lines[0] == "frame_index,statistic_name,value"
    rows = [line.split(",") for line in lines[1:]]
    for name in ("entropy", "alps", "count"):
        assert [int(r[0]) for r in rows if r[1] == name] == list(range(20))


def test_gof_is_reproducible(tmp_path, stack_dir):
    config = {
        "stack": {"path": str(stack_dir)},
        "vacuum": {"rect": [0, 0, 24, 24]},
        "statistic": "alps",
        "n": 40,
        "m": 10,
    }
    code, out = run(tmp_path, "gof", config, "--seed", "11")
    first = (out / "gof_report.json").read_bytes()
    code2, out = run(tmp_path, "gof", config, "--seed", "11", "--threads", "3")
    assert code == code2 == 0
    assert (out / "gof_report.json").read_bytes() == first
    report = json.loads(first)
    assert report["n"] == 40 and report["seed"] == 11
    assert 1 / 41 <= report["p_value"] <= 1


def test_multitest_window_series(tmp_path):
    frames = np.random.default_rng(1).poisson(2, (1120, 8, 8))
    path = tmp_path / "long"
    imagio.save_stack(imagio.ImageStack.from_frames(frames), path, "raw_u16")
    config = {
        "stack": {"path": str(path), "format": "raw_u16"},
        "null": {"kind": "poisson", "lambda": 2.0},
        "statistic": "count",
        "n": 19,
    }
    code, out = run(tmp_path, "multitest", config, "--seed", "3")
    assert code == 0
    lines = (out / "multitest.csv").read_text().splitlines()
    assert lines[0] == "k,index,p_value,rank,threshold,rejected"
    assert len(lines) == 1 + 224
    assert [int(line.split(",")[1]) for line in lines[1:]] == [5 * k for k in range(224)]


def test_multitest_empirical_pool(tmp_path, stack_dir):
    config = {
        "stack": {"path": str(stack_dir)},
        "null": {"kind": "empirical"},
        "vacuum": {"rect": [0, 0, 8, 8]},
        "n": 10,
    }
    code, out = run(tmp_path, "multitest", config)
    assert code == 0
    assert len((out / "multitest.csv").read_text().splitlines()) == 1 + 4


def test_diagnose(tmp_path, stack_dir):
    config = {"stack": {"path": str(stack_dir)}, "vacuum": {"rect": [0, 0, 24, 24]}, "max_lag": 4, "bins": 5}
    code, out = run(tmp_path, "diagnose", config)
    assert code == 0
    report = json.loads((out / "diagnose.json").read_text())
    assert report["vacuum_pixels"] == 576
    assert report["p_value_pooled"] <= report["p_value_per_region"]
    assert len((out / "autocorrelation.csv").read_text().splitlines()) == 5
    assert len((out / "semivariogram.csv").read_text().splitlines()) == 6
    assert len((out / "dkw_frames.csv").read_text().splitlines()) == 21


def test_threshold(tmp_path):
    frame = np.array([[0, 8, 3, 10]])
    path = tmp_path / "one"
    imagio.save_stack(imagio.ImageStack.from_frames([frame]), path, "pgm_dir")
    code, out = run(tmp_path, "threshold", {"stack": {"path": str(path)}, "sigma": 0})
    assert code == 0
    assert json.loads((out / "threshold.json").read_text())["threshold"] == 3.0
    assert (out / "binary.pgm").read_bytes().startswith(b"P5\n4 1\n1\n")
    assert imagio.read_pgm(out / "binary.pgm").tolist() == [[0, 1, 0, 1]]


def test_simulate(tmp_path):
    truth = {
        "width": 40,
        "height": 40,
        "centers": [[12, 12], [28, 28]],
        "amplitudes": 0.6,
        "peak_sigma": 2.0,
        "background": 1.0,
        "dose": 200.0,
    }
    config = {"truth": truth, "sigmas": [2.0], "n_seeds": 2}
    code, out = run(tmp_path, "simulate", config, "--seed", "5")
    assert code == 0
    lines = (out / "recovery.csv").read_text().splitlines()
    assert lines[0] == "seed,sigma,reference_count,count,hausdorff,correlation"
    assert [line.split(",")[0] for line in lines[1:]] == ["5", "6"]
    assert imagio.load_stack(out / "frames").frame_count == 2


def test_schema_errors_name_fields(tmp_path, stack_dir, capsys):
    config = {"stack": {"path": str(stack_dir)}, "sigma": -1, "region": {"rect": [0, 0, "a", 3]}, "extra": 1}
    code, _ = run(tmp_path, "detect", config)
    err = capsys.readouterr().err
    assert code != 0
    assert "sigma" in err and "region.rect.2" in err and "extra" in err


def test_null_source_required(tmp_path, stack_dir, capsys):
    code, _ = run(tmp_path, "gof", {"stack": {"path": str(stack_dir)}})
    assert code != 0
    assert "lambda" in capsys.readouterr().err


def test_runtime_error_exit(tmp_path, capsys):
    code, _ = run(tmp_path, "detect", {"stack": {"path": str(tmp_path / "missing")}})
    assert code != 0
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["detect", "--config", str(tmp_path / "nope.json")]) != 0


def test_bad_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert cli.main(["summarize", "--config", str(cfg), "--threads", "0"]) != 0
    assert cli.main(["summarize", "--config", str(cfg), "--seed", "-1"]) != 0
