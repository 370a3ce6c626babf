import json
import shutil
from importlib.resources import files
from pathlib import Path

import pytest

from synthlogs import io as sio
from synthlogs.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main

MINI = Path(str(files("synthlogs") / "data" / "mini"))


def tree_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_is_byte_identical(tmp_path):
    args = ["generate", "--seed", "7", "-n", "2", "--length", "700", "--density", "0.01",
            "--outputs", "heightmap,point_cloud,mesh,knot_labels"]
    assert main(args + ["-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["-o", str(tmp_path / "b")]) == EXIT_OK
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert "log_000/heightmap.png" in a and "dataset.json" in a and "outputs.json" in a


def test_threads_do_not_change_output(tmp_path):
    args = ["generate", "--seed", "3", "-n", "2", "--length", "700", "--outputs", "heightmap"]
    assert main(args + ["-o", str(tmp_path / "a"), "--threads", "1"]) == EXIT_OK
    assert main(args + ["-o", str(tmp_path / "b"), "--threads", "2"]) == EXIT_OK
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_golden_pipeline_on_mini_data(tmp_path, capsys):
    cfg = str(MINI / "fit_config.json")
    assert main(["fit", str(MINI / "dataset.json"), "--config", cfg, "-o", str(tmp_path / "fit")]) == EXIT_OK
    table = capsys.readouterr().out
    assert "RMSE" in table and "All logs" in table
    assert main(["stats", str(tmp_path / "fit"), "-o", str(tmp_path / "stats.json")]) == EXIT_OK
    assert main(["validate", str(tmp_path / "stats.json")]) == EXIT_OK
    assert main(["generate", "--stats", str(tmp_path / "stats.json"), "--seed", "1", "--length", "700",
                 "--outputs", "heightmap,knot_labels", "-o", str(tmp_path / "gen")]) == EXIT_OK
    model = tmp_path / "gen" / "log_000" / "model.json"
    assert main(["validate", str(model)]) == EXIT_OK
    assert main(["reconstruct", str(model), "-o", str(tmp_path / "rec")]) == EXIT_OK
    assert (tmp_path / "rec" / "mesh.ply").exists()
    for name in ("log_000", "log_001"):
        fitted = sio.read_model(tmp_path / "fit" / f"{name}.model.json")
        truth = sio.read_model(MINI / f"{name}_truth.json")
        assert len(fitted.knots) == len(truth.knots)


def test_validate_catches_corrupted_rho_max(tmp_path, capsys):
    d = json.loads((MINI / "log_000_truth.json").read_text())
    d["knots"][0]["params"]["rho_max"] *= 1.5
    (tmp_path / "bad.json").write_text(json.dumps(d))
    assert main(["validate", str(tmp_path / "bad.json")]) == EXIT_INVALID
    assert "rho_max" in capsys.readouterr().out


def test_missing_file_is_io_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_IO
    assert main(["fit", str(tmp_path / "nope.json"), "-o", str(tmp_path / "o")]) == EXIT_IO


def test_truncated_document_is_io_error(tmp_path):
    text = (MINI / "log_000_truth.json").read_text()
    (tmp_path / "t.json").write_text(text[:100])
    assert main(["validate", str(tmp_path / "t.json")]) == EXIT_IO


def test_bad_config_is_validation_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"fit": {"no_such_key": 1}}))
    assert main(["fit", str(MINI / "dataset.json"), "--config", str(tmp_path / "c.json"),
                 "-o", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["generate", "-n", "0", "-o", str(tmp_path / "g")]) == EXIT_INVALID
    assert main(["generate", "--outputs", "teapot", "-o", str(tmp_path / "g")]) == EXIT_INVALID


def test_tampered_dataset_checksum(tmp_path):
    shutil.copytree(MINI, tmp_path / "mini")
    ply = tmp_path / "mini" / "log_000_surface.ply"
    raw = bytearray(ply.read_bytes())
    raw[-1] ^= 0xFF
    ply.write_bytes(bytes(raw))
    assert main(["fit", str(tmp_path / "mini" / "dataset.json"), "-o", str(tmp_path / "o")]) == EXIT_IO


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
