import struct
import subprocess
import sys

import numpy as np
import pytest

from pddspeckle.cli import main
from pddspeckle.config import parse_key_values
from pddspeckle.core_image import Raster, read_raster, write_pgm


@pytest.fixture
def small_pgm(tmp_path, camera):
    path = tmp_path / "clean.pgm"
    write_pgm(path, Raster(camera.data[50:80, 60:90]))
    return path


@pytest.fixture
def speckled(tmp_path, small_pgm):
    out = tmp_path / "noisy.pddf"
    assert main(["simulate", str(small_pgm), str(out), "--looks", "1", "--seed", "7"]) == 0
    return out


def manifest_sections(path):
    sections, current = {}, None
    for line in path.read_text().splitlines():
        if line.startswith("["):
            current = line.strip("[]")
            sections[current] = {}
        elif "=" in line and current:
            k, v = line.split("=", 1)
            sections[current][k] = v
    return sections


class TestSimulate:
    def test_writes_output_and_manifest(self, tmp_path, speckled, small_pgm):
        img = read_raster(speckled)
        assert img.shape == (30, 30)
        man = manifest_sections(tmp_path / "noisy.pddf.manifest")
        assert man["speckle"]["looks"] == "1" and man["speckle"]["seed"] == "7"
        assert "PCG64" in man["speckle"]["rng"]
        assert man["run"]["input"] == str(small_pgm)
        assert float(man["run"]["duration_s"]) >= 0
        assert "version" in man["run"]

    def test_rerun_is_bit_identical(self, tmp_path, speckled, small_pgm):
        again = tmp_path / "again.pddf"
        main(["simulate", str(small_pgm), str(again), "--looks", "1", "--seed", "7"])
        assert again.read_bytes() == speckled.read_bytes()

    def test_zero_looks_is_usage_error(self, tmp_path, small_pgm, capsys):
        assert main(["simulate", str(small_pgm), str(tmp_path / "o.pddf"), "--looks", "0"]) == 2
        assert "looks" in capsys.readouterr().err

    def test_zero_image(self, tmp_path):
        src = tmp_path / "zero.pgm"
        write_pgm(src, Raster(np.zeros((8, 8))))
        assert main(["simulate", str(src), str(tmp_path / "z.pddf"), "--looks", "3"]) == 0
        assert not read_raster(tmp_path / "z.pddf").data.any()

    def test_missing_input(self, tmp_path, capsys):
        missing = tmp_path / "absent.pgm"
        assert main(["simulate", str(missing), str(tmp_path / "o.pddf"), "--looks", "1"]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_missing_flag_exits_2(self, small_pgm, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", str(small_pgm), str(tmp_path / "o.pddf")])
        assert exc.value.code == 2


class TestDespeckle:
    def test_run_manifest_and_diagnostics(self, tmp_path, speckled, capsys):
        out = tmp_path / "den.pddf"
        diag = tmp_path / "groups.txt"
        rc = main(["despeckle", str(speckled), str(out), "--looks", "1", "--stride", "4",
                   "--diagnostics", str(diag)])
        assert rc == 0
        assert "groups" in capsys.readouterr().err
        assert read_raster(out).shape == (30, 30)
        man = manifest_sections(tmp_path / "den.pddf.manifest")
        assert man["config"]["stride"] == "4" and man["config"]["looks"] == "1"
        for key in ("time_grouping_s", "time_denoise_s", "duration_s", "version", "input", "output"):
            assert key in man["run"]
        lines = diag.read_text().splitlines()
        assert len(lines) == 1 + 7 * 7
        assert "P=" in lines[1] and "mean_nnz=" in lines[1] and "ksvd_error=" in lines[1]

    def test_config_round_trip_and_determinism(self, tmp_path, speckled, capsys):
        first = tmp_path / "a.pddf"
        assert main(["despeckle", str(speckled), str(first), "--looks", "1", "--dict-size", "64",
                     "--seed", "5", "--quiet"]) == 0
        assert capsys.readouterr().err == ""
        second = tmp_path / "b.pddf"
        assert main(["despeckle", str(speckled), str(second), "--config", str(first) + ".manifest",
                     "--quiet", "--workers", "2"]) == 0
        assert first.read_bytes() == second.read_bytes()
        cfg_a = parse_key_values((tmp_path / "a.pddf.manifest").read_text())
        cfg_b = parse_key_values((tmp_path / "b.pddf.manifest").read_text())
        assert cfg_a == cfg_b

    def test_flag_overrides_config_file(self, tmp_path, speckled):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("looks=1\nstride=7\n")
        out = tmp_path / "c.pddf"
        assert main(["despeckle", str(speckled), str(out), "--config", str(cfg), "--stride", "5", "--quiet"]) == 0
        assert manifest_sections(tmp_path / "c.pddf.manifest")["config"]["stride"] == "5"

    def test_image_smaller_than_patch(self, tmp_path):
        src = tmp_path / "tiny.pgm"
        write_pgm(src, Raster(np.ones((5, 12))))
        assert main(["despeckle", str(src), str(tmp_path / "o.pddf"), "--looks", "1", "--quiet"]) == 2

    def test_unwritable_output(self, tmp_path, speckled):
        out = tmp_path / "no_dir" / "o.pddf"
        assert main(["despeckle", str(speckled), str(out), "--looks", "1", "--stride", "7", "--quiet"]) == 1

    def test_bad_config_value(self, tmp_path, speckled):
        assert main(["despeckle", str(speckled), str(tmp_path / "o.pddf"), "--looks", "1",
                     "--patch-side", "6", "--quiet"]) == 2

    def test_pgm_output(self, tmp_path, speckled):
        out = tmp_path / "den.pgm"
        assert main(["despeckle", str(speckled), str(out), "--looks", "1", "--stride", "7", "--quiet"]) == 0
        assert out.read_bytes().startswith(b"P5")


class TestMetrics:
    def test_identical(self, small_pgm, capsys):
        assert main(["metrics", str(small_pgm), str(small_pgm)]) == 0
        assert capsys.readouterr().out.strip() == "psnr=inf ssim=1.0"

    def test_regions_and_csv(self, tmp_path, small_pgm, speckled, capsys):
        csv = tmp_path / "m.csv"
        args = ["metrics", str(small_pgm), str(speckled), "--region", "0,0,10,10", "--region", "5,5,20,20",
                "--csv", str(csv)]
        assert main(args) == 0
        assert main(args) == 0
        line = capsys.readouterr().out.splitlines()[0]
        keys = [kv.split("=")[0] for kv in line.split()]
        assert keys == ["psnr", "ssim", "enl_r1", "enl_r2"]
        rows = csv.read_text().splitlines()
        assert rows[0] == "reference,test,psnr,ssim,enl_r1,enl_r2"
        assert len(rows) == 3

    def test_missing_file(self, tmp_path, small_pgm, capsys):
        missing = tmp_path / "gone.pgm"
        assert main(["metrics", str(small_pgm), str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_region_out_of_bounds(self, small_pgm):
        assert main(["metrics", str(small_pgm), str(small_pgm), "--region", "25,25,10,10"]) == 2

    def test_dimension_mismatch(self, tmp_path, small_pgm):
        other = tmp_path / "other.pgm"
        write_pgm(other, Raster(np.ones((12, 30))))
        assert main(["metrics", str(small_pgm), str(other)]) == 2


class TestDictDump:
    def test_layout(self, tmp_path, speckled):
        out = tmp_path / "dict.pddf"
        assert main(["dict-dump", str(speckled), str(out), "--origin", "3,9", "--looks", "1",
                     "--dict-size", "64", "--quiet"]) == 0
        raw = out.read_bytes()
        assert raw[:4] == b"PDDF"
        assert struct.unpack("<III", raw[4:16]) == (64, 49, 1)
        D = np.frombuffer(raw[16:], "<f4").reshape(49, 64)
        np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1, atol=1e-5)

    def test_deterministic(self, tmp_path, speckled):
        a, b = tmp_path / "a.pddf", tmp_path / "b.pddf"
        for p in (a, b):
            main(["dict-dump", str(speckled), str(p), "--origin", "0,0", "--looks", "1", "--quiet"])
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("origin", ["25,0", "x,1", "3"])
    def test_bad_origin(self, tmp_path, speckled, origin):
        assert main(["dict-dump", str(speckled), str(tmp_path / "d.pddf"), "--origin", origin, "--looks", "1"]) == 2


def test_module_entry_point(small_pgm):
    proc = subprocess.run([sys.executable, "-m", "pddspeckle", "metrics", str(small_pgm), str(small_pgm)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("psnr=inf")
