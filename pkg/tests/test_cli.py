import json
import subprocess
import sys

import numpy as np
import pytest

from illumkit import lut
from illumkit.cli import DEFAULTS, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from illumkit.color import angular_error, normalize
from illumkit.correction import ProjectiveTransform
from illumkit.synth import SynthSpec, export_dataset, generate, two_cluster_spec


@pytest.fixture(scope="module")
def planted_dataset(tmp_path_factory):
    """Exported single-plant dataset: raw gray-world estimates carry a
    known bias that the trained corrections must undo."""
    rng = np.random.default_rng(100)
    truth_to_est = 0.7 * np.eye(3) + 0.3 * rng.uniform(0, 1, (3, 3))
    plant = np.linalg.inv(truth_to_est)
    spec = SynthSpec(seed=101, n_images=24, width=24, height=16,
                     planted_transforms=(plant,))
    result = generate(spec)
    out = tmp_path_factory.mktemp("planted")
    manifest = export_dataset(result, out)
    return manifest, result


@pytest.fixture(scope="module")
def two_cluster_dataset(tmp_path_factory):
    result = generate(two_cluster_spec(seed=102, n_images=36, width=24, height=16))
    out = tmp_path_factory.mktemp("clusters")
    manifest = export_dataset(result, out)
    return manifest, result


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestTrainAndCorrect:
    def test_global_round_trip(self, planted_dataset, tmp_path, capsys):
        manifest, result = planted_dataset
        out = tmp_path / "transform.json"
        assert run_cli("train", manifest, "--estimator", "gw", "--mode", "global",
                       "--out", out) == EXIT_OK
        transform = ProjectiveTransform.from_json(out.read_text())
        capsys.readouterr()

        # correcting a raw estimate recovers the matching truth
        s = result.samples[0]
        est = ",".join(f"{v:.10f}" for v in s.estimate)
        assert run_cli("correct", "--estimate", est, "--transform", out) == EXIT_OK
        printed = capsys.readouterr().out.strip()
        corrected = np.array([float(x) for x in printed.split(",")])
        # 16-bit export quantization plus 4-decimal output bounds the match
        assert angular_error(corrected, s.truth) < 0.05

    def test_lut_train_writes_expected_payload(self, two_cluster_dataset, tmp_path, capsys):
        manifest, _ = two_cluster_dataset
        out = tmp_path / "grid.aplu"
        assert run_cli("train", manifest, "--estimator", "gw", "--mode", "apap-lut",
                       "--out", out) == EXIT_OK
        blob = out.read_bytes()
        grid = lut.deserialize(blob)
        assert grid.size == 16
        tags = 4 + len(grid.method_tag.encode()) + len(grid.camera_tag.encode())
        assert len(blob) == 64 + tags + 18432 + 4

    def test_identity_transform_correct(self, tmp_path, capsys):
        t = tmp_path / "id.json"
        t.write_text(ProjectiveTransform(np.eye(3)).to_json())
        assert run_cli("correct", "--estimate", "1,1,1", "--transform", t) == EXIT_OK
        assert capsys.readouterr().out.strip() == "0.5774,0.5774,0.5774"

    def test_correct_via_lut(self, two_cluster_dataset, tmp_path, capsys):
        manifest, result = two_cluster_dataset
        out = tmp_path / "grid.aplu"
        run_cli("train", manifest, "--estimator", "gw", "--mode", "apap-lut", "--out", out)
        capsys.readouterr()
        s = result.samples[1]
        est = ",".join(f"{v:.10f}" for v in s.estimate)
        assert run_cli("correct", "--estimate", est, "--lut", out) == EXIT_OK
        corrected = np.array([float(x) for x in capsys.readouterr().out.strip().split(",")])
        assert angular_error(corrected, s.truth) < 0.5

    def test_correct_from_image_with_preview(self, planted_dataset, tmp_path, capsys):
        manifest, result = planted_dataset
        t = tmp_path / "id.json"
        t.write_text(ProjectiveTransform(np.eye(3)).to_json())
        img_path = manifest.parent / "images" / "img_0000.png"
        preview = tmp_path / "preview.png"
        assert run_cli("correct", "--input", img_path, "--estimator", "gw",
                       "--transform", t,
                       "--config", _cfg(tmp_path, downsample_w=24, downsample_h=16),
                       "--preview", preview) == EXIT_OK
        assert preview.is_file()
        printed = capsys.readouterr().out.strip()
        corrected = np.array([float(x) for x in printed.split(",")])
        assert angular_error(corrected, result.samples[0].estimate) < 0.05


def _cfg(tmp_path, **kv):
    path = tmp_path / "settings.conf"
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


class TestExitCodes:
    def test_bad_estimate_parse(self, tmp_path):
        t = tmp_path / "id.json"
        t.write_text(ProjectiveTransform(np.eye(3)).to_json())
        assert run_cli("correct", "--estimate", "1,1", "--transform", t) == EXIT_CONFIG
        assert run_cli("correct", "--estimate", "a,b,c", "--transform", t) == EXIT_CONFIG

    def test_missing_manifest(self, tmp_path):
        assert run_cli("train", tmp_path / "missing.csv", "--out",
                       tmp_path / "t.json") == EXIT_DATA

    def test_conflicting_correct_inputs(self, tmp_path):
        assert run_cli("correct", "--estimate", "1,1,1") == EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::illumkit.errors.NearSingularWarning")
    def test_numeric_failure(self, tmp_path):
        t = tmp_path / "bad.json"
        t.write_text(ProjectiveTransform(np.diag([1.0, 1.0, 0.0])).to_json())
        assert run_cli("correct", "--estimate", "0,0,1", "--transform", t) == EXIT_NUMERIC

    def test_unknown_estimator(self, planted_dataset, tmp_path):
        manifest, _ = planted_dataset
        assert run_cli("train", manifest, "--estimator", "wat",
                       "--out", tmp_path / "t.json") == EXIT_CONFIG

    def test_bad_lut_file(self, tmp_path):
        bad = tmp_path / "bad.aplu"
        bad.write_bytes(b"XXXX" + b"\x00" * 100)
        assert run_cli("lut-inspect", bad) == EXIT_DATA


class TestEval:
    def test_planted_eval_table(self, planted_dataset, tmp_path, capsys):
        manifest, _ = planted_dataset
        cfg = _cfg(tmp_path, downsample_w=24, downsample_h=16)
        assert run_cli("eval", manifest, "--estimators", "gw",
                       "--modes", "raw,global", "--format", "csv",
                       "--config", cfg) == EXIT_OK
        out = capsys.readouterr().out
        rows = [r.split(",") for r in out.strip().splitlines()[1:]]
        by_mode = {r[2]: float(r[3]) for r in rows}
        assert by_mode["raw"] > 1.0
        assert by_mode["global"] < 0.1

    def test_modes_filter(self, planted_dataset, tmp_path, capsys):
        manifest, _ = planted_dataset
        cfg = _cfg(tmp_path, downsample_w=24, downsample_h=16)
        assert run_cli("eval", manifest, "--modes", "raw", "--format", "csv",
                       "--config", cfg) == EXIT_OK
        out = capsys.readouterr().out
        modes = {r.split(",")[2] for r in out.strip().splitlines()[1:]}
        assert modes == {"raw"}

    def test_deterministic_output(self, planted_dataset, tmp_path, capsys):
        manifest, _ = planted_dataset
        cfg = _cfg(tmp_path, downsample_w=24, downsample_h=16)
        run_cli("eval", manifest, "--modes", "raw", "--format", "json", "--config", cfg)
        first = capsys.readouterr().out
        run_cli("eval", manifest, "--modes", "raw", "--format", "json", "--config", cfg)
        second = capsys.readouterr().out
        assert first == second

    def test_report_to_file(self, planted_dataset, tmp_path, capsys):
        manifest, _ = planted_dataset
        cfg = _cfg(tmp_path, downsample_w=24, downsample_h=16)
        out = tmp_path / "report.json"
        assert run_cli("eval", manifest, "--modes", "raw", "--format", "json",
                       "--out", out, "--config", cfg) == EXIT_OK
        data = json.loads(out.read_text())
        assert data["entries"][0]["mode"] == "raw"


class TestSynthCommand:
    def test_same_seed_identical_output(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"seed": 7, "n_images": 6, "width": 10, "height": 8}))
        assert run_cli("synth", spec, "--out", tmp_path / "a") == EXIT_OK
        assert run_cli("synth", spec, "--out", tmp_path / "b") == EXIT_OK
        capsys.readouterr()
        a = sorted((tmp_path / "a").rglob("*"))
        b = sorted((tmp_path / "b").rglob("*"))
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            if pa.is_file():
                assert pa.read_bytes() == pb.read_bytes()

    def test_export_loads(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"seed": 8, "n_images": 6, "width": 10, "height": 8}))
        assert run_cli("synth", spec, "--out", tmp_path / "d") == EXIT_OK
        manifest_path = capsys.readouterr().out.strip()
        from illumkit.dataset import load_manifest

        assert len(load_manifest(manifest_path).records) == 6

    def test_bad_spec(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text("{nope")
        assert run_cli("synth", spec, "--out", tmp_path / "x") == EXIT_CONFIG
        assert run_cli("synth", tmp_path / "missing.json",
                       "--out", tmp_path / "x") == EXIT_DATA


class TestLutInspect:
    def test_header_dump(self, two_cluster_dataset, tmp_path, capsys):
        manifest, _ = two_cluster_dataset
        out = tmp_path / "grid.aplu"
        run_cli("train", manifest, "--estimator", "gw", "--mode", "apap-lut",
                "--out", out, "--lut-size", "4")
        capsys.readouterr()
        assert run_cli("lut-inspect", out) == EXIT_OK
        text = capsys.readouterr().out
        assert "size: 4 x 4" in text
        assert f"matrix payload: {4 * 4 * 9 * 8} bytes" in text

    def test_node_dump(self, two_cluster_dataset, tmp_path, capsys):
        manifest, _ = two_cluster_dataset
        out = tmp_path / "grid.aplu"
        run_cli("train", manifest, "--estimator", "gw", "--mode", "apap-lut",
                "--out", out, "--lut-size", "2")
        capsys.readouterr()
        assert run_cli("lut-inspect", out, "--nodes") == EXIT_OK
        assert "node (1, 1)" in capsys.readouterr().out

    def test_json_mirror(self, two_cluster_dataset, tmp_path, capsys):
        manifest, _ = two_cluster_dataset
        out = tmp_path / "grid.aplu"
        run_cli("train", manifest, "--estimator", "gw", "--mode", "apap-lut",
                "--out", out, "--lut-size", "2")
        capsys.readouterr()
        assert run_cli("lut-inspect", out, "--json") == EXIT_OK
        obj = json.loads(capsys.readouterr().out)
        back = lut.from_json_dict(obj)
        assert back.size == 2
        assert np.array_equal(back.nodes, lut.deserialize(out.read_bytes()).nodes)


class TestConfigPrecedence:
    def test_print_config_lists_defaults(self, capsys):
        assert run_cli("--print-config") == EXIT_OK
        text = capsys.readouterr().out
        for key in DEFAULTS:
            assert key in text
        assert "0.0625" in text and "3.0" in text

    def test_config_file_overrides_default(self, tmp_path, capsys):
        cfg = _cfg(tmp_path, sigma_w=5.0)
        assert run_cli("--config", cfg, "--print-config") == EXIT_OK
        text = capsys.readouterr().out
        assert "5.0" in text and "[config-file]" in text

    def test_env_overrides_config_file(self, tmp_path, capsys, monkeypatch):
        cfg = _cfg(tmp_path, sigma_w=5.0)
        monkeypatch.setenv("ILLUM_SIGMA_W", "7.5")
        assert run_cli("--config", cfg, "--print-config") == EXIT_OK
        text = capsys.readouterr().out
        assert "7.5" in text and "[environment]" in text

    def test_flag_overrides_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("ILLUM_THREADS", "4")
        assert run_cli("--threads", "9", "--print-config") == EXIT_OK
        assert "9" in capsys.readouterr().out

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("nonsense = 1\n")
        assert run_cli("--config", path, "--print-config") == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert run_cli("--config", tmp_path / "nope.conf", "--print-config") == EXIT_CONFIG


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "illumkit", "--print-config"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "sigma_w" in proc.stdout
