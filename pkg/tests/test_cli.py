import json

import numpy as np
import pytest

from meshfield.cli import main
from meshfield.meshio import load_mesh

FAST_FLAGS = ["--iterations", "2", "--n-views", "1", "--image-size", "12",
              "--eval-image-size", "16", "--metric-every", "1",
              "--frequencies", "8", "--reduction", "4", "--rank", "2",
              "--text-dim", "32", "--seed", "0", "--no-walltime"]


def run_cli(*argv) -> int:
    return main(list(argv))


def test_gen_samples_default(tmp_path):
    out = tmp_path / "samples"
    assert run_cli("gen-samples", "--out", str(out)) == 0
    for name in ("sphere.obj", "cube.obj", "torus.obj", "manifest.json"):
        assert (out / name).exists()
    assert load_mesh(out / "sphere.obj").num_vertices == 642


def test_gen_samples_subdiv_2(tmp_path):
    out = tmp_path / "samples"
    assert run_cli("gen-samples", "--out", str(out), "--subdiv", "2") == 0
    assert load_mesh(out / "sphere.obj").num_vertices == 162


def test_gen_samples_rerun_is_identical(tmp_path):
    out = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(out))
    first = (out / "manifest.json").read_bytes()
    run_cli("gen-samples", "--out", str(out))
    assert (out / "manifest.json").read_bytes() == first


def test_stylize_writes_run_directory(tmp_path, capsys):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    run_dir = tmp_path / "run"
    code = run_cli("stylize", "--mesh", str(samples / "sphere.obj"),
                   "--prompt", "a red sphere", "--out", str(run_dir), *FAST_FLAGS)
    assert code == 0
    for name in ("config.json", "history.csv", "final.obj", "final.ply", "report.json"):
        assert (run_dir / name).exists()
    report = json.loads((run_dir / "report.json").read_text())
    assert report["resolved_config"]["iterations"] == 2
    assert report["mes_final"] is not None
    out = capsys.readouterr().out
    assert "final loss" in out and "MES" in out


def test_stylize_target_from_reference(tmp_path):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    run_dir = tmp_path / "run"
    code = run_cli("stylize", "--mesh", str(samples / "sphere.obj"),
                   "--target-from", str(samples / "cube.obj"),
                   "--out", str(run_dir), *FAST_FLAGS)
    assert code == 0
    assert (run_dir / "history.csv").exists()


def test_stylize_missing_mesh_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("stylize", "--mesh", str(tmp_path / "nope.obj"), "--prompt", "x")
    assert exc.value.code == 2
    assert "nope.obj" in capsys.readouterr().err


def test_stylize_requires_exactly_one_objective(tmp_path):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    with pytest.raises(SystemExit) as exc:
        run_cli("stylize", "--mesh", str(samples / "sphere.obj"))
    assert exc.value.code == 2


def test_eval_writes_24_named_pngs(tmp_path, capsys):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    out = tmp_path / "eval"
    code = run_cli("eval", "--mesh", str(samples / "sphere.obj"),
                   "--prompt", "a gray sphere", "--out", str(out), *FAST_FLAGS)
    assert code == 0
    pngs = sorted(p.name for p in out.glob("*.png"))
    assert len(pngs) == 24
    assert "azi0_ele-30.png" in pngs and "azi315_ele30.png" in pngs
    assert "MES" in capsys.readouterr().out


def test_eval_unreachable_remote_backend_exits_1(tmp_path, capsys):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    code = run_cli("eval", "--mesh", str(samples / "sphere.obj"), "--prompt", "x",
                   "--backend", "remote:http://127.0.0.1:9", "--out",
                   str(tmp_path / "e"))
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_bench_on_sample_manifest(tmp_path, capsys):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    manifest = samples / "manifest.json"
    entries = json.loads(manifest.read_text())
    manifest.write_text(json.dumps([{**entries[0], "prompts": ["a red sphere"]}]))
    out = tmp_path / "report"
    code = run_cli("bench", "--manifest", str(manifest), "--out", str(out), *FAST_FLAGS)
    assert code == 0
    assert (out / "report.csv").exists()
    payload = json.loads((out / "report.json").read_text())
    assert payload["resolved_config"]["its_threshold"] == 0.22
    assert "aggregate MES" in capsys.readouterr().out


def test_bench_partial_failure_keeps_report_and_exits_1(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([
        {"mesh": "missing.obj", "category": "ghost", "prompts": ["a ghost"]},
    ]))
    out = tmp_path / "report"
    code = run_cli("bench", "--manifest", str(manifest), "--out", str(out), *FAST_FLAGS)
    assert code == 1
    assert (out / "report.csv").exists()


def test_bench_ablate_tdam_flag(tmp_path):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    manifest = samples / "manifest.json"
    entries = json.loads(manifest.read_text())
    manifest.write_text(json.dumps([{**entries[0], "prompts": ["a red sphere"]}]))
    out = tmp_path / "report"
    code = run_cli("bench", "--manifest", str(manifest), "--out", str(out),
                   "--ablate-tdam", *FAST_FLAGS)
    assert code == 0
    payload = json.loads((out / "report.json").read_text())
    assert payload["resolved_config"]["attention"] is False


def test_config_file_and_flag_precedence(tmp_path):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 3, "image_size": 12, "n_views": 1,
                               "frequencies": 8, "reduction": 4, "rank": 2,
                               "text_dim": 32, "eval_image_size": 16,
                               "metric_every": 1, "walltime": False}))
    run_dir = tmp_path / "run"
    code = run_cli("stylize", "--mesh", str(samples / "sphere.obj"),
                   "--prompt", "a red sphere", "--out", str(run_dir),
                   "--config", str(cfg), "--iterations", "2")
    assert code == 0
    report = json.loads((run_dir / "report.json").read_text())
    # flag beats file, file beats default
    assert report["resolved_config"]["iterations"] == 2
    assert report["resolved_config"]["image_size"] == 12
    assert report["iterations_run"] == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit) as exc:
        run_cli("stylize", "--mesh", "x.obj", "--prompt", "p", "--config", str(cfg))
    assert exc.value.code == 2


def test_env_var_backend_default(tmp_path, monkeypatch, capsys):
    samples = tmp_path / "samples"
    run_cli("gen-samples", "--out", str(samples), "--subdiv", "0")
    monkeypatch.setenv("MESHFIELD_BACKEND_URL", "http://127.0.0.1:9")
    code = run_cli("eval", "--mesh", str(samples / "sphere.obj"), "--prompt", "x",
                   "--out", str(tmp_path / "e"))
    assert code == 1  # resolved to the (unreachable) remote backend from the env
    assert "127.0.0.1:9" in capsys.readouterr().err
