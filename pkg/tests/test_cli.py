import json
from pathlib import Path

import pytest

from protosim.cli import main
from protosim.synthetic import write_concept_dataset


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full toy pipeline: synth data -> train -> index -> compare."""
    tmp = tmp_path_factory.mktemp("cli")
    write_concept_dataset(tmp / "data" / "a", [0, 1], 10, seed=0)
    write_concept_dataset(tmp / "data" / "b", [4, 5], 10, seed=1)
    run = tmp / "run"
    code = main([
        "train",
        "--datasets", f"a={tmp / 'data' / 'a'},b={tmp / 'data' / 'b'}",
        "--set", "epochs=2", "--set", "soft_epochs=1", "--set", "num_prototypes=16",
        "--set", "batch_size=8", "--set", "num_local_crops=0",
        "--set", "head_output_dim=16", "--set", "learning_rate=1e-3",
        "--set", "blur_prob=0.0",
        "--out", str(run),
    ])
    assert code == 0
    code = main([
        "index", "--checkpoint", str(run / "checkpoint.pt"),
        "--dataset", f"a={tmp / 'data' / 'a'}", "--dataset", f"b={tmp / 'data' / 'b'}",
        "--out", str(tmp / "index"),
    ])
    assert code == 0
    code = main([
        "compare", "--index", str(tmp / "index"),
        "--checkpoint", str(run / "checkpoint.pt"),
        "--out", str(tmp / "report"),
    ])
    assert code == 0
    return tmp


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        assert (pipeline / "run" / "checkpoint.pt").is_file()
        assert (pipeline / "run" / "trainlog.jsonl").is_file()
        assert (pipeline / "index" / "manifest.json").is_file()
        assert (pipeline / "report" / "report.json").is_file()
        assert (pipeline / "report" / "report.html").is_file()

    def test_report_is_valid_comparison(self, pipeline):
        report = json.loads((pipeline / "report" / "report.json").read_text())
        assert report["format"] == "protosim-report-v1"
        assert report["mode"] == "comparison"
        assert report["datasets"] == ["a", "b"]

    def test_index_manifest_matches_checkpoint(self, pipeline):
        from protosim.checkpoint import sha256_file

        manifest = json.loads((pipeline / "index" / "manifest.json").read_text())
        assert manifest["checkpoint_hash"] == sha256_file(pipeline / "run" / "checkpoint.pt")

    def test_viz_subcommand(self, pipeline, tmp_path):
        image = next((pipeline / "data" / "a").glob("*.png"))
        out = tmp_path / "overlay.png"
        code = main([
            "viz", "--checkpoint", str(pipeline / "run" / "checkpoint.pt"),
            "--image", str(image), "--prototype", "0",
            "--grid-json", str(tmp_path / "grid.json"), "--out", str(out),
        ])
        assert code == 0
        assert out.is_file()
        grid = json.loads((tmp_path / "grid.json").read_text())
        assert len(grid["grid"]) == 4

    def test_probe_and_ablate(self, pipeline, tmp_path):
        code = main([
            "probe", "--checkpoint", str(pipeline / "run" / "checkpoint.pt"),
            "--dataset", f"toy={pipeline / 'data' / 'a'}",
            "--labels", str(pipeline / "data" / "a" / "labels.csv"),
            "--set", "epochs=5",
            "--out", str(tmp_path / "probe"),
        ])
        assert code == 0
        summary = json.loads((tmp_path / "probe" / "probe.json").read_text())
        assert 0.0 <= summary["overall_accuracy"] <= 1.0
        code = main([
            "ablate", "--checkpoint", str(pipeline / "run" / "checkpoint.pt"),
            "--probe", str(tmp_path / "probe" / "probe.pt"),
            "--classes", "top:2", "--out", str(tmp_path / "ablate"),
        ])
        assert code == 0
        ablation = json.loads((tmp_path / "ablate" / "ablation.json").read_text())
        assert len(ablation["ablation"]) == 2

    def test_compare_single_dataset_warns(self, pipeline, tmp_path, capsys):
        code = main([
            "index", "--checkpoint", str(pipeline / "run" / "checkpoint.pt"),
            "--dataset", f"a={pipeline / 'data' / 'a'}",
            "--out", str(tmp_path / "index1"),
        ])
        assert code == 0
        code = main([
            "compare", "--index", str(tmp_path / "index1"),
            "--checkpoint", str(pipeline / "run" / "checkpoint.pt"),
            "--out", str(tmp_path / "report1"),
        ])
        assert code == 0
        assert "summarisation" in capsys.readouterr().err
        report = json.loads((tmp_path / "report1" / "report.json").read_text())
        assert report["mode"] == "summarisation"


class TestUsageErrors:
    def test_unknown_flag_exits_1(self, capsys):
        assert main(["train", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_exits_1(self):
        assert main(["frobnicate"]) == 1

    def test_missing_dataset_path_exits_1_before_work(self, tmp_path, capsys):
        code = main(["train", "--datasets", f"a={tmp_path / 'nope'}",
                     "--out", str(tmp_path / "out")])
        assert code == 1
        assert not (tmp_path / "out").exists()
        assert "does not exist" in capsys.readouterr().err

    def test_bad_config_key_exits_1(self, tmp_path):
        write_concept_dataset(tmp_path / "a", [0], 2, seed=0)
        code = main(["train", "--datasets", f"a={tmp_path / 'a'}",
                     "--set", "warp_speed=9", "--out", str(tmp_path / "out")])
        assert code == 1

    def test_runtime_failure_exits_2(self, tmp_path):
        write_concept_dataset(tmp_path / "a", [0], 2, seed=0)
        (tmp_path / "ckpt.pt").write_bytes(b"not a checkpoint")
        code = main(["index", "--checkpoint", str(tmp_path / "ckpt.pt"),
                     "--dataset", f"a={tmp_path / 'a'}",
                     "--out", str(tmp_path / "idx")])
        assert code == 2


class TestSynth:
    def test_synth_writes_pair(self, tmp_path):
        code = main(["synth", "--out", str(tmp_path / "pair"),
                     "--images-per-dataset", "16", "--seed", "1"])
        assert code == 0
        assert len(list((tmp_path / "pair" / "a").glob("*.png"))) == 16
        assert (tmp_path / "pair" / "b" / "labels.csv").is_file()
