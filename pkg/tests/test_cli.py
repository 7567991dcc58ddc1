import json

import pytest

from promptseg.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared tiny dataset + one smoke training run."""
    root = tmp_path_factory.mktemp("cli")
    assert (
        main(
            [
                "generate-data",
                "--out", str(root / "train"),
                "--n", "6",
                "--classes", "circle", "square",
                "--size", "48",
                "--seed", "1",
            ]
        )
        == EXIT_OK
    )
    assert (
        main(
            [
                "generate-data",
                "--out", str(root / "val"),
                "--n", "3",
                "--classes", "circle", "square",
                "--size", "48",
                "--seed", "2",
            ]
        )
        == EXIT_OK
    )
    config = {
        "dataset": str(root / "train" / "manifest.json"),
        "val_dataset": str(root / "val" / "manifest.json"),
        "out_dir": str(root / "run"),
        "model": {"preset": "toy"},
        "train": {
            "mode": "semi_automatic",
            "epochs": 1,
            "batch_size": 4,
            "learning_rate": 0.001,
            "seed": 0,
        },
    }
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(config, indent=2))
    assert main(["train", "--config", str(cfg_path)]) == EXIT_OK
    return root, cfg_path, config


class TestTrainCommand:
    def test_smoke_run_artifacts(self, workspace):
        root, _, _ = workspace
        run = root / "run"
        assert (run / "config.json").exists()
        assert (run / "metrics.jsonl").exists()
        assert (run / "best.ckpt").exists()

    def test_persisted_config_round_trips(self, workspace):
        root, _, config = workspace
        stored = json.loads((root / "run" / "config.json").read_text())
        assert stored == config

    def test_bad_field_exits_2_and_names_it(self, workspace, tmp_path, capsys):
        root, _, config = workspace
        bad = dict(config, train=dict(config["train"], epochs=0))
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(bad))
        assert main(["train", "--config", str(p)]) == EXIT_CONFIG
        assert "train.epochs" in capsys.readouterr().err

    def test_missing_field_exits_2(self, workspace, tmp_path, capsys):
        root, _, config = workspace
        bad = {k: v for k, v in config.items() if k != "dataset"}
        p = tmp_path / "bad2.json"
        p.write_text(json.dumps(bad))
        assert main(["train", "--config", str(p)]) == EXIT_CONFIG
        assert "dataset" in capsys.readouterr().err

    def test_rerun_same_seed_reproduces_epoch1_loss(self, workspace, tmp_path):
        root, cfg_path, config = workspace
        rerun = dict(config, out_dir=str(tmp_path / "rerun"))
        p = tmp_path / "rerun.json"
        p.write_text(json.dumps(rerun))
        assert main(["train", "--config", str(p)]) == EXIT_OK
        first = json.loads((root / "run" / "metrics.jsonl").read_text().splitlines()[0])
        second = json.loads(
            (tmp_path / "rerun" / "metrics.jsonl").read_text().splitlines()[0]
        )
        assert abs(first["loss"] - second["loss"]) < 1e-6


class TestEvalCommand:
    def test_eval_produces_all_metrics(self, workspace, tmp_path):
        root, _, config = workspace
        out = tmp_path / "metrics.json"
        code = main(
            [
                "eval",
                "--checkpoint", str(root / "run" / "best.ckpt"),
                "--dataset", config["val_dataset"],
                "--mode", "semi_automatic",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        record = json.loads(out.read_text())
        for key in ("miou", "mae", "s_alpha", "e_phi", "f_beta_w", "per_class_iou"):
            assert key in record

    def test_eval_twice_identical_files(self, workspace, tmp_path):
        root, _, config = workspace
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            main(
                [
                    "eval",
                    "--checkpoint", str(root / "run" / "best.ckpt"),
                    "--dataset", config["val_dataset"],
                    "--out", str(out),
                ]
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_bad_checkpoint_exits_4(self, workspace, tmp_path):
        _, _, config = workspace
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"garbage")
        code = main(
            ["eval", "--checkpoint", str(junk), "--dataset", config["val_dataset"]]
        )
        assert code == EXIT_CHECKPOINT

    def test_eval_with_split_restricts_samples(self, workspace, tmp_path):
        root, _, config = workspace
        from promptseg.data import DatasetManifest, make_split

        manifest = DatasetManifest.load(config["val_dataset"])
        split = make_split(manifest, 1 / 3, seed=0)
        split_path = split.save(tmp_path / "third.json")
        out = tmp_path / "m.json"
        assert (
            main(
                [
                    "eval",
                    "--checkpoint", str(root / "run" / "best.ckpt"),
                    "--dataset", config["val_dataset"],
                    "--split", str(split_path),
                    "--out", str(out),
                ]
            )
            == EXIT_OK
        )
        record = json.loads(out.read_text())
        full_units = sum(len(s.classes) for s in manifest.samples)
        assert 0 < record["sample_count"] < full_units

    def test_mode_flag_switches_prompt_source_in_record(self, workspace, tmp_path):
        root, _, config = workspace
        sources = {}
        for mode in ("manual", "semi_automatic"):
            out = tmp_path / f"{mode}.json"
            main(
                [
                    "eval",
                    "--checkpoint", str(root / "run" / "best.ckpt"),
                    "--dataset", config["val_dataset"],
                    "--mode", mode,
                    "--out", str(out),
                ]
            )
            sources[mode] = json.loads(out.read_text())["point_sources"]
        assert set(sources["manual"]) == {"gt"}
        assert set(sources["semi_automatic"]) <= {"similarity", "similarity_fallback"}


class TestReportParams:
    def test_toy_report_structure(self, tmp_path, capsys):
        out = tmp_path / "params.json"
        assert main(["report-params", "--preset", "toy", "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        names = {c["name"] for c in report["components"]}
        assert {"seg_image_encoder", "seg_mask_decoder", "seg_prompt_encoder",
                "vl_image_encoder", "text_encoder"} == names
        for c in report["components"]:
            assert 0 <= c["trainable"] <= c["total"]
        assert report["adapter_params"] > 0
        assert report["deployment_total"] < report["total"]
        table = capsys.readouterr().out
        assert "seg_image_encoder" in table

    def test_text_encoder_row_never_trainable(self, tmp_path):
        out = tmp_path / "params.json"
        main(["report-params", "--preset", "toy", "--out", str(out)])
        report = json.loads(out.read_text())
        text_row = next(c for c in report["components"] if c["name"] == "text_encoder")
        assert text_row["trainable"] == 0
