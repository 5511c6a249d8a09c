import json

import pytest

from refsal.cli import main
from refsal.fixtures import write_fixture_tree


@pytest.fixture(scope="module")
def fixtures_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_fixtures")
    write_fixture_tree(root)
    return root


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestFixturesCommand:
    def test_emits_tree(self, tmp_path, capsys):
        code = run_cli("fixtures", "--out", tmp_path / "fx")
        assert code == 0
        manifest = json.loads(capsys.readouterr().out)
        assert (tmp_path / "fx" / "dataset.jsonl").exists()
        assert "scenes" in manifest


class TestRunCommand:
    def test_full_run_success(self, fixtures_dir, tmp_path, capsys):
        code = run_cli(
            "run",
            "--dataset", fixtures_dir / "dataset.jsonl",
            "--backend", f"synth:{fixtures_dir / 'scenes.json'}",
            "--out", tmp_path / "out",
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["metrics"]["miou"] >= 0.9
        assert (tmp_path / "out" / "predictions.json").exists()

    def test_missing_dataset_flag_is_fatal(self, fixtures_dir, capsys):
        code = run_cli("run", "--backend", f"synth:{fixtures_dir / 'scenes.json'}")
        assert code == 2

    def test_unreadable_dataset_is_fatal(self, fixtures_dir, tmp_path):
        code = run_cli(
            "run",
            "--dataset", tmp_path / "nope.jsonl",
            "--backend", f"synth:{fixtures_dir / 'scenes.json'}",
        )
        assert code == 2

    def test_partial_failure_exit_code(self, fixtures_dir, tmp_path, capsys):
        # break one proposal path by pointing the dataset at a copy with a bad entry
        dataset = (fixtures_dir / "dataset.jsonl").read_text().splitlines()
        first = json.loads(dataset[0])
        first["proposals"] = "proposals/does_not_exist.json"
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps(first) + "\n" + dataset[1] + "\n", encoding="utf-8")
        # proposals resolve relative to the dataset file, so copy the good one over
        (tmp_path / "proposals").mkdir()
        good_props = json.loads(dataset[1])["proposals"]
        (tmp_path / good_props).write_bytes((fixtures_dir / good_props).read_bytes())
        code = run_cli(
            "run",
            "--dataset", bad,
            "--backend", f"synth:{fixtures_dir / 'scenes.json'}",
        )
        assert code == 1

    def test_config_file_with_flag_override(self, fixtures_dir, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "\n".join([
                f"dataset={fixtures_dir / 'dataset.jsonl'}",
                f"backend=synth:{fixtures_dir / 'scenes.json'}",
                "nu=1",
                "lambda=0.8",
                "# comment line",
            ]) + "\n",
            encoding="utf-8",
        )
        code = run_cli("run", "--config", cfg)
        assert code == 0
        low = json.loads(capsys.readouterr().out)
        assert low["metrics"]["per_sample"]["selfcorrect"] < 0.2

        code = run_cli("run", "--config", cfg, "--nu", "3")
        assert code == 0
        high = json.loads(capsys.readouterr().out)
        assert high["metrics"]["per_sample"]["selfcorrect"] >= 0.9

    def test_bad_config_key_is_fatal(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus_key=1\n", encoding="utf-8")
        assert run_cli("run", "--config", cfg) == 2


class TestEvalCommand:
    def test_eval_matches_hand_numbers(self, fixtures_dir, tmp_path, capsys):
        code = run_cli(
            "eval",
            "--dataset", fixtures_dir / "metrics" / "dataset.jsonl",
            "--predictions", fixtures_dir / "metrics" / "predictions.json",
            "--out", tmp_path / "report.json",
        )
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())["metrics"]
        assert report["miou"] == pytest.approx(0.5)
        assert report["oiou"] == pytest.approx(5 / 11)
        assert report["position_miou"] == pytest.approx(0.75)

    def test_missing_prediction_signals_incomplete(self, fixtures_dir, tmp_path, capsys):
        preds = json.loads((fixtures_dir / "metrics" / "predictions.json").read_text())
        del preds["samples"]["m2"]
        path = tmp_path / "partial.json"
        path.write_text(json.dumps(preds), encoding="utf-8")
        code = run_cli(
            "eval",
            "--dataset", fixtures_dir / "metrics" / "dataset.jsonl",
            "--predictions", path,
        )
        assert code == 1
        report = json.loads(capsys.readouterr().out)["metrics"]
        assert report["missing"] == ["m2"]


class TestOverlayCommand:
    def test_overlay_after_run(self, fixtures_dir, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert run_cli(
            "run",
            "--dataset", fixtures_dir / "dataset.jsonl",
            "--backend", f"synth:{fixtures_dir / 'scenes.json'}",
            "--out", out_dir,
        ) == 0
        capsys.readouterr()
        code = run_cli(
            "overlay",
            "--run-dir", out_dir,
            "--dataset", fixtures_dir / "dataset.jsonl",
            "--sample", "singleblob",
            "--out", tmp_path / "overlay.png",
        )
        assert code == 0
        from PIL import Image

        img = Image.open(tmp_path / "overlay.png")
        assert img.size == (128, 96)

    def test_unknown_sample_is_fatal(self, fixtures_dir, tmp_path):
        out_dir = tmp_path / "out2"
        run_cli(
            "run",
            "--dataset", fixtures_dir / "dataset.jsonl",
            "--backend", f"synth:{fixtures_dir / 'scenes.json'}",
            "--out", out_dir,
        )
        code = run_cli(
            "overlay",
            "--run-dir", out_dir,
            "--dataset", fixtures_dir / "dataset.jsonl",
            "--sample", "ghost",
            "--out", tmp_path / "x.png",
        )
        assert code == 2
