"""Command-line workflows, exit codes, and the property-check gate."""

import json

import numpy as np
import pytest

from fearec import spectral
from fearec.checks import check_metrics, check_ramp, check_spectral
from fearec.cli import main
from fearec.data import SequenceDataset, synthetic_periodic


def write_toy_tsv(path, users=6, items=6):
    rows = []
    t = 0
    with path.open("w") as handle:
        for u in range(users):
            for i in range(items):
                handle.write(f"u{u}\ti{i}\t{t}\n")
                t += 1


@pytest.fixture()
def prepared(tmp_path):
    """A prepared synthetic dataset file plus a config for quick training."""
    ds = synthetic_periodic(12, 20, 5, 10, seed=0)
    data_path = tmp_path / "data.json"
    ds.save(data_path)
    config = {
        "data": str(data_path),
        "seed": 7,
        "epochs": 2,
        "batch_size": 32,
        "max_len": 10,
        "dim": 16,
        "num_layers": 1,
        "num_heads": 2,
        "dropout_rate": 0.2,
        "lambda1": 0.0,
        "lambda2": 0.0,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return data_path, config_path


class TestPrepare:
    def test_toy_tsv_prints_statistics(self, tmp_path, capsys):
        raw = tmp_path / "raw.tsv"
        write_toy_tsv(raw)
        out = tmp_path / "data.json"
        rc = main(["prepare", "--input", str(raw), "--out", str(out)])
        assert rc == 0
        captured = capsys.readouterr().out
        for field in ("users", "items", "actions", "avg length", "sparsity"):
            assert field in captured
        assert SequenceDataset.load(out).num_users == 6

    def test_min_count_one_keeps_everything(self, tmp_path):
        raw = tmp_path / "raw.tsv"
        raw.write_text("a\tx\t1\na\ty\t2\na\tz\t3\n")
        out = tmp_path / "data.json"
        rc = main(["prepare", "--input", str(raw), "--out", str(out), "--min-count", "1"])
        assert rc == 0
        assert SequenceDataset.load(out).num_users == 1

    def test_missing_file_is_exit_two(self, tmp_path, capsys):
        rc = main(["prepare", "--input", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_overfiltered_log_is_exit_two(self, tmp_path):
        raw = tmp_path / "raw.tsv"
        raw.write_text("a\tx\t1\n")
        rc = main(["prepare", "--input", str(raw), "--out", str(tmp_path / "o")])
        assert rc == 2


class TestTrain:
    def test_two_epoch_run_writes_artifacts(self, tmp_path, prepared):
        data_path, config_path = prepared
        out = tmp_path / "run"
        rc = main(["train", "--config", str(config_path), "--out", str(out)])
        assert rc == 0
        assert (out / "best.ckpt").exists()
        assert (out / "last.ckpt").exists()
        log_lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2
        record = json.loads(log_lines[0])
        for key in ("epoch", "rec_loss", "cl_loss", "freg_loss", "total",
                    "wall_seconds", "NDCG@10"):
            assert key in record
        history = json.loads((out / "valid_metrics.json").read_text())
        assert len(history) == 2 and "wall_seconds" not in history[0]

    def test_effective_config_reproduces_run(self, tmp_path, prepared):
        data_path, config_path = prepared
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["train", "--config", str(config_path), "--out", str(out_a)]) == 0
        # re-run from the echoed effective config
        assert main(["train", "--config", str(out_a / "config.json"), "--out", str(out_b)]) == 0
        assert (out_a / "last.ckpt").read_bytes() == (out_b / "last.ckpt").read_bytes()
        assert (out_a / "valid_metrics.json").read_text() == (out_b / "valid_metrics.json").read_text()

    def test_indivisible_heads_rejected_before_training(self, tmp_path, prepared):
        data_path, config_path = prepared
        rc = main([
            "train", "--config", str(config_path), "--out", str(tmp_path / "run"),
            "--dim", "15",
        ])
        assert rc == 2

    def test_seed_required(self, tmp_path, prepared):
        data_path, _ = prepared
        rc = main(["train", "--data", str(data_path), "--out", str(tmp_path / "run")])
        assert rc == 2

    def test_unknown_config_key_rejected(self, tmp_path, prepared):
        data_path, _ = prepared
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"data": str(data_path), "sede": 1}))
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "run")])
        assert rc == 2


class TestEvaluateCommand:
    def test_report_file_with_four_metrics(self, tmp_path, prepared, capsys):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        rc = main([
            "evaluate", "--checkpoint", str(out / "best.ckpt"),
            "--data", str(data_path), "--split", "test",
        ])
        assert rc == 0
        report = json.loads((out / "report_test.json").read_text())
        for key in ("HR@5", "HR@10", "NDCG@5", "NDCG@10"):
            assert key in report

    def test_vocabulary_mismatch_named(self, tmp_path, prepared, capsys):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        other = synthetic_periodic(12, 33, 5, 10, seed=1)
        other_path = tmp_path / "other.json"
        other.save(other_path)
        rc = main([
            "evaluate", "--checkpoint", str(out / "best.ckpt"),
            "--data", str(other_path),
        ])
        assert rc == 2
        assert "vocabulary mismatch" in capsys.readouterr().err

    def test_valid_and_test_reports_differ(self, tmp_path, prepared):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        for split in ("valid", "test"):
            rc = main([
                "evaluate", "--checkpoint", str(out / "last.ckpt"),
                "--data", str(data_path), "--split", split,
            ])
            assert rc == 0
        assert (out / "report_valid.json").exists()
        assert (out / "report_test.json").exists()


class TestInspect:
    def test_writes_per_layer_csvs(self, tmp_path, prepared):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        attn_dir = tmp_path / "attn"
        rc = main([
            "inspect", "--checkpoint", str(out / "best.ckpt"),
            "--data", str(data_path), "--user", "u3", "--out", str(attn_dir),
        ])
        assert rc == 0
        files = sorted(p.name for p in attn_dir.iterdir())
        assert "layer1_head1_tda.csv" in files
        assert "layer1_head2_fda.csv" in files

    def test_unknown_user_exit_two(self, tmp_path, prepared, capsys):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        rc = main([
            "inspect", "--checkpoint", str(out / "best.ckpt"),
            "--data", str(data_path), "--user", "ghost", "--out", str(tmp_path / "x"),
        ])
        assert rc == 2
        assert "unknown user" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, tmp_path, prepared):
        data_path, config_path = prepared
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out)])
        dirs = []
        for name in ("x", "y"):
            d = tmp_path / name
            main([
                "inspect", "--checkpoint", str(out / "best.ckpt"),
                "--data", str(data_path), "--user", "u0", "--out", str(d),
            ])
            dirs.append(d)
        for fa in sorted(dirs[0].iterdir()):
            fb = dirs[1] / fa.name
            assert fa.read_bytes() == fb.read_bytes()


class TestCheckSuites:
    def test_healthy_suites_pass(self):
        ok, detail = check_spectral(trials=50)
        assert ok, detail
        ok, detail = check_ramp()
        assert ok, detail
        ok, detail = check_metrics()
        assert ok, detail

    def test_sign_flipped_transform_fails_the_gate(self):
        def flipped_rfft(x):
            s = spectral.rfft(x)
            return spectral.HalfSpectrum(np.conj(s.coeffs), s.origin_length)

        ok, detail = check_spectral(rfft_fn=flipped_rfft, trials=20)
        assert not ok

    def test_broken_correlation_fails_the_gate(self):
        def broken_corr(q, k):
            return spectral.cross_correlation_fft(q, k)[::-1]

        ok, detail = check_spectral(corr_fn=broken_corr, trials=20)
        assert not ok
