import json
import shutil
import subprocess
import sys

import pytest

from tcan.cascade import write_cascade_file
from tcan.cli import main, sha256_file

from .data import overfit_cascades

SMALL = {"d": 8, "d_t": 8, "heads": 2, "d_h": 8, "mlp_dims": [16, 16, 1], "cgat_layers": 2}


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "c.txt"
    assert main(["gen", "--out", str(path), "--seed", "3", "--n-cascades", "200"]) == 0
    return path


def prepare(corpus, out, seed="0"):
    return main(["prepare", "--input", str(corpus), "--t-obs", "1.5", "--t-end", "10", "--min-obs", "3",
                 "--seed", seed, "--out-dir", str(out)])


class TestGenPrepare:
    def test_gen_writes_manifest(self, corpus):
        m = json.loads((corpus.parent / "c.txt.manifest.json").read_text())
        assert m["command"] == "gen" and m["seed"] == 3
        assert m["outputs"] == {str(corpus): sha256_file(corpus)}
        assert m["config"]["n_cascades"] == 200

    def test_gen_config_file(self, tmp_path):
        cfg = tmp_path / "g.json"
        cfg.write_text(json.dumps({"n_cascades": 5, "branching_mean": 0.0}))
        out = tmp_path / "o.txt"
        assert main(["gen", "--config", str(cfg), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 5

    def test_prepare_is_deterministic(self, corpus, tmp_path):
        assert prepare(corpus, tmp_path / "a") == 0
        assert prepare(corpus, tmp_path / "b") == 0
        for name in ("train.txt", "val.txt", "test.txt", "split.json"):
            assert sha256_file(tmp_path / "a" / name) == sha256_file(tmp_path / "b" / name)

    def test_prepare_seed_matters(self, corpus, tmp_path):
        prepare(corpus, tmp_path / "a")
        prepare(corpus, tmp_path / "b", seed="1")
        assert sha256_file(tmp_path / "a" / "train.txt") != sha256_file(tmp_path / "b" / "train.txt")

    def test_prepare_does_not_touch_input(self, corpus, tmp_path):
        before = sha256_file(corpus)
        prepare(corpus, tmp_path / "a")
        assert sha256_file(corpus) == before


class TestExitCodes:
    def test_validation_error(self, corpus, tmp_path):
        assert main(["prepare", "--input", str(corpus), "--t-obs", "5", "--t-end", "1",
                     "--out-dir", str(tmp_path / "x")]) == 1
        assert main(["gen", "--out", str(tmp_path / "x.txt"), "--n-cascades", "-1"]) == 1

    def test_usage_error(self):
        assert main(["bogus"]) == 1
        assert main(["prepare"]) == 1

    def test_io_error(self, tmp_path):
        assert main(["eval", "--split-dir", str(tmp_path / "missing"), "--checkpoint", "nope.json",
                     "--out-dir", str(tmp_path)]) == 3

    def test_bad_cascade_file(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("1\tA\t0\t2\tA:0\n")
        assert main(["prepare", "--input", str(bad), "--t-obs", "1", "--t-end", "2",
                     "--out-dir", str(tmp_path / "o")]) == 1

    def test_console_script(self, tmp_path):
        exe = shutil.which("tcan")
        cmd = [exe] if exe else [sys.executable, "-m", "tcan.cli"]
        res = subprocess.run(cmd + ["eval", "--split-dir", str(tmp_path), "--checkpoint", "x",
                                    "--out-dir", str(tmp_path)], capture_output=True, text=True)
        assert res.returncode == 3 and "I/O error" in res.stderr


class TestModelCommands:
    def test_train_eval_baseline_explain_predict(self, corpus, tmp_path):
        split = tmp_path / "s"
        prepare(corpus, split)
        cfg = tmp_path / "m.json"
        cfg.write_text(json.dumps(SMALL))
        run = tmp_path / "run"
        assert main(["train", "--split-dir", str(split), "--out-dir", str(run), "--config", str(cfg),
                     "--max-epochs", "2"]) == 0
        hist = json.loads((run / "history.json").read_text())
        assert len(hist["epoch"]) == 2
        ck = run / "model.json"
        assert main(["eval", "--split-dir", str(split), "--checkpoint", str(ck), "--out-dir", str(tmp_path / "ev"),
                     "--workers", "2"]) == 0
        rep = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert rep["n"] == len((split / "test.txt").read_text().splitlines())
        assert (tmp_path / "ev" / "report.csv").read_text().startswith("id,y,y_hat\n")
        assert main(["baseline", "--split-dir", str(split), "--out-dir", str(tmp_path / "bl")]) == 0
        cid = (split / "test.txt").read_text().split("\t", 1)[0]
        ex = tmp_path / "ex.json"
        assert main(["explain", "--checkpoint", str(ck), "--cascade-id", cid, "--split-dir", str(split),
                     "--out", str(ex)]) == 0
        body = json.loads(ex.read_text())
        assert {"layer", "head", "matrix", "node_order"} <= set(body["attention"][0])
        assert len(body["representation"]) == 16
        pred = tmp_path / "pred.csv"
        assert main(["predict", "--checkpoint", str(ck), "--cascades", str(split / "test.txt"), "--t-obs", "1.5",
                     "--out", str(pred)]) == 0
        assert len(pred.read_text().splitlines()) == rep["n"] + 1
        # unknown cascade id is a validation error
        assert main(["explain", "--checkpoint", str(ck), "--cascade-id", "nope", "--split-dir", str(split),
                     "--out", str(ex)]) == 1

    def test_train_is_bitwise_reproducible(self, corpus, tmp_path):
        split = tmp_path / "s"
        prepare(corpus, split)
        cfg = tmp_path / "m.json"
        cfg.write_text(json.dumps(SMALL))
        for name in ("r1", "r2"):
            assert main(["train", "--split-dir", str(split), "--out-dir", str(tmp_path / name),
                         "--config", str(cfg), "--max-epochs", "1"]) == 0
        for f in ("model.json", "history.json"):
            assert sha256_file(tmp_path / "r1" / f) == sha256_file(tmp_path / "r2" / f)

    def test_gradcheck_passes(self, tmp_path, capsys):
        out = tmp_path / "gc.json"
        assert main(["gradcheck", "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        for module in ("node_features", "time_embedding", "graph_encoder", "sequence_encoder", "mlp_head"):
            assert module in printed
        assert json.loads(out.read_text())["ok"] is True

    def test_eval_after_overfit(self, tmp_path, capsys):
        d = tmp_path / "s"
        d.mkdir()
        text = write_cascade_file(overfit_cascades())
        for part in ("train", "val", "test"):
            (d / f"{part}.txt").write_text(text)
        (d / "split.json").write_text(json.dumps({"t_obs": 1.5, "t_end": 10.0, "seed": 0, "ratios": [1, 0, 0]}))
        assert main(["train", "--split-dir", str(d), "--out-dir", str(tmp_path / "run"), "--batch-size", "16",
                     "--max-steps", "300", "--max-epochs", "300", "--patience", "300"]) == 0
        capsys.readouterr()
        assert main(["eval", "--split-dir", str(d), "--checkpoint", str(tmp_path / "run" / "model.json"),
                     "--out-dir", str(tmp_path / "ev")]) == 0
        assert json.loads(capsys.readouterr().out)["msle"] < 0.05
