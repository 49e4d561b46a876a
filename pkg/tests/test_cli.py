import numpy as np
import pytest

from sargan import cli, functional as F, persist
from sargan.cli import RunConfig, build_config, main, read_config_file
from sargan.corpus import MANIFEST_NAME, Manifest
from sargan.train import TrainConfig, Trainer


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("simulate", "--procedural", 5, "--looks", 1, "--seed", 7, "--image-size", 16, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--corpus", corpus, "--out", out, "--epochs", 1, "--lambda-a", 0,
               "--width", 8, "--batch-size", 2) == 0
    return out / cli.CHECKPOINT_NAME


class TestConfig:
    def test_file_then_flags(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nlearning_rate = 0.001\nepochs=3\nmethods = noisy, lee\n")
        values = read_config_file(path)
        cfg = build_config(values, {"epochs": "5"})
        assert cfg.learning_rate == 0.001
        assert cfg.epochs == 5
        assert cfg.methods == ["noisy", "lee"]
        assert cfg.explicit == {"learning_rate", "epochs", "methods"}

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("learning_rate = 0.001\nbogus = 1\n")
        with pytest.raises(cli.ConfigError, match="bogus"):
            read_config_file(path)

    def test_bad_value(self):
        with pytest.raises(cli.ConfigError):
            build_config({}, {"epochs": "many"})

    def test_defaults_match_train_config(self):
        assert RunConfig().train_config() == TrainConfig()

    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nope = 1\n")
        assert run("simulate", "--config", path, "--procedural", 1, "--out", tmp_path / "o") == 2


class TestSimulate:
    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run("simulate", "--procedural", 10, "--looks", 1, "--seed", 7, "--image-size", 16, "--out", d) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        assert MANIFEST_NAME in files and len(files) == 1 + 10 * 6
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_looks_rejected(self, tmp_path, capsys):
        assert run("simulate", "--procedural", 2, "--looks", 0, "--out", tmp_path / "x") == 2
        assert "looks" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    def test_speckle_mean_through_files(self, tmp_path):
        assert run("simulate", "--procedural", 20, "--looks", 1, "--seed", 3, "--out", tmp_path) == 0
        triples = Manifest.read(tmp_path).load_pairs()
        ratios = np.concatenate([(y / g).ravel() for y, _, g in triples])
        assert abs(ratios.mean() - 1.0) < 0.02

    def test_manifest_header(self, corpus):
        text = (corpus / MANIFEST_NAME).read_text()
        assert text.startswith("# seed 7\n# looks 1\n")
        assert text.splitlines()[2].split("\t") == ["0000_clean.npy", "0000_gray.npy", "0000_speckled.npy"]

    def test_from_directory(self, tmp_path, corpus):
        src = tmp_path / "in"
        src.mkdir()
        for p in sorted(corpus.glob("*_clean.ppm"))[:2]:
            (src / p.name).write_bytes(p.read_bytes())
        assert run("simulate", "--input", src, "--looks", 4, "--out", tmp_path / "o", "--image-size", 16) == 0
        m = Manifest.read(tmp_path / "o")
        assert len(m.entries) == 2 and m.looks == 4

    def test_unreadable_input(self, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        (src / "junk.png").write_text("not an image")
        assert run("simulate", "--input", src, "--out", tmp_path / "o") == 3

    def test_needs_one_source(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "o") == 2


class TestTrain:
    def test_missing_dataset(self, tmp_path):
        out = tmp_path / "run"
        assert run("train", "--corpus", tmp_path / "nowhere", "--out", out, "--epochs", 1) == 2
        assert not out.exists()

    def test_smoke_checkpoint_loads(self, checkpoint):
        tr = Trainer.load(checkpoint)
        assert tr.epoch == 1
        assert tr.step == 2  # 4 training pairs in batches of 2
        assert (checkpoint.parent / cli.TRACE_NAME).read_text().startswith("step,l_d,")
        gd, gc = cli.load_generators(checkpoint)
        assert gd.spec.conv_layers[0].c_out == 8

    def test_resume_reproduces_trace(self, tmp_path, corpus):
        common = ["--corpus", corpus, "--lambda-a", 0.1, "--width", 8, "--batch-size", 2]
        full, part = tmp_path / "full", tmp_path / "part"
        assert run("train", *common, "--out", full, "--epochs", 3) == 0
        assert run("train", *common, "--out", part, "--epochs", 1) == 0
        assert run("train", *common, "--out", part, "--epochs", 3,
                   "--resume", part / cli.CHECKPOINT_NAME) == 0
        assert (full / cli.TRACE_NAME).read_bytes() == (part / cli.TRACE_NAME).read_bytes()
        assert (full / cli.CHECKPOINT_NAME).read_bytes() == (part / cli.CHECKPOINT_NAME).read_bytes()

    def test_prints_epoch_losses(self, tmp_path, corpus, capsys):
        assert run("train", "--corpus", corpus, "--out", tmp_path, "--epochs", 2, "--width", 4) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("epoch")]
        assert len(lines) == 2 and "L_D" in lines[0]


class TestTranslate:
    def test_channels_and_determinism(self, tmp_path, corpus, checkpoint):
        src = corpus / "0000_speckled.npy"
        for name in ("a", "b"):
            assert run("translate", "--checkpoint", checkpoint, "--input", src, "--out", tmp_path / name) == 0
        des = np.load(tmp_path / "a_despeckled.npy")
        col = np.load(tmp_path / "a_colorized.npy")
        assert des.shape == (1, 16, 16) and col.shape == (3, 16, 16)
        for suffix in ("_despeckled.npy", "_colorized.npy", "_despeckled.pgm", "_colorized.ppm"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_image_files_have_right_channels(self, tmp_path, corpus, checkpoint):
        from PIL import Image
        assert run("translate", "--checkpoint", checkpoint, "--input", corpus / "0001_gray.pgm",
                   "--out", tmp_path / "t") == 0
        assert Image.open(tmp_path / "t_despeckled.pgm").mode == "L"
        assert Image.open(tmp_path / "t_colorized.ppm").mode == "RGB"

    def test_zero_final_layer_gives_constant(self, tmp_path, corpus):
        tr = Trainer(TrainConfig(width=8))
        tr.gc.state.params["conv8.weight"].data[:] = 0.0
        tr.gc.state.params["conv8.bias"].data[:] = [0.2, -0.4, 0.0]
        ckpt = tmp_path / "zero.sgw"
        tr.save(ckpt)
        assert run("translate", "--checkpoint", ckpt, "--input", corpus / "0002_speckled.npy",
                   "--out", tmp_path / "z") == 0
        col = np.load(tmp_path / "z_colorized.npy")
        for c, b in enumerate([0.2, -0.4, 0.0]):
            assert np.all(col[c] == (np.tanh(b) + 1) / 2)

    def test_checkpoint_mismatch(self, tmp_path, corpus):
        bad = tmp_path / "bad.sgw"
        persist.save_arrays(bad, {"gd/conv1.weight": np.zeros((2, 1, 3, 3))}, {"config": {"width": 8}})
        assert run("translate", "--checkpoint", bad, "--input", corpus / "0000_speckled.npy",
                   "--out", tmp_path / "o") == 3

    def test_not_a_checkpoint(self, tmp_path, corpus):
        bad = tmp_path / "bad.sgw"
        bad.write_bytes(b"garbage")
        assert run("translate", "--checkpoint", bad, "--input", corpus / "0000_speckled.npy",
                   "--out", tmp_path / "o") == 3


class TestEvaluate:
    def test_baselines(self, tmp_path, corpus):
        assert run("evaluate", "--corpus", corpus, "--methods", "noisy,lee,kuan", "--out", tmp_path) == 0
        csv_text = (tmp_path / "metrics_L1.csv").read_text()
        rows = [line.split(",") for line in csv_text.splitlines()[1:]]
        noisy = [r for r in rows if r[0] == "noisy"]
        assert len(noisy) == 5 and all(float(r[6]) == 0.0 for r in noisy)
        for method in ("lee", "kuan"):
            vals = [float(v) for r in rows if r[0] == method for v in r[3:]]
            assert len(vals) == 20 and np.all(np.isfinite(vals))
        table = (tmp_path / "table_L1.txt").read_text().splitlines()
        assert [l.split()[0] for l in table[3:6]] == ["noisy", "lee", "kuan"]

    def test_cnn_method(self, tmp_path, corpus, checkpoint):
        assert run("evaluate", "--corpus", corpus, "--methods", f"noisy,cnn:{checkpoint}", "--out", tmp_path) == 0
        assert f"cnn:{checkpoint}" in (tmp_path / "metrics_L1.csv").read_text()

    def test_one_report_per_looks(self, tmp_path, corpus):
        other = tmp_path / "l4"
        assert run("simulate", "--procedural", 2, "--looks", 4, "--image-size", 16, "--out", other) == 0
        out = tmp_path / "rep"
        assert run("evaluate", "--corpus", corpus, "--corpus", other, "--out", out) == 0
        assert sorted(p.name for p in out.iterdir()) == ["metrics_L1.csv", "metrics_L4.csv",
                                                         "table_L1.txt", "table_L4.txt"]
        out2 = tmp_path / "rep2"
        assert run("evaluate", "--corpus", corpus, "--corpus", other, "--looks", 4, "--out", out2) == 0
        assert sorted(p.name for p in out2.iterdir()) == ["metrics_L4.csv", "table_L4.txt"]

    def test_unknown_method(self, tmp_path, corpus):
        assert run("evaluate", "--corpus", corpus, "--methods", "bm3d", "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o").exists()

    def test_does_not_touch_inputs(self, tmp_path, corpus):
        before = {p.name: p.read_bytes() for p in corpus.iterdir()}
        assert run("evaluate", "--corpus", corpus, "--out", tmp_path) == 0
        assert {p.name: p.read_bytes() for p in corpus.iterdir()} == before


class TestGradcheck:
    def test_passes(self, capsys):
        assert run("gradcheck", "--quick") == 0
        out = capsys.readouterr().out
        for name in ("conv2d", "batch_norm", "division_residual", "end-to-end"):
            assert name in out
        assert "all checks passed" in out

    def test_corrupted_backward_reported(self, monkeypatch, capsys):
        real_relu = F.relu

        def bad_relu(x):
            out = real_relu(x)
            backward = out._backward

            def doubled(g):
                return [2.0 * gi if gi is not None else None for gi in backward(g)]
            out._backward = doubled
            return out

        monkeypatch.setattr(F, "relu", bad_relu)
        assert run("gradcheck", "--quick") == 4
        out = capsys.readouterr().out
        assert "FAIL" in out
