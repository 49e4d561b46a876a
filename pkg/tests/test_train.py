import hashlib
import math

import numpy as np
import pytest

from sargan.corpus import procedural_corpus
from sargan.nets import gray
from sargan.tensor import NumericError
from sargan.train import (
    Adam,
    TrainConfig,
    Trainer,
    adam_step,
    gray_image,
    make_pair_dataset,
    train_gan,
    trace_to_csv,
)
from sargan.tensor import Tensor


def small_cfg(**kw):
    base = dict(width=4, batch_size=2, epochs=1, image_size=16)
    base.update(kw)
    return TrainConfig(**base)


def checksum(net) -> str:
    h = hashlib.sha256()
    for k, a in sorted(net.state.arrays().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def tiny_pairs():
    return make_pair_dataset(procedural_corpus(6, 16, seed=4), looks=1, seed=5).pairs


class TestAdam:
    def test_two_steps_by_hand(self):
        p, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
        lr, eps = 0.1, 1e-8
        p, m, v = adam_step(p, np.array([2.0]), m, v, 1, lr, eps=eps)
        # m = 0.2, v = 0.004; bias-corrected m_hat = 2, v_hat = 4
        assert m[0] == pytest.approx(0.2) and v[0] == pytest.approx(0.004)
        p1 = 1.0 - 0.1 * 2 / (2 + eps)
        assert p[0] == pytest.approx(p1, abs=1e-15)
        p, m, v = adam_step(p, np.array([-1.0]), m, v, 2, lr, eps=eps)
        m_expected = 0.9 * 0.2 - 0.1
        v_expected = 0.999 * 0.004 + 0.001
        m_hat = m_expected / (1 - 0.81)
        v_hat = v_expected / (1 - 0.999 ** 2)
        assert m[0] == pytest.approx(m_expected, abs=1e-15)
        assert v[0] == pytest.approx(v_expected, abs=1e-15)
        assert p[0] == pytest.approx(p1 - 0.1 * m_hat / (math.sqrt(v_hat) + eps), abs=1e-12)

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 250.0])
    def test_constant_gradient_step_is_scale_free(self, scale):
        lr = 1e-3
        g = scale * np.array([1.5, -0.2, 3.0])
        p, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
        for t in range(1, 1001):
            before = p
            p, m, v = adam_step(p, g, m, v, t, lr)
        np.testing.assert_allclose(before - p, lr * np.sign(g), rtol=1e-3)

    def test_missing_gradient_counts_as_zero(self):
        t = Tensor(np.ones(2), requires_grad=True)
        opt = Adam({"t": t}, lr=0.1)
        opt.step()
        assert np.array_equal(t.data, np.ones(2))


class TestDataset:
    def test_noise_free_surrogate(self):
        clean = procedural_corpus(3, 16, seed=1)
        ds = make_pair_dataset(clean, looks=math.inf, seed=0)
        for (y, x), c in zip(ds.pairs, clean):
            assert np.array_equal(y, gray(c).data[0])
            assert np.array_equal(x, c)

    def test_same_seed_same_pairs(self):
        clean = procedural_corpus(4, 16, seed=1)
        a = make_pair_dataset(clean, 4, seed=9).pairs
        b = make_pair_dataset(clean, 4, seed=9).pairs
        assert all(np.array_equal(p[0], q[0]) and np.array_equal(p[1], q[1]) for p, q in zip(a, b))
        c = make_pair_dataset(clean, 4, seed=10).pairs
        assert not np.array_equal(a[0][0], c[0][0])

    def test_split(self):
        ds = make_pair_dataset(procedural_corpus(20, 16, seed=1), 1, seed=0)
        assert len(ds.train) == 18 and len(ds.test) == 2
        assert ds.test[-1] is ds.pairs[-1]

    def test_speckle_unclamped(self):
        ds = make_pair_dataset(procedural_corpus(4, 32, seed=1), 1, seed=0)
        assert max(y.max() for y, _ in ds.pairs) > 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            make_pair_dataset([], 1, seed=0)

    def test_gray_image(self):
        x = np.zeros((3, 2, 2))
        x[1] = 1.0
        assert gray_image(x).shape == (1, 2, 2)
        assert np.all(gray_image(x) == 0.587)


class TestTrainingLoop:
    def test_trace_and_csv(self, tiny_pairs):
        tr = train_gan(tiny_pairs, small_cfg(epochs=2))
        assert [r.step for r in tr.trace] == [1, 2, 3, 4, 5, 6]
        row = tr.trace[0]
        assert row.l_total == pytest.approx(row.l_d + row.l_c_l1 + 0.1 * row.l_c_adv, rel=1e-12)
        lines = trace_to_csv(tr.trace).splitlines()
        assert lines[0] == "step,l_d,l_c_l1,l_c_adv,l_total,d_loss"
        assert len(lines) == 7

    def test_checkpoint_every_epoch(self, tiny_pairs, tmp_path):
        path = tmp_path / "ck.sgw"
        seen = []
        tr = Trainer(small_cfg(epochs=3))
        tr.fit(tiny_pairs, checkpoint_path=path, on_epoch=lambda t: seen.append(Trainer.load(path).epoch))
        assert seen == [1, 2, 3]

    def test_bit_identical_traces(self, tiny_pairs):
        a = train_gan(tiny_pairs, small_cfg(epochs=2, seed=3)).trace
        b = train_gan(tiny_pairs, small_cfg(epochs=2, seed=3)).trace
        assert trace_to_csv(a) == trace_to_csv(b)
        c = train_gan(tiny_pairs, small_cfg(epochs=2, seed=4)).trace
        assert trace_to_csv(a) != trace_to_csv(c)

    def test_zero_adversarial_weight_decouples_discriminator(self, tiny_pairs):
        a = train_gan(tiny_pairs, small_cfg(epochs=2, lambda_a=0.0, d_seed=11))
        b = train_gan(tiny_pairs, small_cfg(epochs=2, lambda_a=0.0, d_seed=12))
        assert checksum(a.d) != checksum(b.d)
        assert checksum(a.gd) == checksum(b.gd)
        assert checksum(a.gc) == checksum(b.gc)
        # with a nonzero weight the discriminator does steer the generators
        c = train_gan(tiny_pairs, small_cfg(epochs=2, lambda_a=0.1, d_seed=11))
        d = train_gan(tiny_pairs, small_cfg(epochs=2, lambda_a=0.1, d_seed=12))
        assert checksum(c.gc) != checksum(d.gc)

    def test_steps_touch_only_their_networks(self, tiny_pairs):
        tr = Trainer(small_cfg())
        log = []
        d_step, g_step = tr.opt_d.step, tr.opt_g.step

        def wrapped_d():
            before = (checksum(tr.gd), checksum(tr.gc))
            d_step()
            log.append(("d", before == (checksum(tr.gd), checksum(tr.gc))))

        def wrapped_g():
            before = checksum(tr.d)
            g_step()
            log.append(("g", before == checksum(tr.d)))

        tr.opt_d.step, tr.opt_g.step = wrapped_d, wrapped_g
        tr.fit(tiny_pairs)
        assert [k for k, _ in log] == ["d", "g"] * 3
        assert all(ok for _, ok in log)

    def test_checkpoint_round_trip_then_step(self, tiny_pairs, tmp_path):
        cfg = small_cfg(epochs=3)
        a = Trainer(cfg)
        a.fit(tiny_pairs, max_steps=4)
        path = tmp_path / "mid.sgw"
        a.save(path)
        b = Trainer.load(path)
        a.fit(tiny_pairs, max_steps=5)
        b.fit(tiny_pairs, max_steps=5)
        assert trace_to_csv(a.trace) == trace_to_csv(b.trace)
        for net in ("gd", "gc", "d"):
            assert checksum(getattr(a, net)) == checksum(getattr(b, net))
        assert all(np.array_equal(a.opt_g.m[k], b.opt_g.m[k]) for k in a.opt_g.m)

    def test_resume_equals_uninterrupted(self, tiny_pairs, tmp_path):
        full = Trainer(small_cfg(epochs=2))
        full.fit(tiny_pairs)
        path = tmp_path / "ck.sgw"
        part = Trainer(small_cfg(epochs=1))
        part.fit(tiny_pairs, checkpoint_path=path)
        resumed = Trainer.load(path, epochs=2)
        resumed.fit(tiny_pairs)
        assert trace_to_csv(full.trace) == trace_to_csv(resumed.trace)
        assert checksum(full.gc) == checksum(resumed.gc)

    def test_nan_aborts_with_diagnostic(self, tiny_pairs):
        tr = Trainer(small_cfg())
        y, x = tiny_pairs[0]
        bad = y.copy()
        bad[0, 3, 3] = np.nan
        with pytest.raises(NumericError, match="first non-finite tensor"):
            tr.train_step(bad[None], x[None])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(stage="colorize")
        assert TrainConfig.full_scale_preset().batch_size == 12


@pytest.fixture(scope="module")
def overfit_trace():
    clean = procedural_corpus(1, 32, seed=21)
    pairs = make_pair_dataset(clean, looks=1, seed=22).pairs
    tr = Trainer(TrainConfig(lambda_a=0.0, batch_size=1, epochs=300))
    tr.fit(pairs)
    return tr.trace


@pytest.mark.slow
class TestOverfit:
    def test_despeckling_loss_drops_tenfold(self, overfit_trace):
        run = overfit_trace
        assert run[-1].l_d < 0.1 * run[0].l_d

    def test_loss_decreases_over_windows(self, overfit_trace):
        run = overfit_trace
        means = [np.mean([r.l_d for r in run[i:i + 50]]) for i in range(0, len(run), 50)]
        assert all(a > b for a, b in zip(means, means[1:]))
