"""Tests for dataset simulation, dataset files and the two-stage training."""

from dataclasses import replace

import numpy as np
import pytest

from imnet.channel import ChannelConfig, snr_to_es
from imnet.config import SCENARIOS
from imnet.detectors import oracle_probs
from imnet.mapping import decode_bits, encode_bits
from imnet.training import (
    BLOCK,
    TrainConfig,
    TrainingDiverged,
    evaluate_ad_accuracy,
    fit_network,
    generate_dataset,
    load_dataset,
    ls_dataset,
    new_ad_net,
    save_dataset,
    train_ad,
    train_sd,
)
from imnet.nn import mse_loss
from imnet.nn.network import Network, dense

S1 = SCENARIOS[1]
FAST = TrainConfig(epochs_ad=2, epochs_sd=2, n_train=600, batch_size=50)


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(S1, ChannelConfig(), 600, FAST.snr_grid, seed=1)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(batch_size=0), dict(epochs_ad=-1), dict(snr_grid=()), dict(learning_rate=0.0),
            dict(tau=1.0), dict(ad_features="raw"), dict(sd_features="snr"), dict(n_train=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestDataset:
    def test_shapes_and_labels(self, small_ds):
        ds = small_ds
        assert len(ds) == 600
        assert ds.x.shape == (600, 4, 4) and ds.y.shape == (600, 1, 4) and ds.h.shape == (600, 4, 1, 4)
        np.testing.assert_array_equal(ds.labels.astype(bool), np.any(ds.x != 0, axis=2))
        assert set(np.unique(ds.snr_db)) <= set(FAST.snr_grid)

    def test_bits_match_signals(self, small_ds):
        frames = encode_bits(small_ds.bits, S1)
        np.testing.assert_array_equal(decode_bits(frames, S1), small_ds.bits)

    def test_deterministic_and_blockwise(self):
        a = generate_dataset(S1, ChannelConfig(), BLOCK + 10, (10.0,), seed=3)
        b = generate_dataset(S1, ChannelConfig(), BLOCK + 10, (10.0,), seed=3)
        np.testing.assert_array_equal(a.y, b.y)
        # the second block only depends on its own substreams
        c = generate_dataset(S1, ChannelConfig(), 10, (10.0,), seed=3, first_block=1)
        np.testing.assert_array_equal(a.y[BLOCK:], c.y)

    def test_noiseless(self):
        ds = generate_dataset(S1, ChannelConfig(), 50, (20.0,), seed=0, noiseless=True)
        pred = np.sqrt(snr_to_es(20.0)) * np.einsum("bfrt,btf->brf", ds.h, ds.x)
        np.testing.assert_allclose(ds.y, pred, atol=1e-12)

    def test_imperfect_csir_records_estimates(self):
        ds = generate_dataset(S1, ChannelConfig(csir="imperfect"), 50, (0.0,), seed=0, noiseless=True)
        pred = np.einsum("bfrt,btf->brf", ds.h, ds.x)
        assert not np.allclose(ds.y, pred)

    def test_active_rows(self, small_ds):
        rows = small_ds.active_rows()
        assert rows.shape == (600, 1, 4)
        assert np.all(rows != 0)

    def test_file_round_trip(self, small_ds, tmp_path):
        path = tmp_path / "train.imds"
        save_dataset(small_ds, path)
        back = load_dataset(path)
        assert back.cfg == small_ds.cfg and len(back) == len(small_ds)
        np.testing.assert_array_equal(back.labels, small_ds.labels)
        np.testing.assert_array_equal(back.snr_db, small_ds.snr_db)
        for name in ("x", "y", "h"):
            a, b = getattr(back, name), getattr(small_ds, name)
            np.testing.assert_array_equal(a.real, b.real.astype(np.float32))
            np.testing.assert_array_equal(a.imag, b.imag.astype(np.float32))
        assert path.read_bytes()[:4] == b"IMDS"

    def test_file_errors(self, small_ds, tmp_path):
        path = tmp_path / "train.imds"
        save_dataset(small_ds.subset(np.arange(5)), path)
        raw = path.read_bytes()
        path.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(ValueError, match="not a dataset"):
            load_dataset(path)
        path.write_bytes(raw[:-3])
        with pytest.raises(ValueError, match="records"):
            load_dataset(path)


class TestFit:
    def test_linear_regression_converges(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(400, 3))
        w = np.array([[1.0], [-2.0], [0.5]])
        net = Network([dense(1, "linear")], (3,)).init(rng)
        res = fit_network(net, x, x @ w, mse_loss, epochs=60, batch_size=20, lr=0.05, seed=0)
        assert res.losses[-1] < 1e-4 < res.losses[0]
        np.testing.assert_allclose(net.params["0.kernel"], w, atol=0.02)

    def test_divergence_detected(self):
        net = Network([dense(1, "linear")], (1,))
        with pytest.raises(TrainingDiverged):
            fit_network(net, np.array([[np.inf]]), np.zeros((1, 1)), mse_loss, 1, 1, 1e-3, 0)


class TestTwoStage:
    def test_ad_loss_sequence_reproducible(self, small_ds):
        a = train_ad(small_ds, FAST)
        b = train_ad(small_ds, FAST)
        assert a.steps == b.steps
        assert a.net.meta["features"] == "matched-fit"
        assert a.net.meta["im_config"] == "4,1,4,1,2,4,0.5"

    def test_ad_learns(self, small_ds):
        res = train_ad(small_ds, replace(FAST, epochs_ad=6))
        assert res.losses[-1] < res.losses[0]
        acc, ant = evaluate_ad_accuracy(small_ds, res.net, 0.5)
        assert acc > 0.5 and ant > 0.75

    def test_oracle_accuracy(self, small_ds):
        probs = small_ds.labels.astype(float)
        assert evaluate_ad_accuracy(small_ds, None, 0.5, probs=probs) == (1.0, 1.0)

    def test_sd_genie_probs(self, small_ds):
        frames = encode_bits(small_ds.bits, S1)
        probs = oracle_probs(frames, S1)
        res = train_sd(small_ds, None, FAST, probs=probs)
        assert res.net.meta["features"] == "ls+snr"
        assert len(res.losses) == FAST.epochs_sd
        x_ls, snr = ls_dataset(small_ds, None, 0.5, probs)
        assert x_ls.shape == snr.shape == (600, 1, 4)

    def test_sd_plain_features(self, small_ds):
        ad = new_ad_net(S1, "matched-fit", 0)
        res = train_sd(small_ds, ad, replace(FAST, sd_features="ls", epochs_sd=1))
        assert res.net.input_shape == (2, 1, 4)

    def test_sd_leaves_ad_untouched(self, small_ds):
        ad = train_ad(small_ds, FAST).net
        before = {k: v.tobytes() for k, v in ad.params.items()}
        train_sd(small_ds, ad, FAST)
        assert {k: v.tobytes() for k, v in ad.params.items()} == before

    def test_uninformative_probs(self, small_ds):
        # legalization of a flat output always picks the first table entry
        probs = np.full(small_ds.labels.shape, 0.5)
        acc, _ = evaluate_ad_accuracy(small_ds, None, 0.5, probs=probs)
        p = 2.0 ** -S1.budget.c_bits
        assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / len(small_ds))

    def test_moving_average_loss(self):
        ds = generate_dataset(S1, ChannelConfig(), 2000, FAST.snr_grid, seed=2)
        losses = np.array(train_ad(ds, replace(FAST, epochs_ad=10, n_train=2000)).losses)
        avg = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(avg) <= 0.05 * avg[:-1])

    def test_empty_dataset(self, small_ds):
        with pytest.raises(ValueError, match="empty"):
            train_ad(small_ds.subset(np.arange(0)), FAST)
