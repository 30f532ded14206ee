"""Equivariance metrics, traversals, and PPM export."""

import numpy as np
import pytest

from flowfact import evaluation, flows, potentials, vae
from flowfact.evaluation import (
    ZeroFlowBank,
    equivariance_error_latent,
    equivariance_error_output,
    equivariance_report,
    export_grid,
    read_ppm,
    traverse,
    write_metrics_csv,
)

SHAPE = (3, 16, 16)


@pytest.fixture
def model():
    return vae.init_flow_vae(np.random.default_rng(0), SHAPE, 4, channels=(2, 3, 4, 5))


@pytest.fixture
def bank():
    return potentials.init_potential_bank(
        np.random.default_rng(1), 2, 4, emb_dim=4, hidden=(6,), scale=0.3
    )


class TestEquivariance:
    def test_zero_flow_stationary_sequence_output_error(self, model):
        # a perfect "autoencoder" for this purpose: x_t == x_0 and Dec(z_0) == x_0
        rng = np.random.default_rng(2)
        x0 = rng.random(SHAPE)
        x_bar = np.stack([x0] * 5)
        bank = ZeroFlowBank(4)
        err = equivariance_error_output(model, bank, x_bar, 0)
        mu, _ = vae.encode(model.encoder, x0)
        dec = vae.decode(model.decoder, mu)
        assert abs(err - 4 * np.abs(x0 - dec).sum()) < 1e-9

    def test_zero_flow_baseline_formula(self, model, bank):
        # with grad_u forced to 0 the metric is sum_t |x_t - Dec(z_0)|
        rng = np.random.default_rng(3)
        x_bar = rng.random((4, *SHAPE))
        base = ZeroFlowBank(4, k_count=2)
        err = equivariance_error_output(model, base, x_bar, 1)
        mu, _ = vae.encode(model.encoder, x_bar[0])
        dec0 = vae.decode(model.decoder, mu)
        manual = sum(np.abs(x_bar[t] - dec0).sum() for t in range(1, 4))
        assert abs(err - manual) < 1e-9

    def test_output_error_hand_summed(self, model, bank):
        rng = np.random.default_rng(4)
        x_bar = rng.random((3, *SHAPE))
        err = equivariance_error_output(model, bank, x_bar, 0)
        mu, _ = vae.encode(model.encoder, x_bar[0])
        z1 = mu + bank.grad_z(0, mu, 0.0)
        z2 = z1 + bank.grad_z(0, z1, 1.0)
        manual = np.abs(x_bar[1] - vae.decode(model.decoder, z1)).sum()
        manual += np.abs(x_bar[2] - vae.decode(model.decoder, z2)).sum()
        assert abs(err - manual) < 1e-9

    def test_latent_error_stationary_zero_flow(self, model):
        rng = np.random.default_rng(5)
        x0 = rng.random(SHAPE)
        x_bar = np.stack([x0] * 4)
        assert equivariance_error_latent(model, ZeroFlowBank(4), x_bar, 0) < 1e-12

    def test_latent_error_hand_summed(self, model, bank):
        rng = np.random.default_rng(6)
        x_bar = rng.random((2, *SHAPE))
        err = equivariance_error_latent(model, bank, x_bar, 1)
        mu, _ = vae.encode(model.encoder, x_bar[0])
        z1 = mu + bank.grad_z(1, mu, 0.0)
        t1, _ = vae.encode(model.encoder, x_bar[1])
        assert abs(err - np.abs(t1 - z1).sum()) < 1e-9

    def test_latent_error_invariant_to_consistent_permutation(self, model):
        rng = np.random.default_rng(7)
        x_bar = rng.random((3, *SHAPE))
        base = ZeroFlowBank(4)
        before = equivariance_error_latent(model, base, x_bar, 0)
        perm = np.array([2, 0, 3, 1])
        d = 4
        # permute the latent dimensions in both encoder heads (mu and logvar)
        model.encoder.head_w[:d] = model.encoder.head_w[:d][perm]
        model.encoder.head_b[:d] = model.encoder.head_b[:d][perm]
        model.encoder.head_w[d:] = model.encoder.head_w[d:][perm]
        model.encoder.head_b[d:] = model.encoder.head_b[d:][perm]
        after = equivariance_error_latent(model, base, x_bar, 0)
        assert abs(before - after) < 1e-9

    def test_report_rows(self, model, bank):
        rng = np.random.default_rng(8)
        seqs = rng.random((4, 3, *SHAPE))
        labels = np.array([0, 1, 0, 1])
        rows = equivariance_report(model, bank, seqs, labels)
        assert [r.k for r in rows] == [0, 1]
        assert all(r.n_sequences == 2 for r in rows)
        expected0 = np.mean(
            [equivariance_error_output(model, bank, seqs[i], 0) for i in (0, 2)]
        )
        assert abs(rows[0].value - expected0) < 1e-9

    def test_metrics_csv(self, tmp_path, model, bank):
        rows = [evaluation.MetricRow("equiv-out", 0, 12.5, 3)]
        path = tmp_path / "m.csv"
        write_metrics_csv(path, rows)
        assert path.read_text() == "metric,k,value,n_sequences\nequiv-out,0,12.5,3\n"


class TestTraverse:
    def test_single_entry_matches_flow_positions(self, model, bank):
        rng = np.random.default_rng(9)
        x0 = rng.random(SHAPE)
        frames = traverse(model, bank, x0, [(0, 4)])
        mu, _ = vae.encode(model.encoder, x0)
        z = mu
        for t, frame in enumerate(frames):
            z = z + bank.grad_z(0, z, float(t))
            assert np.array_equal(frame, vae.decode(model.decoder, z))

    def test_empty_superposition_freezes_latent(self, model, bank):
        rng = np.random.default_rng(10)
        x0 = rng.random(SHAPE)
        frames = traverse(model, bank, x0, [((), 3)])
        mu, _ = vae.encode(model.encoder, x0)
        dec0 = vae.decode(model.decoder, mu)
        assert len(frames) == 3
        for f in frames:
            assert np.array_equal(f, dec0)

    def test_switch_equals_chained_halves(self, model, bank):
        rng = np.random.default_rng(11)
        x0 = rng.random(SHAPE)
        frames = traverse(model, bank, x0, [(0, 2), (1, 2)])
        mu, _ = vae.encode(model.encoder, x0)
        z = mu
        manual = []
        for t in range(2):
            z = z + bank.grad_z(0, z, float(t))
            manual.append(vae.decode(model.decoder, z))
        for t in range(2, 4):
            z = z + bank.grad_z(1, z, float(t))
            manual.append(vae.decode(model.decoder, z))
        for got, want in zip(frames, manual):
            assert np.array_equal(got, want)

    def test_superpose_sums_gradients(self, model, bank):
        rng = np.random.default_rng(12)
        x0 = rng.random(SHAPE)
        frames = traverse(model, bank, x0, [((0, 1), 2)])
        mu, _ = vae.encode(model.encoder, x0)
        z = mu
        for t, frame in enumerate(frames):
            z = z + bank.grad_z(0, z, float(t)) + bank.grad_z(1, z, float(t))
            assert np.array_equal(frame, vae.decode(model.decoder, z))

    def test_unknown_index_rejected(self, model, bank):
        with pytest.raises(IndexError, match="out of range"):
            traverse(model, bank, np.zeros(SHAPE), [(7, 2)])

    def test_empty_schedule_rejected(self, model, bank):
        with pytest.raises(ValueError, match="nonempty"):
            traverse(model, bank, np.zeros(SHAPE), [])


class TestPpm:
    def test_single_white_pixel(self, tmp_path):
        path = tmp_path / "w.ppm"
        export_grid([[np.ones((3, 1, 1))]], path)
        assert path.read_bytes() == b"P6\n1 1\n255\n\xff\xff\xff"

    def test_round_trip_quantization(self, tmp_path):
        rng = np.random.default_rng(13)
        frames = [[rng.random((3, 4, 5)) for _ in range(3)] for _ in range(2)]
        path = tmp_path / "g.ppm"
        export_grid(frames, path)
        img = read_ppm(path)
        assert img.shape == (2 * 4 + 1, 3 * 5 + 2, 3)
        got = img[0:4, 0:5].transpose(2, 0, 1)
        expected = np.clip(np.rint(frames[0][0] * 255), 0, 255).astype(np.uint8)
        assert np.array_equal(got, expected)
        # separators are white
        assert np.all(img[4, :, :] == 255)

    def test_grayscale_frames_replicate(self, tmp_path):
        path = tmp_path / "g.ppm"
        export_grid([[np.full((1, 2, 2), 0.5)]], path)
        img = read_ppm(path)
        assert np.all(img == 128)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            export_grid([], tmp_path / "x.ppm")

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            export_grid([[np.full((3, 2, 2), 1.5)]], tmp_path / "x.ppm")
