import numpy as np
import pytest
from scipy.stats import norm

from factvae import (BarsConfig, GroupedSample, GroupSpec, InvalidArgumentError,
                     SeededRng, encode, generate_bars, heldout_ll, reconstruct, sparsity_matrix,
                     write_pgm)
from factvae.evaluate import SparsityMatrix, reconstruct_dataset

from conftest import perturbed_model


class TestReconstruct:
    def test_mean_mode_deterministic(self, tiny_model, tiny_sample):
        a = reconstruct(tiny_model, tiny_sample, ["a"])
        b = reconstruct(tiny_model, tiny_sample, ["a"])
        assert set(a) == {"a", "b"}
        assert all(np.array_equal(a[g], b[g]) for g in a)

    def test_sample_mode_uses_rng(self, tiny_model, tiny_sample):
        a = reconstruct(tiny_model, tiny_sample, ["a"], "sample", SeededRng(1))
        b = reconstruct(tiny_model, tiny_sample, ["a"], "sample", SeededRng(1))
        c = reconstruct(tiny_model, tiny_sample, ["a"], "sample", SeededRng(2))
        assert np.array_equal(a["b"], b["b"]) and not np.array_equal(a["b"], c["b"])
        with pytest.raises(InvalidArgumentError):
            reconstruct(tiny_model, tiny_sample, ["a"], "sample")

    def test_uninformative_posterior_decodes_prior_mean(self, tiny_model, tiny_sample):
        for net in tiny_model.nets.values():
            net.V[...] = 0.0
        out = reconstruct(tiny_model, tiny_sample, ["a", "b"])
        for g in ("a", "b"):
            expected = tiny_model.nets[g].decoder_mean(np.zeros((1, 2))).value[0]
            assert np.array_equal(out[g], expected)

    def test_matches_decode_of_posterior_mean(self, tiny_model, tiny_sample):
        from factvae import decode_group
        q = encode(tiny_model, tiny_sample, ["b"])
        out = reconstruct(tiny_model, tiny_sample, ["b"])
        for g in ("a", "b"):
            assert out[g] == pytest.approx(decode_group(tiny_model, g, q.mean)[0], abs=1e-12)

    def test_ignores_groups_outside_observe(self, tiny_model, tiny_sample):
        other = GroupedSample({"a": tiny_sample["a"], "b": tiny_sample["b"] + 100.0})
        a = reconstruct(tiny_model, tiny_sample, ["a"])
        b = reconstruct(tiny_model, other, ["a"])
        assert all(np.array_equal(a[g], b[g]) for g in a)

    def test_errors(self, tiny_model, tiny_sample):
        with pytest.raises(InvalidArgumentError):
            reconstruct(tiny_model, tiny_sample, [])
        with pytest.raises(InvalidArgumentError):
            reconstruct(tiny_model, GroupedSample({"a": np.zeros(3), "b": None}), ["b"])
        with pytest.raises(InvalidArgumentError):
            reconstruct(tiny_model, tiny_sample, ["a"], mode="median")

    def test_dataset_matches_single_samples(self):
        data = generate_bars(BarsConfig(n=6, size=4, seed=1))
        model = perturbed_model(data.specs, 3, 5, seed=2)
        out = reconstruct_dataset(model, data, ["TL", "BR"])
        assert out.observed.all()
        for i in range(len(data)):
            s = data[i]
            obs = [g for g in ("TL", "BR") if s[g] is not None]
            if obs:
                single = reconstruct(model, s, obs)
            else:
                single = {g: model.nets[g].decoder_mean(np.zeros((1, 3))).value[0]
                          for g in data.names}
            for g in data.names:
                assert out.values[g][i] == pytest.approx(single[g], abs=1e-12)


class TestHeldoutLL:
    def test_single_draw_identity(self, tiny_model, tiny_sample):
        # with one draw the estimate is ll(z) + log p(z) - log q(z) at that draw
        value = heldout_ll(tiny_model, tiny_sample, 1, SeededRng(5))
        q = encode(tiny_model, tiny_sample, ["a", "b"])
        eps = SeededRng(5).normal((1, 1, 2))[0, 0]
        z = q.mean + eps / np.sqrt(q.precision)
        ll = 0.0
        for g in ("a", "b"):
            net = tiny_model.nets[g]
            mean = net.decoder_mean(z[None]).value[0]
            ll += norm.logpdf(tiny_sample[g], mean, np.exp(0.5 * net.obs_logvar)).sum()
        log_p = norm.logpdf(z).sum()
        log_q = norm.logpdf(z, q.mean, 1 / np.sqrt(q.precision)).sum()
        assert value == pytest.approx(ll + log_p - log_q, abs=1e-10)

    def test_exact_when_latent_unused(self):
        model = perturbed_model([GroupSpec("a", 3)], 2, 4, seed=1)
        net = model.nets["a"]
        net.W[...] = 0.0
        net.V[...] = 0.0
        x = np.array([0.3, -1.0, 2.0])
        mean = net.decoder_mean(np.zeros((1, 2))).value[0]
        exact = norm.logpdf(x, mean, np.exp(0.5 * net.obs_logvar)).sum()
        for s in (1, 7, 64):
            got = heldout_ll(model, GroupedSample({"a": x}), s, SeededRng(s))
            assert got == pytest.approx(exact, abs=1e-10)

    def test_more_samples_do_not_lower_estimate(self, tiny_model, tiny_sample):
        rng = SeededRng(9)
        one = [heldout_ll(tiny_model, tiny_sample, 1, rng) for _ in range(100)]
        many = [heldout_ll(tiny_model, tiny_sample, 16, rng) for _ in range(100)]
        se = np.sqrt(np.var(one) / 100 + np.var(many) / 100)
        assert np.mean(many) >= np.mean(one) - 3 * se

    def test_missing_group_ignored(self, tiny_model, tiny_sample):
        partial = GroupedSample({"a": tiny_sample["a"], "b": None})
        a = heldout_ll(tiny_model, partial, 4, SeededRng(0))
        b = heldout_ll(tiny_model, GroupedSample({"a": tiny_sample["a"]}), 4, SeededRng(0))
        assert a == b

    def test_errors(self, tiny_model, tiny_sample):
        with pytest.raises(InvalidArgumentError):
            heldout_ll(tiny_model, tiny_sample, 0, SeededRng(0))
        with pytest.raises(InvalidArgumentError):
            heldout_ll(tiny_model, tiny_sample, 4)


class TestSparsityMatrix:
    def test_values_are_column_norms(self, tiny_model):
        sm = sparsity_matrix(tiny_model)
        assert sm.groups == ["a", "b"] and sm.values.shape == (2, 2)
        for gi, g in enumerate(sm.groups):
            net = tiny_model.nets[g]
            for j in range(2):
                expected = np.sqrt(np.sum(net.W[:, j] ** 2) + np.sum(net.V[j] ** 2))
                assert sm.values[gi, j] == pytest.approx(expected, rel=1e-14)

    def test_active_threshold(self):
        sm = SparsityMatrix(["a", "b"], np.array([[10.0, 1.0], [1.01, 0.0]]))
        assert sm.active().tolist() == [[True, False], [True, False]]
        assert not SparsityMatrix(["a"], np.zeros((1, 3))).active().any()

    def test_csv(self, tmp_path):
        sm = SparsityMatrix(["TL", "TR"], np.array([[0.5, 0.0], [1 / 3, 2.0]]))
        sm.write_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text() == \
            "group,z1,z2\nTL,0.5,0\nTR,0.3333333333,2\n"


class TestPgm:
    def test_bytes(self, tmp_path):
        write_pgm(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "x.pgm")
        assert (tmp_path / "x.pgm").read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0])

    def test_affine_scaling_and_shape(self, tmp_path):
        write_pgm(np.array([[-1.0, 0.0, 1.0]]), tmp_path / "x.pgm")
        data = (tmp_path / "x.pgm").read_bytes()
        assert data[:11] == b"P5\n3 1\n255\n"
        assert list(data[11:]) == [0, 128, 255]

    def test_constant_image(self, tmp_path):
        write_pgm(np.full((2, 3), 0.7), tmp_path / "x.pgm")
        assert (tmp_path / "x.pgm").read_bytes()[-6:] == bytes(6)

    def test_rejects_bad_input(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_pgm(np.zeros(4), tmp_path / "x.pgm")
        with pytest.raises(InvalidArgumentError):
            write_pgm(np.array([[np.nan]]), tmp_path / "x.pgm")


def test_single_draw_matches_elbo_without_prior_in_expectation(tiny_model, tiny_sample):
    from factvae import elbo_tilde
    rng = SeededRng(21)
    n = 2000
    iw = np.array([heldout_ll(tiny_model, tiny_sample, 1, rng) for _ in range(n)])
    el = np.array([elbo_tilde(tiny_model, tiny_sample, ["a", "b"], ["a", "b"], rng)
                   for _ in range(n)]) - float(tiny_model.log_prior().value)
    se = np.sqrt(iw.var() / n + el.var() / n)
    assert abs(iw.mean() - el.mean()) < 4 * se
