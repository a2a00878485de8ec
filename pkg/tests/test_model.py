import math

import numpy as np
import pytest

from factvae import (FactVaeModel, GroupedSample, GroupSpec, InvalidArgumentError, ParseError,
                     SeededRng, assemble_phi, decode_group, elbo_tilde, encode, encode_group,
                     load_model, poe_fuse, DiagGaussian, save_model)
from factvae.model import LOGVAR_MAX, LOGVAR_MIN

from conftest import perturbed_model


def constant_model(p=2, h=2, k=2, value=0.1):
    model = FactVaeModel([GroupSpec("g", p)], k, h)
    for name, param in model.nets["g"].params.items():
        if param.value.ndim == 2:
            param.value[...] = value
    return model


class TestEncodeGroup:
    def test_hand_computed(self):
        model = constant_model()
        q = encode_group(model, "g", [1.0, 2.0])
        feat = math.tanh(0.1 * 1.0 + 0.1 * 2.0)
        expected = 0.1 * feat + 0.1 * feat
        assert expected == pytest.approx(0.0582625, abs=5e-8)
        assert q.precision == pytest.approx([expected, expected], abs=1e-12)
        assert q.mean == pytest.approx([expected, expected], abs=1e-12)

    def test_zero_row_of_v_gives_zero_precision(self, tiny_model):
        tiny_model.nets["a"].V[1] = 0.0
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = encode_group(tiny_model, "a", rng.normal(size=3) * 5)
            assert q.precision[1] == 0.0

    def test_shapes(self, tiny_model):
        q = encode_group(tiny_model, "b", [0.1, 0.2])
        assert q.mean.shape == (2,) and q.precision.shape == (2,)
        assert np.all(q.precision >= 0)

    def test_length_mismatch(self, tiny_model):
        with pytest.raises(InvalidArgumentError):
            encode_group(tiny_model, "a", [1.0, 2.0])


class TestEncode:
    def test_single_group_is_prior_times_expert(self, tiny_model, tiny_sample):
        q = encode(tiny_model, tiny_sample, ["a"])
        ref = poe_fuse([encode_group(tiny_model, "a", tiny_sample["a"])])
        assert np.array_equal(q.mean, ref.mean) and np.array_equal(q.precision, ref.precision)

    def test_adding_group_shrinks_variance(self, tiny_model, tiny_sample):
        qa = encode(tiny_model, tiny_sample, ["a"])
        qab = encode(tiny_model, tiny_sample, ["a", "b"])
        assert np.all(qab.variance <= qa.variance)
        assert np.all(qab.precision >= 1.0)

    def test_matches_two_fixed_experts(self, monkeypatch, tiny_model, tiny_sample):
        import factvae.model as m
        experts = {"a": DiagGaussian([1.0, 0.0], [3.0, 0.0]), "b": DiagGaussian([-1.0, 0.0], [1.0, 0.0])}
        monkeypatch.setattr(m, "encode_group", lambda model, g, x: experts[g])
        q = m.encode(tiny_model, tiny_sample, ["a", "b"])
        assert q.precision[0] == 5.0 and q.mean[0] == pytest.approx(0.4, abs=1e-12)

    def test_empty_subset(self, tiny_model, tiny_sample):
        with pytest.raises(InvalidArgumentError):
            encode(tiny_model, tiny_sample, [])

    def test_missing_group_rejected(self, tiny_model):
        sample = GroupedSample({"a": np.zeros(3), "b": None})
        with pytest.raises(InvalidArgumentError):
            encode(tiny_model, sample, ["b"])


class TestDecodeGroup:
    def test_hand_computed(self):
        model = constant_model()
        mean, var = decode_group(model, "g", [1.0, -3.0])
        u = 0.1 * 1.0 + 0.1 * -3.0
        hid = math.tanh(0.1 * u + 0.1 * u)
        expected = 0.1 * hid + 0.1 * hid
        assert expected == pytest.approx(-0.007996, abs=5e-7)
        assert mean == pytest.approx([expected, expected], abs=1e-12)
        assert var.tolist() == [1.0, 1.0]

    def test_zero_column_of_w_makes_latent_irrelevant(self, tiny_model):
        tiny_model.nets["b"].W[:, 0] = 0.0
        z = np.array([0.3, -0.7])
        base, _ = decode_group(tiny_model, "b", z)
        for alpha in (-100.0, 1e-3, 42.0):
            out, _ = decode_group(tiny_model, "b", z + alpha * np.array([1.0, 0.0]))
            assert np.array_equal(out, base)

    def test_shapes(self, tiny_model):
        mean, var = decode_group(tiny_model, "a", [0.0, 0.0])
        assert mean.shape == (3,) and var.shape == (3,)

    def test_length_mismatch(self, tiny_model):
        with pytest.raises(InvalidArgumentError):
            decode_group(tiny_model, "a", [0.0])


class TestAssemblePhi:
    def test_layout_and_shape(self, tiny_model):
        net = tiny_model.nets["a"]
        phi = assemble_phi(tiny_model, "a")
        assert phi.shape == (3 + 4, 2)
        assert np.array_equal(phi[:3], net.W)
        assert np.array_equal(phi[3:], net.V.T)

    def test_write_through(self, tiny_model):
        phi = assemble_phi(tiny_model, "a")
        phi[:, 1] = 0.0
        net = tiny_model.nets["a"]
        assert np.all(net.W[:, 1] == 0.0) and np.all(net.V[1] == 0.0)
        assert np.any(net.W[:, 0] != 0.0)

    def test_column_norm_splits(self, tiny_model):
        net = tiny_model.nets["b"]
        phi = assemble_phi(tiny_model, "b")
        for j in range(2):
            assert np.sum(phi[:, j] ** 2) == pytest.approx(
                np.sum(net.W[:, j] ** 2) + np.sum(net.V[j] ** 2), rel=1e-14)


class TestElbo:
    def test_hand_log_density(self):
        model = FactVaeModel([GroupSpec("x", 1)], 2, 3)  # all-zero parameters
        sample = GroupedSample({"x": np.array([0.5])})
        value = elbo_tilde(model, sample, ["x"], ["x"], SeededRng(0))
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.125, abs=1e-12)
        assert value == pytest.approx(-1.04394, abs=5e-6)

    def test_kl_zero_when_v_zero(self, tiny_model, tiny_sample):
        for net in tiny_model.nets.values():
            net.V[...] = 0.0
        q = encode(tiny_model, tiny_sample, ["a", "b"])
        assert q.mean.tolist() == [0.0, 0.0] and q.precision.tolist() == [1.0, 1.0]

    def test_deterministic_given_seed(self, tiny_model, tiny_sample):
        a = elbo_tilde(tiny_model, tiny_sample, ["a"], ["a", "b"], SeededRng(4))
        b = elbo_tilde(tiny_model, tiny_sample, ["a"], ["a", "b"], SeededRng(4))
        assert a == b

    def test_subset_must_be_within_observed(self, tiny_model, tiny_sample):
        with pytest.raises(InvalidArgumentError):
            elbo_tilde(tiny_model, tiny_sample, ["a", "b"], ["a"], SeededRng(0))

    def test_mc_samples_average(self, tiny_model, tiny_sample):
        from factvae.model import elbo_tilde_tensor
        eps = np.random.default_rng(0).standard_normal((3, 1, 2))
        avg = float(elbo_tilde_tensor(tiny_model, tiny_sample, ["a"], ["a", "b"], eps).value)
        singles = [float(elbo_tilde_tensor(tiny_model, tiny_sample, ["a"], ["a", "b"], e[None]).value)
                   for e in eps]
        assert avg == pytest.approx(np.mean(singles), rel=1e-12)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path, tiny_model):
        path = tmp_path / "m.fvm"
        save_model(tiny_model, path)
        loaded = load_model(path)
        assert loaded.latent == 2 and loaded.hidden == 4
        assert [(s.name, s.dim) for s in loaded.groups] == [("a", 3), ("b", 2)]
        for p, q in zip(tiny_model.parameters(), loaded.parameters()):
            assert np.array_equal(p.value, q.value)
        assert path.read_text().startswith("FACTVAE1\n")

    def test_loaded_phi_views_still_coupled(self, tmp_path, tiny_model):
        save_model(tiny_model, tmp_path / "m.fvm")
        loaded = load_model(tmp_path / "m.fvm")
        assemble_phi(loaded, "a")[:, 0] = 0.0
        assert np.all(loaded.nets["a"].V[0] == 0.0)

    def test_bad_header(self, tmp_path):
        (tmp_path / "m").write_text("NOPE\n")
        with pytest.raises(ParseError, match="line 1"):
            load_model(tmp_path / "m")

    def test_truncated_block(self, tmp_path, tiny_model):
        path = tmp_path / "m.fvm"
        save_model(tiny_model, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ParseError):
            load_model(path)

    def test_non_numeric(self, tmp_path, tiny_model):
        path = tmp_path / "m.fvm"
        save_model(tiny_model, path)
        lines = path.read_text().splitlines()
        lines[5] = "x " + lines[5]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match="line 6"):
            load_model(path)


class TestInvariants:
    def test_zero_phi_column_disentangles_group(self):
        model = perturbed_model([GroupSpec("a", 4), GroupSpec("b", 3)], 3, 5, seed=8)
        assemble_phi(model, "a")[:, 2] = 0.0
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert encode_group(model, "a", rng.normal(size=4)).precision[2] == 0.0
            z = rng.normal(size=3)
            shifted = z + np.array([0.0, 0.0, rng.normal() * 10])
            assert np.array_equal(decode_group(model, "a", z)[0], decode_group(model, "a", shifted)[0])

    def test_logvar_clamp(self, tiny_model):
        net = tiny_model.nets["a"]
        net.params["obs_logvar"].value[:] = [-20.0, 0.0, 9.0]
        net.clamp_logvar()
        assert net.obs_logvar.tolist() == [LOGVAR_MIN, 0.0, LOGVAR_MAX]

    def test_duplicate_group_names(self):
        with pytest.raises(InvalidArgumentError):
            FactVaeModel([GroupSpec("a", 1), GroupSpec("a", 2)], 2, 2)
