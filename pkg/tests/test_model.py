import json

import numpy as np
import pytest

from sthawkes import (
    BadScaleError,
    Event,
    History,
    InfeasiblePlanError,
    InterventionPlan,
    NegativeEntryError,
    NetworkParams,
    NonStationaryError,
    SingleGaussian,
    WeightedKDE,
    background_mass,
    canonicalize_triggering,
    load_params,
    save_params,
    validate,
)
from conftest import random_instance


def _sg(mu, sigma0=0.25):
    return SingleGaussian(np.asarray(mu, dtype=float), sigma0)


class TestValidate:
    def test_scalar_branching_ratio(self):
        vp = validate(NetworkParams(1, _sg([0.03]), [[0.1]], 0.2, 0.1))
        assert vp.branching_ratio == pytest.approx(0.5)
        assert vp.spectral_radius == pytest.approx(0.1)

    def test_scalar_nonstationary(self):
        with pytest.raises(NonStationaryError):
            validate(NetworkParams(1, _sg([0.03]), [[0.3]], 0.2, 0.1))

    def test_full_scale_instance(self):
        # n=200 sampler-style matrix rescaled below the decay rate
        rng = np.random.default_rng(0)
        A = 1.5 * rng.random((200, 200))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        A *= 0.9 * 0.2 / rho
        vp = validate(NetworkParams(200, _sg(rng.uniform(0.01, 0.05, 200)), A, 0.2, 0.1))
        assert 0 < vp.branching_ratio < 1

    def test_negative_entry(self):
        with pytest.raises(NegativeEntryError):
            validate(NetworkParams(2, _sg([0.1, 0.1]), [[0.0, -0.01], [0.0, 0.0]], 0.2, 0.1))

    def test_bad_scales(self):
        with pytest.raises(BadScaleError):
            validate(NetworkParams(1, _sg([0.1]), [[0.0]], -0.2, 0.1))
        with pytest.raises(BadScaleError):
            validate(NetworkParams(1, _sg([0.1]), [[0.0]], 0.2, 0.0))

    def test_branching_ratio_in_unit_interval(self, rng):
        for _ in range(20):
            vp = random_instance(rng, int(rng.integers(1, 8)))
            assert 0.0 <= vp.branching_ratio < 1.0


class TestBackgroundMass:
    def test_single_gaussian_mass_is_mu(self):
        assert background_mass(_sg([0.03])) == pytest.approx([0.03])

    def test_kde_mass_is_rowsum_over_window(self):
        bg = WeightedKDE([[1.0, 2.0]], delta=0.5, window=7.0, anchors=[[0, 0], [1, 1]])
        assert background_mass(bg) == pytest.approx([3.0 / 7.0])

    def test_kde_zero_weights(self):
        bg = WeightedKDE(np.zeros((2, 3)), delta=0.5, window=7.0, anchors=np.zeros((3, 2)))
        assert background_mass(bg) == pytest.approx([0.0, 0.0])

    def test_linearity(self, rng):
        mu = rng.uniform(0.0, 1.0, 4)
        assert background_mass(_sg(2 * mu)) == pytest.approx(2 * background_mass(_sg(mu)))
        beta = rng.uniform(0.0, 1.0, (3, 5))
        anchors = rng.normal(size=(5, 2))
        one = background_mass(WeightedKDE(beta, 0.5, 7.0, anchors))
        two = background_mass(WeightedKDE(2 * beta, 0.5, 7.0, anchors))
        assert two == pytest.approx(2 * one)


class TestCanonicalize:
    def test_normalized_rescales_by_omega(self):
        out = canonicalize_triggering([[0.5]], 0.2, normalized=True)
        assert out[0, 0] == pytest.approx(0.1)

    def test_raw_unchanged(self):
        out = canonicalize_triggering([[0.1]], 0.2, normalized=False)
        assert out[0, 0] == pytest.approx(0.1)

    def test_zero_matrix(self):
        for flag in (True, False):
            out = canonicalize_triggering(np.zeros((3, 3)), 0.7, flag)
            assert np.all(out == 0)

    def test_preserves_offspring_mass(self, rng):
        # integral of a*exp(-w t) equals integral of A_fit*w*exp(-w t)
        omega = 0.7
        A_fit = rng.uniform(0, 1, (4, 4))
        A = canonicalize_triggering(A_fit, omega, normalized=True)
        assert A / omega == pytest.approx(A_fit)


class TestHistory:
    def test_sorted_required(self):
        with pytest.raises(ValueError):
            History((Event(2.0, 0, 0, 0), Event(1.0, 0, 0, 0)), horizon=3.0)

    def test_horizon_enforced(self):
        with pytest.raises(ValueError):
            History((Event(5.0, 0, 0, 0),), horizon=3.0)

    def test_from_events_sorts(self):
        h = History.from_events([Event(2.0, 0, 0, 1), Event(1.0, 0, 0, 0)], horizon=3.0)
        assert [e.t for e in h.events] == [1.0, 2.0]

    def test_counts(self):
        h = History.from_events(
            [Event(0.5, 0, 0, 1), Event(1.0, 0, 0, 1), Event(2.0, 0, 0, 0)], horizon=3.0
        )
        assert h.counts(3).tolist() == [1.0, 2.0, 0.0]


class TestInterventionPlan:
    def test_budget_feasibility(self):
        with pytest.raises(InfeasiblePlanError):
            InterventionPlan(
                np.array([0.0, 1.0]), p=0.1, gamma=0.6, tau=1.0, T=2.0,
                costs=np.array([5.0, 1.0]), budget=4.0,
            )

    def test_rho_nu_ranges(self):
        plan = InterventionPlan(
            np.array([0.0, 1.0]), p=0.1, gamma=0.6, tau=1.0, T=2.0,
            costs=np.array([1.0, 1.0]), budget=2.0,
        )
        assert plan.rho() == pytest.approx([0.6, 1.0])
        assert plan.nu() == pytest.approx([0.1, 1.0])
        assert np.all(plan.rho() >= min(0.6, 0.1)) and np.all(plan.rho() <= 1.0)

    def test_binary_required(self):
        with pytest.raises(InfeasiblePlanError):
            InterventionPlan(
                np.array([0.5, 1.0]), p=0.1, gamma=0.6, tau=1.0, T=2.0,
                costs=np.ones(2), budget=2.0,
            )


class TestParamsFile:
    def test_round_trip_single_gaussian(self, tmp_path):
        vp = validate(NetworkParams(2, _sg([0.03, 0.04]), [[0.1, 0.0], [0.02, 0.05]], 0.2, 0.1))
        path = tmp_path / "params.json"
        save_params(vp.params, path)
        again = load_params(path)
        assert again.n == 2
        assert np.array_equal(again.A, vp.params.A)
        assert again.background.mu.tolist() == [0.03, 0.04]
        # saved form is bit-identical on a second round trip
        save_params(again, tmp_path / "params2.json")
        assert (tmp_path / "params.json").read_text() == (tmp_path / "params2.json").read_text()

    def test_round_trip_kde(self, tmp_path):
        bg = WeightedKDE([[0.5, 1.5], [0.0, 2.0]], 0.3, 7.0, [[0, 0], [1, 2]])
        params = NetworkParams(2, bg, np.zeros((2, 2)), 0.2, 0.1)
        save_params(params, tmp_path / "p.json")
        again = load_params(tmp_path / "p.json")
        assert np.array_equal(again.background.beta, bg.beta)
        assert np.array_equal(again.background.anchors, bg.anchors)
        assert again.background.window == 7.0

    def test_normalized_convention_converted_on_load(self, tmp_path):
        doc = {
            "n": 1,
            "omega": 0.2,
            "sigma": 0.1,
            "background": {"kind": "single_gaussian", "mu": [0.03], "sigma0": 0.25},
            "A": [[0.5]],
            "convention": "normalized",
        }
        path = tmp_path / "p.json"
        path.write_text(json.dumps(doc))
        params = load_params(path)
        assert params.A[0, 0] == pytest.approx(0.1)
