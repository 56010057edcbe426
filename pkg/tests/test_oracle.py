import math

import numpy as np
import pytest

from erwlab import build_preset, ensemble, validate_model
from erwlab.oracle import (
    OracleError,
    enumerate_small_multi,
    exact_dp_1d,
    exact_moments,
    observed_pmf,
)

UNIT_STEP_PRESETS = [
    ("erw", dict(p=0.6, q=0.5)),
    ("erw", dict(p=0.75, q=0.5)),
    ("erw", dict(p=0.85, q=0.3)),
    ("linear", dict(a=0.0, b=0.7, p=0.6, q=0.5)),
    ("quadratic-sym", dict(p=0.75, q=0.5)),
    ("market", dict(p=0.5, q=0.5)),
    ("minimal", dict(f="x^2", p=0.9, q=0.3)),
    ("cubic-supercritical", dict(p=0.62, q=0.5)),
    ("phi-power", dict(phi="tanh", k=2, p=0.7, q=0.5)),
]


def _model(name, kwargs):
    return validate_model(build_preset(name, **kwargs))


class TestExactDP:
    def test_first_step_mean(self):
        # single up/down step: E S_1 = 2q - 1
        for q in (0.3, 0.5, 0.8):
            law = exact_dp_1d(_model("erw", dict(p=0.6, q=q)), 1)
            mean, _ = law.moments_observed()
            assert mean == pytest.approx(2 * q - 1, abs=1e-14)

    def test_two_step_mean(self):
        # hand enumeration of the four two-step outcomes gives
        # E S_2 = (2q-1)(1 + (2p-1))
        p, q = 0.7, 0.4
        law = exact_dp_1d(_model("erw", dict(p=p, q=q)), 2)
        mean, _ = law.moments_observed()
        assert mean == pytest.approx((2 * q - 1) * (1 + (2 * p - 1)), abs=1e-14)

    @pytest.mark.parametrize("name,kwargs", UNIT_STEP_PRESETS)
    def test_normalization(self, name, kwargs):
        law = exact_dp_1d(_model(name, kwargs), 50)
        assert math.fsum(law.pmf.tolist()) == pytest.approx(1.0, abs=1e-14)
        assert np.all(law.pmf >= 0)

    def test_simple_walk_variance(self):
        # p = 1/2 erases the memory: the steps are i.i.d. and Var S_n = n
        law = exact_dp_1d(_model("erw", dict(p=0.5, q=0.5)), 64)
        mean, var = law.moments_observed()
        assert mean == pytest.approx(0.0, abs=1e-12)
        assert var == pytest.approx(64.0, rel=1e-12)

    def test_symmetric_map_zero_mean(self):
        law = exact_dp_1d(_model("erw", dict(p=0.65, q=0.5)), 40)
        mean, _ = law.moments_observed()
        assert mean == pytest.approx(0.0, abs=1e-12)

    def test_rejects_non_unit_steps(self):
        model = _model("random-step", dict(p=0.6))
        with pytest.raises(OracleError, match="unsupported-model"):
            exact_dp_1d(model, 5)

    def test_horizon_cap(self):
        with pytest.raises(OracleError):
            exact_dp_1d(_model("erw", dict(p=0.6)), 2001)


class TestEnumeration:
    @pytest.mark.parametrize("name,kwargs", UNIT_STEP_PRESETS)
    def test_dp_vs_enumeration(self, name, kwargs):
        model = _model(name, kwargs)
        for n in (3, 8, 12):
            law = exact_dp_1d(model, n)
            sparse = enumerate_small_multi(model, n)
            assert math.fsum(sparse.values()) == pytest.approx(1.0, abs=1e-14)
            lookup = {int(round(pos[0])): prob for pos, prob in sparse.items()}
            worst = max(abs(law.pmf[k] - lookup.get(k, 0.0)) for k in range(n + 1))
            assert worst <= 1e-12

    def test_dual_parameterization_same_law(self):
        # (f, p) and (1-f, 1-p) generate identical exact laws
        base = _model("gerw-1d", dict(f="x^2", p=0.8, q=0.5))
        mirrored = _model("gerw-1d", dict(f="1 - x^2", p=0.2, q=0.5))
        a = exact_dp_1d(base, 12)
        b = exact_dp_1d(mirrored, 12)
        assert np.max(np.abs(a.pmf - b.pmf)) <= 1e-15

    def test_kdim_symmetry(self):
        model = _model("kdim", dict(k=2, p=0.5))
        sparse = enumerate_small_multi(model, 2)
        pmf = observed_pmf(sparse, A=model.spec.A, b=model.spec.b, n=2)
        # the observed two-step law is invariant under either coordinate flip
        for (sx, sy), prob in pmf.items():
            assert pmf[(round(-sx, 9), round(sy, 9))] == pytest.approx(prob, abs=1e-14)
            assert pmf[(round(sx, 9), round(-sy, 9))] == pytest.approx(prob, abs=1e-14)

    def test_random_step_support(self):
        model = _model("random-step", dict(p=0.6, q=0.5))
        sparse = enumerate_small_multi(model, 3)
        pmf = observed_pmf(sparse, A=model.spec.A, b=model.spec.b, n=3)
        values = [v[0] for v in pmf]
        assert min(values) >= -6.0 and max(values) <= 6.0
        assert math.fsum(pmf.values()) == pytest.approx(1.0, abs=1e-13)

    def test_path_guard(self):
        model = _model("kdim", dict(k=3, p=0.5))
        with pytest.raises(OracleError, match="too-many-paths"):
            enumerate_small_multi(model, 12, max_paths=10_000)


class TestMoments:
    def test_exact_moments_multi(self):
        model = _model("kdim", dict(k=2, p=0.5))
        sparse = enumerate_small_multi(model, 4)
        mean, cov = exact_moments(sparse, A=model.spec.A, b=model.spec.b, n=4)
        assert np.allclose(mean, [0.0, 0.0], atol=1e-14)
        assert cov.shape == (2, 2)
        assert np.allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-14)

    def test_exact_moments_1d(self):
        law = exact_dp_1d(_model("erw", dict(p=0.75, q=0.5)), 30)
        mean, cov = exact_moments(law)
        assert mean[0] == pytest.approx(0.0, abs=1e-12)
        assert cov[0, 0] > 30  # superdiffusive inflation already visible


class TestMonteCarloAgreement:
    def test_frequencies_within_four_standard_errors(self):
        # seeded ensemble frequencies against the exact law, for every atom
        # with exact probability >= 1e-3
        N = 100_000
        n = 12
        for name, kwargs in UNIT_STEP_PRESETS[:4]:
            model = _model(name, kwargs)
            law = exact_dp_1d(model, n)
            stats = ensemble(model, n, N, master_seed=2024, checkpoints=[n])
            v_final = np.round(stats.aux_final[:, 0]).astype(int)
            counts = np.bincount(v_final, minlength=n + 1)
            for k in range(n + 1):
                p_exact = float(law.pmf[k])
                if p_exact < 1e-3:
                    continue
                se = math.sqrt(p_exact * (1 - p_exact) / N)
                assert abs(counts[k] / N - p_exact) <= 4 * se, (name, k)
