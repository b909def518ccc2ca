import math
from dataclasses import replace

import numpy as np
import pytest

from neuropdmp import (ModelParams, PerturbationSpec, SimConfig, linear_rate,
                       log1p_rate, log_likelihood_ratio, perturb, simulate)
from neuropdmp.flow import integrate_along_flow
from neuropdmp.likelihood import AmplitudeError, SingularityError
from neuropdmp.model import ModelError


class TestLogLikelihoodRatio:
    def test_identical_rates_zero(self, log10, rate_id):
        assert log_likelihood_ratio(log10, rate_id, rate_id) == 0.0

    def test_scaled_rate_closed_form(self, log10, params10, rate_id):
        """f1 = c f0: log L = n log c - (c - 1) * int rbar_0."""
        c = 1.7
        f1 = linear_rate(2.0, scale=c)
        got = log_likelihood_ratio(log10, f1, rate_id, tol=1e-11)
        _, starts, durs = log10.segments()
        occ = integrate_along_flow(starts.ravel(), np.zeros(starts.size),
                                   np.repeat(durs, 10), rate_id, params10,
                                   tol=1e-12).sum()
        want = log10.n_jumps * math.log(c) - (c - 1.0) * occ
        assert got == pytest.approx(want, rel=1e-8)

    def test_antisymmetry_exact(self, log10, rate_id):
        f1 = log1p_rate(2.0, scale=1.3)
        a = log_likelihood_ratio(log10, f1, rate_id)
        b = log_likelihood_ratio(log10, rate_id, f1)
        assert a == -b  # exact float identity, not approximate

    def test_singularity_detected(self, params10, rate_id, log10):
        from neuropdmp import table_rate
        # rate that vanishes on [0, 1]: observed spikes there are impossible
        f_dead = table_rate([0.0, 1.0, 2.0], [0.0, 0.0, 1.0])
        assert np.any(log10.spike_potentials() < 1.0)
        with pytest.raises(SingularityError):
            log_likelihood_ratio(log10, f_dead, rate_id)

    def test_martingale_normalization(self, params10, rate_id):
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=1000.0)
        f_t = perturb(spec, k_max=2.0)
        vals = []
        for rep in range(300):
            lg = simulate(params10, rate_id,
                          SimConfig(horizon=10.0, seed=800 + rep))
            vals.append(math.exp(log_likelihood_ratio(lg, f_t, rate_id,
                                                      tol=1e-8)))
        vals = np.array(vals)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) <= 3.0 * se

    def test_tolerance_validation(self, log10, rate_id):
        with pytest.raises(ModelError):
            log_likelihood_ratio(log10, rate_id, rate_id, tol=0.0)


class TestPerturbation:
    def test_peak_displacement(self, rate_id):
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=1000.0)
        assert spec.h == pytest.approx(0.1)          # t^(-1/3)
        assert spec.peak == pytest.approx(0.01)      # b h^beta
        f_t = perturb(spec, k_max=2.0)
        assert f_t(1.5) - rate_id(1.5) == pytest.approx(0.01)

    def test_identity_outside_support(self, rate_id):
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=1000.0)
        f_t = perturb(spec, k_max=2.0)
        lo, hi = spec.support
        for x in (lo - 1e-6, hi + 1e-6, 0.3, 1.9):
            assert f_t(x) == rate_id(x)

    def test_dominates_base(self, rate_id):
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=1000.0)
        f_t = perturb(spec, k_max=2.0)
        x = np.linspace(0.0, 2.0, 2001)
        assert np.all(f_t(x) >= rate_id(x))

    def test_amplitude_gate(self, rate_id):
        with pytest.raises(AmplitudeError):
            perturb(PerturbationSpec(f0=rate_id, a=1.5, b=500.0, t=1000.0),
                    k_max=2.0)

    def test_no_double_bump(self, rate_id):
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=1000.0)
        f_t = perturb(spec, k_max=2.0)
        with pytest.raises(ModelError):
            perturb(replace(spec, f0=f_t), k_max=2.0)

    def test_validation(self, rate_id):
        with pytest.raises(ModelError):
            PerturbationSpec(f0=rate_id, a=1.5, b=0.0, t=10.0)
        with pytest.raises(ModelError):
            PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=0.0)
        with pytest.raises(ModelError):
            perturb(PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=10.0))

    def test_perturbed_rate_simulable(self, params10, rate_id):
        """The bumped rate runs through the simulator and its law differs."""
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=2.0, t=10.0)
        f_t = perturb(spec, audit=False)
        log0 = simulate(params10, rate_id, SimConfig(horizon=50.0, seed=5))
        log1 = simulate(params10, f_t, SimConfig(horizon=50.0, seed=5))
        assert log1.n_jumps != log0.n_jumps or not np.array_equal(
            log1.times, log0.times)

    def test_occupation_support_shortcut_consistent(self, params10, rate_id,
                                                    log10):
        """The bump-support fast path agrees with full-span quadrature."""
        from neuropdmp.likelihood import _occupation_term
        spec = PerturbationSpec(f0=rate_id, a=1.5, b=0.1, t=100.0)
        f_t = perturb(spec, k_max=2.0)
        fast = _occupation_term(log10, f_t, rate_id, tol=1e-11)
        slow = integrate_along_flow(
            log10.segments()[1].ravel(),
            np.zeros(log10.segments()[1].size),
            np.repeat(log10.segments()[2], 10),
            lambda p: f_t(p) - rate_id(p), params10, tol=1e-11).sum()
        assert fast == pytest.approx(slow, rel=1e-7)
