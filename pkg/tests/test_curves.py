import math

import numpy as np
import pytest

from mtlc.curves import (
    FAMILY_PARAMS,
    CurveArgs,
    CurveFamily,
    ParamSet,
    deserialize_params,
    eval_curve,
    free_param_names,
    grad_params,
    marginal_gain,
    serialize_params,
)
from mtlc.errors import ArityMismatchError, DomainError

EXP_FAMILIES = [CurveFamily.EXP3_1, CurveFamily.EXP3_2, CurveFamily.EXP3_3]


def random_setup(rng, family):
    params = ParamSet(
        a_i=rng.uniform(0.1, 3.0),
        a_ij=rng.uniform(-1.0, 1.0),
        a_sigma=rng.uniform(-1.0, 1.0),
        b=rng.uniform(-1.0, 1.0),
        c=rng.uniform(0.3, 1.0),
        alpha=rng.uniform(0.3, 2.5),
        n_scale=rng.uniform(1.0, 500.0),
    )
    if family is CurveFamily.ILOG2:
        nt = rng.uniform(1.5, 40.0) * params.n_scale
        args = CurveArgs(n_t=nt)
    else:
        arity = {CurveFamily.EXP4: 1, CurveFamily.EXP3_1: 1, CurveFamily.EXP3_2: 2}.get(family, 3)
        args = CurveArgs(
            n_t=rng.uniform(0.0, 3.0) * params.n_scale,
            n_sigma=rng.uniform(0.0, 10.0) * params.n_scale if arity >= 2 else 0.0,
            n_aux=rng.uniform(0.0, 3.0) * params.n_scale if arity >= 3 else 0.0,
        )
    return params, args


class TestEvalCurve:
    def test_zero_rate_is_constant(self):
        p = ParamSet(a_i=0.0, b=0.0, c=1.0, n_scale=1.0)
        assert eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=37)) == 0.0

    def test_two_argument_family_reduces_at_zero_context(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p, _ = random_setup(rng, CurveFamily.EXP3_1)
            nt = rng.uniform(0, 5) * p.n_scale
            v2 = eval_curve(CurveFamily.EXP3_2, p, CurveArgs(n_t=nt, n_sigma=0.0))
            v1 = eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=nt))
            assert v2 == v1

    def test_scalar_oracle_value(self):
        # 0.9 - exp(0.5 - 2.0), computed independently
        p = ParamSet(a_i=2.0, b=0.5, c=0.9, n_scale=100.0)
        got = eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=100))
        assert got == pytest.approx(0.9 - math.exp(-1.5), abs=1e-15)
        assert got == pytest.approx(0.6768698398515702, abs=1e-12)

    def test_reduction_chain(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p, _ = random_setup(rng, CurveFamily.EXP3_1)
            nt = rng.uniform(0, 4) * p.n_scale
            v3 = eval_curve(CurveFamily.EXP3_3, p, CurveArgs(n_t=nt))
            v2 = eval_curve(CurveFamily.EXP3_2, p, CurveArgs(n_t=nt))
            v1 = eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=nt))
            assert v3 == v2 == v1

    def test_monotone_and_bounded_by_asymptote(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            p, _ = random_setup(rng, CurveFamily.EXP3_3)
            p = p.replace(a_ij=abs(p.a_ij), a_sigma=abs(p.a_sigma))
            prev = -np.inf
            for nt in np.linspace(0, 20 * p.n_scale, 15):
                v = eval_curve(CurveFamily.EXP3_3, p, CurveArgs(n_t=nt, n_sigma=2 * nt, n_aux=nt))
                assert v >= prev
                assert v <= p.c
                prev = v
        # the asymptote is approached in the limit
        p = ParamSet(a_i=1.0, b=0.0, c=0.8, n_scale=1.0)
        v = eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=1e4))
        assert p.c - v < 1e-12

    def test_ilog2_domain(self):
        p = ParamSet(a_i=0.5, c=0.9, n_scale=10.0)
        with pytest.raises(DomainError):
            eval_curve(CurveFamily.ILOG2, p, CurveArgs(n_t=10.0))
        v = eval_curve(CurveFamily.ILOG2, p, CurveArgs(n_t=100.0))
        assert v == pytest.approx(0.9 - 0.5 / math.log(10.0))

    def test_arity_mismatch(self):
        p = ParamSet()
        with pytest.raises(ArityMismatchError):
            eval_curve(CurveFamily.EXP3_1, p, CurveArgs(n_t=5, n_sigma=3))
        with pytest.raises(ArityMismatchError):
            eval_curve(CurveFamily.EXP3_2, p, CurveArgs(n_t=5, n_sigma=3, n_aux=1))

    def test_scale_invariance_of_linear_rate_families(self):
        # doubling n_scale and every rate leaves values unchanged when
        # the scaled count enters the exponent linearly
        rng = np.random.default_rng(17)
        for family in EXP_FAMILIES:
            for _ in range(25):
                p, args = random_setup(rng, family)
                q = p.replace(
                    a_i=2 * p.a_i, a_ij=2 * p.a_ij, a_sigma=2 * p.a_sigma, n_scale=2 * p.n_scale
                )
                assert eval_curve(family, q, args) == pytest.approx(
                    eval_curve(family, p, args), rel=1e-14
                )
        # the 4-parameter family needs the rate scaled by 2**alpha instead
        p, args = random_setup(rng, CurveFamily.EXP4)
        q = p.replace(a_i=p.a_i * 2**p.alpha, n_scale=2 * p.n_scale)
        assert eval_curve(CurveFamily.EXP4, q, args) == pytest.approx(
            eval_curve(CurveFamily.EXP4, p, args), rel=1e-12
        )


class TestGradParams:
    def test_additive_asymptote_partial(self):
        p = ParamSet(a_i=0.0, b=0.0, c=1.0)
        g = grad_params(CurveFamily.EXP3_1, p, CurveArgs(n_t=12345))
        assert g["c"] == 1.0

    def test_freeze_mask_restricts_entries(self):
        p = ParamSet(a_i=1.0, b=0.2, c=0.9).with_freeze(("a_i",))
        g = grad_params(CurveFamily.EXP3_1, p, CurveArgs(n_t=10))
        assert list(g) == ["b", "c"]

    def test_matches_central_finite_differences(self):
        # finite-difference oracle on scaled parameters, step 1e-6
        rng = np.random.default_rng(23)
        families = list(FAMILY_PARAMS)
        for i in range(200):
            family = families[i % len(families)]
            params, args = random_setup(rng, family)
            grads = grad_params(family, params, args)
            assert list(grads) == list(free_param_names(family, params))
            for name, val in grads.items():
                h = 1e-6
                up = params.replace(**{name: params.value_of(name) + h})
                dn = params.replace(**{name: params.value_of(name) - h})
                fd = (eval_curve(family, up, args) - eval_curve(family, dn, args)) / (2 * h)
                assert val == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestMarginalGain:
    def test_zero_delta(self):
        p = ParamSet(a_i=1.0, b=0.0, c=0.9)
        assert marginal_gain(CurveFamily.EXP3_1, p, CurveArgs(n_t=10), 0.0) == 0.0

    def test_positive_rate_gives_positive_gain(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            p, _ = random_setup(rng, CurveFamily.EXP3_1)
            nt = rng.uniform(0, 2) * p.n_scale
            delta = rng.uniform(0.1, 3) * p.n_scale
            g = marginal_gain(CurveFamily.EXP3_1, p, CurveArgs(n_t=nt), delta)
            assert g > 0

    def test_scalar_oracle_value(self):
        # eval(200) - eval(100) computed independently
        p = ParamSet(a_i=2.0, b=0.5, c=0.9, n_scale=100.0)
        gain = marginal_gain(CurveFamily.EXP3_1, p, CurveArgs(n_t=100), 100, "target")
        expected = (0.9 - math.exp(0.5 - 4.0)) - (0.9 - math.exp(0.5 - 2.0))
        assert gain == pytest.approx(expected, abs=1e-15)
        assert gain == pytest.approx(0.1929327767261113, abs=1e-12)

    def test_aux_selector_needs_three_argument_family(self):
        p = ParamSet(a_i=1.0)
        with pytest.raises(ArityMismatchError):
            marginal_gain(CurveFamily.EXP3_1, p, CurveArgs(n_t=5), 1.0, "aux")
        with pytest.raises(ArityMismatchError):
            marginal_gain(CurveFamily.EXP4, p, CurveArgs(n_t=5), 1.0, "sigma")


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(31)
        for family in FAMILY_PARAMS:
            p, _ = random_setup(rng, family)
            p = p.with_freeze(("a_i", "alpha"))
            cells = serialize_params(family, p)
            fam2, p2 = deserialize_params(cells)
            assert fam2 is family
            assert p2 == p

    def test_column_layout(self):
        p = ParamSet(a_i=1.5, a_ij=-0.25, a_sigma=0.5, b=-1.0, c=0.75, alpha=2.0, n_scale=9.0)
        cells = serialize_params(CurveFamily.EXP3_3, p)
        assert cells[0] == "EXP3_3"
        assert cells[1:7] == ["1.5", "-0.25", "0.5", "-1.0", "0.75", "2.0"]
        assert cells[7] == "9.0"
        assert cells[8] == "000000"
