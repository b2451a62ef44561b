"""Attack-transform tests: arithmetic, causality, warm-up, and slope factors."""

import numpy as np
import pytest

from rtplab.attacks import AttackGroup, AttackSpec, apply_attack, choose_compromised, mu_ceo
from rtplab.models import CeoDemand

# frozen with a 40-digit evaluation oracle: 0.57**-1.8
MU_057 = 2.7505862002136393


def price_at(spec, prices, k, start=None):
    out = apply_attack(spec, prices, k, start=start)
    assert len(out) == 1
    return out[0]


class TestScaling:
    def test_scales_current_price(self):
        spec = AttackSpec(kind="scaling", rho=1.0, gamma=0.57, start_k=0)
        assert price_at(spec, [20.0], 0) == pytest.approx(11.4, abs=1e-12)

    def test_unit_gamma_is_identity(self):
        spec = AttackSpec(kind="scaling", rho=0.5, gamma=1.0, start_k=0)
        prices = [21.0, 19.5, 20.0]
        for k in range(3):
            assert price_at(spec, prices, k) == prices[k]

    def test_before_launch_sees_true_price(self):
        spec = AttackSpec(kind="scaling", rho=1.0, gamma=0.5, start_k=2)
        prices = [21.0, 20.0, 19.0]
        assert price_at(spec, prices, 1) == 20.0
        assert price_at(spec, prices, 2) == 9.5


class TestDelay:
    def test_exact_index_shift(self):
        spec = AttackSpec(kind="delay", rho=1.0, tau=2, start_k=0)
        prices = [21.0, 20.5, 20.1, 20.0, 19.9]
        for k in range(2, 5):
            assert price_at(spec, prices, k) == prices[k - 2]

    def test_warmup_serves_initial_price(self):
        spec = AttackSpec(kind="delay", rho=1.0, tau=3, start_k=0)
        prices = [21.0, 20.0, 19.0, 18.0]
        assert price_at(spec, prices, 0) == 21.0
        assert price_at(spec, prices, 2) == 21.0
        assert price_at(spec, prices, 3) == prices[0]

    def test_buffer_exactness_after_warmup(self):
        rng = np.random.default_rng(2)
        prices = list(rng.uniform(5.0, 50.0, 40))
        spec = AttackSpec(kind="delay", rho=0.8, tau=5, start_k=10)
        for k in range(15, 40):
            assert price_at(spec, prices, k) == prices[k - 5]  # bit exact

    def test_zero_delay_disallowed(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="delay", rho=1.0, tau=0)

    def test_causality(self):
        # compromised price at k is unchanged by whatever happens after k
        spec = AttackSpec(kind="delay", rho=1.0, tau=4, start_k=0)
        a = [21.0, 20.0, 19.5, 19.2, 19.1, 19.0, 18.0]
        b = a[:5] + [99.0, 1.0]
        for k in range(5):
            assert price_at(spec, a, k) == price_at(spec, b, k)


class TestScaledDelay:
    def test_reduces_to_delay_at_unit_gamma(self):
        prices = [21.0, 20.0, 19.0, 18.5]
        d = AttackSpec(kind="delay", rho=1.0, tau=2, start_k=0)
        sd = AttackSpec(kind="scaled_delay", rho=1.0, tau=2, gamma=1.0, start_k=0)
        for k in range(4):
            assert price_at(sd, prices, k) == price_at(d, prices, k)

    def test_combines_scale_and_stale_price(self):
        spec = AttackSpec(kind="scaled_delay", rho=1.0, tau=1, gamma=0.6, start_k=0)
        prices = [30.0, 20.0]
        assert price_at(spec, prices, 1) == pytest.approx(18.0, abs=1e-12)


class TestLaunchGating:
    def test_never_started_is_honest(self):
        spec = AttackSpec(kind="scaling", rho=1.0, gamma=0.1, start_k=10**9)
        prices = [21.0, 20.0, 19.0]
        for k in range(3):
            assert price_at(spec, prices, k) == prices[k]

    def test_unresolved_auto_start_is_honest(self):
        spec = AttackSpec(kind="delay", rho=1.0, tau=2, start_k=None)
        prices = [21.0, 20.0, 19.0]
        assert price_at(spec, prices, 2) == 19.0
        assert price_at(spec, prices, 2, start=1) == 21.0

    def test_none_kind_returns_no_groups(self):
        assert apply_attack(AttackSpec(kind="none"), [20.0], 0) == []


class TestComposite:
    def test_per_group_prices(self):
        spec = AttackSpec(
            kind="composite",
            start_k=0,
            groups=(
                AttackGroup(fraction=0.3, kind="scaling", gamma=0.5),
                AttackGroup(fraction=0.4, kind="delay", tau=1),
            ),
        )
        prices = [30.0, 20.0]
        assert apply_attack(spec, prices, 1) == [10.0, 30.0]

    def test_overlapping_groups_rejected(self):
        with pytest.raises(ValueError):
            AttackSpec(
                kind="composite",
                groups=(
                    AttackGroup(fraction=0.6, kind="scaling", gamma=0.5),
                    AttackGroup(fraction=0.5, kind="delay", tau=1),
                ),
            )

    def test_empty_composite_rejected(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="composite", groups=())


class TestMuCeo:
    def test_identity(self):
        assert mu_ceo(1.0, -0.8) == 1.0

    def test_matches_high_precision_oracle(self):
        assert mu_ceo(0.57, -0.8) == pytest.approx(MU_057, rel=1e-14)
        # the coarse 4-digit value in circulation is within rounding of it
        assert mu_ceo(0.57, -0.8) == pytest.approx(2.7509, abs=5e-4)

    def test_decomposability_of_ceo_slope(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            eps = rng.uniform(-0.99, -0.01)
            dem = CeoDemand(scale=rng.uniform(1, 1e4), elasticity=eps)
            gamma = rng.uniform(0.05, 3.0)
            lam = rng.uniform(0.5, 150.0)
            assert dem.slope(gamma * lam) / dem.slope(lam) == pytest.approx(
                mu_ceo(gamma, eps), rel=1e-9
            )

    def test_gamma_mu_above_one_iff_price_reduction(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            eps = rng.uniform(-0.99, -0.01)
            gamma = rng.uniform(0.05, 3.0)
            if np.isclose(gamma, 1.0):
                continue
            assert (gamma * mu_ceo(gamma, eps) > 1.0) == (gamma < 1.0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            mu_ceo(0.0, -0.5)
        with pytest.raises(ValueError):
            mu_ceo(0.5, -1.2)


class TestChooseCompromised:
    def test_size_and_determinism(self):
        a = choose_compromised(1000, 0.65, np.random.default_rng(9))
        b = choose_compromised(1000, 0.65, np.random.default_rng(9))
        assert a.size == 650
        assert np.array_equal(a, b)
        assert np.unique(a).size == a.size

    def test_full_compromise(self):
        idx = choose_compromised(10, 1.0, np.random.default_rng(0))
        assert sorted(idx.tolist()) == list(range(10))
