import math

import numpy as np
import pytest

from cfident.expr import DomainError, evaluate
from cfident.models import (
    BUILTINS,
    ModelSpec,
    acceleration,
    builtin_model,
    equilibrium_gap,
    equilibrium_ic,
)

BOUNDS = {
    "cthrv": {"k1": (0.001, 1.0), "k2": (0.01, 1.0), "tau": (0.1, 3.0)},
    "ov": {"alpha": (0.5, 3.3), "a": (10.0, 32.0), "hm": (2.0, 30.0), "b": (18.0, 45.0)},
    "ftl": {"C": (100.0, 600.0), "gamma": (1.0, 3.0)},
    "idm": {"sj": (3.0, 25.0), "vf": (21.0, 41.0), "T": (0.1, 3.0), "a": (0.1, 3.0), "b": (0.5, 5.0)},
}


@pytest.mark.parametrize("name", list(BOUNDS))
def test_bounds_match_table(name):
    m = builtin_model(name)
    assert {p.name: (p.lower, p.upper) for p in m.params} == BOUNDS[name]


def test_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        builtin_model("gipps")


def test_display_aliases():
    assert builtin_model("CTH-RV") is builtin_model("cthrv")


def test_cthrv_acceleration_at_reference_point():
    # k1(s - tau v) + k2(u - v) = 0.01*(40 - 46.2) + 0.12*(-3)
    assert acceleration(builtin_model("cthrv"), (40, 33), 30, (0.01, 0.12, 1.4)) == pytest.approx(-0.422, abs=1e-12)


def test_cthrv_equilibrium_example():
    x = equilibrium_ic(builtin_model("cthrv"), 31.0, (0.0216, 0.1943, 1.2293))
    assert (x.s, x.v) == pytest.approx((38.1083, 31.0))
    assert round(x.s, 1) == 38.1


def test_cthrv_standstill():
    x = equilibrium_ic(builtin_model("cthrv"), 0.0, (0.1, 0.1, 1.0))
    assert (x.s, x.v) == (0.0, 0.0)


def test_idm_equilibrium_example():
    m = builtin_model("idm")
    theta = dict(sj=10, vf=35, T=1.5, a=1.3, b=2.0)
    x = equilibrium_ic(m, 30.0, theta)
    assert abs(acceleration(m, x, 30.0, theta)) <= 1e-9


def test_ftl_needs_explicit_gap_and_rejects_zero():
    m = builtin_model("ftl")
    assert equilibrium_gap(m, 30.0, (300, 2)) is None
    with pytest.raises(ValueError):
        equilibrium_ic(m, 30.0, (300, 2))
    assert equilibrium_ic(m, 30.0, (300, 2), s0=25.0).s == 25.0
    with pytest.raises(DomainError):
        acceleration(m, (0.0, 30.0), 30.0, (300, 2))


def test_idm_needs_lead_below_free_speed():
    with pytest.raises((DomainError, ValueError)):
        equilibrium_ic(builtin_model("idm"), 40.0, dict(sj=10, vf=35, T=1.5, a=1.3, b=2.0))


def test_ov_atanh_domain():
    # the equilibrium gap exists only for lead speeds the OV curve can reach
    m = builtin_model("ov")
    theta = dict(alpha=1.0, a=10.0, hm=20.0, b=20.0)
    with pytest.raises((DomainError, ValueError)):
        equilibrium_ic(m, 35.0, theta)


def _draws(m, rng, n):
    lo, hi = m.lower, m.upper
    out = []
    while len(out) < n:
        theta = rng.uniform(lo, hi)
        u0 = rng.uniform(0.0, 40.0)
        s0 = rng.uniform(1.0, 100.0) if m.equilibrium_gap is None else None
        try:
            x = equilibrium_ic(m, u0, theta, s0)
        except (DomainError, ValueError):
            continue
        out.append((theta, u0, x))
    return out


@pytest.mark.parametrize("name", list(BUILTINS))
def test_equilibrium_consistency_1000_draws(name):
    m = builtin_model(name)
    rng = np.random.default_rng(7)
    worst = 0.0
    for theta, u0, x in _draws(m, rng, 1000):
        assert x.v == u0
        if x.s == 0.0:
            continue
        worst = max(worst, abs(acceleration(m, x, u0, theta)))
    assert worst <= 1e-9


def test_ov_optimal_velocity_increases_with_gap():
    m = builtin_model("ov")
    rng = np.random.default_rng(3)
    s = np.linspace(0.0, 150.0, 301)
    for _ in range(200):
        th = m.theta_dict(rng.uniform(m.lower, m.upper))
        # acceleration at v = 0 is alpha*V(s), so V is monotone iff this is
        acc = [acceleration(m, (si, 0.0), 0.0, th) for si in s]
        assert np.all(np.diff(acc) > 0)


def test_check_bounds():
    m = builtin_model("cthrv")
    assert m.in_bounds((0.5, 0.5, 1.0))
    assert not m.in_bounds((0.0, 0.5, 1.0))
    with pytest.raises(ValueError):
        m.check_bounds((0.5, 0.5, 5.0))


def test_custom_model_round_trip():
    d = {
        "name": "lin",
        "params": [{"name": "k", "lower": 0.1, "upper": 2.0}, {"name": "h", "lower": 0.5, "upper": 3.0}],
        "dynamics": "k*(s - h*v) + (u - v)",
        "equilibrium_gap": "h*u",
    }
    m = ModelSpec.from_dict(d)
    again = ModelSpec.from_dict(m.to_dict())
    assert again.f_cf is m.f_cf and again.equilibrium_gap is m.equilibrium_gap
    x = equilibrium_ic(m, 20.0, (1.0, 1.5))
    assert x.s == pytest.approx(30.0)


@pytest.mark.parametrize(
    "d, msg",
    [
        ({"name": "x", "params": [{"name": "s", "lower": 0, "upper": 1}], "dynamics": "s"}, "reserved"),
        ({"name": "x", "params": [], "dynamics": "k*u"}, "unknown"),
        ({"name": "x", "params": [{"name": "k", "lower": 2, "upper": 1}], "dynamics": "k*u"}, "lower"),
        ({"name": "x", "params": [{"name": "k", "lower": 0, "upper": 1}]}, "dynamics"),
    ],
)
def test_custom_model_validation(d, msg):
    with pytest.raises(Exception, match=msg):
        ModelSpec.from_dict(d)


def test_idm_uses_approach_rate():
    # closing in (v > u) must brake harder than drifting back at the same gap
    m = builtin_model("idm")
    th = dict(sj=5, vf=35, T=1.2, a=1.0, b=2.0)
    closing = acceleration(m, (40.0, 25.0), 20.0, th)
    opening = acceleration(m, (40.0, 25.0), 30.0, th)
    assert closing < opening


def test_dynamics_reference_only_states_input_params():
    for name in BUILTINS:
        m = builtin_model(name)
        from cfident.expr import free_symbols

        assert free_symbols(m.f_cf) <= {"s", "v", "u", *m.param_names}
        assert math.isfinite(evaluate(m.f_cf, {"s": 30.0, "v": 25.0, "u": 26.0, **m.theta_dict((m.lower + m.upper) / 2)}))
