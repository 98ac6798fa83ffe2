import numpy as np
import pytest
import sympy as sp

from cfident.expr import evaluate
from cfident.models import BUILTINS, builtin_model
from cfident.structural import (
    GAP,
    GAP_AND_SPEED,
    augment,
    build_oi,
    equilibrium_mode,
    extended_lie,
    fixed_point_mode,
    generic_mode,
    generic_rank,
    lie_series,
    matrix_rank,
    numeric_rank,
    oi_matrix,
    relation_mode,
    render_table1,
    table1,
)

# --- independent sympy construction -------------------------------------------------

S, V, U = sp.symbols("s v u")


def _sympy_model(name):
    if name == "cthrv":
        k1, k2, tau = p = sp.symbols("k1 k2 tau")
        return p, k1 * (S - tau * V) + k2 * (U - V)
    if name == "ov":
        alpha, a, hm, b = p = sp.symbols("alpha a hm b")
        return p, alpha * (a * (sp.tanh((S - hm) / b) + sp.tanh(hm / b)) - V)
    if name == "ftl":
        C, g = p = sp.symbols("C gamma")
        return p, C * (U - V) / S**g
    sj, vf, T, a, b = p = sp.symbols("sj vf T a b")
    star = sj + V * T + V * (V - U) / (2 * sp.sqrt(a * b))
    return p, a * (1 - (V / vf) ** 4 - (star / S) ** 2)


def _sympy_lies(name, output, order):
    params, f_cf = _sympy_model(name)
    us = sp.symbols(f"u0:{order + 2}")
    f_cf = f_cf.subs(U, us[0])
    x = [S, V, *params]
    f = [us[0] - V, f_cf] + [0] * len(params)
    outs = [S] if output == GAP else [S, V]
    series = []
    for g in outs:
        L = [g]
        for _ in range(order):
            h = L[-1]
            nxt = sum(sp.diff(h, xi) * fi for xi, fi in zip(x, f))
            nxt += sum(sp.diff(h, us[j]) * us[j + 1] for j in range(order))
            L.append(nxt)
        series.append(L)
    return x, us, series


def _binding(m, rng, J):
    th = rng.uniform(m.lower, m.upper)
    b = {"s": rng.uniform(20, 80), "v": rng.uniform(10, 30), **m.theta_dict(th)}
    names = augment(m, GAP, J).inputs
    b[names[0]] = rng.uniform(10, 30)
    for n in names[1:]:
        b[n] = rng.uniform(-2, 2)
    return b


def _sympy_subs(m, b, J):
    names = augment(m, GAP, J).inputs
    sub = {S: b["s"], V: b["v"]}
    params, _ = _sympy_model(m.name)
    sub.update({p: b[n] for p, n in zip(params, m.param_names)})
    sub.update({sp.Symbol(f"u{j}"): b[n] for j, n in enumerate(names)})
    return sub


ORDERS = {"cthrv": 4, "ftl": 4, "ov": 4, "idm": 3}


@pytest.mark.parametrize("name", list(BUILTINS))
def test_lie_derivatives_match_sympy(name):
    m = builtin_model(name)
    order = ORDERS[name]
    J = max(order + 1, m.n_params + 1)
    sys_ = augment(m, GAP, J)
    ours = lie_series(sys_, sys_.g[0], order)
    _, _, (ref,) = _sympy_lies(name, GAP, order)
    rng = np.random.default_rng(11)
    for _ in range(5):
        b = _binding(m, rng, J)
        sub = _sympy_subs(m, b, J)
        for i in range(order + 1):
            want = float(ref[i].evalf(subs=sub))
            got = evaluate(ours[i], b)
            assert got == pytest.approx(want, rel=1e-9, abs=1e-9), (name, i)


@pytest.mark.parametrize("name", ["cthrv", "ftl"])
@pytest.mark.parametrize("output", [GAP, GAP_AND_SPEED])
def test_oi_matrix_matches_sympy_jacobian(name, output):
    m = builtin_model(name)
    M = oi_matrix(m, output)
    n_aug = M.shape[1]
    x, _, series = _sympy_lies(name, output, n_aug - 1)
    rows = [sp.Matrix([L[i]]).jacobian(x) for L in series for i in range(n_aug)]  # output by output
    rng = np.random.default_rng(5)
    for _ in range(3):
        b = _binding(m, rng, M.sys.J)
        sub = _sympy_subs(m, b, M.sys.J)
        want = np.array([[float(e.evalf(subs=sub)) for e in r] for r in rows])
        got = M.evaluate(b)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


# --- reference values -----------------------------------------------------------------

REFERENCE_OI = np.array(
    [
        [1, 0, 0, 0, 0],
        [0, -1, 0, 0, 0],
        [-0.0100, 0.134, 6.20, 3.00, 0.330],
        [0.00134, -0.00796, 1.579, -0.824, -0.0484],
        [-0.0000796, -0.000274, -0.658, 0.107, 0.003456],
    ]
)
REFERENCE_POINT = {"k1": 0.01, "k2": 0.12, "tau": 1.4, "u": 30.0, "v": 33.0, "s": 40.0}


def sig3(a):
    a = np.asarray(a, float)
    out = np.zeros_like(a)
    nz = a != 0
    mag = np.floor(np.log10(np.abs(a[nz])))
    out[nz] = np.round(a[nz] / 10**mag, 2) * 10**mag
    return out


def _reference_matrix():
    M = oi_matrix(builtin_model("cthrv"), GAP)
    b = dict(REFERENCE_POINT)
    b.update({n: 0.0 for n in M.sys.inputs[1:]})
    return M, M.evaluate(b), b


def test_reference_oi_matrix():
    M, A, b = _reference_matrix()
    assert M.columns == ["s", "v", "k1", "k2", "tau"]
    np.testing.assert_allclose(sig3(A), sig3(REFERENCE_OI), rtol=1e-12, atol=0)
    assert numeric_rank(M, b) == 5


def test_reference_printed_entries():
    _, A, _ = _reference_matrix()
    assert round(A[2, 2], 2) == 6.20
    assert round(A[3, 3], 3) == -0.824


def test_cthrv_first_lie_derivatives():
    m = builtin_model("cthrv")
    sys_ = augment(m, GAP, 4)
    L1, L2 = (extended_lie(sys_, sys_.g[0], i) for i in (1, 2))
    b = {"s": 40.0, "v": 33.0, "u": 30.0, "k1": 0.01, "k2": 0.12, "tau": 1.4, "u_1": 0.0}
    assert evaluate(L1, b) == pytest.approx(-3.0)
    assert evaluate(L2, b) == pytest.approx(0.12 * 3 - 0.01 * (40 - 1.4 * 33))
    assert extended_lie(sys_, sys_.g[0], 0) is sys_.g[0]


def test_augment_shapes():
    sys_ = augment(builtin_model("cthrv"), GAP, 4)
    assert sys_.n_aug == 5 and all(evaluate(fi, {}) == 0 for fi in sys_.f[2:])
    assert augment(builtin_model("ftl"), GAP).n_aug == 4
    idm = augment(builtin_model("idm"), GAP_AND_SPEED)
    assert idm.n_aug == 7 and len(idm.g) == 2
    with pytest.raises(ValueError):
        augment(builtin_model("cthrv"), GAP, 2)


def test_build_oi_first_rows():
    M = build_oi(augment(builtin_model("cthrv"), GAP, 4))
    A = M.evaluate({**REFERENCE_POINT, "u_1": 0.5, "u_2": 0.1, "u_3": 0.0, "u_4": 0.0})
    np.testing.assert_array_equal(A[:2], [[1, 0, 0, 0, 0], [0, -1, 0, 0, 0]])
    assert build_oi(augment(builtin_model("ftl"), GAP)).shape == (4, 4)


def test_equilibrium_constant_input_loses_gains():
    m = builtin_model("cthrv")
    rep = generic_rank(oi_matrix(m), equilibrium_mode(m), 0)
    assert rep.generic_rank == 3 and not rep.full
    assert sorted(rep.unidentifiable) == ["k1", "k2"]


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_headway_manifold_hides_k1(degree):
    m = builtin_model("cthrv")
    mode = relation_mode({"tau": "s/v", "k2": "v/s"}, "headway-manifold")
    rep = generic_rank(oi_matrix(m), mode, degree)
    assert rep.generic_rank == 4
    assert rep.unidentifiable == ["k1"]


# --- properties ---------------------------------------------------------------------


def test_rank_helpers():
    assert matrix_rank(np.eye(3)) == 3
    assert matrix_rank(np.diag([1.0, 1.0, 1e-12])) == 2
    assert matrix_rank(np.zeros((2, 2))) == 0


@pytest.mark.parametrize("name", list(BUILTINS))
def test_rank_monotone_in_input_degree(name):
    m = builtin_model(name)
    M = oi_matrix(m)
    for mode in (generic_mode(), equilibrium_mode(m)):
        ranks = [generic_rank(M, mode, n, trials=10).generic_rank for n in range(4)]
        assert ranks == sorted(ranks), (name, mode.name, ranks)


def test_deterministic_for_seed():
    m = builtin_model("ov")
    M = oi_matrix(m)
    a = generic_rank(M, equilibrium_mode(m), 0, seed=3).to_dict()
    b = generic_rank(M, equilibrium_mode(m), 0, seed=3).to_dict()
    assert a == b


@pytest.mark.parametrize("name", ["cthrv", "ov", "idm"])
def test_column_removal_is_sound(name):
    # every flagged column is in the span of the others at a concrete point of the mode
    m = builtin_model(name)
    M = oi_matrix(m)
    rep = generic_rank(M, equilibrium_mode(m), 0, seed=1)
    assert rep.unidentifiable
    rng = np.random.default_rng(2)
    theta = m.theta_dict(rng.uniform(m.lower, m.upper) * 0.5 + (m.lower + m.upper) * 0.25)
    u0 = 18.0
    from cfident.models import equilibrium_ic

    x = equilibrium_ic(m, u0, theta)
    b = {"s": x.s, "v": x.v, "u": u0, **theta}
    b.update({n: 0.0 for n in M.sys.inputs[1:]})
    A = M.evaluate(b)[: rep.rows]
    r = matrix_rank(A)
    assert r == rep.generic_rank
    for name_ in rep.unidentifiable:
        j = M.columns.index(name_)
        assert matrix_rank(np.delete(A, j, axis=1)) == r


def test_full_rank_flags_nothing():
    m = builtin_model("ftl")
    rep = generic_rank(oi_matrix(m), generic_mode(), 0)
    assert rep.full and rep.unidentifiable == []


def test_fixed_point_mode_reproduces_reference_rank():
    m = builtin_model("cthrv")
    mode = fixed_point_mode(m, 40.0, 33.0, (0.01, 0.12, 1.4), 30.0)
    assert generic_rank(oi_matrix(m), mode, 0, trials=3).generic_rank == 5


def test_strict_row_count_leaves_ov_equilibrium_deficient():
    # documents why further Lie orders are admitted: with exactly n_aug gap rows
    # the OV equilibrium rank never reaches full
    m = builtin_model("ov")
    M = oi_matrix(m)
    for n in range(3):
        assert not generic_rank(M, equilibrium_mode(m), n, max_extra=0).full
    assert generic_rank(M, equilibrium_mode(m), 1).full


def test_degree_above_housed_derivatives_is_rejected():
    m = builtin_model("cthrv")
    with pytest.raises(ValueError):
        generic_rank(oi_matrix(m), generic_mode(), 50)


@pytest.mark.slow
def test_gap_and_speed_gives_same_table():
    models = [builtin_model(n) for n in BUILTINS]
    a = [(r.generic, r.equilibrium) for r in table1(models, GAP)]
    b = [(r.generic, r.equilibrium) for r in table1(models, GAP_AND_SPEED)]
    assert a == b


def test_render_table1_layout():
    rows = table1([builtin_model("ftl")], GAP)
    text = render_table1(rows)
    assert "FTL" in text and "N/A" in text and "n>=0" in text
