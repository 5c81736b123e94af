import math

import numpy as np
import pytest

import rstensor as rt
from rstensor.errors import CapabilityError, DomainError
from rstensor.kernels import QuadratureRule

from conftest import with_split

NEWTON = rt.RadialKernel("newton")


def expansion_sup_err(rule, kernel, r):
    vals = rt.eval_expansion(rule, r)
    exact = kernel(r)
    return float(np.max(np.abs(vals - exact) / np.abs(exact)))


def test_mesh_parameter_formula():
    rule = rt.build_quadrature(NEWTON, 10)
    assert rule.h_M == pytest.approx(3.0 * math.log(10) / 10)
    assert rule.h_M == pytest.approx(0.690776, abs=1e-6)


def test_rule_invariants():
    rule = rt.build_quadrature(NEWTON, 25)
    assert rule.nodes[0] == 0.0
    assert np.all(np.diff(rule.nodes) > 0)
    assert np.all(rule.weights > 0)
    assert rule.rank == 26
    assert rule.symmetric_folded


def test_degenerate_two_term_rule():
    rule = rt.build_quadrature(NEWTON, 1)
    assert rule.rank == 2
    assert rule.nodes[0] == 0.0 and rule.nodes[1] > 0


def test_single_node_rule_is_constant():
    kernel = rt.RadialKernel("gaussian", lam=1.0)
    rule = QuadratureRule(
        kernel=kernel, M=1, C0=3.0, h_M=1.0,
        nodes=np.array([0.0]), weights=np.array([0.7]),
        r_range=(0.1, 10.0), symmetric_folded=False,
    )
    for r in (0.3, 1.0, 7.0):
        assert rt.eval_expansion(rule, r) == pytest.approx(0.7)


def test_newton_value_at_one():
    rule = rt.build_quadrature(NEWTON, 25)
    assert rt.eval_expansion(rule, 1.0) == pytest.approx(1.0, abs=1e-4)


def test_newton_scaling_check():
    rule = rt.build_quadrature(NEWTON, 25)
    for r in (0.5, 2.0, 5.0):
        assert rt.eval_expansion(rule, 2 * r) == pytest.approx(1 / (2 * r), abs=1e-4 / (2 * r))


def test_expansion_rejects_nonpositive():
    rule = rt.build_quadrature(NEWTON, 10)
    with pytest.raises(DomainError):
        rt.eval_expansion(rule, 0.0)
    with pytest.raises(DomainError):
        rt.eval_expansion(rule, -1.0)


def test_accuracy_improves_with_M():
    r = np.geomspace(0.1, 20, 2000)
    e20 = expansion_sup_err(rt.build_quadrature(NEWTON, 20), NEWTON, r)
    e30 = expansion_sup_err(rt.build_quadrature(NEWTON, 30), NEWTON, r)
    assert e30 <= e20


def test_yukawa_slater_expansions():
    r = np.geomspace(0.1, 20, 2000)
    for kernel in (rt.RadialKernel("yukawa", 1.0), rt.RadialKernel("slater", 1.5)):
        rule = rt.build_quadrature(kernel, 35)
        assert expansion_sup_err(rule, kernel, r) <= 1e-3
        assert rule.nodes[0] == 0.0
        assert rule.weights[0] == 0.0  # density vanishes at the origin node


def test_gaussian_is_rank_one():
    kernel = rt.RadialKernel("gaussian", lam=2.5)
    rule = rt.build_quadrature(kernel, 25)
    assert rule.rank == 1
    r = np.geomspace(0.1, 5, 500)
    assert expansion_sup_err(rule, kernel, r) < 1e-12


def test_unknown_kernel_rejected():
    with pytest.raises(CapabilityError):
        rt.RadialKernel("coulomb")


def test_projection_zero_node_integral_entries(grid64):
    rule = rt.build_quadrature(NEWTON, 8)
    ref = rt.project_kernel(rule, grid64)
    # the t=0 column integrates 1 over each cell: every raw entry equals h
    u = ref.tensor.factors[0][:, 0]
    raw = u * (ref.tensor.weights[0] / rule.weights[0]) ** (1 / 3)
    assert np.allclose(raw, grid64.h, rtol=1e-12)


def test_projection_vectors_symmetric_positive(grid64):
    rule = rt.build_quadrature(NEWTON, 19)
    ref = rt.project_kernel(rule, grid64)
    u = ref.tensor.factors[0]
    n = grid64.n
    # mathematically positive; sharp Gaussian tails underflow to exact zero
    assert np.all(u >= 0)
    assert np.all(u[n // 2, :] > 0)
    # node lattice symmetry: entry(i) = entry(n - i) for i >= 1
    for k in range(ref.R):
        col = u[:, k]
        assert np.allclose(col[1:], col[1:][::-1], rtol=1e-12)
        # radially non-increasing; the t=0 column is constant, the rest
        # peak at the origin index n/2
        if k > 0:
            assert col.argmax() == n // 2
        assert np.all(np.diff(col[n // 2:]) <= 1e-15)


def test_projection_modes_share_vectors(grid64):
    rule = rt.build_quadrature(NEWTON, 10)
    ref = rt.project_kernel(rule, grid64)
    assert ref.tensor.factors[0] is ref.tensor.factors[1]
    assert ref.tensor.factors[0] is ref.tensor.factors[2]


def test_collocation_center_entry_matches_direct_sum(box20):
    grid = rt.Grid3(128, box20)
    rule = rt.build_quadrature(NEWTON, 25, r_range=(grid.h / 2, 70.0))
    ref = rt.project_kernel(rule, grid, entry_rule="collocation")
    # probe a point off the singular center
    i = (70, 66, 64)
    x = grid.coords()[list(i)]
    direct = float(np.sum(rule.weights * np.exp(-rule.nodes ** 2 * np.sum(x * x)))) * grid.h ** 3
    got = rt.eval_canonical(ref.tensor, i)
    assert got == pytest.approx(direct, rel=1e-12)
    assert ref.pointwise_value((6, 2, 0)) == pytest.approx(direct / grid.h ** 3, rel=1e-12)


def test_split_rank_trivial_cases(grid64):
    rule = rt.build_quadrature(NEWTON, 19)
    ref = rt.project_kernel(rule, grid64)
    # delta above the k=0 weight: the first term already passes
    assert rt.split_rank(ref, sigma=1.0, delta=min(0.5, rule.weights[0] * 1.01)) == 0
    # huge sigma: every decaying Gaussian is below delta; only the constant
    # k=0 term can keep R_l above 0
    r_l = rt.split_rank(ref, sigma=1e9, delta=1e-4)
    assert r_l <= 1


def test_split_rank_no_term_passes_warns(grid64):
    rule = rt.build_quadrature(NEWTON, 12)
    ref = rt.project_kernel(rule, grid64)
    with pytest.warns(UserWarning):
        r_l = rt.split_rank(ref, sigma=1e-9, delta=1e-12)
    assert r_l == ref.R - 1


def test_split_rank_monotone(grid64):
    rule = rt.build_quadrature(NEWTON, 25, r_range=(grid64.h / 2, 70.0))
    ref = rt.project_kernel(rule, grid64)
    sigmas = [0.3, 0.6, 0.9, 1.5, 3.0]
    with np.errstate(all="ignore"):
        import warnings as _w
        with _w.catch_warnings():
            _w.simplefilter("ignore")
            ranks = [rt.split_rank(ref, s, 1e-4) for s in sigmas]
    # more admissible short-range support means fewer long-range terms
    assert all(a >= b for a, b in zip(ranks, ranks[1:]))
    deltas = [1e-2, 1e-3, 1e-4, 1e-5]
    ranks_d = [rt.split_rank(ref, 0.9, d) for d in deltas]
    assert all(a <= b for a, b in zip(ranks_d, ranks_d[1:]))


def test_split_rank_criteria_match_their_formulas(grid64):
    import warnings
    from scipy.special import erf

    rule = rt.build_quadrature(NEWTON, 25, r_range=(0.02, 70.0))
    ref = rt.project_kernel(rule, grid64)
    t, a = rule.nodes, rule.weights
    for sigma, delta in ((0.9, 1e-4), (1.5, 1e-3), (0.5, 1e-2)):
        crit_max = a * np.exp(-t * t * sigma * sigma)
        mass = np.where(t > 0, np.sqrt(np.pi) * erf(t * sigma) / np.where(t > 0, t, 1.0), 2 * sigma)
        crit_l1 = a * mass ** 3
        for crit, name in ((crit_max, "max_norm"), (crit_l1, "l1_norm")):
            below = np.nonzero(crit <= delta)[0]
            expected = int(below[0]) if below.size else ref.R - 1
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert rt.split_rank(ref, sigma, delta, name) == expected


def test_split_exactness_small_grid(ref64_doubled):
    ref = ref64_doubled
    dense_ref = ref.tensor.dense(limit=2 * ref.grid.n ** 3)
    for r_l in (0, 7, ref.R - 1):
        short, long = rt.split_tensor(ref, r_l)
        total = long.dense(limit=2 * ref.grid.n ** 3)
        if short.rank:
            total = total + short.dense(limit=2 * ref.grid.n ** 3)
        assert np.max(np.abs(total - dense_ref)) <= 1e-14 * np.abs(dense_ref).max()


def test_split_full_long_gives_empty_short(ref64_doubled):
    short, long = rt.split_tensor(ref64_doubled, ref64_doubled.R - 1)
    assert short.rank == 0
    assert long.rank == ref64_doubled.R


def test_effective_support_empty():
    empty = rt.CanonicalTensor.empty((9, 9, 9))
    assert rt.effective_support(empty, 1e-4, 0.1) == 0


def test_effective_support_closed_form(grid64):
    # single Gaussian term, pointwise scale: a * exp(-(t*gamma*h)^2) = delta
    h = grid64.h
    n = grid64.n
    t = 0.9
    a = 2.0
    coords = grid64.coords()
    col = np.exp(-t * t * coords * coords) * h
    tensor = rt.CanonicalTensor(np.array([a / h ** 2]), (col[:, None],) * 3).normalize()
    delta = 1e-4
    gamma = rt.effective_support(tensor, delta, h)
    predicted = math.sqrt(math.log(a * h / delta)) / (t * h)
    assert gamma == int(predicted) or gamma == int(predicted) + 1


def test_effective_support_scales_with_split(ref64_doubled):
    short_lo, _ = rt.split_tensor(ref64_doubled, 12)
    short_hi, _ = rt.split_tensor(ref64_doubled, 16)
    h = ref64_doubled.grid.h
    g_lo = rt.effective_support(short_lo, 1e-4, h)
    g_hi = rt.effective_support(short_hi, 1e-4, h)
    assert g_hi <= g_lo


def test_self_value_requires_split(ref64_doubled):
    with pytest.raises(rt.ConfigError):
        ref64_doubled.self_value()
    ref = with_split(ref64_doubled, 10)
    direct = ref.pointwise_value((0, 0, 0), terms=slice(0, 11))
    assert ref.self_value() == pytest.approx(direct, rel=0, abs=0)
