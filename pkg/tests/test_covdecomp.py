"""Finite-range decomposition: exactness, support, symmetry, diagnostics."""

import math
import os
from fractions import Fraction

import numpy as np
import pytest

from rgwsaw import covdecomp, lattice
from rgwsaw.covdecomp import (
    CovSlice,
    DecompConfig,
    DecompositionError,
    build_decomposition,
    bubble_increment,
    bubble_sum_closed,
    beta_surrogate,
    canonical,
    export_slice,
    import_slice,
    orbit_size,
    range_radius,
    range_truncated_green,
    return_counts,
    w1_closed,
    w1_sum,
    walk_count_at,
    walk_counts,
)


# -- walk counts ----------------------------------------------------------------


def test_walk_count_examples():
    tabs = walk_counts(4, 3)
    assert tabs[1].count((1, 0, 0, 0)) == 1
    assert tabs[2].count((0, 0, 0, 0)) == 8
    assert tabs[2].count((1, 1, 0, 0)) == 2
    assert tabs[0].count((0, 0, 0, 0)) == 1


@pytest.mark.parametrize("n", [0, 1, 2, 3, 5, 8])
def test_walk_count_totals_and_parity(n):
    tab = walk_counts(4, 8)[n]
    assert tab.total() == 8**n
    # support radius and parity constraints
    assert tab.count((n + 1,) + (0,) * 3) == 0
    wrong_parity = (n - 1,) + (0,) * 3 if n >= 1 else (1, 0, 0, 0)
    if n >= 1:
        assert sum(abs(c) for c in wrong_parity) % 2 != n % 2 or n == 1
    assert tab.count((1, 0, 0, 0)) == 0 if n % 2 == 0 else True


def test_walk_count_at_matches_tables():
    # dual route: dimension-splitting column vs iterated adjacency tables
    tabs = walk_counts(4, 10)
    for x in [(0, 0, 0, 0), (1, 0, 0, 0), (2, 1, 1, 0), (3, 3, 2, 2), (1, 1, 1, 1)]:
        col = walk_count_at(4, x, 10)
        for n in range(11):
            assert col[n] == tabs[n].count(x), (x, n)


def test_walk_count_at_other_dimensions():
    # d = 1: binomial counts
    col = walk_count_at(1, (2,), 6)
    assert col == [0, 0, 1, 0, 4, 0, 15]
    # d = 2 return counts: central binomial squared
    col = walk_count_at(2, (0, 0), 6)
    assert col[2] == 4 and col[4] == 36 and col[6] == 400


def test_orbit_sizes_cover_ball():
    space = covdecomp._rep_space(4, 5)
    total = sum(orbit_size(r, 4) for r in space.reps)
    # |l1 ball radius 5 in Z^4| = sum_k 2^k C(4,k) C(5,k)
    expected = sum(2**k * math.comb(4, k) * math.comb(5, k) for k in range(5))
    assert total == expected


def test_canonical_form():
    assert canonical((-3, 1, 0, 2)) == (3, 2, 1, 0)
    assert canonical((0, 0, 0, 0)) == (0, 0, 0, 0)


# -- truncated Green function -------------------------------------------------------


def test_range_truncated_green_r0():
    t = range_truncated_green(4, 1.0, 0)
    assert t.value_at((0, 0, 0, 0)) == pytest.approx(1.0 / 9.0, abs=1e-16)
    assert t.value_at((1, 0, 0, 0)) == 0.0
    assert t.tail_bound == pytest.approx((8.0 / 9.0) ** 1 / 1.0)


def test_range_truncated_green_converges_to_quadrature():
    t = range_truncated_green(4, 1.0, 40)
    quad = lattice.zd_green((0, 0, 0, 0), 1.0)
    assert abs(t.value_at((0, 0, 0, 0)) - quad) <= t.tail_bound


def test_range_truncated_green_massless_tail_is_infinite():
    t = range_truncated_green(4, 0.0, 6)
    assert math.isinf(t.tail_bound)
    assert t.value_at((0, 0, 0, 0)) > 0


# -- decomposition --------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(DecompositionError):
        DecompConfig(d=4, L=2, mass_sq=0.5, j_max=2)
    with pytest.raises(DecompositionError):
        DecompConfig(d=4, L=3, mass_sq=-0.5, j_max=2)
    with pytest.raises(DecompositionError):
        DecompConfig(d=4, L=3, mass_sq=0.5, j_max=2, mode="torus", torus_N=3)
    with pytest.raises(DecompositionError):
        DecompConfig(d=4, L=3, mass_sq=0.0, j_max=2, mode="torus", torus_N=2)


def test_range_radii():
    assert [range_radius(4, j) for j in (1, 2, 3, 4)] == [1, 7, 31, 127]
    assert [range_radius(3, j) for j in (1, 2, 3)] == [1, 4, 13]


@pytest.fixture(scope="module")
def small_decomp():
    return build_decomposition(DecompConfig(d=4, L=3, mass_sq=0.5, j_max=3))


def test_slice_support(small_decomp):
    for sl in small_decomp.slices:
        r = sl.range_radius
        assert r < 3**sl.j / 2
        for rep, _v, _o in sl.table.items():
            assert sum(rep) <= r


def test_first_slice_is_truncated_green(small_decomp):
    ref = range_truncated_green(4, 0.5, range_radius(3, 1))
    sl = small_decomp.slices[0]
    for rep, v, _o in sl.table.items():
        assert v == ref.value_at(rep)  # bit-identical floats


def test_telescoping_exact(small_decomp):
    # partial sums of slices equal the truncated Green function, as integers
    for j in (1, 2, 3):
        nums, den_exp = small_decomp.partial_sum_exact(j)
        ref = range_truncated_green(4, 0.5, range_radius(3, j))
        assert den_exp == ref.den_exp
        assert len(nums) == len(ref.exact_num)
        assert all(int(a) == int(b) for a, b in zip(nums, ref.exact_num))


def test_slice_values_nonnegative(small_decomp):
    assert small_decomp.metadata["min_slice_value"] >= 0.0


def test_convergence_within_certified_tail(small_decomp):
    tail = small_decomp.metadata["tail_bound"]
    for x in [(0, 0, 0, 0), (1, 0, 0, 0), (2, 1, 0, 0), (3, 1, 1, 1)]:
        total = sum(sl.value_at(x) for sl in small_decomp.slices)
        green = lattice.zd_green(x, 0.5)
        assert abs(total - green) <= tail


def test_hyperoctahedral_invariance(small_decomp):
    sl = small_decomp.slices[-1]
    rng = np.random.default_rng(3)
    for _ in range(40):
        rep = sl.table.space.reps[int(rng.integers(0, sl.table.size))]
        perm = rng.permutation(4)
        signs = rng.integers(0, 2, 4) * 2 - 1
        image = tuple(int(signs[i]) * rep[perm[i]] for i in range(4))
        assert sl.value_at(image) == sl.value_at(rep)


def test_coalescence_vanishing(small_decomp):
    # C_{j;a,b} = 0 whenever j <= coalescence scale of (a, b)
    from rgwsaw.rgflow import coalescence_scale

    for disp in [(2, 0, 0, 0), (5, 0, 0, 0), (3, 3, 0, 0), (9, 2, 1, 0)]:
        j_ab = coalescence_scale(3, (0, 0, 0, 0), disp)
        for sl in small_decomp.slices:
            if sl.j <= j_ab:
                assert sl.value_at(disp) == 0.0, (disp, sl.j)


def test_scale_extension_leaves_slices_unchanged(small_decomp):
    longer = build_decomposition(DecompConfig(d=4, L=3, mass_sq=0.5, j_max=4))
    for sl_short, sl_long in zip(small_decomp.slices, longer.slices):
        assert sl_short.range_radius == sl_long.range_radius
        assert np.array_equal(
            sl_short.table.values[: sl_short.table.size],
            sl_long.table.values[: sl_short.table.size],
        )


# -- lattice sums and bubbles ------------------------------------------------------------


def test_w1_sum_examples(small_decomp):
    assert w1_sum(small_decomp.slices, 0) == 0.0
    dec = build_decomposition(DecompConfig(d=4, L=4, mass_sq=1.0, j_max=2))
    # hand-summable: r_1 = 1 so sum_x A_1 = 1/9 + 8/81
    assert w1_sum(dec.slices, 1) == pytest.approx((1 + 8 / 9) / 9, rel=1e-14)
    assert w1_sum(dec.slices, 1) == pytest.approx(w1_closed(4, 1.0, 1), rel=1e-14)


def test_w1_monotone(small_decomp):
    vals = [w1_sum(small_decomp.slices, j) for j in range(4)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert small_decomp.metadata["w1_monotone"]


def test_w1_closed_matches_tables(small_decomp):
    for j in (1, 2, 3):
        assert w1_sum(small_decomp.slices, j) == pytest.approx(
            w1_closed(4, 0.5, range_radius(3, j)), rel=1e-12
        )


def test_bubble_increment_matches_closed_form(small_decomp):
    for j in (0, 1, 2):
        table_route = bubble_increment(small_decomp.slices, j)
        closed_route = beta_surrogate(4, 0.5, 3, j)
        assert table_route == pytest.approx(closed_route, rel=1e-12)
        assert table_route >= 0.0


def test_bubble_zero_increment_for_empty_slice():
    # degenerate increment: identical truncation radii contribute nothing
    s = bubble_sum_closed(4, 1.0, 5)
    assert 8.0 * (s - s) == 0.0


def test_bubble_log_growth_massless():
    # The massless bubble sum grows ~ (j log L) / (16 pi^2); the increment
    # coefficient beta_j approaches log L / (2 pi^2) (series-truncation
    # slices have a diffusive cutoff, half the log slope of sharp-range
    # slices).  Frozen empirical check at L = 3, j = 2..4: within 2%.
    target = math.log(3) / (2 * math.pi**2)
    for j in (2, 3, 4):
        beta = beta_surrogate(4, 0.0, 3, j)
        assert abs(beta / target - 1.0) < 0.02, (j, beta)


def test_return_counts_prefix_consistency():
    a = return_counts(4, 12)
    b = return_counts(4, 30)
    assert a == b[:13]


# -- torus mode ------------------------------------------------------------------------


def test_torus_decomposition_sums_to_green():
    cfg = DecompConfig(d=2, L=3, mass_sq=0.5, j_max=2, mode="torus", torus_N=2)
    dec = build_decomposition(cfg)
    spec = lattice.LatticeSpec.torus(2, 9)
    green = lattice.torus_green_table(spec, 0.5)
    total = np.zeros_like(green)
    final = dec.slices[-1]
    assert final.is_torus_final
    total += final.dense
    for sl in dec.slices[:-1]:
        for rep, v, _o in sl.table.items():
            for pt in covdecomp._orbit_points(rep):
                total[tuple(c % 9 for c in pt)] += v
    assert np.abs(total - green).max() < 1e-12
    assert dec.metadata["torus_exact_sum"] < 1e-12


def test_torus_final_slice_nonnegative():
    cfg = DecompConfig(d=2, L=3, mass_sq=0.8, j_max=2, mode="torus", torus_N=2)
    dec = build_decomposition(cfg)
    assert dec.slices[-1].dense.min() >= 0.0


# -- export / import ----------------------------------------------------------------------


def test_export_import_roundtrip(tmp_path, small_decomp):
    cfg = small_decomp.config
    for sl in small_decomp.slices:
        path = tmp_path / f"slice_{sl.j}.txt"
        export_slice(sl, cfg, path)
        back = import_slice(path)
        assert back.j == sl.j and back.range_radius == sl.range_radius
        path2 = tmp_path / f"slice_{sl.j}_again.txt"
        export_slice(back, cfg, path2)
        assert path.read_bytes() == path2.read_bytes()


def test_import_rejects_out_of_range_entry(tmp_path, small_decomp):
    cfg = small_decomp.config
    sl = small_decomp.slices[0]
    path = tmp_path / "slice.txt"
    export_slice(sl, cfg, path)
    tampered = path.read_text().rstrip("\n") + f"\n{sl.range_radius + 1} 0 0 0 0.5\n"
    path.write_text(tampered)
    with pytest.raises(DecompositionError):
        import_slice(path)


def test_import_rejects_noncanonical_row(tmp_path, small_decomp):
    cfg = small_decomp.config
    path = tmp_path / "slice.txt"
    export_slice(small_decomp.slices[0], cfg, path)
    path.write_text(path.read_text().rstrip("\n") + "\n0 1 0 0 0.25\n")
    with pytest.raises(DecompositionError):
        import_slice(path)


def test_import_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 0 0 1.0\n")
    with pytest.raises(DecompositionError):
        import_slice(path)


def test_torus_slice_roundtrip(tmp_path):
    cfg = DecompConfig(d=2, L=3, mass_sq=0.5, j_max=2, mode="torus", torus_N=2)
    dec = build_decomposition(cfg)
    path = tmp_path / "final.txt"
    export_slice(dec.slices[-1], cfg, path)
    back = import_slice(path)
    assert back.is_torus_final
    assert np.array_equal(back.dense, dec.slices[-1].dense)
