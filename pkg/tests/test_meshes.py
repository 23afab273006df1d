import csv

import numpy as np
import pytest

from hhocond.mesh import build_mesh, characteristic_lengths, compute_metrics
from hhocond.meshes import (
    AggregationError,
    CutClassification,
    MergeError,
    aggregate,
    cartesian_mesh,
    coarsen,
    cut_circle_mesh,
    cut_strip_mesh,
    ill_posed,
    penta_diagonal_mesh,
    triangular_mesh,
    union_loop,
)


def total_area(mesh):
    return compute_metrics(mesh).area.sum()


def test_cartesian_small_cases():
    m1 = cartesian_mesh(1)
    assert m1.n_elements == 1 and m1.internal_faces.size == 0
    m2 = cartesian_mesh(2)
    assert m2.n_elements == 4 and m2.internal_faces.size == 4


def test_triangular_counts():
    m = triangular_mesh(2)
    assert m.n_elements == 8
    assert m.internal_faces.size == 8


@pytest.mark.parametrize("gen", [cartesian_mesh, triangular_mesh])
def test_generators_reject_bad_n(gen):
    with pytest.raises(ValueError):
        gen(0)


def test_coarsen_zero_levels_is_identity():
    m = triangular_mesh(3)
    c = coarsen(m, 0)
    assert c is m


def test_two_squares_merge_keeps_collinear_faces():
    m = build_mesh([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]], [[0, 1, 4, 3], [1, 2, 5, 4]])
    assert m.n_faces == 7
    c = coarsen(m, 1)
    assert c.n_elements == 1
    assert c.n_faces == 6
    assert len(c.elements[0]) == 6


@pytest.mark.parametrize("levels", [1, 2, 3, 4])
def test_coarsen_preserves_area_and_halves_count(levels):
    fine = triangular_mesh(8)
    c = coarsen(fine, levels)
    assert total_area(c) == pytest.approx(1.0, rel=1e-14)
    assert c.n_elements <= fine.n_elements // 2 ** levels + levels * 8
    # merged loops only drop vertices, never create them
    assert len(c.vertices) <= len(fine.vertices)
    assert set(map(tuple, c.vertices)) <= set(map(tuple, fine.vertices))


def test_coarsen_is_deterministic():
    a = coarsen(triangular_mesh(6), 3)
    b = coarsen(triangular_mesh(6), 3)
    assert a.elements == b.elements


def test_union_loop_errors():
    sq = lambda i, j, n=4: [j * n + i, j * n + i + 1, (j + 1) * n + i + 1, (j + 1) * n + i]
    # diagonal neighbours only touch at a vertex
    with pytest.raises(MergeError):
        union_loop([sq(0, 0), sq(1, 1)])
    # a ring of eight cells encloses a hole
    ring = [sq(i, j) for j in range(3) for i in range(3) if (i, j) != (1, 1)]
    with pytest.raises(MergeError):
        union_loop(ring)
    with pytest.raises(MergeError):
        union_loop([sq(0, 0), sq(0, 0)])
    assert sorted(union_loop([sq(0, 0), sq(1, 0)])) == [0, 1, 2, 4, 5, 6]


def test_strip_half_width_cells():
    n = 4
    m = cut_strip_mesh(n, 1 / (2 * n))
    met = compute_metrics(m)
    cut = [t for t in range(m.n_elements) if t % n == n - 1]
    for t in cut:
        pts = m.element_vertices(t)
        assert np.ptp(pts[:, 0]) == pytest.approx(1 / (2 * n))
        assert np.ptp(pts[:, 1]) == pytest.approx(1 / n)
    assert met.area.sum() == pytest.approx(1 - 1 / (2 * n))


@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-6])
def test_strip_cut_faces_touch_full_elements(eps):
    n = 8
    m, cl = cut_strip_mesh(n, eps, with_classification=True)
    met = compute_metrics(m)
    for t in cl.cut_elements:
        for f in m.element_to_faces[t]:
            hs = met.h_T[list(m.face_to_elements[f])]
            assert hs.max() >= 1 / n
        assert cl.sliver_ratio[t] < 0.05
    widths = [np.ptp(m.element_vertices(t)[:, 0]) for t in cl.cut_elements]
    assert np.allclose(widths, eps, rtol=1e-9)


def test_strip_characteristic_lengths_independent_of_eps():
    n = 8
    Hs = [characteristic_lengths(cut_strip_mesh(n, e))[1] for e in (1e-2, 1e-3, 1e-4, 1e-5)]
    assert np.ptp(Hs) <= 0.01 * min(Hs)
    # the smallest cell width goes to zero with eps, but not the diameters
    assert compute_metrics(cut_strip_mesh(n, 1e-5)).h_min == pytest.approx(1 / n, rel=1e-8)


@pytest.mark.parametrize("eps", [0.0, -1.0, 0.25, 1e-15])
def test_strip_rejects_bad_eps(eps):
    with pytest.raises(ValueError):
        cut_strip_mesh(4, eps)


def test_circle_classification():
    n = 16
    m, cl = cut_circle_mesh(n)
    s = 2.0 / n
    met = compute_metrics(m)
    assert set(cl.status) <= {"interior", "cut", "exterior"}
    for c, st in enumerate(cl.status):
        e = cl.element_of_cell[c]
        if st == "exterior":
            assert e == -1
        elif st == "interior":
            assert len(m.elements[e]) == 4
            assert met.area[e] == pytest.approx(s * s, rel=1e-12)
            assert (np.hypot(*m.element_vertices(e).T) < 1).all()
        else:
            assert 3 <= len(m.elements[e]) <= 6
            assert 0 < met.area[e] < s * s
    # interior and cut cells tile the discrete domain
    assert sorted(cl.element_of_cell[cl.element_of_cell >= 0]) == list(range(m.n_elements))
    # cut polygon vertices are grid nodes or linear-interpolation crossings, O(s^2) from the circle
    off = np.array([0.2137, 0.3719])
    for t in cl.cut_elements:
        for p in m.element_vertices(t):
            g = (p + 1) / s - off
            on_grid = np.abs(g - np.round(g)).max() < 1e-9
            assert on_grid or abs(np.hypot(*p) - 1) < s * s


def test_circle_area_converges_second_order():
    errs = [np.pi - total_area(cut_circle_mesh(n)[0]) for n in (16, 32, 64)]
    assert all(e > 0 for e in errs)  # inscribed chords
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.allclose(rates, 2.0, atol=0.25)


def test_aggregate_noop_without_cuts():
    m = cartesian_mesh(3)
    cl = CutClassification(np.array(["interior"] * 9, dtype=object), np.arange(9), (), np.sqrt(2) / 3)
    out, plan = aggregate(m, cl)
    assert out is m
    assert plan.steps == [] and plan.iterations == 0


def test_strip_aggregation_merges_left():
    n = 8
    m, cl = cut_strip_mesh(n, 0.01 / n, with_classification=True)
    out, plan = aggregate(m, cl)
    assert len(plan.steps) == n
    for step in plan.steps:
        assert step.target == step.element - 1  # full-size neighbour on the left
        assert step.shared_length == pytest.approx(1 / n)
        assert step.criterion == "sliver"  # diameters stay ~1/n, so the size test never fires
    assert out.n_elements == n * n - n
    assert total_area(out) == pytest.approx(total_area(m), rel=1e-14)
    assert plan.iterations == 1


def rescan_clean(mesh, cl, eps1=0.05, eps2=0.3):
    met = compute_metrics(mesh)
    for t in cl.cut_elements:
        if ill_posed(met.area[t], met.perimeter[t], met.h_T[t], cl.h_background, eps1, eps2):
            return False
    return True


@pytest.mark.parametrize("n", [8, 16, 32])
@pytest.mark.parametrize("eps2", [0.0, 0.3])
def test_circle_aggregation_fixed_point(n, eps2):
    m, cl = cut_circle_mesh(n)
    out, plan = aggregate(m, cl, epsilon2=eps2)
    assert rescan_clean(out, plan.classification, eps2=eps2)
    assert plan.iterations <= len(cl.cut_elements)
    again, plan2 = aggregate(out, plan.classification, epsilon2=eps2)
    assert plan2.steps == []
    assert again.elements == out.elements
    assert total_area(out) == pytest.approx(total_area(m), rel=1e-13)
    # every aggregate is one connected simple polygon (build_mesh validated it); each step names a neighbour
    for step in plan.steps:
        assert step.shared_length > 0


def test_isolated_candidate_is_an_error():
    m = build_mesh([[0, 0], [1, 0], [1, 1e-3], [0, 1e-3]], [[0, 1, 2, 3]])
    cl = CutClassification(np.array(["cut"], dtype=object), np.array([0]), (0,), 1.0)
    with pytest.raises(AggregationError):
        aggregate(m, cl)


def test_penta_counts():
    m5 = penta_diagonal_mesh(5)
    # the two regions |i - j| > 2 each hold three cells
    assert m5.n_elements == 19 + 2
    m16 = penta_diagonal_mesh(16)
    assert m16.n_elements == 5 * 16 - 6 + 2
    assert total_area(m16) == pytest.approx(1.0, rel=1e-14)
    big = [t for t in range(m16.n_elements) if len(m16.elements[t]) > 4]
    assert len(big) == 2
    for t in big:
        # staircase boundary keeps every small edge: 2 edges per step of the diagonal
        faces = m16.element_to_faces[t]
        assert compute_metrics(m16).h_F[faces].min() == pytest.approx(1 / 16)
    with pytest.raises(ValueError):
        penta_diagonal_mesh(4)


def test_classification_and_plan_csv(tmp_path):
    m, cl = cut_circle_mesh(8)
    out, plan = aggregate(m, cl)
    cl.write_csv(tmp_path / "cl.csv")
    plan.write_csv(tmp_path / "plan.csv")
    rows = list(csv.DictReader(open(tmp_path / "cl.csv")))
    assert len(rows) == len(cl.status)
    assert {r["status"] for r in rows} == {"interior", "cut", "exterior"}
    prow = list(csv.DictReader(open(tmp_path / "plan.csv")))
    assert len(prow) == len(plan.steps)
    assert {r["criterion"] for r in prow} <= {"sliver", "small"}
