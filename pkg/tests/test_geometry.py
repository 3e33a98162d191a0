import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaunay_glue.delaunay import neck_params, period_S, solve_profile
from delaunay_glue.errors import DegenerateImmersionError, DomainError, RangeError
from delaunay_glue.geometry import (CatenoidPatch, CylinderPatch, CylindricalDelaunayPatch,
                                    DelaunayPatch, FunctionPatch, RigidPatch, SpherePatch,
                                    export_mesh, export_meshes_obj, forms_from_jet,
                                    fundamental_forms, gauss_equation_residual, mean_curvature,
                                    mean_curvature_change, normal_graph_patch, random_rotation,
                                    read_obj_vertices, sample_mesh, write_curvature_csv)


def _grid(lo, hi, n=40, m=32):
    return np.meshgrid(np.linspace(lo, hi, n), np.linspace(0, 2 * np.pi, m, endpoint=False),
                       indexing="ij")


def test_sphere_radius_two():
    U, V = _grid(0.1, math.pi - 0.1)
    assert np.abs(mean_curvature(SpherePatch(2.0), U, V) - 1.0).max() < 1e-12
    ff = fundamental_forms(SpherePatch(2.0), U, V)
    assert np.abs(ff.gauss_curvature - 0.25).max() < 1e-12


def test_unit_cylinder_and_catenoid():
    U, V = _grid(-2, 2)
    assert np.abs(mean_curvature(CylinderPatch(1.0), U, V) - 1.0).max() < 1e-14
    H = mean_curvature(CatenoidPatch(0.7), U, V)
    assert np.abs(H).max() < 1e-12
    K = fundamental_forms(CatenoidPatch(1.0), U, V).gauss_curvature
    assert np.allclose(K, -1.0 / np.cosh(U) ** 4, atol=1e-12)


@pytest.mark.parametrize("eps", [0.9, 0.5, 0.1])
def test_delaunay_patches_are_cmc(eps):
    params = neck_params(eps)
    S = period_S(params)
    prof = solve_profile(params, S)
    U, V = _grid(-S, S, 200, 64)
    assert np.abs(mean_curvature(DelaunayPatch(prof), U, V) - 1.0).max() < 1e-10
    cyl = CylindricalDelaunayPatch(prof)
    T, W = _grid(0.9 * prof.k[0], 0.9 * prof.k[-1], 120, 16)
    assert np.abs(mean_curvature(cyl, T, W) - 1.0).max() < 1e-8


def test_delaunay_metric_is_conformal():
    prof = solve_profile(neck_params(0.4), 3.0)
    U, V = _grid(-3, 3)
    ff = fundamental_forms(DelaunayPatch(prof), U, V)
    lam = prof.tau**2 * np.exp(2 * prof.evaluate(U)["sigma"])
    assert np.allclose(ff.E, lam, rtol=1e-13)
    assert np.allclose(ff.G, lam, rtol=1e-13)
    assert np.abs(ff.F).max() < 1e-14


def test_delaunay_analytic_normal_matches_forms():
    prof = solve_profile(neck_params(0.3), 2.0)
    p = DelaunayPatch(prof)
    U, V = _grid(-2, 2, 10, 8)
    nf = forms_from_jet(p.jet(U, V)).normal
    assert np.allclose(p.normal(U, V), nf, atol=1e-13)


@given(st.integers(0, 2**31 - 1), st.floats(0.3, 3.0))
def test_rigid_motions_and_dilations(seed, scale):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    b = rng.normal(size=3)
    U, V = _grid(0.2, 2.5, 8, 8)
    base = mean_curvature(SpherePatch(2.0), U, V)
    moved = mean_curvature(RigidPatch(SpherePatch(2.0), R, b, scale), U, V)
    assert np.allclose(moved, base / scale, rtol=1e-12)


def test_reflection_flips_orientation():
    R = np.diag([1.0, 1.0, -1.0])
    U, V = _grid(0.2, 2.5, 6, 6)
    H = mean_curvature(RigidPatch(SpherePatch(2.0), R), U, V)
    assert np.allclose(H, 1.0, rtol=1e-12)


def test_flipped_patch_negates_H():
    U, V = _grid(-1, 1, 6, 6)
    assert np.allclose(mean_curvature(CylinderPatch().flipped(), U, V), -1.0)


def test_function_patch_matches_analytic():
    cat = CatenoidPatch(1.0)
    fp = FunctionPatch(lambda u, v: cat.jet(u, v).x, step=1e-3)
    U, V = _grid(-1, 1, 6, 6)
    assert np.abs(mean_curvature(fp, U, V)).max() < 1e-7


@given(st.floats(-0.4, 0.4))
def test_normal_graph_over_cylinder(c):
    # inward normal: x + c nu is the cylinder of radius 1 - c
    g = normal_graph_patch(CylinderPatch(1.0), lambda u, v: np.full_like(u, c), step=1e-3)
    U, V = _grid(-1, 1, 6, 6)
    assert np.allclose(mean_curvature(g, U, V), 1.0 / (1.0 - c), rtol=1e-8)


def test_zero_graph_reproduces_base_exactly():
    prof = solve_profile(neck_params(0.3), 2.0)
    p = DelaunayPatch(prof)
    g = normal_graph_patch(p, lambda u, v: np.zeros_like(u))
    U, V = _grid(-1.5, 1.5, 7, 5)
    assert np.array_equal(mean_curvature(g, U, V), mean_curvature(p, U, V))


@given(st.floats(-0.2, 0.2), st.integers(0, 3))
def test_mean_curvature_change_matches_direct(a, j):
    cyl = CylinderPatch(1.0)
    U, V = _grid(-1, 1, 5, 8)
    base = cyl.jet(U, V)
    w = lambda u, v: a * np.cos(j * v) * np.exp(-u * u)  # noqa: E731
    g = normal_graph_patch(cyl, w, step=1e-3)
    full = g.jet(U, V)
    delta = type(base)(*(getattr(full, f) - getattr(base, f)
                         for f in ("x", "xu", "xv", "xuu", "xuv", "xvv")))
    direct = forms_from_jet(full).mean_curvature - forms_from_jet(base).mean_curvature
    assert np.allclose(mean_curvature_change(base, delta), direct, atol=1e-12)


def test_degenerate_immersion():
    flat = FunctionPatch(lambda u, v: np.stack(np.broadcast_arrays(u, 0 * u, 0 * u), -1))
    with pytest.raises(DegenerateImmersionError):
        mean_curvature(flat, np.array([0.0]), np.array([0.0]))


def test_domain_checks():
    with pytest.raises(RangeError):
        mean_curvature(SpherePatch(), np.array([4.0]), np.array([0.0]))
    with pytest.raises(DomainError):
        CatenoidPatch(-1.0)
    with pytest.raises(DomainError):
        sample_mesh(CylinderPatch(), 2, (0, 1))


def test_gauss_equation_residual():
    assert gauss_equation_residual(solve_profile(neck_params(0.2), 5.0)) < 1e-8


def test_mesh_export_roundtrip(tmp_path):
    mesh = sample_mesh(SpherePatch(2.0), (12, 10), (0.2, math.pi - 0.2))
    assert mesh.faces.shape == (11 * 10, 4)
    assert np.abs(mesh.mean_curvature - 1).max() < 1e-12
    export_mesh(mesh, tmp_path / "s.obj", name="sphere")
    assert np.allclose(read_obj_vertices(tmp_path / "s.obj"), mesh.vertices, atol=1e-8)
    export_mesh(mesh, tmp_path / "s.ply")
    assert (tmp_path / "s.ply").read_text().startswith("ply")
    export_meshes_obj({"a": mesh, "b": mesh}, tmp_path / "two.obj")
    text = (tmp_path / "two.obj").read_text()
    assert text.count("\no ") + text.startswith("o ") == 2
    with pytest.raises(DomainError):
        export_mesh(mesh, tmp_path / "s.stl")


def test_curvature_csv(tmp_path):
    write_curvature_csv(CylinderPatch(), [0.0, 1.0], [0.0, 1.0], tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "u1,u2,H" and len(rows) == 5
    assert all(float(r.split(",")[2]) == pytest.approx(1.0) for r in rows[1:])
