import numpy as np
import pytest

from fmtlab.fem import OpticalMedium, assemble_system, point_source_load
from fmtlab.forward import (DetectorPlane, add_noise, born_measurements, build_gamma,
                            emission_source, excitation_fields, export_measurements_csv)
from fmtlab.mesh import build_phantom_mesh


@pytest.fixture(scope="module")
def setup():
    mesh = build_phantom_mesh((5, 5, 5), 1.0)
    medium = OpticalMedium.homogeneous(mesh.n_nodes, 0.01, 1.0)
    S = assemble_system(mesh, medium)
    det = DetectorPlane(rows=4, cols=4, pitch=1.0, height=10.0, center=(2.5, 2.5))
    gamma = build_gamma(mesh, det)
    return mesh, medium, S, det, gamma


def test_gamma_point_kernel():
    # node directly under a pixel at d=10mm with area share 1mm^2: 1/(100 pi)
    mesh = build_phantom_mesh((4, 4, 4), 1.0)
    det = DetectorPlane(rows=1, cols=1, pitch=1.0, height=10.0, center=(2.0, 2.0))
    gamma = build_gamma(mesh, det)
    # the node at (2,2,4) sits under the single pixel; interior top node share = 1
    under = np.nonzero((mesh.node_coords == [2.0, 2.0, 4.0]).all(axis=1))[0][0]
    assert mesh.node_area_share("top")[under] == pytest.approx(1.0, rel=1e-12)
    assert gamma[0, under] == pytest.approx(1.0 / (100 * np.pi), rel=1e-12)


def test_gamma_interior_columns_zero(setup):
    mesh, _, _, _, gamma = setup
    interior = ~mesh.node_class
    assert gamma[:, np.nonzero(interior)[0]].nnz == 0
    # also zero on non-top surface nodes
    side = mesh.node_class & ~mesh.illum_allowed & (mesh.node_area_share("top") == 0)
    assert gamma[:, np.nonzero(side)[0]].nnz == 0
    assert gamma.min() >= 0


def test_gamma_inverse_square():
    mesh = build_phantom_mesh((4, 4, 4), 1.0)
    det_near = DetectorPlane(rows=1, cols=1, pitch=1.0, height=10.0, center=(2.0, 2.0))
    det_far = DetectorPlane(rows=1, cols=1, pitch=1.0, height=20.0, center=(2.0, 2.0))
    under = np.nonzero((mesh.node_coords == [2.0, 2.0, 4.0]).all(axis=1))[0][0]
    g_near = build_gamma(mesh, det_near)[0, under]
    g_far = build_gamma(mesh, det_far)[0, under]
    assert g_far == pytest.approx(g_near / 4.0, rel=1e-12)


def test_detector_validation():
    with pytest.raises(ValueError):
        DetectorPlane(rows=0, cols=4, pitch=1.0, height=10.0, center=(0, 0))
    with pytest.raises(ValueError):
        DetectorPlane(rows=4, cols=4, pitch=1.0, height=-1.0, center=(0, 0))


def test_emission_source_elementwise():
    rng = np.random.default_rng(0)
    C = rng.random(20)
    phi = rng.random(20)
    q = emission_source(C, phi, eta=2.5)
    # direct loop oracle
    for i in range(20):
        assert q[i] == pytest.approx(2.5 * C[i] * phi[i], rel=1e-15)
    assert np.all(emission_source(np.zeros(20), phi, 1.0) == 0)
    e3 = np.zeros(20)
    e3[3] = 1.0
    assert np.array_equal(emission_source(e3, np.ones(20), 1.0), e3)
    with pytest.raises(ValueError, match="nonnegative"):
        emission_source(-C, phi, 1.0)


def _fields(setup, C):
    mesh, medium, S, det, gamma = setup
    top = np.nonzero(mesh.illum_allowed)[0]
    Q = np.stack([point_source_load(mesh.n_nodes, n, 1.0, medium.zeta) for n in top[:3]], axis=1)
    Phi_E = excitation_fields(S, Q)
    Phi_F = S.solve(emission_source(C, Phi_E, medium.eta))
    return Phi_E, Phi_F


def test_born_zero_fluorophore(setup):
    mesh, *_ , gamma = setup
    Phi_E, Phi_F = _fields(setup, np.zeros(mesh.n_nodes))
    ms = born_measurements(gamma, Phi_E, Phi_F)
    assert np.all(ms.Y[ms.mask] == 0)


def test_born_scale_invariance(setup):
    mesh, _, S, _, gamma = setup
    rng = np.random.default_rng(1)
    C = rng.random(mesh.n_nodes)
    Phi_E, Phi_F = _fields(setup, C)
    ms1 = born_measurements(gamma, Phi_E, Phi_F)
    ms2 = born_measurements(gamma, 7.0 * Phi_E, 7.0 * Phi_F)
    assert np.array_equal(ms1.mask, ms2.mask)
    assert np.allclose(ms1.Y[ms1.mask], ms2.Y[ms2.mask], rtol=1e-12, atol=0)


def test_born_mask_independent_of_C(setup):
    mesh = setup[0]
    gamma = setup[4]
    rng = np.random.default_rng(2)
    Phi_E, Phi_F_a = _fields(setup, rng.random(mesh.n_nodes))
    _, Phi_F_b = _fields(setup, rng.random(mesh.n_nodes))
    ms_a = born_measurements(gamma, Phi_E, Phi_F_a)
    ms_b = born_measurements(gamma, Phi_E, Phi_F_b)
    assert np.array_equal(ms_a.mask, ms_b.mask)


def test_noise_identity_and_determinism(setup):
    mesh = setup[0]
    gamma = setup[4]
    Phi_E, Phi_F = _fields(setup, np.ones(mesh.n_nodes))
    ms = born_measurements(gamma, Phi_E, Phi_F)
    clean = add_noise(ms, "gaussian", 0.0, seed=42)
    assert np.array_equal(clean.Y, ms.Y)
    n1 = add_noise(ms, "gaussian", 0.01, seed=42)
    n2 = add_noise(ms, "gaussian", 0.01, seed=42)
    assert np.array_equal(n1.Y, n2.Y)
    # invariant survives: Y = P_f / P_e on unmasked entries
    assert np.allclose(n1.Y[n1.mask], n1.P_f[n1.mask] / n1.P_e[n1.mask], rtol=1e-12)
    with pytest.raises(ValueError):
        add_noise(ms, "poisson", 0.1, seed=0)


def test_noise_statistics():
    rng = np.random.default_rng(0)
    from fmtlab.forward import MeasurementSet
    Y = np.ones((100, 100))
    ms = MeasurementSet(Y=Y, P_e=Y, P_f=Y, mask=np.ones_like(Y, dtype=bool))
    noisy = add_noise(ms, "gaussian", 0.01, seed=11)
    ratio = noisy.Y / Y - 1.0
    assert abs(ratio.std() - 0.01) < 0.05 * 0.01


def test_export_csv(tmp_path, setup):
    mesh = setup[0]
    gamma = setup[4]
    Phi_E, Phi_F = _fields(setup, np.ones(mesh.n_nodes))
    ms = born_measurements(gamma, Phi_E, Phi_F)
    path = tmp_path / "meas.csv"
    export_measurements_csv(ms, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "laser,pixel,Y,P_e,P_f,masked"
    assert len(lines) == 1 + ms.Y.size
