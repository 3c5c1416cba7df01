import struct

import numpy as np
import pytest

from fmtlab.fem import OpticalMedium, assemble_system, point_source_load
from fmtlab.forward import (DetectorPlane, born_measurements, build_gamma,
                            emission_source, excitation_fields)
from fmtlab.jacobian import adjoint_detector_fields, assemble_W, dump_matrix
from fmtlab.mesh import build_phantom_mesh


def make_problem(dims, spacing, n_lasers=4, det=(3, 3)):
    mesh = build_phantom_mesh(dims, spacing)
    medium = OpticalMedium.homogeneous(mesh.n_nodes, 0.01, 1.0, eta=0.8)
    S = assemble_system(mesh, medium)
    plane = DetectorPlane(rows=det[0], cols=det[1], pitch=spacing,
                          height=8.0, center=(dims[0] / 2, dims[1] / 2))
    gamma = build_gamma(mesh, plane)
    top = np.nonzero(mesh.illum_allowed)[0]
    picks = np.linspace(0, top.size - 1, n_lasers).astype(int)
    Q = np.stack([point_source_load(mesh.n_nodes, n, 1.0, medium.zeta)
                  for n in top[picks]], axis=1)
    Phi_E = excitation_fields(S, Q)
    return mesh, medium, S, gamma, Phi_E


def forward_born(mesh, medium, S, gamma, Phi_E, C):
    Phi_F = S.solve(emission_source(C, Phi_E, medium.eta))
    return born_measurements(gamma, Phi_E, Phi_F)


def test_adjoint_fields_definition():
    mesh, medium, S, gamma, Phi_E = make_problem((4, 4, 4), 1.0)
    G = adjoint_detector_fields(S, gamma)
    R = S.S @ G - gamma.toarray().T
    for k in range(G.shape[1]):
        gk = gamma.toarray()[k]
        assert np.linalg.norm(R[:, k]) <= 1e-8 * max(np.linalg.norm(gk), 1e-300)


def test_adjoint_fields_zero_column():
    mesh, medium, S, gamma, _ = make_problem((4, 4, 4), 1.0)
    z = S.solve(np.zeros(mesh.n_nodes))
    assert np.all(z == 0)


def test_adjoint_fields_dense_oracle():
    # 125-node mesh: compare against explicit dense inverse
    mesh, medium, S, gamma, _ = make_problem((4, 4, 4), 1.0)
    assert mesh.n_nodes == 125
    G = adjoint_detector_fields(S, gamma)
    Sinv = np.linalg.inv(S.S.toarray())
    G_dense = Sinv @ gamma.toarray().T
    assert np.linalg.norm(G - G_dense) / np.linalg.norm(G_dense) < 1e-10


@pytest.mark.parametrize("dims,spacing", [((5, 5, 5), 1.0), ((10, 10, 10), 1.0)])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_adjoint_identity(dims, spacing, seed):
    # master test: W @ C_true reproduces the forward-model Born ratios
    mesh, medium, S, gamma, Phi_E = make_problem(dims, spacing)
    rng = np.random.default_rng(seed)
    C_true = rng.random(mesh.n_nodes)
    ms = forward_born(mesh, medium, S, gamma, Phi_E, C_true)
    G = adjoint_detector_fields(S, gamma)
    W = assemble_W(G, Phi_E, ms, medium.eta)
    y = ms.Y[ms.mask]
    pred = W.W @ C_true
    assert np.linalg.norm(pred - y) / np.linalg.norm(y) < 1e-10


def test_two_bar_phantom_identity():
    mesh, medium, S, gamma, Phi_E = make_problem((10, 10, 10), 1.0)
    C = np.zeros(mesh.n_nodes)
    c = mesh.node_coords
    bar1 = (c[:, 0] >= 2) & (c[:, 0] <= 3) & (c[:, 2] >= 6) & (c[:, 2] <= 7)
    bar2 = (c[:, 0] >= 7) & (c[:, 0] <= 8) & (c[:, 2] >= 6) & (c[:, 2] <= 7)
    C[bar1 | bar2] = 100.0
    ms = forward_born(mesh, medium, S, gamma, Phi_E, C)
    G = adjoint_detector_fields(S, gamma)
    W = assemble_W(G, Phi_E, ms, medium.eta)
    y = ms.Y[ms.mask]
    assert np.linalg.norm(W.W @ C - y) / np.linalg.norm(y) < 1e-10


def test_zero_C_and_eta_linearity():
    mesh, medium, S, gamma, Phi_E = make_problem((5, 5, 5), 1.0)
    rng = np.random.default_rng(3)
    C = rng.random(mesh.n_nodes)
    ms = forward_born(mesh, medium, S, gamma, Phi_E, C)
    G = adjoint_detector_fields(S, gamma)
    W1 = assemble_W(G, Phi_E, ms, eta=1.0)
    W2 = assemble_W(G, Phi_E, ms, eta=2.0)
    assert np.array_equal(2.0 * W1.W, W2.W)
    assert np.all(W1.W @ np.zeros(mesh.n_nodes) == 0)


def test_W_nonnegative_given_nonneg_inputs():
    mesh, medium, S, gamma, Phi_E = make_problem((5, 5, 5), 1.0)
    ms = forward_born(mesh, medium, S, gamma, Phi_E, np.ones(mesh.n_nodes))
    G = adjoint_detector_fields(S, gamma)
    W = assemble_W(np.abs(G), np.abs(Phi_E), ms, medium.eta)
    assert np.all(W.W >= 0)


def test_row_map_matches_mask():
    mesh, medium, S, gamma, Phi_E = make_problem((5, 5, 5), 1.0)
    ms = forward_born(mesh, medium, S, gamma, Phi_E, np.ones(mesh.n_nodes))
    G = adjoint_detector_fields(S, gamma)
    W = assemble_W(G, Phi_E, ms, medium.eta)
    assert W.rows.shape[0] == int(ms.mask.sum())
    l_idx, k_idx = np.nonzero(ms.mask)
    assert np.array_equal(W.rows[:, 0], l_idx)
    assert np.array_equal(W.rows[:, 1], k_idx)


def test_dump_matrix(tmp_path):
    W = np.arange(12, dtype=float).reshape(3, 4)
    path = tmp_path / "w.bin"
    dump_matrix(W, path)
    raw = path.read_bytes()
    r, c = struct.unpack("<qq", raw[:16])
    assert (r, c) == (3, 4)
    back = np.frombuffer(raw[16:], dtype="<f8").reshape(r, c)
    assert np.array_equal(back, W)
