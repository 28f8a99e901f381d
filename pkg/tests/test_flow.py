"""Coupling flow: identity init, inversion, Jacobians, JVPs, model files."""

import numpy as np
import pytest

from conftest import forced_scale_flow, randomize_flow
from flowgeom.engine import Graph, Parameter, grad_check
from flowgeom.errors import (
    DimensionMismatchError,
    FileFormatError,
    FlowOverflowError,
    SchemaError,
)
from flowgeom.flow import CouplingFlow, alternating_masks, load_model, save_model
from flowgeom.potentials import DiagonalQuadratic

LOG2 = np.log(2.0)


def test_zero_init_flow_is_identity(rng):
    flow = CouplingFlow(3, 6, seed=4)
    x = rng.normal(size=(50, 3))
    y, logdet = flow.forward(x)
    assert np.array_equal(y, x)
    assert np.array_equal(logdet, np.zeros(50))
    assert np.array_equal(flow.inverse(x), x)
    assert np.allclose(flow.jacobian(x), np.eye(3), atol=0)
    v = rng.normal(size=(50, 3))
    assert np.array_equal(flow.jvp(x, v), v)


def test_forced_scale_layer_hand_values():
    flow = forced_scale_flow(LOG2)
    y, logdet = flow.forward(np.array([3.0, 5.0]))
    assert np.allclose(y, [3.0, 10.0], rtol=1e-12)
    assert np.isclose(logdet, LOG2, rtol=1e-12)
    # hand inversion
    assert np.allclose(flow.inverse(np.array([3.0, 10.0])), [3.0, 5.0], rtol=1e-12)
    # hand Jacobian and JVP
    assert np.allclose(flow.jacobian(np.array([3.0, 5.0])), np.diag([1.0, 2.0]),
                       rtol=1e-12)
    assert np.allclose(flow.jvp(np.array([3.0, 5.0]), np.array([1.0, 1.0])),
                       [1.0, 2.0], rtol=1e-12)


def test_round_trip_on_random_points(rng):
    flow = randomize_flow(CouplingFlow(2, 8, seed=1), seed=2)
    x = rng.normal(size=(1000, 2)) * 2.0
    y, _ = flow.forward(x)
    assert np.abs(flow.inverse(y) - x).max() <= 1e-9


def test_logdet_matches_numeric_jacobian(rng):
    flow = randomize_flow(CouplingFlow(3, 5, seed=3), seed=5)
    x = rng.normal(size=(40, 3))
    _, logdet = flow.forward(x)
    sign, logabs = np.linalg.slogdet(flow.jacobian(x))
    assert np.all(sign > 0)
    assert np.abs(logabs - logdet).max() <= 1e-6


def test_jacobian_matches_finite_differences(rng):
    flow = randomize_flow(CouplingFlow(2, 4, seed=6), seed=7)
    x = rng.normal(size=2)
    jac = flow.jacobian(x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (flow.forward(x + e)[0] - flow.forward(x - e)[0]) / (2 * h)
        assert np.abs(jac[:, i] - fd).max() <= 1e-5


def test_jvp_linearity(rng):
    flow = randomize_flow(CouplingFlow(4, 4, seed=8), seed=9)
    x = rng.normal(size=(6, 4))
    v, w = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    alpha = 1.75
    lhs = flow.jvp(x, alpha * v + w)
    rhs = alpha * flow.jvp(x, v) + flow.jvp(x, w)
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_jvp_matches_directional_finite_difference(rng):
    flow = randomize_flow(CouplingFlow(3, 6, seed=10), seed=11)
    x, v = rng.normal(size=3), rng.normal(size=3)
    h = 1e-6
    fd = (flow.forward(x + h * v)[0] - flow.forward(x - h * v)[0]) / (2 * h)
    assert np.abs(flow.jvp(x, v) - fd).max() <= 1e-5


def test_jvp_parameter_gradient_matches_finite_differences(rng):
    flow = randomize_flow(CouplingFlow(2, 2, hidden=8, seed=12), seed=13)
    x = rng.normal(size=(3, 2))

    def f(g):
        _, _, caches = flow.build_forward(g, g.constant(x))
        total = None
        for i in range(2):
            basis = np.zeros((3, 2))
            basis[:, i] = 1.0
            piece = flow.build_jvp(caches, g.constant(basis)).l2_norm_sq()
            total = piece if total is None else total + piece
        return total

    assert grad_check(f, flow.parameters(), h=1e-5) <= 1e-4


def test_stacked_tangents_match_separate_jvps(rng):
    flow = randomize_flow(CouplingFlow(3, 3, seed=14), seed=15)
    x = rng.normal(size=(5, 3))
    g = Graph()
    _, _, caches = flow.build_forward(g, g.constant(x))
    tiled = flow.tile_caches(caches, 3)
    stacked = flow.build_jvp(tiled, g.constant(np.repeat(np.eye(3), 5, axis=0)))
    for i in range(3):
        basis = np.zeros((5, 3))
        basis[:, i] = 1.0
        single = flow.build_jvp(caches, g.constant(basis))
        assert np.allclose(stacked.value[i * 5:(i + 1) * 5], single.value,
                           rtol=1e-12, atol=1e-14)


def test_masks_alternate_and_split_odd_dimensions():
    masks = alternating_masks(5, 4)
    assert masks[0].sum() == 3 and (~masks[0]).sum() == 2  # ceil / floor
    assert np.array_equal(masks[0], ~masks[1])
    assert np.array_equal(masks[0], masks[2])
    flow = CouplingFlow(5, 4, seed=0)
    for layer in flow.layers:
        assert 0 < layer.mask.sum() < 5


def test_save_load_round_trip_is_bitwise(tmp_path, rng):
    flow = randomize_flow(CouplingFlow(3, 4, seed=16), seed=17)
    pot = DiagonalQuadratic(3, [0.5, 2.0, 1.0])
    path = tmp_path / "model.json"
    save_model(path, flow, pot)

    loaded_flow, loaded_pot = load_model(path)
    x = rng.normal(size=(100, 3))
    y0, ld0 = flow.forward(x)
    y1, ld1 = loaded_flow.forward(x)
    assert np.array_equal(y0, y1)
    assert np.array_equal(ld0, ld1)
    assert np.array_equal(loaded_pot.log_variances.value, pot.log_variances.value)


def test_load_rejects_corrupted_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    with pytest.raises(FileFormatError):
        load_model(path)
    with pytest.raises(FileFormatError):
        load_model(tmp_path / "missing.json")


def test_load_rejects_wrong_schema(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"schema": "pullback-flow/999", "dim": 2}')
    with pytest.raises(SchemaError):
        load_model(path)
    path.write_text('{"dim": 2}')
    with pytest.raises(SchemaError):
        load_model(path)


def test_load_checks_requested_dimension(tmp_path):
    flow = CouplingFlow(3, 2, seed=0)
    pot = DiagonalQuadratic(3)
    path = tmp_path / "model.json"
    save_model(path, flow, pot)
    with pytest.raises(DimensionMismatchError):
        load_model(path, expect_dim=2)


def test_truncated_model_gives_no_partial_flow(tmp_path):
    flow = CouplingFlow(2, 2, seed=0)
    pot = DiagonalQuadratic(2)
    path = tmp_path / "model.json"
    save_model(path, flow, pot)
    doc = path.read_text()
    (tmp_path / "cut.json").write_text(
        doc.replace('"log_variances"', '"wrong_key"')
    )
    with pytest.raises(FileFormatError):
        load_model(tmp_path / "cut.json")


def test_overflow_raises_structured_error():
    flow = CouplingFlow(2, 3, seed=0)
    flow.layers[1].shift_net.b_out.value[...] = 1e308
    with pytest.raises(FlowOverflowError) as info:
        # one shift of 1e308 is finite, the next layer squares the scale input
        flow.forward(np.array([[1e308, 1.0]]))
    assert info.value.layer in (0, 1, 2)


def test_dimension_validation():
    flow = CouplingFlow(3, 2, seed=0)
    with pytest.raises(DimensionMismatchError):
        flow.forward(np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        flow.inverse(np.zeros((4, 2)))


def test_rejects_degenerate_construction():
    with pytest.raises(ValueError):
        CouplingFlow(1, 2, seed=0)
    with pytest.raises(ValueError):
        CouplingFlow(2, 2, seed=0, masks=[np.array([True, True])] * 2)


def test_mask_parameter_counts():
    flow = CouplingFlow(2, 2, hidden=8, blocks=2, seed=0)
    # per conditioner: stem + 2 blocks (2 layers each) + head, weights and biases
    per_net = 2 + 4 * 2 + 2
    assert len(flow.parameters()) == 2 * 2 * per_net
    names = [p.name for p in flow.parameters()]
    assert len(names) == len(set(names))
