"""Tape engine: forward values, backward adjoints, finite-difference checks."""

import numpy as np
import pytest

from nssid.autodiff import (ParamStore, Tape, backward, compare_grads, forward,
                            grad_check)
from nssid.errors import NumericalError, ShapeError


def make_store(**arrays):
    store = ParamStore()
    for name, value in arrays.items():
        store.add(name, value)
    return store


# -- ParamStore ----------------------------------------------------------------


def test_paramstore_flatten_roundtrip():
    rng = np.random.default_rng(0)
    store = make_store(w=rng.standard_normal((3, 4)), b=rng.standard_normal(3),
                       v=rng.standard_normal((2, 2, 2)))
    flat = store.flatten()
    dup = store.copy()
    dup.assign_flat(flat)
    for name in store.names():
        assert np.array_equal(store[name], dup[name])
    assert flat.size == store.size


def test_paramstore_rejects_duplicate_names():
    store = make_store(w=[1.0])
    with pytest.raises(ValueError, match="duplicate"):
        store.add("w", [2.0])


def test_paramstore_spans_cover_flat_vector():
    store = make_store(a=np.ones((2, 3)), b=np.zeros(5))
    spans = store.spans()
    assert spans["a"] == (0, 6)
    assert spans["b"] == (6, 11)


# -- forward -------------------------------------------------------------------


def test_affine_zero_map():
    store = make_store(w=np.zeros((2, 3)), b=np.zeros(2))
    tape = Tape(store)
    y = tape.affine(tape.const([1.0, -2.0, 5.0]), tape.param("w"), tape.param("b"))
    assert np.array_equal(y.value, np.zeros(2))


def test_tanh_at_zero():
    tape = Tape()
    assert tape.tanh(tape.const([0.0])).value[0] == 0.0


def test_affine_hand_value():
    store = make_store(w=[[2.0]], b=[1.0])
    tape = Tape(store)
    y = tape.affine(tape.const([3.0]), tape.param("w"), tape.param("b"))
    assert y.value[0] == 7.0


def test_affine_shape_error_names_node():
    store = make_store(w=np.zeros((2, 3)))
    tape = Tape(store)
    with pytest.raises(ShapeError, match="mylayer"):
        tape.affine(tape.const([1.0, 2.0]), tape.param("w"), name="mylayer")


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(1)
    store = make_store(w=rng.standard_normal((4, 3)), b=rng.standard_normal(4))
    x = rng.standard_normal(3)

    def graph(tape):
        return tape.mean_sq(tape.tanh(tape.affine(
            tape.const(x), tape.param("w"), tape.param("b"))))

    out1, _ = forward(graph, store)
    out2, _ = forward(graph, store)
    assert np.array_equal(out1.value, out2.value)


# -- backward ------------------------------------------------------------------


def test_backward_square():
    store = make_store(p=[3.0])
    tape = Tape(store)
    p = tape.param("p")
    loss = tape.sum_sq(p)
    tape.backward(loss)
    assert tape.param_grads()["p"][0] == 6.0


def test_backward_unused_param_is_zero():
    store = make_store(p=[3.0], q=np.ones((2, 2)))
    tape = Tape(store)
    loss = tape.sum_sq(tape.param("p"))
    tape.backward(loss)
    assert np.array_equal(tape.param_grads()["q"], np.zeros((2, 2)))


def test_backward_requires_scalar_output():
    from nssid.errors import ContractError

    tape = Tape()
    v = tape.const([1.0, 2.0])
    with pytest.raises(ContractError, match="scalar"):
        tape.backward(v)


def test_backward_linear_in_seed():
    rng = np.random.default_rng(2)
    store = make_store(w=rng.standard_normal((3, 3)), b=rng.standard_normal(3))

    def graph(tape):
        h = tape.tanh(tape.affine(tape.const(rng_x), tape.param("w"), tape.param("b")))
        return tape.sum_sq(h)

    rng_x = rng.standard_normal(3)
    out, tape = forward(graph, store)
    g1 = backward(tape, out, seed=1.0)
    out, tape = forward(graph, store)
    g2 = backward(tape, out, seed=2.0)
    for name in g1:
        assert np.array_equal(2.0 * g1[name], g2[name])


def test_backward_least_squares_matches_fd():
    rng = np.random.default_rng(3)
    store = make_store(w=rng.uniform(-1, 1, (3, 4)))
    x = rng.standard_normal(4)
    y = rng.standard_normal(3)

    def graph(tape):
        pred = tape.affine(tape.const(x), tape.param("w"))
        return tape.mean_sq(tape.sub(pred, tape.const(y)))

    report = grad_check(graph, store, fd_step=1e-6, tolerance=1e-4)
    assert report.passed, report


# -- grad_check ----------------------------------------------------------------


def test_grad_check_linear_graph_nearly_exact():
    rng = np.random.default_rng(4)
    store = make_store(w=rng.uniform(-1, 1, (1, 5)))
    x = rng.standard_normal(5)

    def graph(tape):
        # sum of squares of a linear map is quadratic in w: central differences
        # are exact up to rounding, for any step size
        return tape.sum_sq(tape.affine(tape.const(x), tape.param("w")))

    report = grad_check(graph, store, fd_step=1e-3, tolerance=1e-8)
    assert report.max_rel_error < 1e-10


def test_grad_check_two_layer_mlp():
    rng = np.random.default_rng(5)
    store = make_store(w1=rng.uniform(-1, 1, (6, 4)), b1=rng.uniform(-1, 1, 6),
                       w2=rng.uniform(-1, 1, (2, 6)), b2=rng.uniform(-1, 1, 2))
    x = rng.standard_normal(4)

    def graph(tape):
        h = tape.tanh(tape.affine(tape.const(x), tape.param("w1"), tape.param("b1")))
        out = tape.tanh(tape.affine(h, tape.param("w2"), tape.param("b2")))
        return tape.mean_sq(out)

    report = grad_check(graph, store, fd_step=1e-6, tolerance=1e-4)
    assert report.passed, report


def test_grad_check_validates_arguments():
    store = make_store(p=[1.0])
    graph = lambda tape: tape.sum_sq(tape.param("p"))
    with pytest.raises(ValueError):
        grad_check(graph, store, fd_step=0.0)
    with pytest.raises(ValueError):
        grad_check(graph, store, tolerance=-1.0)


def test_corrupted_adjoint_reported():
    analytic = {"w": np.array([1.0, 2.0, 3.0])}
    numeric = {"w": np.array([1.0, 2.0, 3.0])}
    analytic["w"] = analytic["w"].copy()
    analytic["w"][1] += 1.0  # injected fault
    report = compare_grads(analytic, numeric, tolerance=1e-4)
    assert not report.passed
    assert report.worst_param == "w"
    assert report.worst_index == 1


def test_nonfinite_raises_named_numerical_error():
    # finite leafs, overflow at the affine node: the error names that node
    store = make_store(w=np.array([[1e308]]))
    tape = Tape(store)
    tape.affine(tape.const([1e308]), tape.param("w"), name="badnode")
    with pytest.raises(NumericalError, match="badnode"):
        tape.assert_finite()


# -- primitive backward rules vs finite differences ------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_random_composite_graphs_match_fd(seed):
    # exercises every primitive: affine, tanh, sigmoid, add, mul, scale,
    # concat, slice, mean_sq, on a batched input
    rng = np.random.default_rng(100 + seed)
    store = make_store(w1=rng.uniform(-1, 1, (5, 3)), b1=rng.uniform(-1, 1, 5),
                       w2=rng.uniform(-1, 1, (4, 5)), b2=rng.uniform(-1, 1, 4),
                       gain=rng.uniform(-1, 1, 4))
    x = rng.standard_normal((2, 3))

    def graph(tape):
        h = tape.tanh(tape.affine(tape.const(x), tape.param("w1"), tape.param("b1")))
        z = tape.sigmoid(tape.affine(h, tape.param("w2"), tape.param("b2")))
        rebuilt = tape.concat([tape.slice_last(z, 0, 2), tape.slice_last(z, 2, 4)])
        prod = tape.mul(rebuilt,
                        tape.tanh(tape.affine(h, tape.param("w2"), tape.param("gain"))))
        return tape.mean_sq(tape.add(prod, tape.scale(z, 0.25)))

    report = grad_check(graph, store, fd_step=1e-6, tolerance=1e-4)
    assert report.passed, report
