import math

import numpy as np
import pytest

from splicernn.cells import (
    CELL_KINDS,
    CellState,
    GruParams,
    IrnnParams,
    LstmParams,
    gru_backward,
    gru_forward,
    gru_step,
    irnn_backward,
    irnn_forward,
    irnn_step,
    lstm_backward,
    lstm_forward,
    lstm_step,
    parameter_count,
)

from gradcheck import cell_gradient_error, random_cell
from oracles import gru_scalar_step, irnn_scalar_step, lstm_scalar_step


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _zero_params(cls, d, h):
    blocks = cls.blocks
    arrays = {"W_x": np.zeros((blocks * h, d)), "W_h": np.zeros((blocks * h, h)), "b": np.zeros(blocks * h)}
    if cls is LstmParams:
        arrays.update(w_ci=np.zeros(h), w_cf=np.zeros(h), w_co=np.zeros(h))
    return cls(**arrays)


class TestLstmStep:
    def test_zero_case(self):
        p = _zero_params(LstmParams, 2, 3)
        state, cache = lstm_step(p, np.zeros((1, 2)), CellState.zeros(1, 3, True))
        for gate in (cache.i, cache.f, cache.o):
            np.testing.assert_array_equal(gate, 0.5)
        np.testing.assert_array_equal(cache.g, 0.0)
        np.testing.assert_array_equal(state.c, 0.0)
        np.testing.assert_array_equal(state.h, 0.0)

    def test_saturated_gates_keep_memory(self):
        p = _zero_params(LstmParams, 2, 3)
        p.gate("f")[2][:] = 1e3
        p.gate("i")[2][:] = -1e3
        c = np.array([[0.3, -1.7, 2.5]])
        state, _ = lstm_step(p, np.ones((1, 2)), CellState(np.zeros((1, 3)), c.copy()))
        np.testing.assert_array_equal(state.c, c)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        r = np.random.default_rng(seed)
        p = random_cell("lstm", 3, 4, r)
        x, h, c = r.normal(size=3), r.normal(size=4), r.normal(size=4)
        state, _ = lstm_step(p, x[None], CellState(h[None], c[None]))
        h_ref, c_ref = lstm_scalar_step(p, x.tolist(), h.tolist(), c.tolist())
        np.testing.assert_allclose(state.h[0], h_ref, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(state.c[0], c_ref, rtol=1e-13, atol=1e-15)

    def test_output_peephole_reads_updated_cell(self):
        # only w_co is nonzero; the output gate must see c_t, not c_{t-1} = 0
        p = _zero_params(LstmParams, 1, 1)
        p.gate("c")[0][:] = 1.0
        p["w_co"][:] = 2.0
        state, cache = lstm_step(p, np.ones((1, 1)), CellState.zeros(1, 1, True))
        c = 0.5 * math.tanh(1.0)
        assert cache.o[0, 0] == pytest.approx(_sig(2.0 * c), rel=1e-14)
        assert state.h[0, 0] == pytest.approx(_sig(2.0 * c) * math.tanh(c), rel=1e-14)

    def test_shape_mismatch(self):
        p = _zero_params(LstmParams, 2, 3)
        with pytest.raises(ValueError):
            lstm_step(p, np.zeros((1, 5)), CellState.zeros(1, 3, True))
        with pytest.raises(ValueError):
            lstm_step(p, np.zeros((1, 2)), CellState.zeros(2, 3, True))


class TestGruStep:
    def test_zero_case(self):
        p = _zero_params(GruParams, 2, 3)
        state, cache = gru_step(p, np.zeros((1, 2)), CellState.zeros(1, 3))
        np.testing.assert_array_equal(cache.z, 0.5)
        np.testing.assert_array_equal(cache.r, 0.5)
        np.testing.assert_array_equal(cache.cand, 0.0)
        np.testing.assert_array_equal(state.h, 0.0)

    def test_closed_update_gate_copies_state(self):
        r = np.random.default_rng(1)
        p = random_cell("gru", 2, 3, r)
        p.gate("z")[2][:] = -1e3
        h = r.normal(size=(1, 3))
        state, _ = gru_step(p, r.normal(size=(1, 2)), CellState(h.copy()))
        np.testing.assert_array_equal(state.h, h)

    def test_open_update_gate_takes_candidate(self):
        # pins the blend direction: z = 1 means "all new"
        r = np.random.default_rng(2)
        p = random_cell("gru", 2, 3, r)
        p.gate("z")[2][:] = 1e3
        state, cache = gru_step(p, r.normal(size=(1, 2)), CellState(r.normal(size=(1, 3))))
        np.testing.assert_array_equal(state.h, cache.cand)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        r = np.random.default_rng(seed)
        p = random_cell("gru", 3, 4, r)
        x, h = r.normal(size=3), r.normal(size=4)
        state, _ = gru_step(p, x[None], CellState(h[None]))
        np.testing.assert_allclose(state.h[0], gru_scalar_step(p, x.tolist(), h.tolist()), rtol=1e-13, atol=1e-15)


class TestIrnnStep:
    def test_fresh_init_hand_case(self, rng):
        p = IrnnParams.init(2, 3, rng)
        state, _ = irnn_step(p, np.zeros((1, 2)), CellState(np.array([[1.0, -2.0, 3.0]])))
        np.testing.assert_array_equal(state.h, [[1.0, 0.0, 3.0]])

    def test_init_shape(self, rng):
        p = IrnnParams.init(4, 5, rng, scale=0.5)
        np.testing.assert_array_equal(p["W_h"], 0.5 * np.eye(5))
        assert not p["b"].any()

    @pytest.mark.parametrize("T", [1, 7, 60])
    def test_identity_preserves_nonnegative_state(self, rng, T):
        p = IrnnParams.init(4, 6, rng)
        h0 = np.abs(rng.normal(size=(2, 6)))
        hs, _ = irnn_forward(p, np.zeros((2, T, 4)), CellState(h0.copy()))
        np.testing.assert_array_equal(hs[:, -1], h0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        r = np.random.default_rng(seed)
        p = random_cell("irnn", 3, 4, r)
        x, h = r.normal(size=3), r.normal(size=4)
        state, _ = irnn_step(p, x[None], CellState(h[None]))
        np.testing.assert_allclose(state.h[0], irnn_scalar_step(p, x.tolist(), h.tolist()), rtol=1e-13, atol=1e-15)


def _scalar_params(cls, **values):
    p = _zero_params(cls, 1, 1)
    for key, v in values.items():
        gate, name = key.split("_", 1) if "_" in key else (None, key)
        if gate in ("i", "f", "c", "o", "z", "r", "h"):
            idx = {"W": 0, "U": 1, "b": 2}[name]
            p.gate(gate)[idx][:] = v
        else:
            p[key][:] = v
    return p


class TestClosedForms:
    def test_lstm_single_step(self):
        # loss = h_1, zero initial state, d = h = 1
        x = 0.8
        p = _scalar_params(LstmParams, i_W=0.4, f_W=-0.3, c_W=0.9, o_W=0.2, i_b=0.1, f_b=1.0,
                           c_b=-0.2, o_b=0.3, w_ci=0.5, w_cf=-0.6, w_co=0.7)
        i = _sig(0.4 * x + 0.1)
        g = math.tanh(0.9 * x - 0.2)
        c = i * g
        o = _sig(0.2 * x + 0.7 * c + 0.3)
        tc = math.tanh(c)
        do = tc * o * (1 - o)
        dc = o * (1 - tc ** 2) + do * 0.7
        d_bi = dc * g * i * (1 - i)
        d_bc = dc * i * (1 - g ** 2)

        hs, caches = lstm_forward(p, np.array([[[x]]]))
        assert hs[0, 0, 0] == pytest.approx(o * tc, rel=1e-14)
        d_x, grads = lstm_backward(p, caches, np.ones((1, 1)))
        b = grads["b"]
        assert b[0] == pytest.approx(d_bi, rel=1e-12)
        assert b[1] == 0.0  # c_{t-1} = 0 so the forget gate has no effect
        assert b[2] == pytest.approx(d_bc, rel=1e-12)
        assert b[3] == pytest.approx(do, rel=1e-12)
        assert grads["w_co"][0] == pytest.approx(do * c, rel=1e-12)
        assert grads["w_ci"][0] == 0.0 and grads["w_cf"][0] == 0.0
        assert not grads["W_h"].any()
        np.testing.assert_allclose(grads["W_x"][:, 0], np.array([d_bi, 0.0, d_bc, do]) * x, rtol=1e-12)
        assert d_x[0, 0, 0] == pytest.approx(0.4 * d_bi + 0.9 * d_bc + 0.2 * do, rel=1e-12)

    def test_gru_single_step(self):
        x, h0 = -0.5, 0.7
        p = _scalar_params(GruParams, z_W=0.3, z_U=-0.4, z_b=0.1, r_W=0.6, r_U=0.2, r_b=-0.1,
                           h_W=0.8, h_U=0.5, h_b=0.05)
        z = _sig(0.3 * x - 0.4 * h0 + 0.1)
        r = _sig(0.6 * x + 0.2 * h0 - 0.1)
        hc = math.tanh(0.8 * x + 0.5 * r * h0 + 0.05)
        hs, caches = gru_forward(p, np.array([[[x]]]), CellState(np.array([[h0]])))
        assert hs[0, 0, 0] == pytest.approx((1 - z) * h0 + z * hc, rel=1e-14)

        _, grads = gru_backward(p, caches, np.ones((1, 1)))
        da = z * (1 - hc ** 2)
        dz = (hc - h0) * z * (1 - z)
        dr = da * 0.5 * h0 * r * (1 - r)
        np.testing.assert_allclose(grads["b"], [dz, dr, da], rtol=1e-12)
        np.testing.assert_allclose(grads["W_h"][:, 0], [dz * h0, dr * h0, da * r * h0], rtol=1e-12)

    def test_irnn_two_steps(self):
        x1, x2, h0 = 0.5, 1.5, 0.2
        wx, wh, b = 0.9, 0.8, 0.1
        p = IrnnParams(W_x=np.array([[wx]]), W_h=np.array([[wh]]), b=np.array([b]))
        h1 = wx * x1 + wh * h0 + b
        h2 = wx * x2 + wh * h1 + b
        assert h1 > 0 and h2 > 0
        hs, caches = irnn_forward(p, np.array([[[x1], [x2]]]), CellState(np.array([[h0]])))
        assert hs[0, 1, 0] == pytest.approx(h2, rel=1e-14)
        d_xs, grads = irnn_backward(p, caches, np.ones((1, 1)))
        assert grads["W_h"][0, 0] == pytest.approx(h1 + wh * h0, rel=1e-12)
        assert grads["b"][0] == pytest.approx(1 + wh, rel=1e-12)
        assert grads["W_x"][0, 0] == pytest.approx(x2 + wh * x1, rel=1e-12)
        np.testing.assert_allclose(d_xs[0, :, 0], [wh * wx, wx], rtol=1e-12)


@pytest.mark.parametrize("kind", sorted(CELL_KINDS))
def test_zero_upstream_gives_zero_gradients(kind):
    r = np.random.default_rng(0)
    cell = CELL_KINDS[kind]
    p = random_cell(kind, 3, 4, r)
    _, caches = cell.forward(p, r.normal(size=(2, 5, 3)))
    d_xs, grads = cell.backward(p, caches, np.zeros((2, 5, 4)))
    assert not d_xs.any()
    assert all(not g.any() for g in grads.values())


def test_irnn_dead_region_blocks_gradient():
    p = IrnnParams(W_x=np.ones((2, 1)), W_h=np.eye(2), b=np.full(2, -10.0))
    _, caches = irnn_forward(p, np.full((1, 4, 1), 0.5))
    d_xs, grads = irnn_backward(p, caches, np.ones((1, 2)))
    assert not d_xs.any()
    assert all(not g.any() for g in grads.values())


@pytest.mark.parametrize("kind", sorted(CELL_KINDS))
def test_cache_length_mismatch(kind):
    r = np.random.default_rng(0)
    cell = CELL_KINDS[kind]
    p = random_cell(kind, 2, 2, r)
    _, caches = cell.forward(p, r.normal(size=(1, 4, 2)))
    with pytest.raises(ValueError):
        cell.backward(p, caches[:3], np.ones((1, 4, 2)))
    with pytest.raises(ValueError):
        cell.backward(p, [], np.ones((1, 2)))


@pytest.mark.parametrize("kind", sorted(CELL_KINDS))
@pytest.mark.parametrize("seed", range(12))
def test_finite_differences(kind, seed):
    assert cell_gradient_error(kind, 1000 + seed) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_gate_ranges(seed):
    r = np.random.default_rng(seed)
    p = random_cell("lstm", 3, 4, r)
    _, caches = lstm_forward(p, r.normal(size=(4, 6, 3)))
    for c in caches:
        for gate in (c.i, c.f, c.o):
            assert np.all((gate > 0) & (gate < 1))
        assert np.all(np.abs(c.g) < 1)
    q = random_cell("gru", 3, 4, r)
    _, caches = gru_forward(q, r.normal(size=(4, 6, 3)))
    for c in caches:
        assert np.all((c.z > 0) & (c.z < 1)) and np.all((c.r > 0) & (c.r < 1))
        assert np.all(np.abs(c.cand) < 1)


@pytest.mark.parametrize("kind", sorted(CELL_KINDS))
def test_forward_is_pure(kind):
    r = np.random.default_rng(3)
    cell = CELL_KINDS[kind]
    p = random_cell(kind, 3, 4, r)
    before = {k: v.copy() for k, v in p.arrays.items()}
    xs = r.normal(size=(2, 6, 3))
    a, _ = cell.forward(p, xs)
    b, _ = cell.forward(p, xs.copy())
    assert a.tobytes() == b.tobytes()
    assert all(np.array_equal(before[k], p.arrays[k]) for k in before)


@pytest.mark.parametrize("kind", sorted(CELL_KINDS))
def test_parameter_count(kind, rng):
    p = CELL_KINDS[kind].params.init(5, 7, rng)
    assert p.num_parameters() == parameter_count(kind, 5, 7)


def test_lstm_init_biases(rng):
    p = LstmParams.init(4, 3, rng)
    np.testing.assert_array_equal(p["b"], [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])
    assert not (p["w_ci"].any() or p["w_cf"].any() or p["w_co"].any())
