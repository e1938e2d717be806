"""Layer kernels and model assembly: forward oracles, BPTT gradients."""
import numpy as np
import pytest

from coheq import metrics
from coheq.activations import exact_spec, pwl_spec, taylor_spec
from coheq.nn.layers import (
    BiLstmLayer,
    Conv1dLayer,
    LstmParams,
    LstmState,
    MultCounter,
    bilstm_forward,
    conv1d,
    lstm_cell_step,
)
from coheq.nn.model import build_bilstm_cnn, build_deep_cnn, EqualizerModel

SIG = exact_spec("sigmoid")
PHI = exact_spec("tanh")


def _params(n_in, n_hidden, seed):
    rng = np.random.RandomState(seed)
    return LstmParams(
        rng.randn(n_in, 4 * n_hidden) * 0.4,
        rng.randn(n_hidden, 4 * n_hidden) * 0.4,
        rng.randn(4 * n_hidden) * 0.1,
        sigma_spec=SIG,
        phi_spec=PHI,
    )


def _zero_state(n_hidden):
    return LstmState(np.zeros(n_hidden), np.zeros(n_hidden))


# -- LSTM cell ---------------------------------------------------------------


def test_cell_step_zero_weights():
    # All gates sit at sigma(0) = 1/2 and the candidate at tanh(0) = 0, so
    # the cell halves and the output reads it through tanh.
    p = LstmParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8), sigma_spec=SIG, phi_spec=PHI)
    c0 = np.array([0.4, -1.2])
    out = lstm_cell_step(p, np.array([1.0, -2.0, 0.5]), LstmState(np.zeros(2), c0))
    np.testing.assert_allclose(out.c, 0.5 * c0, atol=1e-15)
    np.testing.assert_allclose(out.h, 0.5 * np.tanh(0.5 * c0), atol=1e-15)


def test_cell_step_matches_per_gate_formula():
    # Independent recomputation through the conventional per-gate views.
    p = _params(3, 4, seed=10)
    x = np.array([0.3, -0.8, 1.1])
    h0 = np.array([0.2, -0.1, 0.05, 0.4])
    c0 = np.array([-0.3, 0.6, 0.0, 1.2])

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i = sig(p.W_i @ x + p.U_i @ h0 + p.b_i)
    f = sig(p.W_f @ x + p.U_f @ h0 + p.b_f)
    g = np.tanh(p.W_c @ x + p.U_c @ h0 + p.b_c)
    o = sig(p.W_o @ x + p.U_o @ h0 + p.b_o)
    c1 = f * c0 + i * g
    h1 = o * np.tanh(c1)
    out = lstm_cell_step(p, x, LstmState(h0, c0))
    np.testing.assert_allclose(out.c, c1, atol=1e-14)
    np.testing.assert_allclose(out.h, h1, atol=1e-14)


def test_cell_step_saturated_gates_carry_the_cell():
    # Forget gate pinned open, input gate pinned shut: the cell state rides
    # through unchanged and the output gate exposes tanh(c).
    p = LstmParams(np.zeros((2, 8)), np.zeros((2, 8)), np.zeros(8), sigma_spec=SIG, phi_spec=PHI)
    b = p.b
    b[0:2] = -30.0  # i
    b[2:4] = +30.0  # f
    b[6:8] = +30.0  # o
    c0 = np.array([0.7, -0.9])
    out = lstm_cell_step(p, np.array([1.0, 1.0]), LstmState(np.zeros(2), c0))
    np.testing.assert_allclose(out.c, c0, atol=1e-12)
    np.testing.assert_allclose(out.h, np.tanh(c0), atol=1e-12)


def test_cell_step_batched_matches_loop():
    p = _params(4, 3, seed=3)
    rng = np.random.RandomState(0)
    xb = rng.randn(5, 4)
    state = LstmState(rng.randn(5, 3) * 0.3, rng.randn(5, 3) * 0.3)
    out = lstm_cell_step(p, xb, state)
    for k in range(5):
        single = lstm_cell_step(p, xb[k], LstmState(state.h[k], state.c[k]))
        np.testing.assert_allclose(out.h[k], single.h, atol=1e-14)
        np.testing.assert_allclose(out.c[k], single.c, atol=1e-14)


def test_cell_step_shape_errors():
    p = _params(3, 2, seed=1)
    with pytest.raises(ValueError, match="input features"):
        lstm_cell_step(p, np.zeros(4), _zero_state(2))
    with pytest.raises(ValueError, match="state width"):
        lstm_cell_step(p, np.zeros(3), _zero_state(5))


def test_lstm_params_validation():
    with pytest.raises(ValueError, match="n_input"):
        LstmParams(np.zeros((3, 7)), np.zeros((2, 8)), np.zeros(8), sigma_spec=SIG, phi_spec=PHI)
    with pytest.raises(ValueError, match="u must be"):
        LstmParams(np.zeros((3, 8)), np.zeros((3, 8)), np.zeros(8), sigma_spec=SIG, phi_spec=PHI)
    with pytest.raises(ValueError, match="sigmoid"):
        LstmParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8), sigma_spec=PHI, phi_spec=PHI)


def test_gate_views_cover_the_packed_matrix():
    p = _params(3, 4, seed=2)
    rebuilt = np.concatenate([p.W_i.T, p.W_f.T, p.W_c.T, p.W_o.T], axis=1)
    np.testing.assert_array_equal(rebuilt, p.w)
    np.testing.assert_array_equal(
        np.concatenate([p.b_i, p.b_f, p.b_c, p.b_o]), p.b
    )


# -- bidirectional sequence --------------------------------------------------


def test_bilstm_edge_steps_match_single_cell():
    # The forward direction's first step and the backward direction's last
    # step both start from the zero state, so they must equal a bare cell
    # step on that input alone.
    fwd = _params(3, 4, seed=20)
    bwd = _params(3, 4, seed=21)
    rng = np.random.RandomState(5)
    x = rng.randn(7, 3)
    y = bilstm_forward(fwd, bwd, x)
    assert y.shape == (7, 8)
    first = lstm_cell_step(fwd, x[0], _zero_state(4))
    last = lstm_cell_step(bwd, x[6], _zero_state(4))
    np.testing.assert_allclose(y[0, :4], first.h, atol=1e-14)
    np.testing.assert_allclose(y[6, 4:], last.h, atol=1e-14)


def test_bilstm_forward_matches_stepwise_recurrence():
    fwd = _params(2, 3, seed=30)
    bwd = _params(2, 3, seed=31)
    rng = np.random.RandomState(6)
    x = rng.randn(5, 2)
    y = bilstm_forward(fwd, bwd, x)
    state = _zero_state(3)
    for t in range(5):
        state = lstm_cell_step(fwd, x[t], state)
        np.testing.assert_allclose(y[t, :3], state.h, atol=1e-13)
    state = _zero_state(3)
    for t in range(4, -1, -1):
        state = lstm_cell_step(bwd, x[t], state)
        np.testing.assert_allclose(y[t, 3:], state.h, atol=1e-13)


def test_bilstm_batch_consistency():
    layer = BiLstmLayer.glorot("b", 4, 5, np.random.RandomState(1), sigma_spec=SIG, phi_spec=PHI)
    rng = np.random.RandomState(2)
    xb = rng.randn(3, 9, 4)
    yb = layer.forward(xb)
    for k in range(3):
        np.testing.assert_allclose(layer.forward(xb[k]), yb[k], atol=1e-14)


def test_bilstm_direction_shape_mismatch():
    with pytest.raises(ValueError, match="directions must agree"):
        BiLstmLayer("b", _params(3, 4, seed=0), _params(3, 5, seed=1))


# -- convolution --------------------------------------------------------------


def _conv_reference(x, w, b, padding):
    # Brute-force cross-correlation with explicit loops.
    c_out, c_in, k = w.shape
    pl = (k - 1) // 2 if padding == "same" else 0
    t_out = x.shape[0] if padding == "same" else x.shape[0] - k + 1
    y = np.zeros((t_out, c_out))
    for t in range(t_out):
        for o in range(c_out):
            acc = b[o]
            for j in range(k):
                src = t + j - pl
                if 0 <= src < x.shape[0]:
                    acc += x[src] @ w[o, :, j]
            y[t, o] = acc
    return y


@pytest.mark.parametrize("padding", ["same", "valid"])
@pytest.mark.parametrize("kernel", [5, 4])
def test_conv1d_matches_brute_force(padding, kernel):
    rng = np.random.RandomState(40 + kernel)
    x = rng.randn(16, 3)
    w = rng.randn(4, 3, kernel)
    b = rng.randn(4)
    got = conv1d(x, w, b, padding=padding)
    np.testing.assert_allclose(got, _conv_reference(x, w, b, padding), atol=1e-12)


def test_conv1d_validation():
    rng = np.random.RandomState(1)
    with pytest.raises(ValueError, match="channels"):
        conv1d(rng.randn(8, 3), rng.randn(2, 4, 3))
    with pytest.raises(ValueError, match="padding"):
        conv1d(rng.randn(8, 3), rng.randn(2, 3, 3), padding="full")
    with pytest.raises(ValueError, match="shorter than the kernel"):
        conv1d(rng.randn(4, 3), rng.randn(2, 3, 5), padding="valid")


def test_conv_layer_activation_and_rebind():
    rng = np.random.RandomState(7)
    layer = Conv1dLayer.glorot("c", 3, 2, 5, rng, padding="same", activation=PHI)
    x = rng.randn(12, 3)
    pre = conv1d(x, layer.kernels, layer.bias, padding="same")
    np.testing.assert_allclose(layer.forward(x), np.tanh(pre), atol=1e-12)
    swapped = layer.rebind(taylor_spec("tanh", 3, 1.0))
    assert np.shares_memory(swapped.kernels, layer.kernels)
    assert swapped.activation.kind == "taylor"
    linear = Conv1dLayer.glorot("o", 3, 2, 5, rng, padding="valid", activation=None)
    assert linear.rebind(taylor_spec("tanh", 3, 1.0)).activation is None


# -- gradients ----------------------------------------------------------------


def _fd_check(model, seed, n_probes=4, h=1e-6):
    """Worst relative error between BPTT and central finite differences."""
    rng = np.random.RandomState(seed)
    x = rng.randn(4, model.window_symbols, 4) * 0.5
    y = rng.randn(4, model.n_output_symbols, 2) * 0.1
    _, grads = model.loss_and_gradients(x, y)
    worst = 0.0
    for key, arr in model.parameters().items():
        g = grads[key]
        for _ in range(n_probes):
            ij = tuple(rng.randint(0, s) for s in arr.shape)
            orig = arr[ij]
            arr[ij] = orig + h
            lp, _ = model.loss_and_gradients(x, y)
            arr[ij] = orig - h
            lm, _ = model.loss_and_gradients(x, y)
            arr[ij] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(g[ij]), 1e-12)
            worst = max(worst, abs(fd - g[ij]) / denom)
    return worst


def _mini_bilstm(**specs):
    return build_bilstm_cnn(seed=7, window_symbols=9, n_hidden=3, output_kernel=5, **specs)


def _mini_cnn(**specs):
    return build_deep_cnn(
        seed=8, window_symbols=9, n_filters=3, hidden_kernel=3, output_kernel=5, **specs
    )


@pytest.mark.parametrize("build", [_mini_bilstm, _mini_cnn])
def test_gradients_exact_activations(build):
    assert _fd_check(build(), seed=11) < 1e-5


@pytest.mark.parametrize("build", [_mini_bilstm, _mini_cnn])
def test_gradients_taylor9(build):
    model = build().rebind_activations(
        tanh=taylor_spec("tanh", 9, 1.0), sigmoid=taylor_spec("sigmoid", 9, 2.0)
    )
    assert _fd_check(model, seed=12) < 1e-5


@pytest.mark.parametrize("build", [_mini_bilstm, _mini_cnn])
def test_gradients_pwl9(build):
    model = build().rebind_activations(
        tanh=pwl_spec("tanh", 9), sigmoid=pwl_spec("sigmoid", 9)
    )
    assert _fd_check(model, seed=13) < 1e-5


# -- model assembly ------------------------------------------------------------


def test_geometry_of_both_architectures():
    m1 = build_bilstm_cnn(seed=0)
    assert (m1.window_symbols, m1.n_output_symbols) == (81, 61)
    assert [l.name for l in m1.layers] == ["bilstm", "out"]
    m2 = build_deep_cnn(seed=0)
    assert (m2.window_symbols, m2.n_output_symbols) == (81, 61)
    assert m2.forward(np.zeros((81, 4))).shape == (61, 2)


def test_instrumented_counter_matches_closed_form():
    # The complexity model and the executed arithmetic must agree exactly.
    for model in (build_bilstm_cnn(seed=1), build_deep_cnn(seed=2)):
        counter = MultCounter()
        model.forward(np.zeros((81, 4)), counter)
        assert counter.total == metrics.count_real_multipliers(model).total


def test_counter_scales_with_batch():
    model = build_deep_cnn(seed=3, window_symbols=15, n_filters=4, hidden_kernel=3, output_kernel=5)
    one = MultCounter()
    model.forward(np.zeros((15, 4)), one)
    many = MultCounter()
    model.forward(np.zeros((6, 15, 4)), many)
    assert many.total == 6 * one.total


def test_model_validation():
    rng = np.random.RandomState(0)
    conv = Conv1dLayer.glorot("out", 8, 2, 3, rng, padding="valid")
    with pytest.raises(ValueError, match="unknown architecture"):
        EqualizerModel("mlp", [conv], window_symbols=9)
    with pytest.raises(ValueError, match="channels"):
        EqualizerModel("deep-cnn", [conv], window_symbols=9)
    wide = Conv1dLayer.glorot("out", 4, 3, 3, rng, padding="valid")
    with pytest.raises(ValueError, match="output channels"):
        EqualizerModel("deep-cnn", [wide], window_symbols=9)


def test_rebind_shares_weights_copy_does_not():
    m = _mini_bilstm()
    same = m.rebind_activations(tanh=pwl_spec("tanh", 5))
    assert np.shares_memory(same.layers[0].fwd.w, m.layers[0].fwd.w)
    assert same.layers[0].fwd.phi_spec.kind == "pwl"
    assert same.layers[0].fwd.sigma_spec.kind == "exact"
    clone = m.copy()
    assert not np.shares_memory(clone.layers[0].fwd.w, m.layers[0].fwd.w)
    np.testing.assert_array_equal(clone.layers[0].fwd.w, m.layers[0].fwd.w)


def test_seeded_init_is_reproducible():
    a = build_bilstm_cnn(seed=42).parameters()
    b = build_bilstm_cnn(seed=42).parameters()
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])
    c = build_bilstm_cnn(seed=43).parameters()
    assert any(not np.array_equal(a[k], c[k]) for k in a)
