import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itdlpcc.nn import autograd as ag
from itdlpcc.nn.checkpoint import CheckpointError, arch_hash, load_checkpoint, save_checkpoint
from itdlpcc.nn.gradcheck import check_gradients
from itdlpcc.nn.layers import IRB, Conv3d, ConvTranspose3d
from itdlpcc.nn.losses import FOCAL_EPS, color_mse, focal_loss, total_distortion
from itdlpcc.nn.optim import Adam, AdamState, adam_step

LAYER_TOL = 1e-6


def p64(x):
    return ag.parameter(np.asarray(x, dtype=np.float64), dtype=np.float64)


def naive_conv3d(x, w, b, s):
    n, c, d, h, ww = x.shape
    o, _, k, _, _ = w.shape
    outs, pads = [], []
    for size in (d, h, ww):
        out_n, lo, _ = ag.same_padding(size, k, s)
        outs.append(out_n)
        pads.append(lo)
    y = np.zeros((n, o) + tuple(outs))
    for bi in range(n):
        for oi in range(o):
            for i, j, l in np.ndindex(*outs):
                acc = b[oi]
                for ci in range(c):
                    for a, bb, cc in np.ndindex(k, k, k):
                        p = (i * s + a - pads[0], j * s + bb - pads[1], l * s + cc - pads[2])
                        if all(0 <= v < m for v, m in zip(p, (d, h, ww))):
                            acc += w[oi, ci, a, bb, cc] * x[bi, ci, p[0], p[1], p[2]]
                y[bi, oi, i, j, l] = acc
    return y


# conv3d

@pytest.mark.parametrize("k,s,n", [(1, 1, 4), (3, 1, 5), (3, 2, 6), (3, 2, 5), (5, 1, 4), (5, 2, 7)])
def test_conv3d_matches_naive(rng, k, s, n):
    x = rng.standard_normal((2, 3, n, n, n))
    w = rng.standard_normal((4, 3, k, k, k))
    b = rng.standard_normal(4)
    out = ag.conv3d(ag.as_tensor(x, np.float64), ag.as_tensor(w, np.float64), ag.as_tensor(b, np.float64), s)
    assert out.shape == (2, 4) + (math.ceil(n / s),) * 3
    np.testing.assert_allclose(out.data, naive_conv3d(x, w, b, s), rtol=1e-12, atol=1e-12)


def test_conv3d_identity_kernel(rng):
    x = rng.standard_normal((1, 3, 4, 4, 4))
    w = np.zeros((3, 3, 1, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    np.testing.assert_array_equal(ag.conv3d(ag.as_tensor(x, np.float64), ag.as_tensor(w, np.float64)).data, x)


def test_conv3d_impulse_replicates_kernel(rng):
    x = np.zeros((1, 1, 7, 7, 7))
    x[0, 0, 3, 3, 3] = 1.0
    w = rng.standard_normal((1, 1, 3, 3, 3))
    out = ag.conv3d(ag.as_tensor(x, np.float64), ag.as_tensor(w, np.float64)).data
    # cross-correlation: the kernel appears flipped around the impulse
    np.testing.assert_array_equal(out[0, 0, 2:5, 2:5, 2:5], w[0, 0, ::-1, ::-1, ::-1])


def test_conv3d_shape_errors(rng):
    with pytest.raises(ValueError):
        ag.conv3d(np.zeros((1, 2, 4, 4, 4)), np.zeros((1, 3, 3, 3, 3)))
    with pytest.raises(ValueError):
        ag.conv3d(np.zeros((2, 4, 4, 4)), np.zeros((1, 2, 3, 3, 3)))


@pytest.mark.parametrize("k,s,n", [(3, 1, 4), (3, 2, 5), (5, 2, 4), (1, 1, 3)])
def test_conv3d_gradient(rng, k, s, n):
    x = p64(rng.standard_normal((2, 2, n, n, n)))
    w = p64(rng.standard_normal((3, 2, k, k, k)))
    b = p64(rng.standard_normal(3))
    probe = rng.standard_normal((2, 3) + (math.ceil(n / s),) * 3)
    err = check_gradients(lambda: ag.tsum(ag.conv3d(x, w, b, s) * probe), [x, w, b], n_probes=10)
    assert err < LAYER_TOL


@pytest.mark.parametrize("k,s,n", [(3, 2, 3), (3, 1, 4), (5, 2, 2)])
def test_conv_transpose_shape_and_gradient(rng, k, s, n):
    x = p64(rng.standard_normal((2, 3, n, n, n)))
    w = p64(rng.standard_normal((3, 2, k, k, k)))
    b = p64(rng.standard_normal(2))
    out = ag.conv_transpose3d(x, w, b, s)
    assert out.shape == (2, 2) + (n * s,) * 3
    probe = rng.standard_normal(out.shape)
    err = check_gradients(lambda: ag.tsum(ag.conv_transpose3d(x, w, b, s) * probe), [x, w, b], n_probes=10)
    assert err < LAYER_TOL


def test_conv_transpose_is_adjoint_of_conv(rng):
    # <conv(u), v> == <u, conv_t(v)> without bias
    u = rng.standard_normal((1, 2, 6, 6, 6))
    v = rng.standard_normal((1, 3, 3, 3, 3))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    lhs = (ag.conv3d(ag.as_tensor(u, np.float64), ag.as_tensor(w, np.float64), stride=2).data * v).sum()
    rhs = (u * ag.conv_transpose3d(ag.as_tensor(v, np.float64), ag.as_tensor(w, np.float64), stride=2).data).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


# elementwise ops

@pytest.mark.parametrize("op", [ag.relu, ag.sigmoid, ag.softplus, ag.exp,
                                lambda t: ag.log(ag.add(ag.mul(t, t), 1.0)),
                                lambda t: ag.power(ag.add(ag.mul(t, t), 0.5), 1.5),
                                lambda t: ag.div(t, ag.add(ag.mul(t, t), 2.0)),
                                lambda t: ag.clamp(t, -0.7, 0.9),
                                lambda t: ag.mean(t, axis=(1, 2)),
                                lambda t: ag.concat([t, ag.mul(t, 2.0)], axis=1)[:, 1:4],
                                lambda t: ag.reshape(t, (6, -1))])
def test_elementwise_gradients(rng, op):
    x = p64(rng.standard_normal((3, 4, 5)))
    probe_shape = op(ag.as_tensor(x.data)).shape
    probe = rng.standard_normal(probe_shape)
    assert check_gradients(lambda: ag.tsum(ag.mul(op(x), probe)), [x]) < LAYER_TOL


def test_broadcast_gradients(rng):
    a = p64(rng.standard_normal((3, 1, 4)))
    b = p64(rng.standard_normal((1, 5, 4)))
    probe = rng.standard_normal((3, 5, 4))
    assert check_gradients(lambda: ag.tsum(ag.mul(ag.sub(a, b), probe) + ag.mul(a, b)), [a, b]) < LAYER_TOL


def test_likelihood_bits_gradients(rng):
    y = p64(rng.normal(0, 2, (50,)))
    mu = p64(rng.normal(0, 2, (50,)))
    sigma = p64(rng.uniform(0.3, 3, (50,)))
    assert check_gradients(lambda: ag.tsum(ag.gaussian_bits(y, mu, sigma)), [y, mu, sigma]) < LAYER_TOL
    assert check_gradients(lambda: ag.tsum(ag.logistic_bits(y, mu, sigma)), [y, mu, sigma]) < LAYER_TOL


def test_gaussian_bits_value():
    bits = ag.gaussian_bits(ag.as_tensor(np.zeros(1)), np.zeros(1), np.full(1, 0.5)).data[0]
    assert bits == pytest.approx(-math.log2(math.erf(1 / math.sqrt(2))), rel=1e-12)
    assert bits == pytest.approx(0.550699, abs=1e-6)


def test_no_grad_builds_no_graph():
    x = p64(np.ones(3))
    with ag.no_grad():
        y = ag.mul(x, 2.0)
    assert not y.requires_grad and not y._parents


def test_no_grad_is_thread_local_and_exception_safe():
    barrier = threading.Barrier(8)

    def worker():
        with ag.no_grad():
            barrier.wait()
            return ag.grad_enabled()

    with ThreadPoolExecutor(8) as pool:
        assert not any(pool.map(lambda _: worker(), range(8)))
    assert ag.grad_enabled()
    with pytest.raises(RuntimeError):
        with ag.no_grad():
            raise RuntimeError
    assert ag.grad_enabled()


# IRB

def test_irb_zero_weights_is_identity(rng):
    irb = IRB(8, (1, 3, 5), rng=rng)
    for p in irb.parameters():
        p.data[...] = 0
    x = rng.standard_normal((2, 8, 4, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(irb(x).data, x)


def test_irb_preserves_shape_and_checks_channels(rng):
    irb = IRB(8, (1, 3), rng=rng)
    assert irb(rng.standard_normal((1, 8, 6, 6, 6)).astype(np.float32)).shape == (1, 8, 6, 6, 6)
    with pytest.raises(ValueError):
        irb(np.zeros((1, 4, 6, 6, 6), np.float32))


def test_irb_gradient(rng):
    irb = IRB(4, (1, 3, 5), rng=rng).astype(np.float64)
    for p in irb.parameters():
        p.data += rng.normal(0, 0.1, p.shape)  # non-zero biases exercise every path
    x = p64(rng.standard_normal((2, 4, 4, 4, 4)))
    probe = rng.standard_normal((2, 4, 4, 4, 4))
    err = check_gradients(lambda: ag.tsum(ag.mul(irb(x), probe)), [x] + irb.parameters())
    assert err < LAYER_TOL


def test_layers_reject_bad_kernels():
    with pytest.raises(ValueError):
        Conv3d(1, 1, 2)
    with pytest.raises(ValueError):
        Conv3d(1, 1, 3, stride=3)
    with pytest.raises(ValueError):
        ConvTranspose3d(1, 1, 4)


# losses

def test_focal_point_values():
    assert focal_loss(np.ones(1), np.full(1, 0.5)).item() == pytest.approx(0.7 * 0.25 * math.log(2), abs=1e-7)
    assert focal_loss(np.zeros(1), np.full(1, 0.5)).item() == pytest.approx(0.3 * 0.25 * math.log(2), abs=1e-7)
    assert focal_loss(np.ones(1), np.ones(1)).item() == pytest.approx(0, abs=1e-12)


def focal_oracle(u, v, alpha=0.7, gamma=2.0):
    v = np.clip(v, FOCAL_EPS, 1 - FOCAL_EPS)
    return np.mean(-alpha * u * (1 - v) ** gamma * np.log(v) - (1 - alpha) * (1 - u) * v**gamma * np.log(1 - v))


def test_focal_matches_formula(rng):
    u = (rng.random((2, 1, 4, 4, 4)) < 0.3).astype(np.float64)
    v = rng.random((2, 1, 4, 4, 4))
    assert focal_loss(u, ag.as_tensor(v, np.float64)).item() == pytest.approx(focal_oracle(u, v), rel=1e-12)
    per = focal_loss(u, ag.as_tensor(v, np.float64), per_block=True).data
    np.testing.assert_allclose(per, [focal_oracle(u[i], v[i]) for i in range(2)], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.booleans())
def test_focal_nonnegative_and_prefers_truth(v, u):
    target = np.array([float(u)])
    loss = focal_loss(target, np.array([v], np.float64)).item()
    assert loss >= 0
    assert focal_loss(target, target.copy()).item() <= loss + 1e-15


def test_focal_gradient(rng):
    u = (rng.random((2, 1, 3, 3, 3)) < 0.4).astype(np.float64)
    v = p64(rng.uniform(0.05, 0.95, (2, 1, 3, 3, 3)))
    assert check_gradients(lambda: focal_loss(u, v), [v]) < LAYER_TOL


def test_focal_shape_mismatch():
    with pytest.raises(ValueError):
        focal_loss(np.zeros((1, 1, 2, 2, 2)), np.zeros((1, 1, 2, 2, 3)))


def colour_oracle(src, dec):
    per = []
    for b in range(src.shape[0]):
        total, count = 0.0, 0
        for x, y, z in np.ndindex(*src.shape[2:]):
            if src[b, 0, x, y, z] > 0.5:
                total += sum((dec[b, c, x, y, z] - src[b, c, x, y, z]) ** 2 for c in (1, 2, 3)) / 3
                count += 1
        per.append(total / count)
    return np.array(per)


def test_color_mse_examples(rng):
    src = np.zeros((1, 4, 2, 2, 2))
    src[0, 0, 0, 0, 0] = 1
    dec = src.copy()
    assert color_mse(src, ag.as_tensor(dec, np.float64)).item() == 0
    src[0, 1, 0, 0, 0] = 1.0
    assert color_mse(src, ag.as_tensor(dec, np.float64)).item() == pytest.approx(1 / 3)


def test_color_mse_matches_loop_oracle_and_gradient(rng):
    src = rng.random((2, 4, 3, 3, 3))
    src[:, 0] = (src[:, 0] < 0.5)
    src[:, 0, 0, 0, 0] = 1
    dec = rng.random((2, 4, 3, 3, 3))
    per = color_mse(src, ag.as_tensor(dec, np.float64), per_block=True).data
    np.testing.assert_allclose(per, colour_oracle(src, dec), rtol=1e-12)
    d = p64(dec)
    assert check_gradients(lambda: color_mse(src, d), [d]) < LAYER_TOL


def test_color_mse_errors():
    with pytest.raises(ValueError):
        color_mse(np.zeros((1, 1, 2, 2, 2)), np.zeros((1, 1, 2, 2, 2)))
    with pytest.raises(ValueError):
        color_mse(np.zeros((1, 4, 2, 2, 2)), np.zeros((1, 4, 2, 2, 2)))


def test_total_distortion():
    assert total_distortion(0.2, 0.4, 0.0) == 0.2
    assert total_distortion(0.2, 0.4, 0.5) == pytest.approx(0.3)
    for w in (0.0, 0.3, 1.0):
        assert total_distortion(2 * 0.2, 2 * 0.4, w) == pytest.approx(2 * total_distortion(0.2, 0.4, w))
    with pytest.raises(ValueError):
        total_distortion(1, 1, 1.5)


# Adam

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState(), 0.1)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adam_first_step_is_sign(g):
    p = [np.array([0.0])]
    lr = 1e-3
    adam_step(p, [np.array([g])], AdamState(), lr)
    # m_hat = g, v_hat = g**2 after bias correction
    assert p[0][0] == pytest.approx(-lr * g / (abs(g) + 1e-8), rel=1e-12)
    assert p[0][0] == pytest.approx(-lr * np.sign(g), rel=1e-4)


def test_adam_two_steps_decrease_quadratic():
    x = ag.parameter(np.array([1.0]), dtype=np.float64)
    opt = Adam([x], lr=0.1)
    values = [float(x.data[0] ** 2)]
    for _ in range(2):
        opt.zero_grad()
        ag.tsum(ag.mul(x, x)).backward()
        opt.step()
        values.append(float(x.data[0] ** 2))
    assert values[2] < values[1] < values[0]


# checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    state = {"a.weight": rng.standard_normal((2, 3, 3)).astype(np.float32), "b": np.float32(rng.random(4))}
    arch = {"width": 8, "kernels": [1, 3]}
    save_checkpoint(tmp_path / "m.ckpt", arch, state)
    arch2, state2 = load_checkpoint(tmp_path / "m.ckpt")
    assert arch2 == arch
    assert list(state2) == list(state)
    for k in state:
        np.testing.assert_array_equal(state2[k], state[k])
    assert arch_hash(arch) == arch_hash({"kernels": [1, 3], "width": 8})


def test_checkpoint_detects_corruption(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"w": 1}, {"x": np.ones(3, np.float32)})
    data = bytearray((tmp_path / "m.ckpt").read_bytes())
    tampered = bytes(data).replace(b'{"w":1}', b'{"w":2}')
    (tmp_path / "bad.ckpt").write_bytes(tampered)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(bytes(data[:-2]))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"X" + bytes(data[1:]))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.ckpt")


def test_module_state_dict_round_trip(rng):
    a = IRB(4, rng=np.random.default_rng(1))
    b = IRB(4, rng=np.random.default_rng(2))
    b.load_state_dict(a.state_dict())
    x = rng.standard_normal((1, 4, 4, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({"nope": np.zeros(1)})
