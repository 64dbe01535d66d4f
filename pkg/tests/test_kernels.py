import math

import numpy as np
import pytest

import capsde._kernels as kernels
from capsde._kernels import _fallback

try:
    from capsde._kernels import _compiled
except ImportError:
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None,
                                    reason="compiled backend not built")


def test_backend_selected():
    assert kernels.BACKEND in ("compiled", "python")


def log_march_args(n_space=200, n_steps=400, drift_field=None):
    x = np.linspace(-4.0, 4.0, n_space + 1)
    dx = x[1] - x[0]
    term = np.where(x >= math.log(1.25), 1.0, 0.0)
    einv = np.exp(-x)
    f_tab = np.linspace(0.0, 1.0, 33)
    return (term, einv, 2.455, 0.09, 2e-4, dx, n_steps, f_tab, 1.0,
            0.0, 1.0, True, drift_field)


@needs_compiled
def test_log_march_backends_agree():
    args = log_march_args()
    sa, wa, ba, ra = _fallback.march_log_lattice(*args)
    sb, wb, bb, rb = _compiled.march_log_lattice(*args)
    np.testing.assert_array_equal(sa, sb)
    assert wa == wb and ba == bb == -1 and ra == rb


@needs_compiled
def test_log_march_backends_agree_with_frozen_drift():
    base = log_march_args()
    sa = _fallback.march_log_lattice(*base)[0]
    args = log_march_args(drift_field=sa)
    oa = _fallback.march_log_lattice(*args)[0]
    ob = _compiled.march_log_lattice(*args)[0]
    np.testing.assert_array_equal(oa, ob)


@needs_compiled
def test_toy_march_backends_agree():
    n_space, n_steps = 300, 5000
    x = np.linspace(-2.0, 4.5, n_space + 1)
    dx = x[1] - x[0]
    term = np.clip((x - 1.25) / (2 * dx), 0.0, 1.0)
    dt = 1.0 / n_steps
    s = 1.0 - np.arange(n_steps + 1) * dt
    dbar = (s[:-1] ** 3 - s[1:] ** 3) / (6.0 * dt)
    args = (term, dbar, dt, dx, 0.0, 1.0, 50)
    ta = _fallback.march_toy_lattice(*args)
    tb = _compiled.march_toy_lattice(*args)
    assert ta[2] == tb[2] == -1
    np.testing.assert_array_equal(ta[0], tb[0])
    assert ta[1] == tb[1] and ta[3] == tb[3]


@needs_compiled
def test_simulation_backends_agree():
    n_time, n_space = 50, 80
    t = np.linspace(0.0, 1.0, n_time + 1)
    x = np.linspace(-1.0, 3.5, n_space + 1)
    vals = np.clip(np.subtract.outer(0.3 * t, -x) / 3.0, 0.0, 1.0)
    grad = np.gradient(vals, x[1] - x[0], axis=1)
    noise = np.random.default_rng(5).standard_normal((40, 256))
    fa = _fallback.feedback_euler_block(vals, t[0], t[1] - t[0], x[0],
                                        x[1] - x[0], 0, 0.0, 0.0,
                                        np.zeros(2), 0.0, 1.0, 1.3, 0.5,
                                        1e-2, 1e-2, noise)
    fb = _compiled.feedback_euler_block(vals, t[0], t[1] - t[0], x[0],
                                        x[1] - x[0], 0, 0.0, 0.0,
                                        np.zeros(2), 0.0, 1.0, 1.3, 0.5,
                                        1e-2, 1e-2, noise)
    np.testing.assert_allclose(fa[0], fb[0], rtol=0, atol=1e-12)
    assert fa[1] == fb[1]
    ma = _fallback.malliavin_block(vals, grad, t[0], t[1] - t[0], x[0],
                                   x[1] - x[0], 1.0, 1.3, 0.5, 1e-2, noise)
    mb = _compiled.malliavin_block(vals, grad, t[0], t[1] - t[0], x[0],
                                   x[1] - x[0], 1.0, 1.3, 0.5, 1e-2, noise)
    np.testing.assert_allclose(ma[0], mb[0], rtol=0, atol=1e-12)
    assert ma[1] == mb[1]


def test_log_march_stability_abort_metadata():
    # blow the diffusion number: dt far above dx^2 / sigma^2
    n_space = 100
    x = np.linspace(-4.0, 4.0, n_space + 1)
    dx = x[1] - x[0]
    term = np.where(x >= 0.0, 1.0, 0.0)
    args = (term, np.exp(-x), 0.0, 1.0, 0.5, dx, 4,
            np.linspace(0, 1, 5), 1.0, 0.0, 1.0, True, None)
    surf, min_w, bad, req = _fallback.march_log_lattice(*args)
    assert bad == 3          # first step of the backward sweep
    assert min_w < 0.0
    assert 0.0 < req < 0.5


def test_toy_march_certificate_counts_boundary_value():
    # convection alone: dt * vmax / dx decides; right boundary carries
    # the largest value, so the boundary must enter the certificate
    n_space = 50
    x = np.linspace(0.0, 1.0, n_space + 1)
    dx = x[1] - x[0]
    term = np.clip((x - 0.5) / (4 * dx), 0.0, 1.0)
    dbar = np.zeros(8)
    dt_bad = 1.5 * dx
    surf, min_w, bad, req = _fallback.march_toy_lattice(
        term, dbar, dt_bad, dx, 0.0, 1.0, 1)
    assert bad == 7
    assert req == pytest.approx(dx, rel=1e-12)


def test_interp_rows_time_one_sided():
    vals = np.array([[0.0, 0.0], [1.0, 1.0], [10.0, 10.0]])
    # query inside the final interval must hold row 1, not blend row 2
    got, out = _fallback._interp_rows(vals, 1.9, np.array([0.5]),
                                      0.0, 1.0, 2, 0.0, 1.0, 1)
    assert got[0] == 1.0 and not out[0]
    got, _ = _fallback._interp_rows(vals, 0.25, np.array([0.5]),
                                    0.0, 1.0, 2, 0.0, 1.0, 1)
    assert got[0] == pytest.approx(0.25)


def test_interp_rows_space_clamp_flags():
    vals = np.tile(np.array([1.0, 2.0, 3.0]), (3, 1))
    got, out = _fallback._interp_rows(vals, 0.0, np.array([-0.5, 0.5, 2.5]),
                                      0.0, 1.0, 2, 0.0, 1.0, 2)
    assert list(out) == [True, False, True]
    assert got[0] == 1.0 and got[2] == 3.0


def test_lut_eval_clips_and_interpolates():
    tab = np.array([0.0, 1.0, 4.0])   # nodes at u = 0, 0.5, 1
    u = np.array([-1.0, 0.25, 0.75, 2.0])
    got = _fallback._lut_eval(u, tab, 1.0)
    np.testing.assert_allclose(got, [0.0, 0.5, 2.5, 4.0])


def test_feedback_block_counts_clamped_paths():
    vals = np.zeros((3, 3))
    t = np.array([0.0, 0.5, 1.0])
    x = np.array([-1.0, 0.0, 1.0])
    noise = np.full((5, 64), 4.0)    # strong push, every path exits
    state, clamped = _fallback.feedback_euler_block(
        vals, t[0], 0.5, x[0], 1.0, 1, 0.0, 1.0, np.zeros(2), 0.0, 1.0,
        1.0, 0.0, 0.1, 0.1, noise)
    assert clamped == 64
    assert np.all(state <= math.exp(1.0) + 1e-12)
