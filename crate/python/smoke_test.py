"""Smoke test for the gp_leapfrog_py extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py` (or under pytest).
"""

import json
import math

import gp_leapfrog_py as g


def test_field_derivatives():
    r = g.Realization(seed=7)
    y = [0.3, -0.2]
    h = 1e-5
    grad = r.grad(y)
    for i in range(2):
        yp = list(y)
        ym = list(y)
        yp[i] += h
        ym[i] -= h
        fd = (r.value(yp) - r.value(ym)) / (2 * h)
        assert abs(fd - grad[i]) < 1e-6 * max(1.0, abs(grad[i]))
    hess = r.hessian(y)
    assert abs(hess[0][1] - hess[1][0]) < 1e-12
    assert len(r.third(y, [1.0, 0.0], [0.0, 1.0])) == 2
    exported = json.loads(r.export_json())
    assert exported["dim"] == 2 and exported["seed"] == 7


def test_conditioned_sampler_has_no_export():
    r = g.Realization(seed=1, sampler="conditioned")
    assert math.isfinite(r.value([0.0, 0.0]))
    try:
        r.export_json()
    except NotImplementedError:
        pass
    else:
        raise AssertionError("expected NotImplementedError")


def test_step_and_energy():
    r = g.Realization(seed=2)
    y, x = [0.5, 0.5], [0.5, -0.5]
    y1, x1 = g.leapfrog_step(r, y, x, 0.01, alpha2=1.0, beta2=2.0)
    assert len(y1) == 2 and len(x1) == 2
    traj = g.integrate(r, y, x, 0.01, 1.0, standard=True)
    assert traj["termination"]["status"] == "completed"
    assert len(traj["energy"]) == 101
    drift = max(abs(e - traj["energy"][0]) for e in traj["energy"])
    assert drift < 1e-3
    assert abs(g.energy(r, y, x) - traj["energy"][0]) < 1e-12
    ref_y, _ = g.reference_solve(r, y, x, 1.0, 0.01)
    assert max(abs(a - b) for a, b in zip(ref_y, traj["y"][-1])) < 1e-3


def test_bad_input_raises_value_error():
    try:
        g.Realization(lengthscale=0.0)
    except ValueError as e:
        assert "kernel.lengthscale" in str(e)
    else:
        raise AssertionError("expected ValueError")


def test_fit_and_study():
    pts = [(2.0 ** -k, 3.0 * (2.0 ** -k) ** 2) for k in range(4, 9)]
    slope, _, r2 = g.fit_order(pts)
    assert abs(slope - 2.0) < 1e-12 and r2 > 0.999999
    assert g.fit_order([(0.1, 0.0), (0.05, 0.0), (0.02, 0.0), (0.01, 0.0)]) is None
    rep = g.study("local-order", "[run]\nseeds = 4\nsubsteps = 16\n")
    assert abs(rep["fit_joint"]["slope"] - 2.0) < 0.15
    assert rep["reliability"]["reliable"]


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
