#!/usr/bin/env python3
"""Smoke test of the covint_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/
(release preferred), exposes it under the importable module name, and
exercises the main types and operations. Run from the repository root:

    cargo build --release -p covint-py
    python3 python/smoke_test.py
"""

import json
import math
import os
import shutil
import sys
import tempfile


def load_module():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(root, "target"))
    candidates = [
        os.path.join(target, profile, name)
        for profile in ("release", "debug")
        for name in ("libcovint_py.so", "covint_py.so", "libcovint_py.dylib")
    ]
    built = next((p for p in candidates if os.path.exists(p)), None)
    if built is None:
        sys.exit("covint_py cdylib not found; run: cargo build --release -p covint-py")
    stage = tempfile.mkdtemp(prefix="covint-py-")
    shutil.copy(built, os.path.join(stage, "covint_py.so"))
    sys.path.insert(0, stage)
    import covint_py

    return covint_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    cov = load_module()
    print(f"covint_py {cov.__version__}")

    # Identity split setup: closed-form bound ((2 + w wbar)/(1 + 2 w wbar)) I,
    # minimized at w = 1/2 with trace 1.5 d.
    toy = cov.builtin("toy-identity")
    half = cov.fuse_json(toy, "sci", omega=[0.5, 0.5])
    approx(half.bound[0][0], 1.5, 1e-12)
    approx(half.bound[1][1], 1.5, 1e-12)
    approx(half.cost, 3.0, 1e-12)

    opt = cov.fuse_json(toy, "esci", cost="trace")
    approx(opt.omega[0], 0.5, 1e-6)
    approx(opt.cost, 3.0, 1e-9)

    # CI weight on one estimator reproduces that estimator.
    one = cov.ci_fuse([[1.0, 2.0], [5.0, -1.0]],
                      [[[2.0, 0.5], [0.5, 1.0]], [[4.0, 0.0], [0.0, 4.0]]],
                      [1.0, 0.0])
    approx(one.mean[0], 1.0, 1e-12)
    approx(one.mean[1], 2.0, 1e-12)
    approx(one.bound[0][0], 2.0, 1e-12)

    # Information filter of two unit-variance scalars.
    info = cov.information_fusion([[0.0], [2.0]], [[[1.0]], [[1.0]]])
    approx(info.mean[0], 1.0, 1e-12)
    approx(info.bound[0][0], 0.5, 1e-12)

    # Minimal-volume function on the identity setup: interior case at 1/2.
    value, case, omega0 = cov.eval_g(toy, [1.0, 0.0])
    assert case == "interior", case
    approx(omega0, 0.5, 1e-9)
    approx(value, 1.0 / 1.5, 1e-9)

    # Only the w = 1/2 bound is tight on the identity setup.
    assert cov.tightness_certificate(toy, 0.5) is not None
    assert cov.tightness_certificate(toy, 0.3) is None

    # Motivating two-node example: ESCI beats SCI beats CI on the trace.
    fig1 = cov.builtin("fig1")
    costs = {rule: cov.fuse_json(fig1, rule, cost="trace").cost for rule in ("ci", "sci", "esci")}
    assert costs["esci"] < costs["sci"] < costs["ci"], costs

    # Ellipse export: points satisfy the quadratic.
    pts = cov.ellipse_boundary([[8.0, 3.0], [3.0, 2.0]], count=64)
    assert len(pts) == 64
    inv_det = 8.0 * 2.0 - 9.0
    for x, y in pts:
        q = (2.0 * x * x - 6.0 * x * y + 8.0 * y * y) / inv_det
        approx(q, 1.0, 1e-9)

    # Small deterministic simulation run.
    ring = cov.builtin("ring4")
    csv_a = cov.simulate(ring, trials=16, steps=8, seed=11, rule="esci")
    csv_b = cov.simulate(ring, trials=16, steps=8, seed=11, rule="esci")
    assert csv_a == csv_b, "simulation must be deterministic"
    lines = csv_a.strip().splitlines()
    assert lines[0] == "rule,node,step,coord,bound_mean,mse"
    assert len(lines) == 1 + 4 * 8 * 3
    for line in lines[1:]:
        fields = line.split(",")
        assert fields[0] == "esci"
        assert math.isfinite(float(fields[4])) and math.isfinite(float(fields[5]))

    # Verification report on the bundled example.
    report = json.loads(cov.verify(fig1, suite="tightness", seed=5))
    assert report["pass"], report

    print("smoke test passed")


if __name__ == "__main__":
    main()
