"""Shared finite-difference and brute-force oracles for the test suite.

These helpers trust as little of the library as possible: the brute-force
Stein direction only calls ``strategy.eval`` and differentiates it
numerically, so it checks the closed-form divergence code paths against an
independent construction.
"""

import numpy as np


def fd_gradient(f, x, step=1e-5):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return out


def fd_jacobian(f, x, step=1e-5):
    """Central-difference Jacobian of a vector function; rows index outputs."""
    x = np.asarray(x, dtype=float)
    width = np.asarray(f(x), dtype=float).size
    out = np.zeros((width, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[:, i] = (np.asarray(f(x + e), dtype=float)
                     - np.asarray(f(x - e), dtype=float)) / (2.0 * step)
    return out


def brute_force_direction(strategy, points, grads, step=1e-6):
    """Stein direction with the kernel divergence taken by finite differences.

    phi(x_i) = (1/n) sum_j [K(x_i, x_j) grad_j + div_j K(x_i, x_j)] where the
    divergence's l-th entry is sum_m d/dx_j^m K_{lm}(x_i, x_j), built column
    by column from ``strategy.eval`` alone.
    """
    points = np.asarray(points, dtype=float)
    grads = np.asarray(grads, dtype=float)
    n, d = points.shape
    phi = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            kij = strategy.eval(points[i], points[j])
            div = np.zeros(d)
            for m in range(d):
                e = np.zeros(d)
                e[m] = step
                plus = strategy.eval(points[i], points[j] + e)
                minus = strategy.eval(points[i], points[j] - e)
                div += (plus[:, m] - minus[:, m]) / (2.0 * step)
            phi[i] += kij @ grads[j] + div
    return phi / n


def random_spd(rng, d, jitter=0.3):
    """Random symmetric positive definite matrix with eigenvalues O(1)."""
    a = rng.standard_normal((d, d))
    return a @ a.T / d + (jitter + rng.random()) * np.eye(d)


def random_anchor_set(rng, n_anchors, d):
    from msvgd.kernels import AnchorSet
    from msvgd.psdlin import make_bundle

    return AnchorSet(
        points=rng.standard_normal((n_anchors, d)),
        bundles=tuple(make_bundle(random_spd(rng, d)) for _ in range(n_anchors)),
        bandwidths=0.5 + rng.random(n_anchors),
    )


def strategies_for(rng, d):
    """One instance of each kernel kind over dimension d."""
    from msvgd.kernels import ConstPrecond, DiagonalRBF, MixturePrecond, ScalarRBF
    from msvgd.psdlin import make_bundle

    return [
        ScalarRBF(bandwidth=0.8),
        ConstPrecond(make_bundle(random_spd(rng, d)), bandwidth=1.3),
        DiagonalRBF(bandwidths=0.5 + rng.random(d)),
        MixturePrecond(random_anchor_set(rng, 3, d)),
    ]


def assert_fd_close(analytic, numeric, rel=1e-4, abs_=1e-6, label="values"):
    """Mixed-tolerance comparison: |a - n| <= abs_ + rel * |n| entrywise."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    err = np.abs(analytic - numeric)
    tol = abs_ + rel * np.abs(numeric)
    worst = float(np.max(err - tol))
    assert np.all(err <= tol), f"{label} exceed tolerance by {worst:.3e}"
