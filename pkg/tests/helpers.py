"""Shared test utilities: quadrature nodes and finite differences."""

import numpy as np


def gl_nodes(a: float, b: float, n: int):
    """Gauss-Legendre nodes and weights on [a, b]."""
    xs, ws = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * xs + 0.5 * (a + b), 0.5 * (b - a) * ws


def gl_panels(spans):
    """Concatenate Gauss-Legendre rules over (a, b, n) panels.

    Panelizing matters for heavy-tailed integrands (e.g. the Student-t
    marginal of a NormalGamma) where a single wide rule under-resolves
    the peak."""
    xs, ws = [], []
    for a, b, n in spans:
        x, w = gl_nodes(a, b, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def central_diff(f, x0: float, h: float = 1e-5) -> float:
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h)


def standard_error(samples) -> float:
    s = np.asarray(samples, dtype=float)
    return float(s.std(ddof=1) / np.sqrt(s.size))
