"""Shared oracles: Dirac moment vectors and random feasible evaluations."""
import numpy as np

from statelift.chainmodel import full_point
from statelift.problems import feasible_values, sample_feasible


def dirac_vector(rel, point):
    """Scalar vector of ``rel.program`` holding the moments of a point mass."""
    y = np.zeros(rel.program.n_vars)
    for lay in rel.layouts:
        for vid, val in lay.dirac(point).items():
            y[vid] = val
    return y


def random_points(chain, m, seed=0):
    """``m`` feasible full points (locals and propagated states)."""
    xs = sample_feasible(chain, m, seed)
    out = []
    for j in range(xs[0].shape[-1]):
        out.append(full_point(chain, [xi[..., j] if xi.ndim > 1 else float(xi[j]) for xi in xs]))
    return out


def brackets(chain, bound, m=1000, seed=0, tol=1e-6):
    """Whether ``bound`` lies on the correct side of ``m`` feasible values."""
    vals = feasible_values(chain, m, seed)
    if chain.sign > 0:
        return bool(np.all(vals >= bound - tol)), float(vals.min())
    return bool(np.all(vals <= bound + tol)), float(vals.max())
