"""Shared fixtures: the manufactured benchmark problem at several resolutions.

The expensive objects (Picard-solved coefficient pairs) are built once per
session and cached by (nx, nt, scale), so refinement studies and the
acceptance checks share work.
"""

import numpy as np
import pytest

from mfglab.grid import Prism, make_grid
from mfglab.kernels import SeparableDelta
from mfglab.mfg import (
    bump_form,
    manufacture_triple,
    solve_mfg_picard,
    spec_for_triple,
    steady_density,
)
from mfglab.stability import form_difference


PRISM = Prism(1.0, 2.0, (), 1.0)
KERNEL = SeparableDelta(amplitude=0.4, n1=1)


@pytest.fixture(scope="session")
def prism():
    return PRISM


@pytest.fixture(scope="session")
def kernel():
    return KERNEL


def perturbation(grid) -> np.ndarray:
    """Coefficient bump vanishing to second order at both walls."""
    x = grid.axis_coords(0)
    return np.sin(np.pi * (x - grid.prism.a)) ** 2


def build_problem(nx: int, nt: int):
    """Manufactured value/density/coefficient triple and its closing source."""
    g = make_grid(PRISM, nx, nt)
    triple, f = manufacture_triple(
        g, KERNEL, np.ones(g.shape_space), bump_form(PRISM), steady_density(g)
    )
    spec = spec_for_triple(triple, KERNEL, f)
    return g, triple, f, spec


@pytest.fixture(scope="session")
def make_pair():
    """Factory for Picard-solved pairs sharing one data specification.

    Both solves use the same boundary, terminal, and initial data, so the
    lateral Dirichlet traces of the two solutions agree exactly and only
    the coefficient difference drives the field differences.
    """
    cache: dict = {}

    def build(nx: int, nt: int, scale: float = 0.1):
        key = (nx, nt, scale)
        if key not in cache:
            g, triple, f, spec = build_problem(nx, nt)
            k1 = np.ones(g.shape_space)
            k2 = k1 + scale * perturbation(g)
            t1 = solve_mfg_picard(spec, k1, damping=0.5, max_iter=80, tol=1e-10)
            t2 = solve_mfg_picard(spec, k2, damping=0.5, max_iter=80, tol=1e-10)
            cache[key] = {
                "grid": g,
                "f": f,
                "spec": spec,
                "k1": k1,
                "k2": k2,
                "t1": t1,
                "t2": t2,
            }
        return cache[key]

    return build


@pytest.fixture(scope="session")
def make_pack(make_pair):
    """Difference pack (with time trim 0.2) for a solved pair."""
    cache: dict = {}

    def build(nx: int, nt: int, scale: float = 0.1):
        key = (nx, nt, scale)
        if key not in cache:
            pair = make_pair(nx, nt, scale)
            cache[key] = form_difference(pair["t1"], pair["t2"], eps=0.2)
        return cache[key]

    return build


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs)), np.log(np.asarray(ys)), 1)[0])
