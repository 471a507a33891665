import dataclasses
import warnings

import pytest

import damctl
from damctl.model import GridConfig, SupercriticalWarning


def _default():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SupercriticalWarning)
        return damctl.default_config()


@pytest.fixture(scope="session")
def default_cfg():
    """Central parameterization (supercritical storm feedback)."""
    return _default()


@pytest.fixture(scope="session")
def subcritical_cfg(default_cfg):
    """Same dam, weak feedback: stationary storm statistics exist."""
    return dataclasses.replace(default_cfg, self_excitation=0.001)


@pytest.fixture(scope="session")
def toy_cfg(default_cfg):
    """3x3 lattice variant for brute-force comparisons."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SupercriticalWarning)
        return dataclasses.replace(default_cfg, grid=GridConfig(nh=3, nl=3, ell_min=0.01, ell_max=3.0))


def make_cfg(**kwargs):
    """Config variants without supercriticality noise."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SupercriticalWarning)
        base = damctl.default_config()
        if not kwargs:
            return base
        grid = kwargs.pop("grid", None)
        if grid is not None:
            kwargs["grid"] = GridConfig(**grid) if isinstance(grid, dict) else grid
        return dataclasses.replace(base, **kwargs)
