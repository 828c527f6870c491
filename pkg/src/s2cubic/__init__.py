"""Globally positive solutions of x'x''' = x x'' - 2x''^2 + x'^2 + x^2 and the
Hamiltonian systems on the sphere with cubic integrals built from them."""

from .errors import S2CubicError
from .fixture import default_T, read_fixture
from .kernels import BACKEND
from .metric import Family, HamiltonianSpec, b_bounds, build_metric, build_psi
from .ode_core import IvpSpec, integrate_ivp

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Family", "HamiltonianSpec", "IvpSpec", "S2CubicError", "b_bounds", "build_metric",
    "build_psi", "default_T", "integrate_ivp", "read_fixture", "__version__",
]
