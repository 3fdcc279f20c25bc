"""Stability analysis toolkit for coupled Liénard systems.

``x_i'' + f_i(X) x_i' + g_i(x_i) = 0`` for ``i = 1..n``, written as the first
order system ``x_i' = y_i``, ``y_i' = -g_i(x_i) - y_i f_i(X)``.
"""
from .model import BUILTINS, LienardSystem, Perturbation, State, builtin, linearization_eigenvalues, vector_field

__all__ = [
    "BUILTINS",
    "LienardSystem",
    "Perturbation",
    "State",
    "builtin",
    "linearization_eigenvalues",
    "vector_field",
]
__version__ = "0.1.0"
