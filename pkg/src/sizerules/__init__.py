"""Bounded-size Achlioptas rules: combinatorial signatures, limit constants,
large-scale process simulation, and statistical validation of connectivity
thresholds."""

__version__ = "0.1.0"

from .rules import (  # noqa: F401
    OMEGA,
    RuleSpec,
    RuleSignature,
    applicability_guard,
    bohman_frieze,
    decide,
    enumerate_C,
    erdos_renyi,
    extend,
    extinction_rate,
    kp,
    kp_prime,
    lexicographic,
    make_builtin,
    omega_avoider,
    signature,
)
