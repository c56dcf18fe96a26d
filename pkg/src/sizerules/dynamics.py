"""Deterministic dynamics of a rule: ODE synthesis, integration, and the
limit constants that govern the connectivity-time distribution.

The state vector is z = (z_1, ..., z_K, z_omega): the limiting fractions of
vertices in components of each (truncated) size. For a non-degenerate rule
the rescaled connectivity time converges to a Gumbel law whose constants
c_k, d_k are extracted from the large-t behavior of the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import rules as _rules
from .rules import (
    OMEGA,
    DegenerateRuleError,
    RuleError,
    RuleSpec,
    merge_class_monomials,
    signature,
)

EULER_GAMMA = float(np.euler_gamma)

DEFAULT_DT = 1e-3
DEFAULT_T_CAP = 80.0
CONVERGENCE_WINDOW = 5.0
CONVERGENCE_TOL = 1e-8
RICHARDSON_TOL = 1e-9


class IntegrationError(RuntimeError):
    """Step-size refinement failed to reach the required accuracy."""


@dataclass(frozen=True)
class OdeSystem:
    """Right-hand side of the mean-field system for a rule.

    ``rhs`` maps a state vector of length K+1 (z_1..z_K, z_omega) to its
    derivative; derivative components sum to zero on the simplex.
    """

    K: int
    rhs: Callable[[np.ndarray], np.ndarray]
    provenance: str

    @property
    def dim(self) -> int:
        return self.K + 1

    def initial_state(self) -> np.ndarray:
        z0 = np.zeros(self.dim)
        z0[0] = 1.0
        return z0


@dataclass(frozen=True)
class Trajectory:
    """Numerical solution on a fixed time grid."""

    times: np.ndarray
    states: np.ndarray
    step_size: float
    method: str

    def at(self, t: float) -> np.ndarray:
        """State at grid time t (t must lie on the grid)."""
        idx = int(round(t / self.step_size)) if self.step_size > 0 else 0
        if idx < 0 or idx >= len(self.times) or abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the trajectory grid (dt={self.step_size})")
        return self.states[idx]


@dataclass(frozen=True)
class LimitConstants:
    """Gumbel constants of a non-degenerate rule.

    c maps each slow size k to c_k = lim (ext*t + log z_k(t)); d_k = e^{c_k}/k,
    and c0 = log(sum of d over slow sizes).
    """

    c: Mapping[int, float]
    d: Mapping[int, float]
    c0: float
    ext: int
    slow: tuple
    converged: bool
    convergence_estimate: float
    dt: float
    t_final: float


def _sorted_pair(pair_key):
    # frozenset -> (mu, nu) with mu <= nu, omega last
    items = sorted(pair_key, key=lambda s: (1, 0) if s is OMEGA else (0, s))
    if len(items) == 1:
        return items[0], items[0]
    return items[0], items[1]


def build_ode(rule: RuleSpec, budget: int = _rules.ENUMERATION_BUDGET) -> OdeSystem:
    """Synthesize the mean-field system from the rule by exact enumeration.

    For each unordered pair {mu, nu}, P_{mu,nu}(z) sums the monomials of all
    size vectors whose chosen edge joins a mu- and a nu-component. Then for
    k in [K]:  dz_k/dt = k * sum_{mu<=nu, mu+nu=k} P_{mu,nu}
                         - 2k P_{k,k} - k * sum_{mu != k} P_{mu,k},
    and dz_omega/dt collects the mass flowing into sizes above K.
    """
    K = rule.K
    dim = K + 1
    classes = merge_class_monomials(rule, budget=budget)

    # Global monomial basis: rows of E are exponent vectors over (z_1..z_K, z_omega).
    basis: dict = {}

    def basis_index(expo):
        if expo not in basis:
            basis[expo] = len(basis)
        return basis[expo]

    coeff_rows: list = [dict() for _ in range(dim)]

    def add(coord: int, coef: float, expo: tuple):
        j = basis_index(expo)
        coeff_rows[coord][j] = coeff_rows[coord].get(j, 0.0) + coef

    def add_pair(coord: int, coef: float, pair_key):
        for expo, mult in classes.get(pair_key, {}).items():
            add(coord, coef * mult, expo)

    omega_idx = K  # position of z_omega in the state vector
    for k in range(1, K + 1):
        coord = k - 1
        # creation: merges of mu + nu = k
        for mu in range(1, k // 2 + 1):
            nu = k - mu
            if mu <= nu:
                add_pair(coord, k, _rules._pair_key(mu, nu))
        # destruction: the k-component is an endpoint of the chosen edge
        add_pair(coord, -2 * k, _rules._pair_key(k, k))
        for mu in _rules.size_classes(K):
            if mu == k:
                continue
            add_pair(coord, -k, _rules._pair_key(mu, k))
    # omega gains: small-small merges overflowing K, and small-omega merges
    for mu in range(1, K + 1):
        for nu in range(mu, K + 1):
            if mu + nu > K:
                add_pair(omega_idx, mu + nu, _rules._pair_key(mu, nu))
        add_pair(omega_idx, mu, _rules._pair_key(mu, OMEGA))

    M = len(basis)
    E = np.zeros((M, dim), dtype=np.int64)
    for expo, j in basis.items():
        E[j] = expo
    A = np.zeros((dim, M))
    for coord, row in enumerate(coeff_rows):
        for j, coef in row.items():
            A[coord, j] = coef

    def rhs(z: np.ndarray) -> np.ndarray:
        monomials = np.prod(np.power(z[np.newaxis, :], E), axis=1)
        return A @ monomials

    return OdeSystem(K=K, rhs=rhs, provenance="generic-enumerated")


def closed_form_ode(name: str, ell: "int | None" = None) -> OdeSystem:
    """Hand-derived right-hand sides for the built-in rule families.

    "bohman_frieze": the cubic z' = -2z - 2z^2 + 2z^3 (K=1).
    "kp": the two-variable system of the truncation-extended KP rule (K=2).
    "lexicographic": the scalar z' = -2 + (1-z^2)^{ell/2} + (1-z)^ell for the
    isolated-vertex fraction, sufficient because only size 1 is slow; the
    second state component lumps everything else.
    """
    key = name.lower().replace("-", "_")
    if key in ("bf", "bohman_frieze"):

        def rhs(z):
            x = z[0]
            f1 = -2 * x - 2 * x * x + 2 * x ** 3
            return np.array([f1, -f1])

        return OdeSystem(K=1, rhs=rhs, provenance="closed-form:BF")
    if key in ("kp", "kp_prime"):

        def rhs(z):
            z1, z2 = z[0], z[1]
            f1 = -4 * z1 + 4 * z1 ** 2 - 2 * z1 ** 3
            f2 = (
                2 * z1 ** 4
                - 4 * z1 ** 3
                - 4 * z1 ** 2 * z2
                + 4 * z1 ** 2
                + 4 * z1 * z2
                - 4 * z2
            )
            return np.array([f1, f2, -f1 - f2])

        return OdeSystem(K=2, rhs=rhs, provenance="closed-form:KP'")
    if key in ("lex", "lexicographic"):
        if ell is None or ell < 2 or ell % 2 != 0:
            raise RuleError(f"lexicographic closed form needs an even ell >= 2, got {ell}")
        half = ell // 2

        def rhs(z):
            x = z[0]
            # -2 + (1-x^2)^{ell/2} + (1-x)^ell, written to keep full relative
            # accuracy for x near 0 (the raw powers round to 1 below ~1e-16,
            # which would freeze the decay).
            if x >= 1.0:
                f1 = -2.0
            else:
                f1 = math.expm1(half * math.log1p(-x * x)) + math.expm1(
                    ell * math.log1p(-x)
                )
            return np.array([f1, -f1])

        return OdeSystem(K=1, rhs=rhs, provenance=f"closed-form:lex(ell={ell})")
    raise RuleError(f"no closed-form system for rule {name!r}")


def _rk4_step(rhs, z, dt):
    k1 = rhs(z)
    k2 = rhs(z + 0.5 * dt * k1)
    k3 = rhs(z + 0.5 * dt * k2)
    k4 = rhs(z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance(rhs, z, dt, steps):
    for _ in range(steps):
        z = _rk4_step(rhs, z, dt)
    return z


def integrate(sys: OdeSystem, t_max: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Fixed-grid classical RK4 from the canonical initial state (z_1 = 1).

    The endpoint is verified against a half-step run; if the discrepancy
    exceeds 1e-9 per coordinate the step size is halved and the integration
    retried, up to 3 times.
    """
    if t_max < 0 or dt <= 0:
        raise ValueError(f"need t_max >= 0 and dt > 0, got t_max={t_max}, dt={dt}")
    z0 = sys.initial_state()
    if t_max == 0:
        return Trajectory(np.array([0.0]), z0[np.newaxis, :], dt, "rk4")
    for attempt in range(4):
        steps = max(1, round(t_max / dt))
        h = t_max / steps
        states = np.empty((steps + 1, sys.dim))
        states[0] = z0
        z = z0
        for i in range(steps):
            z = _rk4_step(sys.rhs, z, h)
            states[i + 1] = z
        z_half = _advance(sys.rhs, z0, h / 2, 2 * steps)
        disc = float(np.max(np.abs(z - z_half)))
        if disc <= RICHARDSON_TOL:
            times = np.linspace(0.0, t_max, steps + 1)
            return Trajectory(times, states, h, "rk4")
        dt = h / 2
    raise IntegrationError(
        f"step refinement did not converge: discrepancy {disc:.3e} > {RICHARDSON_TOL}"
    )


def limit_constants(
    rule: RuleSpec,
    sys: "OdeSystem | None" = None,
    dt: float = DEFAULT_DT,
    t_cap: float = DEFAULT_T_CAP,
    window: float = CONVERGENCE_WINDOW,
    tol: float = CONVERGENCE_TOL,
) -> LimitConstants:
    """Extract c_k = lim (ext*t + log z_k(t)) for the slow sizes.

    Integrates window by window until the increment of every monitored
    w_k(t) = ext*t + log z_k(t) over one window falls below ``tol``, or the
    time cap is reached (converged=False in that case).
    """
    sig = signature(rule)
    if sig.degenerate:
        raise DegenerateRuleError(
            f"rule {rule.name!r} is degenerate; its limit constants are undefined"
        )
    if sys is None:
        sys = build_ode(rule)
    slow = tuple(sorted(sig.slow))
    if any(k > sys.K for k in slow):
        raise RuleError(
            f"system tracks sizes up to {sys.K} but slow sizes are {slow}"
        )
    # For fast-decaying systems the RK4 relative drift in log z_k, about
    # ext^5 h^4/120 per time unit, must stay below the window tolerance or
    # convergence never fires; cap the internal step accordingly.
    dt = min(dt, 0.01 / sig.ext ** 1.25)
    steps_per_window = max(1, round(window / dt))
    z = sys.initial_state()
    t = 0.0
    prev_w = None
    increment = math.inf
    converged = False
    w = {}
    while t < t_cap - 1e-12:
        z = _advance(sys.rhs, z, dt, steps_per_window)
        t += steps_per_window * dt
        for k in slow:
            zk = z[k - 1]
            if not zk > 1e-300:
                raise IntegrationError(
                    f"z_{k} underflowed ({zk:.3e}) at t={t:.2f} before convergence"
                )
            w[k] = sig.ext * t + math.log(zk)
        if prev_w is not None:
            increment = max(abs(w[k] - prev_w[k]) for k in slow)
            if increment < tol:
                converged = True
                break
        prev_w = dict(w)
    c = {k: w[k] for k in slow}
    d = {k: math.exp(c[k]) / k for k in slow}
    c0 = math.log(sum(d.values()))
    return LimitConstants(
        c=c,
        d=d,
        c0=c0,
        ext=sig.ext,
        slow=slow,
        converged=converged,
        convergence_estimate=increment,
        dt=dt,
        t_final=t,
    )


def theoretical_cdf(consts: LimitConstants, c) -> "float | np.ndarray":
    """Limit distribution of the rescaled connectivity time:
    P[T' <= c] = prod over slow k of exp(-d_k e^{-c})."""
    c = np.asarray(c, dtype=float)
    out = np.ones_like(c)
    for k in consts.slow:
        out = out * np.exp(-consts.d[k] * np.exp(-c))
    return float(out) if out.ndim == 0 else out


def expected_tcon(consts: LimitConstants, n: int) -> float:
    """Asymptotic mean connectivity round: (n log n + gamma*n + c0*n) / ext."""
    return (n * math.log(n) + EULER_GAMMA * n + consts.c0 * n) / consts.ext


def last_species_probs(consts: LimitConstants) -> dict:
    """Limiting probability that size k's last component vanishes at the
    connectivity round: d_k / sum of d over slow sizes."""
    total = sum(consts.d.values())
    return {k: consts.d[k] / total for k in consts.slow}


def kp_prime_c2_quadrature(panels: int = 10_000) -> float:
    """Independent value of the second-size constant of the extended KP rule,
    via composite Simpson on log(2 * int_0^1 e^{arctan(1-x)}/sqrt(x^2-2x+2) dx)."""
    if panels % 2 != 0:
        raise ValueError("composite Simpson needs an even number of panels")
    x = np.linspace(0.0, 1.0, panels + 1)
    g = np.exp(np.arctan(1.0 - x)) / np.sqrt(x * x - 2 * x + 2)
    h = 1.0 / panels
    integral = (h / 3.0) * (g[0] + g[-1] + 4 * g[1:-1:2].sum() + 2 * g[2:-1:2].sum())
    return math.log(2.0) + math.log(integral)


# ---------------------------------------------------------------------------
# Exports


def trajectory_to_csv(traj: Trajectory, K: int, path) -> None:
    """One row per grid point: t, z_1..z_K, z_omega."""
    header = "t," + ",".join(f"z_{k}" for k in range(1, K + 1)) + ",z_omega"
    data = np.column_stack([traj.times, traj.states])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")


def constants_to_document(rule: RuleSpec, consts: LimitConstants) -> dict:
    sig = signature(rule)
    return {
        "rule": rule.name,
        "K": rule.K,
        "ell": rule.ell,
        "ext": consts.ext,
        "ext_per_size": {str(k): v for k, v in sorted(sig.ext_per_size.items())},
        "slow": list(consts.slow),
        "fast": sorted(sig.fast),
        "c": {str(k): consts.c[k] for k in consts.slow},
        "d": {str(k): consts.d[k] for k in consts.slow},
        "c0": consts.c0,
        "converged": consts.converged,
        "convergence_estimate": consts.convergence_estimate,
        "dt": consts.dt,
        "t_final": consts.t_final,
    }
