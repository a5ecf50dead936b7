"""Certified parameter regions, Lyapunov evaluation, and rate fitting.

Every named constant of the convergence analysis is computed in exactly one
place here and exported by name in the bounds' ``constants`` table, so the
parameter calculator, the runtime descent monitors, and the tests all read the
same formulas.  Constant-table vocabulary:

* ``c1, c2``              mixing-times-compression gains phi_x psi r / 2 etc.
* ``delta``               consensus contraction 1 - gamma (1 - sigma)
* ``phi``                 tracking weight (1 - sigma)^2 / (320 L^2)
* ``phi_hat``             error-feedback weight 0.1/C min{c1(2c1+1), c2(2c2+1)}
* ``phi_tilde``           scaled-gap weight 0.4 gamma (1 - sigma) / (eta L^2)
* ``eps1..eps3``          eta-quadratic leak terms
* ``theta1..theta9``      descent-rate constants of the relative-class region
* ``xi1..xi12``           per-term contraction coefficients
* ``hat_*``               error-feedback variants
* ``breve_*``             globally-bounded absolute-error variants
* ``tilde_*``             locally-bounded absolute-error variants
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compressors import CompressorSpec
from .costs import CostSuite, mean_value, mean_grad
from .graph import Network

INF = math.inf


class AnalysisError(ValueError):
    pass


class InfeasibleParameters(AnalysisError):
    def __init__(self, message: str, binding: str):
        super().__init__(f"{message} (binding constraint: {binding})")
        self.binding = binding


@dataclass
class ParameterBounds:
    regime: str                 # relative | error_feedback | scaled_local
    gamma_max: float
    gamma: float
    eta_max: float
    eta: float
    varsigma_max: float | None = None
    varsigma: float | None = None
    s0_min: float | None = None
    s0: float | None = None
    mu_min: float | None = None
    mu: float | None = None
    constants: dict = field(default_factory=dict)


def mixing_constants(phi_x: float, phi_y: float, r: float, psi: float):
    """c1 = phi_x psi r / 2 and c2 = phi_y psi r / 2; both land in (0, 1/2)."""
    if r <= 0 or not 0.0 < psi <= 1.0:
        raise AnalysisError(f"invalid compressor constants r={r}, psi={psi}")
    if not 0.0 < phi_x < 1.0 / r:
        raise AnalysisError(f"phi_x={phi_x} outside (0, 1/r)=(0, {1.0 / r})")
    if not 0.0 < phi_y < 1.0 / r:
        raise AnalysisError(f"phi_y={phi_y} outside (0, 1/r)=(0, {1.0 / r})")
    return 0.5 * phi_x * psi * r, 0.5 * phi_y * psi * r


def lyapunov_weight(sigma: float, L: float) -> float:
    return (1.0 - sigma) ** 2 / (320.0 * L * L)


def ef_weight(c1: float, c2: float, C: float) -> float:
    """Error-feedback term weight; +inf in the exact-compressor limit C = 0."""
    if C < 0:
        raise AnalysisError("C must be nonnegative")
    if C == 0.0:
        return INF
    return 0.1 / C * min(c1 * (2 * c1 + 1), c2 * (2 * c2 + 1))


def scaled_gap_weight(eta: float, gamma: float, sigma: float, L: float) -> float:
    return 0.4 * gamma * (1.0 - sigma) / (eta * L * L)


def p_norm_constants(p: float, d: int):
    """(d_hat, d_tilde) with ||v||_p <= d_hat ||v||_2 <= d_hat d_tilde ||v||_p."""
    if p == 2:
        return 1.0, 1.0
    if math.isinf(p):
        return 1.0, math.sqrt(d)
    raise AnalysisError(f"p={p} unsupported; use 2 or inf")


def _check_problem(sigma: float, L: float) -> None:
    if not 0.0 < sigma < 1.0:
        raise AnalysisError(f"sigma={sigma} outside (0, 1)")
    if L <= 0:
        raise AnalysisError("L must be positive")


def _div(num: float, den: float) -> float:
    """num/den with the empty-constraint convention den = 0 -> +inf."""
    return INF if den == 0.0 else num / den


def gamma_terms_relative(sigma, L, c1, c2, C):
    one = 1.0 - sigma
    return {
        "gamma_term_1": one / (160.0 * (1.0 + 1.0 / c1)),
        "gamma_term_2": one / (40000.0 * (1.0 + 1.0 / c2) * L * L),
        "gamma_term_3": _div(c1 * one, 40.0 * C),
        "gamma_term_4": _div(c1, 8.0 * math.sqrt(C)),
        "gamma_term_5": _div(c1, 10.0 * L * math.sqrt(C * (1.0 + 1.0 / c2))),
        "gamma_term_6": _div(c2 * L * L, C),
        "gamma_term_7": _div(c2, 10.0 * math.sqrt(C)),
    }


def eta_terms_relative(sigma, L, c1, c2, gamma):
    one = 1.0 - sigma
    return {
        "eta_term_1": one * one * gamma / (40.0 * L),
        "eta_term_2": 0.4 * one * gamma / (L * L),
        "eta_term_3": one * one / (80.0 * L) * math.sqrt(gamma / (1.0 + 1.0 / c1)),
        "eta_term_4": 9.0 / (40.0 * (4.0 * (1.0 + 1.0 / c1)
                                     + 5.0 * (1.0 + 1.0 / c2))),
        "eta_term_5": 1.0 / (2.0 * L),
        "eta_term_6": gamma,
    }


def descent_chain(sigma, L, c1, c2, C, eta, gamma) -> dict:
    """Per-term contraction coefficients and descent rates at (eta, gamma)."""
    one = 1.0 - sigma
    delta = 1.0 - gamma * one
    phi = lyapunov_weight(sigma, L)
    eps1 = 8.0 * L * L / (one * gamma) * eta * eta
    eps2 = 4.0 * (1.0 + 1.0 / c1) * eta * eta
    eps3 = 5.0 * (1.0 + 1.0 / c2) * eta * eta
    sq = 8.0 * gamma * gamma + 2.0 * eta * eta * L * L
    xi = {
        "xi1": 8.0 * L * L / (one * gamma) * sq,
        "xi2": 4.0 * sq * (1.0 + 1.0 / c1),
        "xi4": 2.0 * eta * eta / (gamma * one),
        "xi5": delta + 8.0 * L * L / (one * gamma) * eta * eta,
        "xi6": 4.0 * (1.0 + 1.0 / c1) * eta * eta,
        "xi7": 5.0 * (1.0 + 1.0 / c2) * sq,
        "xi8": 8.0 * gamma / one * C,
        "xi9": 32.0 * L * L / one * gamma * C,
        "xi10": 16.0 * gamma * gamma * (1.0 + 1.0 / c1) * C
                + (1.0 - c1 - 2.0 * c1 * c1),
        "xi11": 20.0 * gamma * gamma * (1.0 + 1.0 / c2) * L * L * C,
        "xi12": 20.0 * gamma * gamma * (1.0 + 1.0 / c2) * C
                + (1.0 - c2 - 2.0 * c2 * c2),
    }
    xi["xi3"] = xi["xi7"] * L * L
    theta2 = eta / 4.0 - (phi * eps1 + eps2 + eps3)
    theta3 = min(0.07 * one * gamma,
                 0.44 * c1 * (2.0 * c1 + 1.0),
                 0.77 * c2 * (2.0 * c2 + 1.0))
    out = {
        "sigma": sigma, "L_f": L, "c1": c1, "c2": c2, "C": C,
        "eta": eta, "gamma": gamma, "delta": delta, "phi": phi,
        "eps1": eps1, "eps2": eps2, "eps3": eps3,
        "theta2": theta2, "theta3": theta3,
        "theta1": min(theta2, theta3),
        "theta5": delta + phi * xi["xi1"] + xi["xi2"] + xi["xi3"]
                  + eta * L * L / 2.0,
        "theta6": xi["xi4"] + phi * xi["xi5"] + xi["xi6"] + xi["xi7"],
        "theta7": xi["xi8"] + phi * xi["xi9"] + xi["xi10"] + xi["xi11"],
        "theta8": phi * xi["xi8"] + xi["xi12"],
        "theta9": eta / 4.0 * (1.0 - 2.0 * eta * L),
    }
    out.update(xi)
    return out


def pl_rate(chain: dict, nu: float, hat: bool = False) -> float:
    """Linear contraction rate under gradient dominance: theta4 or hat form."""
    if nu <= 0:
        raise AnalysisError("nu must be positive")
    base = chain["hat_theta2"] if hat else chain["theta3"]
    return min(base, 2.0 * nu * chain["theta2"])


def bounds_relative(sigma: float, L: float, comp: CompressorSpec,
                    phi_x: float, phi_y: float,
                    gamma: float | None = None) -> ParameterBounds:
    """Admissible region for the relative-class tracker.

    The returned operating point sits at half the binding limits:
    gamma = gamma_max / 2 (unless given) and eta = eta_max(gamma) / 2.
    """
    _check_problem(sigma, L)
    if comp.assumption_class != "relative":
        raise AnalysisError("relative-class bounds need a relative compressor")
    c1, c2 = mixing_constants(phi_x, phi_y, comp.r, comp.psi)
    C = comp.cap_c
    gts = gamma_terms_relative(sigma, L, c1, c2, C)
    gamma_max = min(gts.values())
    g = 0.5 * gamma_max if gamma is None else gamma
    if not 0.0 < g < gamma_max:
        raise AnalysisError(f"gamma={g} outside (0, {gamma_max})")
    ets = eta_terms_relative(sigma, L, c1, c2, g)
    eta_max = min(ets.values())
    eta = 0.5 * eta_max
    consts = descent_chain(sigma, L, c1, c2, C, eta, g)
    consts.update(gts)
    consts.update(ets)
    consts["Pi"] = gamma_max
    consts["phi_x"] = phi_x
    consts["phi_y"] = phi_y
    consts["r"] = comp.r
    consts["psi"] = comp.psi
    return ParameterBounds(regime="relative", gamma_max=gamma_max, gamma=g,
                         eta_max=eta_max, eta=eta, constants=consts)


def bounds_error_feedback(sigma: float, L: float, comp: CompressorSpec,
                          phi_x: float, phi_y: float,
                          gamma: float | None = None) -> ParameterBounds:
    """Admissible region for the error-feedback variant (tighter gamma list
    plus the retention bound on varsigma)."""
    _check_problem(sigma, L)
    if comp.assumption_class != "relative":
        raise AnalysisError("error-feedback bounds need a relative compressor")
    c1, c2 = mixing_constants(phi_x, phi_y, comp.r, comp.psi)
    C = comp.cap_c
    phi = lyapunov_weight(sigma, L)
    phi_hat = ef_weight(c1, c2, C)
    one = 1.0 - sigma
    pi = min(gamma_terms_relative(sigma, L, c1, c2, C).values())
    gts = {
        "gamma_term_ef_1": _div(c1 * one, 160.0 * C),
        "gamma_term_ef_2": _div(c1, 16.0 * math.sqrt(C)),
        "gamma_term_ef_3": _div(c1, 20.0 * L * math.sqrt(C * (1.0 + 1.0 / c2))),
        "gamma_term_ef_4": _div(c2 * L * L, 4.0 * C),
        "gamma_term_ef_5": _div(c2, 20.0 * math.sqrt(C)),
        "gamma_term_ef_6": 1.0 / (4.0 * (1.0 + 1.0 / c1)
                                  + 5.0 * (1.0 + 1.0 / c2) * L * L),
        "gamma_term_ef_7": one * phi_hat
                           / (4.0 * (16.0 * (1.0 + 4.0 * phi * L * L)
                                     + 8.0 * one)),
        "gamma_term_ef_8": 1.0 / (5.0 * (1.0 + 1.0 / c2)),
        "gamma_term_ef_9": one * phi_hat / (32.0 * (2.0 * phi + one)),
        "gamma_term_ef_10": pi,
    }
    gamma_max = min(gts.values())
    g = 0.5 * gamma_max if gamma is None else gamma
    if not 0.0 < g < gamma_max:
        raise AnalysisError(f"gamma={g} outside (0, {gamma_max})")
    ets = eta_terms_relative(sigma, L, c1, c2, g)
    eta_max = min(ets.values())
    eta = 0.5 * eta_max
    vs_max = min(_div(1.0, 2.0 * math.sqrt(C)),
                 1.0 / math.sqrt(2.0 * C + 1.0))
    vs = 0.5 * vs_max if math.isfinite(vs_max) else 0.5
    consts = descent_chain(sigma, L, c1, c2, C, eta, g)
    consts.update(gts)
    consts.update(ets)
    consts["Pi"] = pi
    consts["phi_hat"] = phi_hat
    consts["phi_x"] = phi_x
    consts["phi_y"] = phi_y
    consts["r"] = comp.r
    consts["psi"] = comp.psi
    consts["hat_theta2"] = min(0.07 * one * g,
                               0.24 * c1 * (2.0 * c1 + 1.0),
                               0.57 * c2 * (2.0 * c2 + 1.0),
                               0.25)
    consts["hat_theta1"] = min(consts["theta2"], consts["hat_theta2"])
    two_s = 2.0 * vs * vs * (2.0 * C + 1.0)
    hxi = {
        "hat_xi1": 8.0 * g / one * two_s,
        "hat_xi2": 8.0 * L * L / (one * g) * 4.0 * g * g * two_s,
        "hat_xi3": 64.0 * g * g * (1.0 + 1.0 / c1) * C
                   + (1.0 - c1 - 2.0 * c1 * c1),
        "hat_xi4": 16.0 * g * g * (1.0 + 1.0 / c1) * two_s,
        "hat_xi5": 80.0 * g * g * (1.0 + 1.0 / c2) * C
                   + (1.0 - c2 - 2.0 * c2 * c2),
        "hat_xi7": 20.0 * g * g * (1.0 + 1.0 / c2) * two_s,
    }
    hxi["hat_xi6"] = L * L * hxi["hat_xi7"]
    if math.isfinite(phi_hat):
        hxi["hat_theta4"] = (4.0 * consts["xi8"] + 4.0 * phi * consts["xi9"]
                             + hxi["hat_xi3"] + 4.0 * consts["xi11"]
                             + 2.0 * C * phi_hat)
        hxi["hat_theta5"] = (4.0 * phi * consts["xi8"] + hxi["hat_xi5"]
                             + 2.0 * C * phi_hat)
        hxi["hat_theta6"] = (hxi["hat_xi1"] + phi * hxi["hat_xi2"]
                             + hxi["hat_xi4"] + hxi["hat_xi6"]
                             + 2.0 * C * phi_hat * vs * vs)
        hxi["hat_theta7"] = (phi * hxi["hat_xi1"] + hxi["hat_xi7"]
                             + 2.0 * C * phi_hat * vs * vs)
    consts.update(hxi)
    return ParameterBounds(regime="error_feedback", gamma_max=gamma_max, gamma=g,
                         eta_max=eta_max, eta=eta, varsigma_max=vs_max,
                         varsigma=vs, constants=consts)


# Reference relative-class parameterization used to instantiate the shared
# (eta, gamma) region for the scaled tracker with globally bounded absolute
# error: exact-compressor constants r=1, psi=1 (so C=0 terms drop) and
# phi_x = phi_y = 1/2, i.e. c1 = c2 = 1/4.
_ABS_REF = {"r": 1.0, "psi": 1.0, "C": 0.0, "phi_x": 0.5, "phi_y": 0.5}


def bounds_absolute_global(sigma: float, L: float, n: int, d: int,
                           cap_c: float, p: float = INF,
                           mu: float = 0.995) -> ParameterBounds:
    """Region for the scaled tracker under a globally bounded absolute error.

    (eta, gamma) reuse the relative-class region at the reference
    parameterization; any mu in (0, 1) is admissible.  The constants table
    carries the geometric slack coefficient for the descent monitor:
    slack(k) = breve_theta8 * s(k)^2 with
    breve_theta8 = 2 n d_tilde^2 xi8 (1 + 2 L^2).
    """
    _check_problem(sigma, L)
    if not 0.0 < mu < 1.0:
        raise AnalysisError("mu must lie in (0, 1)")
    c1, c2 = mixing_constants(_ABS_REF["phi_x"], _ABS_REF["phi_y"],
                              _ABS_REF["r"], _ABS_REF["psi"])
    gts = gamma_terms_relative(sigma, L, c1, c2, 0.0)
    gamma_max = min(gts.values())
    g = 0.5 * gamma_max
    ets = eta_terms_relative(sigma, L, c1, c2, g)
    eta_max = min(ets.values())
    eta = 0.5 * eta_max
    consts = descent_chain(sigma, L, c1, c2, 0.0, eta, g)
    one = 1.0 - sigma
    phi = consts["phi"]
    _, d_tilde = p_norm_constants(p, d)
    xi8_abs = 8.0 * g / one * cap_c
    consts["d_tilde"] = d_tilde
    consts["xi8_abs"] = xi8_abs
    consts["breve_theta3"] = 0.59 * one * g
    consts["breve_theta4"] = eta / 4.0 - phi * consts["eps1"]
    consts["breve_theta1"] = min(consts["breve_theta3"],
                                 consts["breve_theta4"])
    consts["breve_theta8"] = (2.0 * n * d_tilde * d_tilde * xi8_abs
                              * (1.0 + 2.0 * L * L))
    consts["mu"] = mu
    return ParameterBounds(regime="absolute_global", gamma_max=gamma_max,
                         gamma=g, eta_max=eta_max, eta=eta, mu_min=0.0,
                         mu=mu, constants=consts)


def geometric_tail_bound(bounds: ParameterBounds, nu: float, u0: float,
                         s0: float, varpi: float | None = None) -> dict:
    """Linear-rate envelope constants for the scaled tracker under gradient
    dominance; the equality case uses varpi = (mu^2 + 1)/2 unless given."""
    c = bounds.constants
    mu = c["mu"]
    breve7 = min(c["breve_theta1"], 2.0 * nu * c["theta2"])
    breve8 = c["breve_theta8"]
    mu2 = mu * mu
    if 1.0 - breve7 < mu2:
        scale = 1.0 / ((1.0 - (1.0 - breve7) / mu2) * mu2)
        case = "slower_scaling"
    elif 1.0 - breve7 > mu2:
        scale = 1.0 / ((1.0 - mu2 / (1.0 - breve7)) * (1.0 - breve7))
        case = "slower_contraction"
    else:
        vp = (mu2 + 1.0) / 2.0 if varpi is None else varpi
        if not mu2 < vp < 1.0:
            raise AnalysisError("varpi must lie in (mu^2, 1)")
        scale = 1.0 / ((1.0 - mu2 / vp) * vp)
        case = "tie"
    return {
        "breve_theta5": min(breve7, 1.0 - mu2),
        "breve_theta6": u0 + breve8 * s0 * s0 * scale,
        "breve_theta7": breve7,
        "case": case,
    }


def bounds_scaled_local(sigma: float, L: float, nu: float, phi_c: float,
                        p: float, n: int, d: int, *, cons0: float,
                        track0: float, gap0: float, x0_norm_max: float,
                        y0_norm_max: float,
                        xi5_factor: float = 2.0) -> ParameterBounds:
    """Full parameter set for the scaled tracker under a locally bounded
    absolute error, including the admissible scaling pair (s0, mu).

    The initial-state summary (consensus, tracking, optimality gap at k=0 and
    the largest agent norms) fixes the s0 floor.
    """
    _check_problem(sigma, L)
    if nu <= 0:
        raise AnalysisError("nu must be positive (gradient dominance constant)")
    if not 0.0 < phi_c <= 1.0:
        raise AnalysisError("phi_c must lie in (0, 1]")
    if xi5_factor <= 1.0:
        raise AnalysisError("xi5_factor must exceed 1")
    d_hat, d_tilde = p_norm_constants(p, d)
    one = 1.0 - sigma
    phi = lyapunov_weight(sigma, L)
    L2 = L * L
    fr = 1.0 + 1.0 / phi_c
    pw = phi_c + phi_c**2 - phi_c**3
    t2 = 2.0 * (1.0 + 2.0 * L2) * 8.0 * n * d_tilde**2 * (1.0 - phi_c) ** 2 / one
    t4 = min(0.59 * one, 48.0 * nu * phi / one)
    xi5 = xi5_factor * t2 / t4 if t2 > 0 else xi5_factor * n * d_tilde**2
    xi8 = 16.0 * n * d_hat**2 * d_tilde**2 * fr
    xi9 = 20.0 * n * d_hat**2 * d_tilde**2 * fr
    xi1 = 4.0 * d_hat**2 * (5.0 + 4.0 * L2) * fr * xi5
    xi2 = 10.0 * L2 * (3.0 + 2.0 * L2) * fr * xi5
    xi3 = xi8 * (1.0 - phi_c) ** 2 + 32.0 * d_hat**2 * fr * xi5
    xi4 = xi9 * (1.0 + L2) * (1.0 - phi_c) ** 2 \
        + 40.0 * d_hat**2 * (1.0 + L2) * fr * xi5

    gts = {
        "tilde_gamma_term_1": math.sqrt(pw / (2.0 * xi3)),
        "tilde_gamma_term_2": math.sqrt(pw / (2.0 * xi4)),
        "tilde_gamma_term_3": 2.0 * L2 / (one * nu),
    }
    gamma_max = min(gts.values())
    g = 0.5 * gamma_max
    ets = {
        "tilde_eta_term_1": one * one * g / (40.0 * L),
        "tilde_eta_term_2": pw / (2.0 * xi1),
        "tilde_eta_term_3": pw / (2.0 * xi2),
        "tilde_eta_term_4": 1.0,
    }
    eta_max = min(ets.values())
    eta = 0.5 * eta_max

    t3 = g * t4
    t1 = 1.0 - t3 + t2 / xi5 * g
    xi6 = 1.0 - pw + eta * xi1 + g * g * xi3
    xi7 = 1.0 - pw + eta * xi2 + g * g * xi4
    candidates = {"tilde_theta1": t1, "tilde_xi6": xi6, "tilde_xi7": xi7}
    binding = max(candidates, key=candidates.get)
    mu_min_sq = candidates[binding]
    if mu_min_sq >= 1.0:
        raise InfeasibleParameters(
            f"no admissible mu: {binding} = {mu_min_sq} >= 1", binding)
    mu_min = math.sqrt(mu_min_sq)
    mu = 0.5 * (mu_min + 1.0)

    phi_tilde = scaled_gap_weight(eta, g, sigma, L)
    u0 = cons0 + phi * track0 + phi_tilde * gap0
    s0_min = max(math.sqrt(u0 / xi5), x0_norm_max, y0_norm_max)

    consts = {
        "sigma": sigma, "L_f": L, "nu": nu, "phi_c": phi_c,
        "d_hat": d_hat, "d_tilde": d_tilde, "phi": phi,
        "phi_tilde": phi_tilde, "phi_weight_pw": pw,
        "tilde_theta1": t1, "tilde_theta2": t2, "tilde_theta3": t3,
        "tilde_theta4": t4,
        "tilde_xi1": xi1, "tilde_xi2": xi2, "tilde_xi3": xi3, "tilde_xi4": xi4,
        "tilde_xi5": xi5, "tilde_xi6": xi6, "tilde_xi7": xi7,
        "tilde_xi8": xi8, "tilde_xi9": xi9,
        "u_tilde_0": u0, "eta": eta, "gamma": g,
    }
    consts.update(gts)
    consts.update(ets)
    for v in consts.values():
        if isinstance(v, float) and not v > 0 and v != 0.0:
            raise AnalysisError(f"non-positive constant produced: {consts}")
    return ParameterBounds(regime="scaled_local", gamma_max=gamma_max, gamma=g,
                         eta_max=eta_max, eta=eta, s0_min=s0_min, s0=s0_min,
                         mu_min=mu_min, mu=mu, constants=consts)


@dataclass
class LyapunovValue:
    total: float
    terms: dict


_LYAP_REQUIRED = {
    "full": ("a", "c"),
    "ef": ("a", "c", "ex", "ey"),
    "consensus": (),
    "scaled": (),
}


def lyapunov_eval(which: str, state, net: Network, suite: CostSuite,
                  f_star: float, consts: dict) -> LyapunovValue:
    """Term-by-term evaluation of the selected Lyapunov function at a state.

    ``consts`` carries the weights: phi (tracking) always; phi_hat for the
    error-feedback form; phi_tilde for the scaled-gap form.
    """
    if which not in _LYAP_REQUIRED:
        raise AnalysisError(f"unknown lyapunov kind {which!r}")
    for name in _LYAP_REQUIRED[which]:
        if getattr(state, name) is None:
            raise AnalysisError(
                f"lyapunov {which!r} needs state field {name!r}: "
                "algorithm/function mismatch")
    X, Y = state.x, state.y
    n = X.shape[0]
    xbar = X.mean(axis=0)
    ybar = Y.mean(axis=0)
    phi = consts["phi"]
    terms = {
        "consensus": float(((X - xbar) ** 2).sum()),
        "tracking": float(((Y - ybar) ** 2).sum()),
        "optimality": n * (mean_value(suite, xbar) - f_star),
    }
    total = terms["consensus"] + phi * terms["tracking"]
    if which in ("full", "ef"):
        terms["comp_err_x"] = float(((X - state.a) ** 2).sum())
        terms["comp_err_y"] = float(((Y - state.c) ** 2).sum())
        total += terms["comp_err_x"] + terms["comp_err_y"]
    if which == "ef":
        ef = float((state.ex ** 2).sum() + (state.ey ** 2).sum())
        phi_hat = consts["phi_hat"]
        terms["ef_x"] = float((state.ex ** 2).sum())
        terms["ef_y"] = float((state.ey ** 2).sum())
        if math.isinf(phi_hat):
            if ef > 0:
                raise AnalysisError(
                    "phi_hat is infinite (C=0) but feedback terms are nonzero")
        else:
            total += phi_hat * ef
    if which == "scaled":
        total += consts["phi_tilde"] * terms["optimality"]
    else:
        total += terms["optimality"]
    return LyapunovValue(total=total, terms=terms)


def fit_rate(ks, values, mode: str = "linear",
             window: tuple[int, int] | None = None) -> dict:
    """Least-squares rate fit on a trace window.

    linear mode: slope of log(value) against k, reported as the geometric
    rate exp(slope).  sublinear mode: fit of k*value against k, reporting the
    fitted level and its maximum deviation.
    """
    ks = np.asarray(ks, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if window is not None:
        lo, hi = window
        if lo < ks[0] or hi > ks[-1] or hi <= lo:
            raise AnalysisError(f"window {window} outside trace")
        mask = (ks >= lo) & (ks <= hi)
        ks, values = ks[mask], values[mask]
    if len(ks) < 10:
        raise AnalysisError("need at least 10 points to fit")
    if mode == "linear":
        if np.any(values <= 0):
            raise AnalysisError("nonpositive values in window; cannot log-fit")
        y = np.log(values)
        A = np.vstack([ks, np.ones_like(ks)]).T
        (slope, icpt), res, *_ = np.linalg.lstsq(A, y, rcond=None)
        pred = A @ np.array([slope, icpt])
        ss_res = float(((y - pred) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
        return {"rate": float(np.exp(slope)), "r_squared": r2,
                "slope": float(slope)}
    if mode == "sublinear":
        z = ks * values
        A = np.vstack([ks, np.ones_like(ks)]).T
        (slope, icpt), *_ = np.linalg.lstsq(A, z, rcond=None)
        level = float(z.mean())
        return {"rate": float(slope), "r_squared": 1.0, "level": level,
                "max_dev": float(np.max(np.abs(z - level)))}
    raise AnalysisError(f"unknown fit mode {mode!r}")


def check_descent(values, slack=0.0) -> dict:
    """Per-step monotonicity check V(k+1) <= V(k) + slack(k).

    slack may be a scalar or a per-step array (length len(values)-1 or
    len(values); the entry at index k applies to the k -> k+1 transition).
    """
    values = np.asarray(values, dtype=np.float64)
    diffs = np.diff(values)
    slack_arr = np.broadcast_to(np.asarray(slack, dtype=np.float64),
                                (len(values),))[: len(diffs)]
    excess = diffs - slack_arr
    bad = np.nonzero(excess > 0)[0]
    return {
        "ok": len(bad) == 0,
        "first_violation": int(bad[0]) if len(bad) else None,
        "max_violation": float(excess.max()) if len(excess) else 0.0,
        "steps": len(diffs),
    }


def sample_mean_descent(runs: list, slack=0.0) -> dict:
    """Expectation-form descent over replicate traces: mean path descends
    within three standard errors of the step differences."""
    if len(runs) < 2:
        raise AnalysisError("need at least two replicate runs")
    mat = np.vstack([np.asarray(r, dtype=np.float64) for r in runs])
    diffs = np.diff(mat, axis=1)
    mean_diff = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(mat.shape[0])
    slack_arr = np.broadcast_to(np.asarray(slack, dtype=np.float64),
                                (mat.shape[1],))[: diffs.shape[1]]
    excess = mean_diff - slack_arr - 3.0 * se
    bad = np.nonzero(excess > 0)[0]
    return {
        "ok": len(bad) == 0,
        "first_violation": int(bad[0]) if len(bad) else None,
        "max_violation": float(excess.max()),
        "replicates": mat.shape[0],
    }
