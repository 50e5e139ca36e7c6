"""GLM likelihood, prior, and signal-distribution declarations.

A model is a bundle of scalar functions (vectorized over numpy arrays):
the sufficient-statistic map ``t_tilde(theta_star, e)`` together with its
theta_star-derivative, the log-normalizer ``a`` with two derivatives, and
the outcome generator ``outcome(x, e)``.  Built-ins cover the linear
model, the tanh-smoothed logistic model, and binomial regression.

Priors are strongly log-concave coordinate densities; signals are the
distributions of the true coefficient coordinates.  All specs are frozen
value objects with pure function members, safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, ndtri
from scipy.stats import binom

# Smoothing width for the indicator approximation; config-exposed everywhere.
DEFAULT_DELTA = 1e-3

# Uniform variates are clipped away from {0, 1} before applying inverse CDFs.
# The clipping event has probability ~2e-12 per draw and avoids infinities.
_E_CLIP = 1e-12


class SpecError(ValueError):
    """Invalid model/prior/signal construction parameters."""


def sigma_inv(e):
    """Logit sigma^{-1}(e) = log(e/(1-e)) with clipped argument."""
    e = np.clip(e, _E_CLIP, 1.0 - _E_CLIP)
    return np.log(e) - np.log1p(-e)


def phi_inv(e):
    """Standard normal quantile with clipped argument."""
    return ndtri(np.clip(e, _E_CLIP, 1.0 - _E_CLIP))


def smooth_step(x, delta):
    """f_delta(x) = (tanh(x/delta) + 1)/2, a smooth step at 0."""
    return 0.5 * (np.tanh(x / delta) + 1.0)


def smooth_step_prime(x, delta):
    t = np.tanh(x / delta)
    return (1.0 - t * t) / (2.0 * delta)


def softplus(x):
    """log(1 + e^x) computed as max(x, 0) + log1p(e^{-|x|})."""
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class ModelSpec:
    """A canonical GLM instance.

    ``u_shift(theta_star, e)`` is the outcome-only term dropped from the
    log-likelihood; subtracting it makes ``t_tilde*x - a(x)`` non-positive
    (zero for the bounded-statistic models, the convex conjugate of ``a``
    at ``t_tilde`` for the linear model).
    """

    name: str
    t_tilde: Callable
    t_tilde_prime: Callable
    a: Callable
    a_prime: Callable
    a_double_prime: Callable
    outcome: Callable
    t_prime_bound: float
    a_curv_bound: float = 1.0
    u_shift: Callable | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PriorSpec:
    """Strongly log-concave coordinate prior, log density up to a constant."""

    name: str
    log_density: Callable
    log_density_prime: Callable
    log_density_double_prime: Callable
    support: tuple[float, float]
    strong_concavity_eps: float
    mode: float
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SignalSpec:
    """Distribution of a true-signal coordinate; sampler(rng, size) -> array."""

    name: str
    sampler: Callable
    second_moment: float
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProblemParams:
    """Aspect ratio kappa = lim p/n, signal strength gamma2, smoothing width."""

    kappa: float
    gamma2: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.kappa > 0:
            raise SpecError(f"kappa must be positive, got {self.kappa}")
        if self.gamma2 < 0:
            raise SpecError(f"gamma2 must be nonnegative, got {self.gamma2}")
        if not self.delta > 0:
            raise SpecError(f"delta must be positive, got {self.delta}")


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def linear_model() -> ModelSpec:
    """Gaussian linear regression: y = x + Phi^{-1}(e), A(x) = x^2/2."""

    def t_tilde(theta_star, e):
        return theta_star + phi_inv(e)

    def t_tilde_prime(theta_star, e):
        return np.ones_like(np.asarray(theta_star, dtype=float))

    return ModelSpec(
        name="linear",
        t_tilde=t_tilde,
        t_tilde_prime=t_tilde_prime,
        a=lambda x: 0.5 * np.square(x),
        a_prime=lambda x: np.asarray(x, dtype=float) + 0.0,
        a_double_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        outcome=lambda x, e: x + phi_inv(e),
        t_prime_bound=1.0,
        a_curv_bound=1.0,
        # sup_x { t*x - x^2/2 } = t^2/2; the likelihood drops this y-only term.
        u_shift=lambda theta_star, e: 0.5 * np.square(theta_star + phi_inv(e)),
    )


def logistic_model(delta: float = DEFAULT_DELTA) -> ModelSpec:
    """Logistic regression with the tanh-smoothed indicator statistic."""
    if not delta > 0:
        raise SpecError(f"delta must be positive, got {delta}")

    def t_tilde(theta_star, e):
        return smooth_step(theta_star - sigma_inv(e), delta)

    def t_tilde_prime(theta_star, e):
        return smooth_step_prime(theta_star - sigma_inv(e), delta)

    def a_double_prime(x):
        s = expit(x)
        return s * (1.0 - s)

    return ModelSpec(
        name="logistic",
        t_tilde=t_tilde,
        t_tilde_prime=t_tilde_prime,
        a=softplus,
        a_prime=expit,
        a_double_prime=a_double_prime,
        outcome=lambda x, e: (expit(x) >= e).astype(float),
        t_prime_bound=1.0 / (2.0 * delta),
        a_curv_bound=0.25,
        params={"delta": delta},
    )


def binomial_model(m: int, delta: float = DEFAULT_DELTA) -> ModelSpec:
    """Binomial regression with m trials; m-scaled smoothed statistic.

    For m = 1 this coincides with ``logistic_model(delta)``.  Note the
    curvature bound is m/4, so the unit-curvature regularity condition
    holds only for m <= 4; larger m works numerically but is outside the
    certified regime.
    """
    if int(m) != m or m < 1:
        raise SpecError(f"m must be a positive integer, got {m}")
    if not delta > 0:
        raise SpecError(f"delta must be positive, got {delta}")
    m = int(m)

    def t_tilde(theta_star, e):
        return m * smooth_step(theta_star - sigma_inv(e), delta)

    def t_tilde_prime(theta_star, e):
        return m * smooth_step_prime(theta_star - sigma_inv(e), delta)

    def a_double_prime(x):
        s = expit(x)
        return m * s * (1.0 - s)

    def outcome(x, e):
        # Inverse-CDF draw so the outcome is a deterministic map of (x, e).
        p = expit(x)
        e = np.clip(e, _E_CLIP, 1.0 - _E_CLIP)
        return np.asarray(binom.ppf(e, m, p), dtype=float)

    return ModelSpec(
        name="binomial",
        t_tilde=t_tilde,
        t_tilde_prime=t_tilde_prime,
        a=lambda x: m * softplus(x),
        a_prime=lambda x: m * expit(x),
        a_double_prime=a_double_prime,
        outcome=outcome,
        t_prime_bound=m / (2.0 * delta),
        a_curv_bound=m / 4.0,
        params={"m": m, "delta": delta},
    )


# ---------------------------------------------------------------------------
# Built-in priors
# ---------------------------------------------------------------------------

def gaussian_prior(variance: float = 1.0) -> PriorSpec:
    if not variance > 0:
        raise SpecError(f"variance must be positive, got {variance}")
    inv_var = 1.0 / variance
    return PriorSpec(
        name="gauss",
        log_density=lambda x: -0.5 * inv_var * np.square(x),
        log_density_prime=lambda x: -inv_var * np.asarray(x, dtype=float),
        log_density_double_prime=lambda x: np.full_like(
            np.asarray(x, dtype=float), -inv_var
        ),
        support=(-np.inf, np.inf),
        strong_concavity_eps=inv_var,
        mode=0.0,
        params={"variance": variance},
    )


def beta_prior(a: float, b: float) -> PriorSpec:
    """Beta(a, b) prior on (0, 1); requires a > 1 and b > 1.

    At the boundary parameters the log density loses strong concavity, so
    those are rejected.  The concavity certificate is the interior minimum
    of (a-1)/x^2 + (b-1)/(1-x)^2, attained at x = 1/(1 + ((b-1)/(a-1))^{1/3}).
    """
    if not (a > 1 and b > 1):
        raise SpecError(f"beta prior needs a > 1 and b > 1, got a={a}, b={b}")

    def log_density(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
        return np.where((x <= 0.0) | (x >= 1.0), -np.inf, out)

    def log_density_prime(x):
        x = np.asarray(x, dtype=float)
        return (a - 1.0) / x - (b - 1.0) / (1.0 - x)

    def log_density_double_prime(x):
        x = np.asarray(x, dtype=float)
        return -(a - 1.0) / np.square(x) - (b - 1.0) / np.square(1.0 - x)

    x_min = 1.0 / (1.0 + ((b - 1.0) / (a - 1.0)) ** (1.0 / 3.0))
    eps = (a - 1.0) / x_min**2 + (b - 1.0) / (1.0 - x_min) ** 2
    return PriorSpec(
        name="beta",
        log_density=log_density,
        log_density_prime=log_density_prime,
        log_density_double_prime=log_density_double_prime,
        support=(0.0, 1.0),
        strong_concavity_eps=eps,
        mode=(a - 1.0) / (a + b - 2.0),
        params={"a": a, "b": b},
    )


# ---------------------------------------------------------------------------
# Built-in signal distributions
# ---------------------------------------------------------------------------

def gaussian_signal(variance: float = 1.0) -> SignalSpec:
    """Centered Gaussian signal; unbounded, so outside the certified
    boundedness condition, but convenient for closed-form validation."""
    if not variance > 0:
        raise SpecError(f"variance must be positive, got {variance}")
    sd = float(np.sqrt(variance))
    return SignalSpec(
        name="gauss",
        sampler=lambda rng, size=None: sd * rng.standard_normal(size),
        second_moment=variance,
        params={"variance": variance},
    )


def rademacher_signal(scale: float = 1.0) -> SignalSpec:
    return SignalSpec(
        name="rademacher",
        sampler=lambda rng, size=None: scale * (2.0 * rng.integers(0, 2, size=size) - 1.0),
        second_moment=scale * scale,
        params={"scale": scale},
    )


def point_mass_signal(values, probs) -> SignalSpec:
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or values.ndim != 1 or values.size == 0:
        raise SpecError("values and probs must be 1-D arrays of equal length")
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-12):
        raise SpecError("probs must be nonnegative and sum to 1")
    return SignalSpec(
        name="pointmass",
        sampler=lambda rng, size=None: rng.choice(values, size=size, p=probs),
        second_moment=float(np.sum(probs * values**2)),
        params={"values": values.tolist(), "probs": probs.tolist()},
    )


def beta_signal(a: float, b: float) -> SignalSpec:
    if not (a > 0 and b > 0):
        raise SpecError(f"beta signal needs a > 0 and b > 0, got a={a}, b={b}")
    m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0))
    return SignalSpec(
        name="beta",
        sampler=lambda rng, size=None: rng.beta(a, b, size=size),
        second_moment=m2,
        params={"a": a, "b": b},
    )


def zero_signal() -> SignalSpec:
    return SignalSpec(
        name="zero",
        sampler=lambda rng, size=None: np.zeros(size if size is not None else ()),
        second_moment=0.0,
    )


# ---------------------------------------------------------------------------
# Name-based registry (CLI configs, record round-trips)
# ---------------------------------------------------------------------------

def model_from_name(name: str, delta: float = DEFAULT_DELTA) -> ModelSpec:
    base, _, arg = name.partition(":")
    if base == "linear":
        return linear_model()
    if base == "logistic":
        return logistic_model(delta)
    if base == "binomial":
        if not arg:
            raise SpecError("binomial model needs a trial count, e.g. binomial:3")
        return binomial_model(int(arg), delta)
    raise SpecError(f"unknown model {name!r}")


def _parse_args(arg: str) -> list[float]:
    return [float(v) for v in arg.split(",") if v != ""]


def prior_from_name(name: str) -> PriorSpec:
    base, _, arg = name.partition(":")
    args = _parse_args(arg)
    if base == "gauss":
        return gaussian_prior(*args) if args else gaussian_prior()
    if base == "beta":
        if len(args) != 2:
            raise SpecError("beta prior needs two parameters, e.g. beta:2,2")
        return beta_prior(*args)
    raise SpecError(f"unknown prior {name!r}")


def signal_from_name(name: str) -> SignalSpec:
    base, _, arg = name.partition(":")
    args = _parse_args(arg)
    if base == "gauss":
        return gaussian_signal(*args) if args else gaussian_signal()
    if base == "rademacher":
        return rademacher_signal(*args) if args else rademacher_signal()
    if base == "beta":
        if len(args) != 2:
            raise SpecError("beta signal needs two parameters, e.g. beta:2,5")
        return beta_signal(*args)
    if base == "zero":
        return zero_signal()
    if base == "pointmass":
        if len(args) < 2 or len(args) % 2 != 0:
            raise SpecError("pointmass signal takes v1,p1,v2,p2,...")
        return point_mass_signal(args[0::2], args[1::2])
    raise SpecError(f"unknown signal {name!r}")


# ---------------------------------------------------------------------------
# Regularity validators (runtime checks of the standing assumptions)
# ---------------------------------------------------------------------------

class RegularityError(AssertionError):
    """A declared regularity condition failed on a randomized grid."""


def _check_fd(name, f, fprime, xs, h, tol):
    fd = (f(xs + h) - f(xs - h)) / (2.0 * h)
    an = fprime(xs)
    err = np.abs(fd - an) / np.maximum(np.abs(an), 1.0)
    if np.max(err) >= tol:
        raise RegularityError(
            f"{name}: derivative mismatch, max rel err {np.max(err):.3g} >= {tol:g}"
        )


def validate_model(model: ModelSpec, rng, n_points: int = 100, scale: float = 3.0):
    """Randomized checks of non-negativity, curvature, derivative bounds,
    derivative consistency, and non-positivity of the exponent."""
    xs = scale * rng.standard_normal(n_points)
    thetas = scale * rng.standard_normal(n_points)
    es = rng.random(n_points)
    tol = 1e-9

    if np.min(model.a(xs)) < -tol:
        raise RegularityError(f"{model.name}: a(x) < 0")
    add = model.a_double_prime(xs)
    if np.min(add) < -tol or np.max(add) > model.a_curv_bound + tol:
        raise RegularityError(f"{model.name}: a'' outside [0, {model.a_curv_bound}]")
    if np.max(np.abs(model.t_tilde_prime(thetas, es))) > model.t_prime_bound + tol:
        raise RegularityError(f"{model.name}: |t_tilde'| exceeds declared bound")

    # u(x, theta_star) <= 0 after removing the outcome-only offset.
    shift = model.u_shift(thetas, es) if model.u_shift is not None else 0.0
    u = model.t_tilde(thetas, es) * xs - model.a(xs) - shift
    if np.max(u) > 1e-9:
        raise RegularityError(f"{model.name}: exponent not non-positive, max {np.max(u):.3g}")

    _check_fd(f"{model.name}.a", model.a, model.a_prime, xs, 1e-5, 1e-5)
    _check_fd(f"{model.name}.a_prime", model.a_prime, model.a_double_prime, xs, 1e-5, 1e-5)
    # The smoothed statistic varies on scale delta, so a smaller step is
    # needed for the finite-difference truncation error to clear the gate.
    for e in es[:10]:
        _check_fd(
            f"{model.name}.t_tilde(e={e:.3f})",
            lambda t: model.t_tilde(t, e),
            lambda t: model.t_tilde_prime(t, e),
            thetas,
            1e-6,
            1e-5,
        )


def validate_prior(prior: PriorSpec, rng, n_points: int = 10_000):
    """Strong-concavity certificate and derivative consistency on the support."""
    lo, hi = prior.support
    width = 8.0 / np.sqrt(prior.strong_concavity_eps)
    glo = max(lo, prior.mode - width)
    ghi = min(hi, prior.mode + width)
    margin = 1e-6 * (ghi - glo)
    xs = rng.uniform(glo + margin, ghi - margin, size=n_points)

    curv = prior.log_density_double_prime(xs)
    if np.max(curv) > -prior.strong_concavity_eps * (1.0 - 1e-9):
        raise RegularityError(f"{prior.name}: strong concavity certificate violated")

    inner = xs[(xs > glo + 1e-3 * (ghi - glo)) & (xs < ghi - 1e-3 * (ghi - glo))]
    _check_fd(f"{prior.name}.log_density", prior.log_density,
              prior.log_density_prime, inner[:200], 1e-6, 1e-5)
    _check_fd(f"{prior.name}.log_density_prime", prior.log_density_prime,
              prior.log_density_double_prime, inner[:200], 1e-6, 1e-5)


def validate_signal(signal: SignalSpec, rng, n_draws: int = 1_000_000):
    """Empirical second moment within 3 standard errors of the declared one."""
    draws = signal.sampler(rng, n_draws)
    sq = np.square(draws)
    se = float(np.std(sq)) / np.sqrt(n_draws)
    err = abs(float(np.mean(sq)) - signal.second_moment)
    if err > 3.0 * se + 1e-12:
        raise RegularityError(
            f"{signal.name}: second moment off by {err:.3g} (3 se = {3 * se:.3g})"
        )
