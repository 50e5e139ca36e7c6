"""Deterministic 1-D quadrature over log-concave weights and seeded outer
Monte Carlo draws.

The workhorse is a composite-Simpson rule on a mode-centered truncated
interval, refined by node doubling until successive moment estimates
agree.  Strong log-concavity upstream guarantees sub-Gaussian tails, so
truncation at mode +- 12 curvature-scales is conservative.

Batched variants evaluate one weight family over many rows at once (one
row per outer Monte Carlo draw); the per-row interval endpoints differ
but node counts are shared, which keeps everything a handful of large
vectorized array operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import SignalSpec

TRUNCATION_SCALES = 12.0


class IntegrationError(RuntimeError):
    """Mode location or quadrature refinement failed."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Composite-Simpson nodes and weights on [lo, hi]."""

    nodes: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float


def simpson_grid(lo: float, hi: float, n: int) -> QuadratureGrid:
    """n-node composite Simpson rule (n odd >= 3); weights sum to hi - lo."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"Simpson rule needs an odd node count >= 3, got {n}")
    nodes = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return QuadratureGrid(nodes=nodes, weights=w * (h / 3.0), lo=lo, hi=hi)


def _simpson_pattern(n: int) -> np.ndarray:
    """Simpson coefficient pattern 1,4,2,...,4,1 (scaled by 1/3)."""
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


@dataclass
class TiltedMoments:
    """Result of batched tilted-moment quadrature."""

    moments: np.ndarray     # (B, K)
    log_norm: np.ndarray    # (B,) log of the normalizing integral
    err: np.ndarray         # (B, K) last inter-level change, relative
    nodes_used: int


def tilted_moments(
    evaluate: Callable,
    lo: np.ndarray,
    hi: np.ndarray,
    nodes_init: int = 129,
    rel_tol: float = 1e-8,
    max_doublings: int = 6,
) -> TiltedMoments:
    """Normalized moments int g_k w / int w for a batch of weight rows.

    ``evaluate(x)`` takes a (B, n) node array and returns
    ``(logw, [g_1, ..., g_K])`` with every array shaped like ``x``; it is
    called once per refinement level so shared subexpressions between the
    log weight and the integrands are computed once.  Refinement doubles
    the node count (evaluating midpoints only) until every moment of every
    row moves by less than ``rel_tol`` relative to max(|moment|, 1).
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if np.any(hi <= lo):
        raise IntegrationError("empty integration interval")

    n = int(nodes_init)
    if n % 2 == 0:
        n += 1
    x = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, n)[None, :]
    logw, gs = evaluate(x)
    gs = [np.broadcast_to(np.asarray(g, dtype=float), x.shape) for g in gs]
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise IntegrationError("nonfinite log weight inside the mass region")
    shift = np.max(logw, axis=1, keepdims=True)
    if np.any(~np.isfinite(shift)):
        raise IntegrationError("weight vanishes on the whole interval")

    prev = None
    err = None
    for level in range(max_doublings + 1):
        # The per-row step h cancels in normalized moments; it only enters
        # the normalizing integral.
        pattern = _simpson_pattern(x.shape[1])
        w = np.exp(logw - shift)
        base = w @ pattern
        if np.any(base <= 0.0):
            raise IntegrationError("normalization failed (zero mass)")
        moments = np.stack([((g * w) @ pattern) / base for g in gs], axis=1)
        if np.any(~np.isfinite(moments)):
            raise IntegrationError("nonfinite moment estimate")

        if prev is not None:
            err = np.abs(moments - prev) / np.maximum(np.abs(moments), 1.0)
            if np.max(err) < rel_tol:
                h = (hi - lo) / (x.shape[1] - 1)
                log_norm = np.log(base * h) + shift[:, 0]
                return TiltedMoments(moments, log_norm, err, x.shape[1])
        prev = moments

        if level == max_doublings:
            break
        # Refine: evaluate midpoints only, interleave with existing values.
        mid = 0.5 * (x[:, :-1] + x[:, 1:])
        logw_mid, gs_mid = evaluate(mid)
        gs_mid = [np.broadcast_to(np.asarray(g, dtype=float), mid.shape) for g in gs_mid]
        if np.any(np.isnan(logw_mid)):
            raise IntegrationError("nonfinite log weight inside the mass region")
        n_new = 2 * x.shape[1] - 1
        x_new = np.empty((x.shape[0], n_new))
        x_new[:, ::2] = x
        x_new[:, 1::2] = mid
        logw_new = np.empty_like(x_new)
        logw_new[:, ::2] = logw
        logw_new[:, 1::2] = logw_mid
        gs_new = []
        for g_old, g_mid in zip(gs, gs_mid):
            g = np.empty_like(x_new)
            g[:, ::2] = g_old
            g[:, 1::2] = g_mid
            gs_new.append(g)
        x, logw, gs = x_new, logw_new, gs_new

    raise IntegrationError(
        f"quadrature did not reach rel_tol={rel_tol:g} within "
        f"{max_doublings} doublings (last err {np.max(err) if err is not None else np.nan:.3g})"
    )


# ---------------------------------------------------------------------------
# Mode location
# ---------------------------------------------------------------------------

_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


def locate_mode(
    logw: Callable,
    center: float = 0.0,
    scale: float = 1.0,
    support: tuple[float, float] = (-np.inf, np.inf),
    max_expansions: int = 60,
    tol: float = 1e-10,
) -> tuple[float, float]:
    """Mode and curvature scale of a log-concave weight by bracketed ascent.

    Expands a bracket around ``center`` until an interior maximum is
    detected (or a support endpoint dominates), then golden-section
    maximizes.  Returns (mode, s) with s = 1/sqrt(-d2 logw at mode).
    """
    slo, shi = support
    width = float(scale)
    for _ in range(max_expansions):
        a = max(center - width, slo)
        b = min(center + width, shi)
        m = 0.5 * (a + b)
        fa, fm, fb = (float(logw(np.asarray(v))) for v in (a, m, b))
        if np.isnan(fa) or np.isnan(fm) or np.isnan(fb):
            raise IntegrationError("nan log weight during mode bracketing")
        hit_lo = a <= slo
        hit_hi = b >= shi
        if fm >= fa and fm >= fb:
            break
        if (fa > fb and hit_lo) or (fb >= fa and hit_hi):
            break  # boundary maximum
        width *= 2.0
    else:
        raise IntegrationError("mode bracketing did not terminate")

    # Golden-section ascent on [a, b].
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = float(logw(np.asarray(x1)))
    f2 = float(logw(np.asarray(x2)))
    for _ in range(200):
        if b - a <= tol * max(1.0, abs(a), abs(b)):
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = float(logw(np.asarray(x1)))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = float(logw(np.asarray(x2)))
    mode = 0.5 * (a + b)

    h = max(1e-5 * max(1.0, abs(mode)), 1e-9)
    if mode - h < slo or mode + h > shi:
        h = 0.49 * min(mode - slo, shi - mode) if np.isfinite(slo) or np.isfinite(shi) else h
    fm = float(logw(np.asarray(mode)))
    d2 = (float(logw(np.asarray(mode + h))) - 2.0 * fm + float(logw(np.asarray(mode - h)))) / h**2
    s = 1.0 / np.sqrt(max(-d2, 1e-12))
    return mode, float(s)


def expand_and_bisect_modes(
    dlogw: Callable,
    x0: np.ndarray,
    step: float,
    support: tuple[float, float] = (-np.inf, np.inf),
    iters: int = 60,
    max_expansions: int = 60,
) -> np.ndarray:
    """Vectorized root of a strictly decreasing derivative (batch modes).

    ``dlogw`` maps a (B,) array to the derivative of the log weight; strong
    concavity makes it strictly decreasing, so the bracket [lo, hi] with
    dlogw(lo) > 0 > dlogw(hi) is found by doubling and refined by bisection.
    Support endpoints clip the bracket (open-support densities push the
    derivative to +-inf at the edges, so clipped brackets stay valid).
    """
    slo, shi = support
    x0 = np.asarray(x0, dtype=float)
    margin = 1e-12
    span = (shi - slo) if np.isfinite(shi - slo) else 1.0
    lo_edge = slo + margin * span if np.isfinite(slo) else -np.inf
    hi_edge = shi - margin * span if np.isfinite(shi) else np.inf
    x0 = np.minimum(np.maximum(x0, lo_edge), hi_edge)

    w = float(step)
    lo = np.maximum(x0 - w, lo_edge)
    hi = np.minimum(x0 + w, hi_edge)
    for _ in range(max_expansions):
        need_lo = (dlogw(lo) <= 0.0) & (lo > lo_edge)
        need_hi = (dlogw(hi) >= 0.0) & (hi < hi_edge)
        if not (np.any(need_lo) or np.any(need_hi)):
            break
        w *= 2.0
        lo = np.where(need_lo, np.maximum(x0 - w, lo_edge), lo)
        hi = np.where(need_hi, np.minimum(x0 + w, hi_edge), hi)
    else:
        raise IntegrationError("mode bracket expansion did not terminate")

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = dlogw(mid) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Public scalar entry point
# ---------------------------------------------------------------------------

def moments_of_tilted_density(
    log_unnormalized: Callable,
    integrands: Sequence[Callable],
    center: float = 0.0,
    scale: float = 1.0,
    support: tuple[float, float] = (-np.inf, np.inf),
    rel_tol: float = 1e-8,
    nodes_init: int = 513,
    max_doublings: int = 8,
) -> list[float]:
    """Normalized moments of a 1-D log-concave unnormalized density.

    ``center``/``scale`` hint where to start looking for the mode.  The
    integration interval is [mode - 12 s, mode + 12 s] intersected with the
    support, where s is the curvature scale at the mode.
    """
    mode, s = locate_mode(log_unnormalized, center, scale, support)
    lo = max(mode - TRUNCATION_SCALES * s, support[0])
    hi = min(mode + TRUNCATION_SCALES * s, support[1])

    def evaluate(x):
        return log_unnormalized(x), [g(x) for g in integrands]

    res = tilted_moments(evaluate, np.array([lo]), np.array([hi]),
                         nodes_init=nodes_init, rel_tol=rel_tol,
                         max_doublings=max_doublings)
    return [float(v) for v in res.moments[0]]


def log_partition_of_tilted_density(
    log_unnormalized: Callable,
    center: float = 0.0,
    scale: float = 1.0,
    support: tuple[float, float] = (-np.inf, np.inf),
    rel_tol: float = 1e-10,
    nodes_init: int = 513,
) -> float:
    """log of the normalizing integral of exp(log_unnormalized)."""
    mode, s = locate_mode(log_unnormalized, center, scale, support)
    lo = max(mode - TRUNCATION_SCALES * s, support[0])
    hi = min(mode + TRUNCATION_SCALES * s, support[1])

    def evaluate(x):
        return log_unnormalized(x), [np.ones_like(x)]

    res = tilted_moments(evaluate, np.array([lo]), np.array([hi]),
                         nodes_init=nodes_init, rel_tol=rel_tol)
    return float(res.log_norm[0])


# ---------------------------------------------------------------------------
# Outer Monte Carlo sample sets
# ---------------------------------------------------------------------------

G_AND_E = "G_and_e"
Z_AND_BSTAR = "Z_and_Bstar"


@dataclass(frozen=True)
class OuterSampleSet:
    """Seeded i.i.d. draws for the outer expectations.

    kind ``G_and_e``:     (xi_bstar, z_bbstar, e) per draw
    kind ``Z_and_Bstar``: (z, bstar) per draw

    Regenerating with the same seed reproduces bit-identical arrays.
    """

    kind: str
    seed: int
    count: int
    xi_bstar: np.ndarray | None = None
    z_bbstar: np.ndarray | None = None
    e: np.ndarray | None = None
    z: np.ndarray | None = None
    bstar: np.ndarray | None = None
    signal_name: str = ""

    def __post_init__(self):
        for arr in (self.xi_bstar, self.z_bbstar, self.e, self.z, self.bstar):
            if arr is not None:
                arr.setflags(write=False)


def make_outer_samples(
    kind: str,
    count: int,
    seed: int,
    signal: SignalSpec | None = None,
) -> OuterSampleSet:
    """Draw an i.i.d. outer sample set with a fixed generation order."""
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    rng = np.random.default_rng(seed)
    if kind == G_AND_E:
        xi = rng.standard_normal(count)
        z = rng.standard_normal(count)
        e = rng.random(count)
        return OuterSampleSet(kind=kind, seed=seed, count=count,
                              xi_bstar=xi, z_bbstar=z, e=e)
    if kind == Z_AND_BSTAR:
        if signal is None:
            raise ValueError("Z_and_Bstar sample sets require a signal spec")
        z = rng.standard_normal(count)
        bstar = np.asarray(signal.sampler(rng, count), dtype=float)
        return OuterSampleSet(kind=kind, seed=seed, count=count,
                              z=z, bstar=bstar, signal_name=signal.name)
    raise ValueError(f"unknown outer sample kind {kind!r}")
