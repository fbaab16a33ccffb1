"""
Failure-spectrum ansatz family, chi-squared fitting and sampling allocation.

Every spectrum variant is zero below the onset weight w0 and saturates at
a = 1 - 2^-K; between those it is a[1 - exp(-x(w)/a)] with the exponent
argument x(w) set by the variant.
"""
import logging
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from errors import FitError
from sampling import log_binomial, log_binomial_weights, significant_weights, wald_stderr

logger = logging.getLogger(__name__)

Variant = Literal["model", "a2", "a3", "a5", "a6", "powerlaw"]
FREE_PARAMS = {
    "model": ("f0",),
    "a2": ("f0",),
    "a3": ("f0", "gamma"),
    "a5": ("f0", "gamma1", "gamma2", "wc"),
    "a6": ("f0", "gamma1", "gamma2", "wc", "c"),
}
DEVIATION_GRID_POINTS = 300
_LOG_CAP = 700.0


class AnsatzParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = "a5"
    w0: int = Field(default=1, ge=1)
    f0: float = Field(default=1e-3, gt=0.0, lt=1.0)
    a: float = Field(default=1.0, gt=0.0, le=1.0)
    gamma: Optional[float] = None
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    wc: Optional[float] = None
    c: float = 2.0
    # model variant
    model_form: Literal["line1", "line2", "line3", "line4"] = "line4"
    n_expanded: Optional[int] = None
    # powerlaw variant: P(p) = p^(d/2) exp(alpha + beta p + c2 p^2)
    d: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    c2: Optional[float] = None


class FitResult(BaseModel):
    params: AnsatzParams
    chi2: float = Field(ge=0.0)
    dof: int
    covariance: Optional[list[list[float]]] = None
    converged: bool = True


# --- Evaluation ---

def eval_model(w, w0, f0, n, form="line1"):
    """
    Min-fail enclosure model with onset fraction f0 at weight w0.

    line1 is exact for the model; line2 and line3 are its exponential form
    and line4 replaces C(w, w0) by (w / w0)^w0.
    """
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    mask = w >= w0
    ws = w[mask]
    if form == "line1":
        ratio = np.exp(log_binomial(ws, w0) - log_binomial(n, w0))
        count = f0 * math.exp(float(log_binomial(n, w0)))
        with np.errstate(divide="ignore"):
            out[mask] = -np.expm1(count * np.log1p(-ratio))
    elif form == "line2":
        count = f0 * math.exp(float(log_binomial(n, w0)))
        out[mask] = -np.expm1(-count * np.exp(log_binomial(n - w0, ws - w0) - log_binomial(n, ws)))
    elif form == "line3":
        out[mask] = -np.expm1(-f0 * np.exp(log_binomial(ws, w0)))
    elif form == "line4":
        out[mask] = -np.expm1(-f0 * (ws / w0) ** w0)
    else:
        raise ValueError(f"unknown model form {form!r}")
    return out if out.ndim else float(out)


def _log_argument(params, w):
    """log of the exponent argument x(w) for w >= w0."""
    v = params.variant
    r = np.log(w / params.w0)
    base = math.log(params.f0)
    if v == "a2":
        return base + params.w0 * r
    if v == "a3":
        return base + params.gamma * r
    if v in ("a5", "a6"):
        c = 2.0 if v == "a5" else params.c
        num = np.log1p((w / params.wc) ** c)
        den = math.log1p((params.w0 / params.wc) ** c)
        return base + params.gamma1 * r + (params.gamma2 - params.gamma1) / c * (num - den)
    raise ValueError(f"variant {v!r} has no spectrum argument")


def eval_ansatz(params, w, overrides=None):
    """Spectrum value(s) at weight(s) w; `overrides` maps weights to explicit values."""
    if params.variant == "powerlaw":
        raise ValueError("the power-law variant describes P(p), not a spectrum")
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    if params.variant == "model":
        if params.n_expanded is None:
            raise ValueError("model variant needs n_expanded")
        out = np.atleast_1d(eval_model(w_arr, params.w0, params.f0, params.n_expanded, params.model_form))
    else:
        out = np.zeros_like(w_arr)
        mask = w_arr >= params.w0
        if mask.any():
            x = np.exp(np.minimum(_log_argument(params, w_arr[mask]), _LOG_CAP))
            out[mask] = -params.a * np.expm1(-x / params.a)
    if overrides:
        for k, wk in enumerate(w_arr):
            if int(wk) in overrides:
                out[k] = overrides[int(wk)]
    return out if np.ndim(w) else float(out[0])


def predict_rate(params, n, q, overrides=None):
    """P(q) from the binomial transform of the ansatz; the power-law variant is evaluated directly."""
    if params.variant == "powerlaw":
        return q ** (params.d / 2.0) * math.exp(params.alpha + params.beta * q + params.c2 * q * q)
    if q <= 0.0:
        return 0.0
    ws, factors = significant_weights(n, q)
    vals = eval_ansatz(params, ws, overrides)
    return math.fsum((vals * factors).tolist())


def predict_curve(params, n, ps, rate_divisor=1.0, overrides=None):
    return np.array([predict_rate(params, n, p / rate_divisor, overrides) for p in ps])


# --- Fitting ---

def _point(failures, trials, value):
    """(value, sigma) with a half-count pseudo failure for all-success or all-failure points."""
    if failures == 0:
        return value, wald_stderr(0.5, trials)
    if failures == trials:
        return value, wald_stderr(trials - 0.5, trials)
    return value, wald_stderr(failures, trials)


def _default_init(variant, w0, spec, a):
    f0 = 1e-3
    for w, t, f, fhat, _ in spec.rows():
        if w >= w0 and f > 0:
            f0 = min(max(fhat, 1e-12), 0.5)
            break
    return AnsatzParams(
        variant=variant, w0=w0, f0=f0, a=a, gamma=float(w0), gamma1=float(w0),
        gamma2=float(w0), wc=2.0 * w0, c=2.0, n_expanded=spec.n_expanded,
    )


def _fit_fixed_w0(spec_points, rate_points, n, rate_divisor, init, free, n_starts, rng):
    def build(theta):
        values = dict(zip(free, np.exp(theta)))
        if values.get("f0", init.f0) >= 1.0:
            return None
        return init.model_copy(update=values)

    def chi2(theta):
        params = build(theta)
        if params is None:
            return 1e300
        ws = np.array([w for w, _, _ in spec_points], dtype=float)
        total = 0.0
        if len(ws):
            pred = eval_ansatz(params, ws)
            total += float(sum(((v - p) / s) ** 2 for (_, v, s), p in zip(spec_points, pred)))
        for p, v, s in rate_points:
            total += ((v - predict_rate(params, n, p / rate_divisor)) / s) ** 2
        return total if math.isfinite(total) else 1e300

    theta0 = np.log([getattr(init, k) for k in free])
    best = None
    for start in range(n_starts):
        x0 = theta0 if start == 0 else theta0 + rng.normal(0.0, 0.3, size=len(theta0))
        res = optimize.minimize(
            chi2, x0, method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000 * len(free), "adaptive": len(free) > 2},
        )
        logger.debug(f"w0={init.w0} start {start}: chi2={res.fun:.6g} success={res.success}")
        if best is None or res.fun < best.fun:
            best = res
    return build(best.x), float(best.fun), bool(best.success)


def fit(spec, rates=(), variant="a5", fixed=None, init=None, rate_divisor=1.0, w0_grid=None,
        n_starts=8, seed=0):
    """
    Minimise the combined chi-squared over the free parameters of `variant`.

    `fixed` maps parameter names (including w0) to held values. When w0 is
    not fixed it is chosen by an outer integer grid.
    """
    if variant == "powerlaw":
        raise ValueError("use fit_powerlaw for the power-law variant")
    fixed = dict(fixed or {})
    spec_points = [(w,) + _point(f, t, fhat) for w, t, f, fhat, _ in spec.rows()]
    rate_points = [(r.p,) + _point(r.failures, r.trials, r.phat) for r in rates if r.trials > 0]
    free = tuple(k for k in FREE_PARAMS[variant] if k not in fixed)
    n_points = len(spec_points) + len(rate_points)
    n_free = len(free) + (0 if "w0" in fixed else 1)
    if n_points < n_free or n_points == 0:
        raise FitError(f"{n_points} data points cannot determine {n_free} free parameters")

    a = fixed.pop("a", spec.asymptote)
    if "w0" in fixed:
        grid = [int(fixed.pop("w0"))]
    else:
        first_fail = next((w for w, t, f, _, _ in spec.rows() if f > 0), None)
        grid = list(w0_grid or range(1, (first_fail or 1) + 1))
    rng = np.random.default_rng(seed)

    best = None
    for w0 in grid:
        start = init.model_copy(update={"w0": w0, "a": a}) if init else _default_init(variant, w0, spec, a)
        start = start.model_copy(update={"variant": variant, **fixed})
        if not free:
            params, chi2, ok = start, _chi2_only(start, spec_points, rate_points, spec.n_expanded, rate_divisor), True
        else:
            params, chi2, ok = _fit_fixed_w0(spec_points, rate_points, spec.n_expanded, rate_divisor, start, free, n_starts, rng)
        logger.info(f"--- FIT {variant}: w0={w0} chi2={chi2:.6g} ---")
        if best is None or chi2 < best[1]:
            best = (params, chi2, ok)
    params, chi2, ok = best
    if not ok:
        logger.warning(f"Fit {variant} did not converge; returning best-so-far chi2={chi2:.6g}")
    return FitResult(params=params, chi2=max(chi2, 0.0), dof=n_points - n_free, converged=ok)


def _chi2_only(params, spec_points, rate_points, n, rate_divisor):
    total = 0.0
    for w, v, s in spec_points:
        total += ((v - eval_ansatz(params, w)) / s) ** 2
    for p, v, s in rate_points:
        total += ((v - predict_rate(params, n, p / rate_divisor)) / s) ** 2
    return total


def fit_powerlaw(rates, d=None, d_grid=None, distance=None):
    """
    Least squares of log P(p) - (d/2) log p against alpha + beta p + c2 p^2.

    d is held at the given value or picked from a grid; the default grid
    always contains 2 * ceil(D/2) when a distance D is supplied.
    """
    pts = [(r.p,) + _point(r.failures, r.trials, r.phat) for r in rates if r.trials > 0]
    if len(pts) < 4:
        raise FitError(f"power-law fit needs at least 4 rate points, got {len(pts)}")
    used = [r for r in rates if r.trials > 0]
    p = np.array([r.p for r in used])
    val = np.array([max(r.phat, 0.5 / r.trials) for r in used])
    sig = np.array([x[2] for x in pts]) / val
    if d is not None:
        grid = [float(d)]
    elif d_grid is not None:
        grid = [float(x) for x in d_grid]
    elif distance is not None:
        grid = sorted({float(2 * math.ceil(distance / 2)), float(distance), float(distance + 1)})
    else:
        grid = [float(x) for x in range(1, 21)]

    best = None
    for dd in grid:
        target = np.log(val) - dd / 2.0 * np.log(p)

        def resid(theta):
            return (theta[0] + theta[1] * p + theta[2] * p * p - target) / sig

        res = optimize.least_squares(resid, x0=np.array([float(np.mean(target)), 0.0, 0.0]), method="lm")
        chi2 = float(np.sum(res.fun ** 2))
        if best is None or chi2 < best[1]:
            best = (dd, chi2, res)
    dd, chi2, res = best
    cov = None
    try:
        jtj = res.jac.T @ res.jac
        cov = np.linalg.inv(jtj).tolist()
    except np.linalg.LinAlgError:
        logger.warning("Power-law Jacobian is singular; no covariance reported")
    params = AnsatzParams(
        variant="powerlaw", w0=max(1, int(math.ceil(dd / 2))), d=dd,
        alpha=float(res.x[0]), beta=float(res.x[1]), c2=float(res.x[2]),
    )
    return FitResult(params=params, chi2=chi2, dof=len(pts) - 3 - (0 if d is not None else 1),
                     covariance=cov, converged=bool(res.success))


# --- Fit quality ---

def deviation_grid(points=DEVIATION_GRID_POINTS, lo=1e-5, hi=0.5):
    """Log-spaced grid on [lo, hi), hi excluded."""
    return np.logspace(math.log10(lo), math.log10(hi), points, endpoint=False)


def max_deviation(pred, ref, p_grid=None, onset_ratio=None):
    """Largest max(pred/ref, ref/pred) over the grid, plus the p -> 0 onset ratio when given."""
    p_grid = deviation_grid() if p_grid is None else np.asarray(p_grid)
    pv = np.array([pred(p) for p in p_grid]) if callable(pred) else np.asarray(pred, dtype=float)
    rv = np.array([ref(p) for p in p_grid]) if callable(ref) else np.asarray(ref, dtype=float)
    if pv.shape != rv.shape:
        raise ValueError(f"curve lengths differ: {pv.shape} vs {rv.shape}")
    if np.any(pv <= 0) or np.any(rv <= 0):
        raise ValueError("curves must be strictly positive on the grid")
    ratio = pv / rv
    out = float(np.max(np.maximum(ratio, 1.0 / ratio)))
    if onset_ratio is not None:
        if onset_ratio <= 0:
            raise ValueError("onset ratio must be positive")
        out = max(out, onset_ratio, 1.0 / onset_ratio)
    return out


# --- Sample allocation ---

def _contributions(params, n, q, overrides=None):
    ws, factors = significant_weights(n, q)
    return ws, factors, eval_ansatz(params, ws, overrides) * factors


def select_window(params, n, q, coverage=0.95, overrides=None):
    """Smallest contiguous (w_lo, w_hi) whose terms reach `coverage` of the predicted P(q)."""
    ws, _, contrib = _contributions(params, n, q, overrides)
    total = float(contrib.sum())
    if total <= 0.0:
        raise FitError(f"predicted P({q:g}) is zero; no weight window to select")
    need = coverage * total
    best = None
    lo = 0
    running = 0.0
    for hi in range(len(ws)):
        running += contrib[hi]
        while lo < hi and running - contrib[lo] >= need:
            running -= contrib[lo]
            lo += 1
        if running >= need and (best is None or ws[hi] - ws[lo] < best[1] - best[0]):
            best = (int(ws[lo]), int(ws[hi]))
    return best


def allocate_trials(params, n, q, sigma, coverage=0.95, overrides=None):
    """
    Trials per weight minimising the total for a target standard error sigma on P(q).

    The returned T_w meet sum_w (B_w sigma_f(w))^2 = sigma^2 exactly.
    """
    w_lo, w_hi = select_window(params, n, q, coverage, overrides)
    ws = np.arange(w_lo, w_hi + 1)
    b = np.exp(log_binomial_weights(n, q, ws))
    f = eval_ansatz(params, ws, overrides)
    keep = (f > 0) & (b > 0)
    ws, b, f = ws[keep], b[keep], f[keep]
    if not len(ws):
        raise FitError("weight window contains no weight with a positive prediction")
    z = float(np.sum(b ** 1.5 * np.sqrt(f)))
    out = {}
    for w, bw, fw in zip(ws, b, f):
        s_w = z / (bw ** 1.5 * math.sqrt(fw))
        out[int(w)] = fw * (1.0 - fw) * bw * bw / sigma ** 2 * s_w
    return out


def mc_trials(p_rate, sigma):
    """Direct-sampling trials for standard error sigma on P."""
    return p_rate * (1.0 - p_rate) / sigma ** 2


# --- Seeding and planning ---

def heuristic_seed(d_upper, p_pseudo, n, variant="a2", f0_known=None, a=1.0, rate_divisor=1.0):
    """
    Initial ansatz with P(p_pth) = p_pth and w0 = ceil(D/2).

    a2 solves for f0; a3 holds f0 = f0_known and solves for gamma.
    """
    if not 0.0 < p_pseudo < 0.5:
        raise ValueError(f"pseudothreshold guess must lie in (0, 1/2), got {p_pseudo}")
    w0 = max(1, math.ceil(d_upper / 2))
    q = p_pseudo / rate_divisor

    if variant == "a2":
        base = AnsatzParams(variant="a2", w0=w0, a=a)

        def gap(log_f0):
            return predict_rate(base.model_copy(update={"f0": math.exp(log_f0)}), n, q) - p_pseudo

        lo, hi = math.log(1e-300), math.log(1.0 - 1e-12)
    elif variant == "a3":
        if f0_known is None:
            raise ValueError("a3 seeding needs a known onset fraction f0")
        base = AnsatzParams(variant="a3", w0=w0, a=a, f0=f0_known, gamma=float(w0))

        def gap(log_gamma):
            return predict_rate(base.model_copy(update={"gamma": math.exp(log_gamma)}), n, q) - p_pseudo

        lo, hi = math.log(1e-6), math.log(1e4)
    else:
        raise ValueError(f"heuristic seeding supports a2 and a3, not {variant!r}")

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo * g_hi > 0:
        raise FitError(f"no sign change solving P(p_pth) = p_pth for {variant} (gaps {g_lo:.3g}, {g_hi:.3g})")
    root = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-12, maxiter=500)
    key = "f0" if variant == "a2" else "gamma"
    seeded = base.model_copy(update={key: math.exp(root)})
    logger.info(f"--- SEED {variant}: w0={w0} {key}={math.exp(root):.6g} at p_pth={p_pseudo:g} ---")
    return seeded


def plan_weights(w_lo, w_hi, count):
    """Log-spaced distinct integer weights between w_lo and w_hi inclusive."""
    if w_lo < 1 or w_hi < w_lo:
        raise ValueError(f"bad weight range {w_lo}..{w_hi}")
    return sorted({int(round(x)) for x in np.geomspace(w_lo, w_hi, max(count, 1))})


def plan_trials(params, weights, failures_per_point, overrides=None):
    """
    Trials for about `failures_per_point` failures at each weight, stopping at
    the first weight where the prediction reaches 0.99 a.
    """
    plan = {}
    for w in sorted(weights):
        f = eval_ansatz(params, w, overrides)
        if f <= 0.0:
            continue
        plan[int(w)] = int(math.ceil(failures_per_point / f))
        if f >= 0.99 * params.a:
            break
    return plan


# --- Composite and binomial helpers ---

def _as_array(f, n):
    if callable(f):
        return np.array([f(w) for w in range(n + 1)], dtype=float)
    arr = np.zeros(n + 1)
    src = np.asarray(f, dtype=float)
    arr[: min(len(src), n + 1)] = src[: n + 1]
    return arr


def composite_spectrum(fa, na, fb, nb):
    """Spectrum of two independently decoded subsystems with Na and Nb expanded faults."""
    fa, fb = _as_array(fa, na), _as_array(fb, nb)
    n = na + nb
    out = np.zeros(n + 1)
    for w in range(n + 1):
        norm = log_binomial(n, w)
        lo, hi = max(0, w - nb), min(na, w)
        wa = np.arange(lo, hi + 1)
        ta = fa[wa] * np.exp(log_binomial(na, wa) + log_binomial(nb, w - wa) - norm)
        lo, hi = max(0, w - na), min(nb, w)
        wb = np.arange(lo, hi + 1)
        tb = fb[wb] * np.exp(log_binomial(nb, wb) + log_binomial(na, w - wb) - norm)
        out[w] = math.fsum(ta.tolist()) + math.fsum(tb.tolist())
    return out


def binomial_interpolation(w, w0):
    """Smooth stand-in for C(w, w0): exact at w0, matching the large-w prefactor."""
    gamma = w0 + (2 * w0 - math.log(2 * math.pi * w0)) / math.log(2)
    w = np.asarray(w, dtype=float)
    x = w / w0
    return x ** gamma * ((1.0 + x * x) / 2.0) ** ((w0 - gamma) / 2.0)


def binomial_asymptotic(w, w0):
    w = np.asarray(w, dtype=float)
    return (w * math.e / w0) ** w0 * (2 * math.pi * w0) ** -0.5 * np.exp(-w0 * w0 / (2.0 * w))
