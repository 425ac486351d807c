"""Delocalized eta invariants by certified quadrature of trace integrands.

The central object is the time integral

    eta = (2/sqrt(pi)) * int_0^inf  tr_<h>( D exp(-t^2 D^2) ) dt

for a gapped equivariant operator ``D`` and a nontrivial conjugacy class
``<h>``, together with its cocycle-weighted generalization

    eta_phi = (m!/(pi i)) * int_0^inf
              phi # tr( u'_t u_t^{-1} (x) ((u_t - 1)(x)(u_t^{-1} - 1))^{(x)m} ) dt

driven by the spectral-flow unitary ``u_t = -exp(i pi erf(t D))``.  Every
report splits the integral at t = 1, integrates each finite leg adaptively,
cuts the tail at a certified point T where a closed-form envelope built from
the gap certificate and the cochain growth constants drops below a tenth of
the tolerance, and records the per-leg error budget next to the value.

The same machinery evaluates the pairing of a cocycle with an invertible
path (``tau_pair``); for the spectral-flow families the path is traversed
through s = 1/t, which flips the sign of the time integral and is the bridge
between the path pairing and the eta value.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import erfc, erfcinv

from .cyclic import CyclicCochain, Idempotent, certify_cyclic_cocycle, pair_phi_tr
from .errors import CertificateError, PreconditionError
from .group_algebra import AlgebraElement, convolve
from .groups import ConjugacyClass, GroupModel, growth_constants
from .operators import (
    EquivariantOperator,
    FiniteCoverOperator,
    FreeConvolutionOperator,
    SchwartzFunction,
    class_trace,
    functional_calculus,
    gap_certificate,
)

TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

# slot functions for the two spectral-flow path families, in the natural
# parametrization (dot = x' x^{-1}, then the two legs x - 1, x^{-1} - 1)
_FAMILY_TAGS = {
    "ut": ("udot_uinv", "ut_minus_1", "ut_inv_minus_1"),
    "wt": ("wdot_winv", "wt_minus_1", "wt_inv_minus_1"),
}

PATH_FAMILIES = ("ut", "wt", "exp_loop", "constant")


# ---------------------------------------------------------------------------
# gap thresholds
# ---------------------------------------------------------------------------


def threshold_sigma(rate: float, c_d: float, tau: float = 1.0) -> float:
    """Gap threshold ``2 * rate * c_d / tau`` for one growth envelope.

    Monotone increasing in the growth rate and in the propagation constant,
    and nonnegative whenever the inputs are.
    """
    if rate < 0 or c_d < 0:
        raise PreconditionError("growth rate and propagation constant must be >= 0")
    if tau <= 0:
        raise PreconditionError("summability exponent tau must be > 0")
    return 2.0 * rate * c_d / tau


@dataclass
class GapThreshold:
    """Spectral-gap thresholds certifying convergence of the eta integrals.

    ``sigma_class`` guards the class trace (class growth rate only);
    ``sigma_cocycle`` additionally pays for a cocycle growth envelope
    (group rate + cochain rate). ``gap`` is the certified spectral gap the
    thresholds are compared against.
    """

    sigma_class: float
    sigma_cocycle: float | None
    gap: float
    constants: dict = field(default_factory=dict)

    @property
    def class_ok(self) -> bool:
        return self.gap > self.sigma_class

    @property
    def cocycle_ok(self) -> bool:
        if self.sigma_cocycle is None:
            raise PreconditionError("no cocycle threshold was computed")
        return self.gap > self.sigma_cocycle

    def to_json_dict(self) -> dict:
        return {
            "sigma_class": self.sigma_class,
            "sigma_cocycle": self.sigma_cocycle,
            "gap": self.gap,
            "constants": dict(self.constants),
        }


def gap_thresholds(op: EquivariantOperator, cls: ConjugacyClass,
                   phi: CyclicCochain | None = None, *,
                   radius: int = 8, gap: float | None = None) -> GapThreshold:
    """Thresholds from fitted growth constants and the operator's propagation.

    ``sigma_class = 2 K_class c_D / tau_class`` and, when a cochain is given,
    ``sigma_cocycle = 2 (K_group + K_phi) c_D / tau_group`` with ``K_phi`` the
    exponential rate of its growth certificate (0 for sub-exponential kinds).
    """
    group = op.element.group
    if cls.group != group:
        raise PreconditionError("class does not live on the operator's group")
    gc = growth_constants(group, cls, radius)
    c_d = op.c_d
    # A polynomial-growth group has exponential rate zero; the finite-window
    # least-squares slope of polynomially many shell counts is an artifact
    # of the fit, so the threshold uses the certified rate, not the slope.
    poly = bool(group.polynomial_growth)
    class_rate = 0.0 if poly else gc.class_rate
    group_rate = 0.0 if poly else gc.group_rate
    sigma_class = threshold_sigma(class_rate, c_d, gc.tau_class)
    sigma_cocycle = None
    k_phi = 0.0
    if phi is not None:
        if phi.growth is None:
            raise PreconditionError(
                f"{phi.name} carries no growth certificate")
        k_phi = phi.growth.rate
        sigma_cocycle = threshold_sigma(group_rate + k_phi, c_d, gc.tau_group)
    measured = float(gap) if gap is not None else float(gap_certificate(op))
    return GapThreshold(
        sigma_class=sigma_class,
        sigma_cocycle=sigma_cocycle,
        gap=measured,
        constants={
            "class_rate": class_rate,
            "class_prefactor": gc.class_prefactor,
            "group_rate": group_rate,
            "group_prefactor": gc.group_prefactor,
            "fitted_class_rate": gc.class_rate,
            "fitted_group_rate": gc.group_rate,
            "polynomial_growth": poly,
            "cochain_rate": k_phi,
            "c_d": c_d,
            "tau_class": gc.tau_class,
            "tau_group": gc.tau_group,
            "fit_radius": gc.radius,
        })


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EtaReport:
    """A certified eta value with its full error budget.

    The integral is split at ``split_points = (0, 1, T)``: the two finite
    legs carry adaptive-quadrature error estimates plus the integrated
    per-evaluation calculus certificates, and everything beyond ``T`` is
    covered by the closed-form ``tail_bound`` whose ingredients are echoed
    in ``tail_constants``. ``samples`` holds every evaluated integrand point
    as ``(t, value, certified_abs_bound)``.
    """

    value: complex
    split_points: tuple
    interval_errors: dict
    tail_bound: float
    tail_constants: dict
    threshold: GapThreshold
    verdict: bool
    samples: list
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return float(sum(self.interval_errors.values()) + self.tail_bound)

    def to_json_dict(self) -> dict:
        return {
            "value": {"re": float(self.value.real), "im": float(self.value.imag)},
            "error": self.error,
            "tail_bound": float(self.tail_bound),
            "threshold_verdict": bool(self.verdict),
        }


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------


def _complex_quad(func, a: float, b: float, *, epsabs: float,
                  limit: int = 200,
                  epsrel: float = 1e-10) -> tuple[complex, float]:
    """Adaptive quadrature of a complex integrand; returns (value, error)."""
    if b <= a:
        return 0.0 + 0.0j, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re_val, re_err = integrate.quad(lambda t: func(t).real, a, b,
                                        epsabs=epsabs, epsrel=epsrel,
                                        limit=limit)
        im_val, im_err = integrate.quad(lambda t: func(t).imag, a, b,
                                        epsabs=epsabs, epsrel=epsrel,
                                        limit=limit)
    return complex(re_val, im_val), float(re_err + im_err)


def _gapped_abs_sup(g0: float, norm: float, t: float) -> float:
    """sup of |x e^{-t^2 x^2}| over g0 <= |x| <= norm (gapped spectrum)."""
    if t <= 0:
        return norm
    x_star = 1.0 / (t * math.sqrt(2.0))
    if x_star <= g0:
        return g0 * math.exp(-(t * g0) ** 2)
    if x_star >= norm:
        return norm * math.exp(-(t * norm) ** 2)
    return x_star * math.exp(-0.5)


def fit_gaussian_decay(samples, *, t_min: float = 1.0) -> dict:
    """Fit ``|I(t)| <= C t^N exp(-delta^2 t^2)`` on integrand samples.

    Least squares in the log domain over samples with ``t >= t_min``;
    ``max_log_excess`` is the largest amount by which a sample overshoots
    the fitted envelope (soundness of the fit is this number being small).
    """
    ts = np.array([t for t, v, *_ in samples
                   if t >= t_min and abs(v) > 1e-300])
    vals = np.array([abs(v) for t, v, *_ in samples
                     if t >= t_min and abs(v) > 1e-300])
    if len(ts) < 4:
        raise PreconditionError(
            f"need at least 4 usable samples beyond t={t_min}, got {len(ts)}")
    design = np.stack([np.ones_like(ts), np.log(ts), -ts ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.log(vals), rcond=None)
    log_c, n_pow, delta_sq = (float(c) for c in coef)
    fitted = design @ coef
    excess = float(np.max(np.log(vals) - fitted))
    return {
        "C": math.exp(log_c),
        "N": n_pow,
        "delta": math.sqrt(max(delta_sq, 0.0)),
        "max_log_excess": excess,
        "points": int(len(ts)),
    }


# ---------------------------------------------------------------------------
# invertible paths
# ---------------------------------------------------------------------------


def _loop_coefficient(t: float) -> complex:
    """c(t) with  1 + c(t) p  =  exp(2 pi i (1-t) p);  c(1) = 0 exactly."""
    return cmath.exp(2j * math.pi * (1.0 - t)) - 1.0


@dataclass
class InvertiblePath:
    """A certified path of invertibles in the unitized algebra.

    Families: ``ut`` and ``wt`` traverse the spectral-flow unitaries
    ``u_{1/t}(D)`` resp. the Cayley transforms ``w_{1/t}(D)`` (so the path
    starts at the unit as t -> 0); ``exp_loop`` is the idempotent loop
    ``1 + c(t) p`` closing at the unit at t = 1 and constant beyond;
    ``constant`` never leaves the unit. Construction certifies
    ``|x x^{-1} - 1| <= tol`` at every grid sample.
    """

    family: str
    operator: EquivariantOperator | None
    idempotent: Idempotent | None
    grid: tuple
    radius: int | None
    certificate: dict

    @property
    def group(self) -> GroupModel:
        if self.operator is not None:
            return self.operator.element.group
        if self.idempotent is not None:
            return self.idempotent.group
        raise PreconditionError("constant path carries no group")


def _certification_radius(op: EquivariantOperator, s: float) -> int:
    """Truncation radius keeping the inverse-defect of a sampled path value
    below the certification tolerance (envelope heuristic, then capped by
    what the backend can afford)."""
    group = op.element.group
    band = max(op.element.propagation_radius(), 1)
    if isinstance(op, FiniteCoverOperator):
        return max(group.word_length(g) for g in op.elements)
    if isinstance(op, FreeConvolutionOperator):
        return 8
    spread = int(math.ceil(9.0 * 1.1 * op.c_d * s)) + band + 8
    cap = 220 if group.rank == 1 else 26
    return min(spread, cap)


def _sample_defect(op: EquivariantOperator, family: str, s: float,
                   radius: int) -> float:
    """l1 norm of ``x x^{-1} - 1`` for the sampled path value at scale s."""
    _, leg_tag, leg_inv_tag = _FAMILY_TAGS[family]
    a = functional_calculus(op, SchwartzFunction(leg_tag, s), radius,
                            tol=1e-12, strict=False).element
    b = functional_calculus(op, SchwartzFunction(leg_inv_tag, s), radius,
                            tol=1e-12, strict=False).element
    defect = a + b + convolve(a, b)
    return float(sum(defect.trace_norms().values()))


def invertible_path(family: str, *, operator: EquivariantOperator | None = None,
                    idempotent: Idempotent | None = None,
                    grid=None, radius: int | None = None,
                    tol: float = 1e-8) -> InvertiblePath:
    """Build and certify a path of invertibles; see :class:`InvertiblePath`.

    Raises a precondition error naming the first sample where the declared
    inverse fails ``|x x^{-1} - 1| <= tol``.
    """
    if family not in PATH_FAMILIES:
        raise PreconditionError(
            f"unknown path family {family!r}; choose from {PATH_FAMILIES}")
    if family == "constant":
        return InvertiblePath(family, None, None, (), None,
                              {"max_defect": 0.0, "samples": {}})

    if family == "exp_loop":
        if idempotent is None:
            raise PreconditionError("exp_loop needs an idempotent")
        grid = tuple(grid) if grid is not None else tuple(np.linspace(0.1, 0.9, 5))
        p = idempotent.element
        psq = convolve(p, p)
        defects = {}
        for t in grid:
            c = _loop_coefficient(t)
            defect = p * (c + c.conjugate()) + psq * (c * c.conjugate())
            defects[float(t)] = float(sum(defect.trace_norms().values()))
        worst = max(defects.values(), default=0.0)
        if worst > tol:
            bad = max(defects, key=defects.get)
            raise PreconditionError(
                f"exp_loop inverse defect {worst:.3e} > {tol:.1e} at t={bad}")
        return InvertiblePath(family, None, idempotent, grid, None,
                              {"max_defect": worst, "samples": defects})

    if operator is None:
        raise PreconditionError(f"{family} path needs an operator")
    grid = tuple(grid) if grid is not None else (0.25, 0.5, 1.0, 2.0, 4.0)
    defects = {}
    for t in grid:
        if t <= 0:
            raise PreconditionError("path grid times must be > 0")
        s = 1.0 / t
        r = radius if radius is not None else _certification_radius(operator, s)
        defects[float(t)] = _sample_defect(operator, family, s, r)
    worst = max(defects.values(), default=0.0)
    if worst > tol:
        bad = max(defects, key=defects.get)
        raise PreconditionError(
            f"{family} inverse defect {worst:.3e} > {tol:.1e} at t={bad}")
    return InvertiblePath(family, operator, None, grid, radius,
                          {"max_defect": worst, "samples": defects})


# ---------------------------------------------------------------------------
# the integrand engine
# ---------------------------------------------------------------------------


def _length_weights(growth, lengths: np.ndarray) -> np.ndarray:
    """Per-slot envelope weight w(l) with |phi| <= C * prod_i w(l_i)."""
    lengths = np.asarray(lengths, dtype=float)
    if growth.kind == "bounded":
        return np.ones_like(lengths)
    if growth.kind == "polynomial":
        return (1.0 + lengths) ** growth.k
    return np.exp(growth.k * lengths)


def _ball_weight_sum(group: GroupModel, radius: int, growth) -> float:
    """``sum_{g in B_radius} w(l(g))`` via exact shell counts."""
    total = 0.0
    for n in range(radius + 1):
        shell = len(group.sphere(n))
        if shell:
            total += shell * float(_length_weights(growth, np.array([n]))[0])
    return total


def _weighted_slot_norm(a: AlgebraElement, growth) -> float:
    """``sum_g w(l(g)) |a_g|_1`` — the slot norm the envelope pairs with."""
    norms = a.trace_norms()
    if not norms:
        return 0.0
    lengths = np.array([a.group.word_length(g) for g in norms], dtype=float)
    vals = np.array(list(norms.values()), dtype=float)
    return float(np.sum(vals * _length_weights(growth, lengths)))


class _HigherIntegrand:
    """Memoized evaluator of the cocycle-weighted eta integrand.

    ``value(t)`` returns the prefactored integrand
    ``(m!/(pi i)) phi # tr(dot (x) (leg (x) leg_inv)^(x)m)`` at scale t in
    the natural parametrization, tracking a certified per-evaluation error
    through the multilinearity of the pairing.
    """

    def __init__(self, op: EquivariantOperator, phi: CyclicCochain, m: int,
                 radius: int, family: str, per_eval_tol: float):
        if family not in _FAMILY_TAGS:
            raise PreconditionError(f"no integrand family {family!r}")
        self.op = op
        self.phi = phi
        self.m = m
        self.radius = radius
        self.family = family
        self.per_eval_tol = per_eval_tol
        self.prefactor = math.factorial(m) / (math.pi * 1j)
        self.memo: dict = {}
        self.fold_scale = (math.factorial(m) / math.pi) * phi.growth.C
        group = op.element.group
        self.ball_weight = (_ball_weight_sum(group, radius, phi.growth)
                            * op.element.dim ** 2)

    def _slot_tags(self) -> list:
        dot, leg, leg_inv = _FAMILY_TAGS[self.family]
        return [dot] + [leg, leg_inv] * self.m

    def value(self, t: float) -> tuple[complex, float]:
        key = float(t)
        if key in self.memo:
            return self.memo[key]
        results = {}
        for tag in dict.fromkeys(self._slot_tags()):
            results[tag] = functional_calculus(
                self.op, SchwartzFunction(tag, t), self.radius,
                tol=self.per_eval_tol, strict=False)
        ws = [results[tag].element for tag in self._slot_tags()]
        errs = [results[tag].error for tag in self._slot_tags()]
        val = self.prefactor * pair_phi_tr(self.phi, ws)
        slot_norms = [_weighted_slot_norm(w, self.phi.growth) for w in ws]
        fold = 0.0
        for i, err in enumerate(errs):
            others = 1.0
            for j, norm in enumerate(slot_norms):
                if j != i:
                    others *= norm
            fold += err * self.ball_weight * others
        fold *= self.fold_scale
        out = (complex(val), float(fold))
        self.memo[key] = out
        return out

    def abs_bound(self, t: float, g0: float) -> float:
        """Closed-form certified bound on |integrand(t)| from the gap."""
        norm = self.op.operator_norm_bound()
        dot_sup = 2.0 * math.sqrt(math.pi) * _gapped_abs_sup(g0, norm, t)
        if self.family == "wt":
            dot_sup = 2.0 / max(t, 1e-300)
            leg_sup = 2.0
        elif t * g0 >= 1.0:
            leg_sup = math.sqrt(math.pi) * math.exp(-(t * g0) ** 2) / (t * g0)
        else:
            leg_sup = 2.0
        return (self.fold_scale * self.ball_weight ** (2 * self.m + 1)
                * dot_sup * leg_sup ** (2 * self.m))


def _auto_radius(op: EquivariantOperator, min_radius: int) -> int:
    group = op.element.group
    band = max(op.element.propagation_radius(), 1)
    if isinstance(op, FiniteCoverOperator):
        return max(group.word_length(g) for g in op.elements)
    if isinstance(op, FreeConvolutionOperator):
        return max(min(8, min_radius + 2), min_radius)
    base = max(2 * band + 4, 8, min_radius)
    return base


def _radius_cap(group: GroupModel) -> int:
    rank = getattr(group, "rank", 1)
    if rank >= 3:
        return 24
    if rank == 2:
        return 48
    return 140


def _build_integrand(op: EquivariantOperator, phi: CyclicCochain, m: int,
                     family: str, tol: float, radius: int | None,
                     probe_times=(0.5, 1.0, 2.0)) -> _HigherIntegrand:
    """Fix the truncation radius by a stability ladder, then freeze the
    memoized integrand engine at that radius."""
    per_eval_tol = max(1e-13, tol * 1e-7)
    min_radius = 0
    if phi.support_class is not None:
        min_radius = phi.support_class.minimal_length()
    if radius is not None:
        return _HigherIntegrand(op, phi, m, radius, family, per_eval_tol)
    r = _auto_radius(op, min_radius)
    cap = _radius_cap(op.element.group)
    if isinstance(op, (FiniteCoverOperator, FreeConvolutionOperator)):
        return _HigherIntegrand(op, phi, m, r, family, per_eval_tol)
    step = 4
    engine = _HigherIntegrand(op, phi, m, r, family, per_eval_tol)
    while True:
        probe = _HigherIntegrand(op, phi, m, r + step, family, per_eval_tol)
        diff = max(abs(engine.value(t)[0] - probe.value(t)[0])
                   for t in probe_times)
        if diff <= tol / 20.0:
            engine.probe_diff = diff
            return engine
        if r + step >= cap:
            raise CertificateError(
                "radius-ladder",
                f"integrand not stable in truncation radius up to {cap} "
                f"(last change {diff:.3e} > {tol / 20.0:.1e})")
        r += step
        engine = probe


# ---------------------------------------------------------------------------
# eta of a conjugacy class
# ---------------------------------------------------------------------------


def eta_class(op: EquivariantOperator, cls: ConjugacyClass, *,
              tol: float = 1e-8, gap: float | None = None,
              radius: int | None = None, growth_radius: int = 8,
              quad_limit: int = 200, quad_rel: float = 1e-10,
              tail_frac: float = 0.1) -> EtaReport:
    """The delocalized eta of a gapped operator at a nontrivial class.

    ``(2/sqrt(pi)) int_0^inf tr_<h>(D exp(-t^2 D^2)) dt`` with the class
    trace evaluated through the certified functional calculus at every
    quadrature node. Preconditions: the class is nontrivial and the gap
    certificate is positive. The tail beyond the certified cut T is bounded
    by ``n_class * dim * erfc(gap * T)``; the cut targets ``tol * tail_frac``
    and the finite legs integrate at relative tolerance ``quad_rel``.
    """
    group = op.element.group
    if cls.group != group:
        raise PreconditionError("class does not live on the operator's group")
    if cls.is_trivial:
        raise PreconditionError(
            "delocalized eta needs a nontrivial conjugacy class "
            "(the trivial class pairs with the local index, not computed here)")
    g0 = float(gap) if gap is not None else float(gap_certificate(op))
    if g0 <= 0:
        raise PreconditionError(
            f"gap certificate {g0} is not positive; eta needs an invertible "
            "operator")
    r_used = radius if radius is not None else _auto_radius(
        op, cls.minimal_length())
    members = cls.elements_within(r_used)
    if not members:
        raise PreconditionError(
            f"no class members within truncation radius {r_used}")
    n_cls = len(members)
    fdim = op.element.dim

    if not 0.0 < tail_frac < 1.0:
        raise PreconditionError(
            f"tail fraction must lie in (0, 1), got {tail_frac}")
    t_cut = max(1.0, 1.0 / (g0 * math.sqrt(2.0)))
    target = tol * tail_frac
    need = target / (n_cls * fdim)
    if need < 2.0:
        t_cut = max(t_cut, float(erfcinv(need)) / g0)
    tail = float(n_cls * fdim * erfc(g0 * t_cut))

    per_eval_tol = max(1e-13, tol * 1e-3)
    samples: dict = {}
    eval_errors: list = []

    def integrand(t: float) -> complex:
        key = float(t)
        if key in samples:
            return samples[key][0]
        res = class_trace(op, SchwartzFunction("xgauss", t), cls, r_used,
                          tol=per_eval_tol, strict=False)
        val = TWO_OVER_SQRT_PI * complex(res.value)
        err = TWO_OVER_SQRT_PI * (res.tail_bound + res.calculus_error)
        bound = (TWO_OVER_SQRT_PI * n_cls * fdim
                 * _gapped_abs_sup(g0, op.operator_norm_bound(), t))
        samples[key] = (val, err, bound)
        eval_errors.append(err)
        return val

    small_val, small_err = _complex_quad(integrand, 0.0, 1.0,
                                         epsabs=tol * 0.3, limit=quad_limit,
                                         epsrel=quad_rel)
    mid_val, mid_err = _complex_quad(integrand, 1.0, t_cut,
                                     epsabs=tol * 0.3, limit=quad_limit,
                                     epsrel=quad_rel)
    calc_fold = max(eval_errors, default=0.0) * t_cut
    thresholds = gap_thresholds(op, cls, None, radius=growth_radius, gap=g0)
    interval_errors = {
        "small_t": small_err,
        "mid_t": mid_err,
        "calculus": calc_fold,
    }
    total = small_err + mid_err + calc_fold + tail
    return EtaReport(
        value=small_val + mid_val,
        split_points=(0.0, 1.0, t_cut),
        interval_errors=interval_errors,
        tail_bound=tail,
        tail_constants={
            "gap": g0,
            "class_members": n_cls,
            "fiber_dim": fdim,
            "T": t_cut,
            "formula": "n_class * dim * erfc(gap * T)",
        },
        threshold=thresholds,
        verdict=thresholds.class_ok,
        samples=sorted((t, v, b) for t, (v, e, b) in samples.items()),
        converged=bool(total <= tol),
        diagnostics={
            "radius": r_used,
            "evaluations": len(samples),
            "per_eval_tol": per_eval_tol,
        })


# ---------------------------------------------------------------------------
# higher eta
# ---------------------------------------------------------------------------


def _tail_cut_higher(engine: _HigherIntegrand, g0: float,
                     target: float) -> tuple[float, float]:
    """Smallest T (on a half-integer ladder) with
    ``int_T^inf |integrand| <= target`` by the closed-form envelope."""
    m = engine.m
    a = (2 * m + 1) * g0 * g0

    def tail_at(t_cut: float) -> float:
        dot = 2.0 * math.sqrt(math.pi) * g0
        legs = (math.sqrt(math.pi) / (t_cut * g0)) ** (2 * m)
        gauss = math.sqrt(math.pi) / (2.0 * math.sqrt(a)) * float(
            erfc(math.sqrt(a) * t_cut))
        return (engine.fold_scale * engine.ball_weight ** (2 * m + 1)
                * dot * legs * gauss)

    t_cut = max(1.0, 1.0 / (g0 * math.sqrt(2.0)))
    while tail_at(t_cut) > target and t_cut < 40.0:
        t_cut += 0.5
    return t_cut, tail_at(t_cut)


def _integrate_engine(engine: _HigherIntegrand, g0: float, tol: float,
                      quad_limit: int, quad_rel: float = 1e-10,
                      tail_frac: float = 0.1) -> dict:
    """Split quadrature of the engine's integrand with full error budget."""
    if not 0.0 < tail_frac < 1.0:
        raise PreconditionError(
            f"tail fraction must lie in (0, 1), got {tail_frac}")
    t_cut, tail = _tail_cut_higher(engine, g0, tol * tail_frac)
    eval_errors: list = []

    def integrand(t: float) -> complex:
        val, err = engine.value(t)
        eval_errors.append(err)
        return val

    small_val, small_err = _complex_quad(integrand, 0.0, 1.0,
                                         epsabs=tol * 0.3, limit=quad_limit,
                                         epsrel=quad_rel)
    mid_val, mid_err = _complex_quad(integrand, 1.0, t_cut,
                                     epsabs=tol * 0.3, limit=quad_limit,
                                     epsrel=quad_rel)
    fold = max(eval_errors, default=0.0) * t_cut
    samples = sorted((t, v, engine.abs_bound(t, g0))
                     for t, (v, e) in engine.memo.items())
    return {
        "value": small_val + mid_val,
        "small_err": small_err,
        "mid_err": mid_err,
        "fold": fold,
        "tail": tail,
        "t_cut": t_cut,
        "samples": samples,
    }


def _require_even_cocycle(phi: CyclicCochain) -> int:
    if phi.degree % 2 != 0:
        raise PreconditionError(
            f"{phi.name} has odd degree {phi.degree}: odd cocycles pair with "
            "idempotent paths (the even K-theory pairing), which this tool "
            "does not compute; eta takes even-degree cocycles")
    return phi.degree // 2


def eta_higher(op: EquivariantOperator, phi: CyclicCochain, *,
               tol: float = 1e-8, gap: float | None = None,
               radius: int | None = None, growth_radius: int = 8,
               check_cocycle: bool = True, seed: int = 0,
               quad_limit: int = 200, quad_rel: float = 1e-10,
               tail_frac: float = 0.1) -> EtaReport:
    """The cocycle-weighted eta driven by the spectral-flow unitaries.

    ``(m!/(pi i)) int_0^inf phi#tr(u'_t u_t^{-1} (x) ((u_t-1)(x)(u_t^{-1}-1))^(x)m) dt``
    for an even-degree cocycle with a growth certificate. Degree 0 with a
    class trace reproduces :func:`eta_class` by an independent route.
    """
    group = op.element.group
    if phi.group != group:
        raise PreconditionError("cochain does not live on the operator's group")
    m = _require_even_cocycle(phi)
    if phi.growth is None:
        raise PreconditionError(f"{phi.name} carries no growth certificate")
    if check_cocycle:
        certify_cyclic_cocycle(phi, radius=2, samples=200, seed=seed, tol=1e-8)
    g0 = float(gap) if gap is not None else float(gap_certificate(op))
    if g0 <= 0:
        raise PreconditionError(
            f"gap certificate {g0} is not positive; eta needs an invertible "
            "operator")
    engine = _build_integrand(op, phi, m, "ut", tol, radius)
    parts = _integrate_engine(engine, g0, tol, quad_limit,
                              quad_rel=quad_rel, tail_frac=tail_frac)
    cls = phi.support_class if phi.support_class is not None \
        else ConjugacyClass(group, group.identity)
    thresholds = gap_thresholds(op, cls, phi, radius=growth_radius, gap=g0)
    interval_errors = {
        "small_t": parts["small_err"],
        "mid_t": parts["mid_err"],
        "calculus": parts["fold"],
    }
    total = sum(interval_errors.values()) + parts["tail"]
    return EtaReport(
        value=parts["value"],
        split_points=(0.0, 1.0, parts["t_cut"]),
        interval_errors=interval_errors,
        tail_bound=parts["tail"],
        tail_constants={
            "gap": g0,
            "degree": phi.degree,
            "ball_weight": engine.ball_weight,
            "envelope_C": phi.growth.C,
            "T": parts["t_cut"],
            "formula": "fold_scale * W^(2m+1) * dot_sup * leg_sup^(2m) "
                       "* gaussian_tail",
        },
        threshold=thresholds,
        verdict=thresholds.cocycle_ok,
        samples=parts["samples"],
        converged=bool(total <= tol),
        diagnostics={
            "radius": engine.radius,
            "evaluations": len(engine.memo),
            "probe_diff": getattr(engine, "probe_diff", None),
            "per_eval_tol": engine.per_eval_tol,
        })


def eta_integrand(op: EquivariantOperator, phi: CyclicCochain, t: float, *,
                  radius: int | None = None, tol: float = 1e-8,
                  family: str = "ut") -> complex:
    """One prefactored integrand sample (diagnostics and cross-checks)."""
    m = _require_even_cocycle(phi)
    engine = _build_integrand(op, phi, m, family, tol, radius)
    return engine.value(t)[0]


# ---------------------------------------------------------------------------
# pairing with invertible paths
# ---------------------------------------------------------------------------


def tau_pair(phi: CyclicCochain, path: InvertiblePath, *,
             tol: float = 1e-8, radius: int | None = None,
             quad_limit: int = 200) -> complex:
    """Pair an even cocycle with an invertible path:

    ``tau_phi = (m!/(pi i)) int_0^inf phi#tr(x' x^{-1} (x) ((x-1)(x)(x^{-1}-1))^(x)m) dt``

    along the path. The spectral-flow families are traversed through
    s = 1/t, so their value is minus the natural-parametrization integral;
    the idempotent loop integrates over [0, 1] and is constant beyond; the
    constant path pairs to zero.
    """
    m = _require_even_cocycle(phi)
    if phi.growth is None:
        raise PreconditionError(f"{phi.name} carries no growth certificate")

    if path.family == "constant":
        return 0.0 + 0.0j

    if path.family == "exp_loop":
        p = path.idempotent
        if phi.group != p.group:
            raise PreconditionError("cochain and loop live on different groups")
        pe = p.element
        prefactor = math.factorial(m) / (math.pi * 1j)
        dot = pe * (-2j * math.pi)

        def integrand(t: float) -> complex:
            c = _loop_coefficient(t)
            ws = [dot] + [pe * c, pe * c.conjugate()] * m
            return prefactor * pair_phi_tr(phi, ws)

        val, _ = _complex_quad(integrand, 0.0, 1.0, epsabs=tol / 4.0,
                               limit=quad_limit)
        return val

    op = path.operator
    if phi.group != op.element.group:
        raise PreconditionError("cochain and path live on different groups")
    g0 = float(gap_certificate(op))
    if g0 <= 0:
        raise PreconditionError("path pairing needs a positive gap certificate")

    if path.family == "ut":
        engine = _build_integrand(op, phi, m, "ut", tol,
                                  radius if radius is not None else path.radius)
        parts = _integrate_engine(engine, g0, tol, quad_limit)
        return -parts["value"]

    # Cayley family: the integrand decays only polynomially in time, so the
    # certificate rests on the group's polynomial-growth flag, and the far
    # leg is folded to (0, 1] by the 1/t substitution instead of being cut.
    if not op.element.group.polynomial_growth:
        raise PreconditionError(
            "the Cayley path tail decays only polynomially and is certified "
            "only over groups with polynomial growth; "
            f"{op.element.group!r} carries no such certificate")
    engine = _build_integrand(op, phi, m, "wt", tol,
                              radius if radius is not None else path.radius)

    def near(t: float) -> complex:
        return engine.value(t)[0]

    def far(sigma: float) -> complex:
        return engine.value(1.0 / sigma)[0] / (sigma * sigma)

    near_val, _ = _complex_quad(near, 0.0, 1.0, epsabs=tol / 4.0,
                                limit=quad_limit)
    far_val, _ = _complex_quad(far, 0.0, 1.0, epsabs=tol / 4.0,
                               limit=quad_limit)
    return -(near_val + far_val)
