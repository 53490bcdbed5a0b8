"""Parametric learning-curve families and their analytic gradients.

A learning curve maps sample counts to expected generalization
performance (AUROC or AUPR here). Five families are supported; all
exponential families share the saturating form ``c - exp(b - <rate
terms>)`` where each rate term multiplies a scaled sample count:

    EXP4   (n)              c - exp(b - a_i * x**alpha)
    EXP3_1 (n)              c - exp(b - a_i * x)
    ILOG2  (n)              c - a_i / log(x)          (requires x > 1)
    EXP3_2 (n, n_sigma)     c - exp(b - a_i * x - a_sigma * v)
    EXP3_3 (n, n_sigma, n_aux)
                            c - exp(b - a_i * x - a_ij * u - a_sigma * v)

with x = n_t / n_scale, v = n_sigma / n_scale, u = n_aux / n_scale.
Rescaling by ``n_scale`` keeps exponent arguments O(1) so raw counts in
the tens of thousands cannot overflow the exponential.

Parameter interpretation: ``c`` is the asymptotic performance bound,
``b`` the log-gap at zero samples (an applicability threshold), and the
``a`` coefficients are per-unit-scaled-sample rates. ``a_i`` (own-task
samples) is constrained non-negative at fit time; ``a_sigma`` and
``a_ij`` may be negative, which models negative transfer.

All types are immutable and every function here is pure, so concurrent
use from any number of threads is safe.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArityMismatchError, DomainError

#: Canonical parameter order used everywhere a ParamSet is flattened
#: (gradients, fitter vectors, CSV serialization).
PARAM_ORDER = ("a_i", "a_ij", "a_sigma", "b", "c", "alpha")


class CurveFamily(enum.Enum):
    EXP4 = "EXP4"
    EXP3_1 = "EXP3_1"
    ILOG2 = "ILOG2"
    EXP3_2 = "EXP3_2"
    EXP3_3 = "EXP3_3"


#: Parameters each family actually uses, in canonical order.
FAMILY_PARAMS: dict[CurveFamily, tuple[str, ...]] = {
    CurveFamily.EXP4: ("a_i", "b", "c", "alpha"),
    CurveFamily.EXP3_1: ("a_i", "b", "c"),
    CurveFamily.ILOG2: ("a_i", "c"),
    CurveFamily.EXP3_2: ("a_i", "a_sigma", "b", "c"),
    CurveFamily.EXP3_3: ("a_i", "a_ij", "a_sigma", "b", "c"),
}

#: Number of arguments each family consumes: 1 -> (n_t), 2 -> (n_t,
#: n_sigma), 3 -> (n_t, n_sigma, n_aux).
FAMILY_ARITY: dict[CurveFamily, int] = {
    CurveFamily.EXP4: 1,
    CurveFamily.EXP3_1: 1,
    CurveFamily.ILOG2: 1,
    CurveFamily.EXP3_2: 2,
    CurveFamily.EXP3_3: 3,
}


@dataclass(frozen=True)
class ParamSet:
    """Coefficients of one learning curve plus freeze state and scale.

    ``freeze_mask`` holds one flag per entry of :data:`PARAM_ORDER`;
    frozen parameters are excluded from gradients and held fixed by the
    fitter. ``n_scale`` is the raw sample count corresponding to one
    unit of the curve argument.
    """

    a_i: float = 0.0
    a_ij: float = 0.0
    a_sigma: float = 0.0
    b: float = 0.0
    c: float = 1.0
    alpha: float = 1.0
    freeze_mask: tuple[bool, ...] = (False,) * 6
    n_scale: float = 1.0

    def __post_init__(self) -> None:
        if len(self.freeze_mask) != len(PARAM_ORDER):
            raise ValueError("freeze_mask must have one flag per parameter")
        if not (self.n_scale > 0):
            raise ValueError("n_scale must be positive")

    def value_of(self, name: str) -> float:
        return getattr(self, name)

    def frozen(self, name: str) -> bool:
        return self.freeze_mask[PARAM_ORDER.index(name)]

    def replace(self, **kw) -> "ParamSet":
        return dataclasses.replace(self, **kw)

    def with_freeze(self, names: tuple[str, ...] | list[str]) -> "ParamSet":
        mask = tuple(p in names for p in PARAM_ORDER)
        return self.replace(freeze_mask=mask)


@dataclass(frozen=True)
class CurveArgs:
    """Raw (unscaled) sample counts for one grid point.

    ``n_sigma`` is the summed count of the complementary tasks; it
    excludes the target task and, for three-argument points, also the
    designated auxiliary task. ``n_aux`` is 0 when unused.
    """

    n_t: float
    n_sigma: float = 0.0
    n_aux: float = 0.0

    def __post_init__(self) -> None:
        if self.n_t < 0 or self.n_sigma < 0 or self.n_aux < 0:
            raise ValueError("sample counts must be non-negative")


def free_param_names(family: CurveFamily, params: ParamSet) -> tuple[str, ...]:
    """Unfrozen parameters of ``family`` in canonical order."""
    return tuple(p for p in FAMILY_PARAMS[family] if not params.frozen(p))


def check_arity(family: CurveFamily, args: CurveArgs) -> None:
    """Raise ArityMismatchError unless ``args`` matches the family."""
    arity = FAMILY_ARITY[family]
    if arity < 3 and args.n_aux != 0:
        raise ArityMismatchError(f"{family.value} takes no auxiliary count")
    if arity < 2 and args.n_sigma != 0:
        raise ArityMismatchError(f"{family.value} takes no complementary count")


def _check_arity_arrays(family: CurveFamily, ns, na) -> None:
    arity = FAMILY_ARITY[family]
    if arity < 3 and np.any(na != 0):
        raise ArityMismatchError(f"{family.value} takes no auxiliary count")
    if arity < 2 and np.any(ns != 0):
        raise ArityMismatchError(f"{family.value} takes no complementary count")


def eval_arrays(
    family: CurveFamily,
    params: ParamSet,
    nt: np.ndarray,
    ns: np.ndarray | None = None,
    na: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized curve evaluation over raw sample counts.

    The single-point :func:`eval_curve` wraps this; the fitter calls it
    directly on whole residual vectors.
    """
    nt = np.asarray(nt, dtype=float)
    ns = np.zeros_like(nt) if ns is None else np.asarray(ns, dtype=float)
    na = np.zeros_like(nt) if na is None else np.asarray(na, dtype=float)
    _check_arity_arrays(family, ns, na)
    x = nt / params.n_scale
    if family is CurveFamily.ILOG2:
        if np.any(x <= 1.0):
            raise DomainError("ILOG2 requires scaled sample count > 1")
        return params.c - params.a_i / np.log(x)
    if family is CurveFamily.EXP4:
        expo = params.b - params.a_i * x**params.alpha
    elif family is CurveFamily.EXP3_1:
        expo = params.b - params.a_i * x
    elif family is CurveFamily.EXP3_2:
        expo = params.b - params.a_i * x - params.a_sigma * (ns / params.n_scale)
    elif family is CurveFamily.EXP3_3:
        expo = (
            params.b
            - params.a_i * x
            - params.a_ij * (na / params.n_scale)
            - params.a_sigma * (ns / params.n_scale)
        )
    else:  # pragma: no cover
        raise ValueError(f"unknown family {family}")
    return params.c - np.exp(expo)


def grad_arrays(
    family: CurveFamily,
    params: ParamSet,
    nt: np.ndarray,
    ns: np.ndarray | None = None,
    na: np.ndarray | None = None,
) -> tuple[tuple[str, ...], np.ndarray]:
    """Jacobian of the curve value w.r.t. the unfrozen parameters.

    Returns ``(names, J)`` where ``J[k, j]`` is the partial of the value
    at point ``k`` w.r.t. parameter ``names[j]``; ``names`` follows the
    canonical order.
    """
    nt = np.asarray(nt, dtype=float)
    ns = np.zeros_like(nt) if ns is None else np.asarray(ns, dtype=float)
    na = np.zeros_like(nt) if na is None else np.asarray(na, dtype=float)
    _check_arity_arrays(family, ns, na)
    names = free_param_names(family, params)
    x = nt / params.n_scale
    cols: dict[str, np.ndarray] = {}
    if family is CurveFamily.ILOG2:
        if np.any(x <= 1.0):
            raise DomainError("ILOG2 requires scaled sample count > 1")
        cols["a_i"] = -1.0 / np.log(x)
        cols["c"] = np.ones_like(x)
    else:
        if family is CurveFamily.EXP4:
            xa = x**params.alpha
            expo = params.b - params.a_i * xa
        elif family is CurveFamily.EXP3_1:
            xa = x
            expo = params.b - params.a_i * x
        elif family is CurveFamily.EXP3_2:
            xa = x
            expo = params.b - params.a_i * x - params.a_sigma * (ns / params.n_scale)
        else:
            xa = x
            expo = (
                params.b
                - params.a_i * x
                - params.a_ij * (na / params.n_scale)
                - params.a_sigma * (ns / params.n_scale)
            )
        e = np.exp(expo)
        cols["a_i"] = xa * e
        cols["a_ij"] = (na / params.n_scale) * e
        cols["a_sigma"] = (ns / params.n_scale) * e
        cols["b"] = -e
        cols["c"] = np.ones_like(x)
        if family is CurveFamily.EXP4:
            # x**alpha * log(x) -> 0 as x -> 0+ for alpha > 0.
            xlog = np.where(x > 0, x**params.alpha * np.log(np.where(x > 0, x, 1.0)), 0.0)
            cols["alpha"] = params.a_i * xlog * e
    jac = np.column_stack([cols[p] for p in names]) if names else np.empty((nt.size, 0))
    return names, jac


def eval_curve(family: CurveFamily, params: ParamSet, args: CurveArgs) -> float:
    """Evaluate one curve family at one grid point.

    Raises ArityMismatchError when ``args`` carries counts the family
    does not take, DomainError for ILOG2 at scaled count <= 1.
    """
    check_arity(family, args)
    out = eval_arrays(
        family,
        params,
        np.array([args.n_t]),
        np.array([args.n_sigma]),
        np.array([args.n_aux]),
    )
    return float(out[0])


def grad_params(
    family: CurveFamily, params: ParamSet, args: CurveArgs
) -> dict[str, float]:
    """Partial derivatives of the value w.r.t. each unfrozen parameter.

    Keys follow the canonical order of :data:`PARAM_ORDER` restricted to
    the family's unfrozen parameters.
    """
    check_arity(family, args)
    names, jac = grad_arrays(
        family,
        params,
        np.array([args.n_t]),
        np.array([args.n_sigma]),
        np.array([args.n_aux]),
    )
    return {name: float(jac[0, j]) for j, name in enumerate(names)}


def marginal_gain(
    family: CurveFamily,
    params: ParamSet,
    args: CurveArgs,
    delta: float,
    which: str = "target",
) -> float:
    """Exact predicted performance increment from ``delta`` more samples.

    ``which`` selects the incremented argument: "target", "sigma" or
    "aux". The result is the difference of two curve evaluations, not a
    derivative approximation.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    arity = FAMILY_ARITY[family]
    if which == "target":
        bumped = dataclasses.replace(args, n_t=args.n_t + delta)
    elif which == "sigma":
        if arity < 2:
            raise ArityMismatchError(f"{family.value} takes no complementary count")
        bumped = dataclasses.replace(args, n_sigma=args.n_sigma + delta)
    elif which == "aux":
        if arity < 3:
            raise ArityMismatchError(f"{family.value} takes no auxiliary count")
        bumped = dataclasses.replace(args, n_aux=args.n_aux + delta)
    else:
        raise ValueError(f"unknown argument selector {which!r}")
    return eval_curve(family, params, bumped) - eval_curve(family, params, args)


def serialize_params(family: CurveFamily, params: ParamSet) -> list[str]:
    """CSV cells for one ParamSet: family, a_i, a_ij, a_sigma, b, c,
    alpha, n_scale, freeze bits as a 6-character 0/1 string."""
    cells = [family.value]
    cells += [repr(float(params.value_of(p))) for p in PARAM_ORDER]
    cells.append(repr(float(params.n_scale)))
    cells.append("".join("1" if f else "0" for f in params.freeze_mask))
    return cells


def deserialize_params(cells: list[str]) -> tuple[CurveFamily, ParamSet]:
    """Inverse of :func:`serialize_params`."""
    family = CurveFamily(cells[0])
    values = {p: float(cells[1 + i]) for i, p in enumerate(PARAM_ORDER)}
    n_scale = float(cells[1 + len(PARAM_ORDER)])
    bits = cells[2 + len(PARAM_ORDER)]
    if len(bits) != len(PARAM_ORDER) or set(bits) - {"0", "1"}:
        raise ValueError(f"bad freeze bit string {bits!r}")
    mask = tuple(ch == "1" for ch in bits)
    return family, ParamSet(freeze_mask=mask, n_scale=n_scale, **values)


def curve_summary(family: CurveFamily, params: ParamSet) -> str:
    names = FAMILY_PARAMS[family]
    body = ", ".join(f"{p}={params.value_of(p):.6g}" for p in names)
    return f"{family.value}({body}; n_scale={params.n_scale:.6g})"
