"""Learning-curve families: shapes, parameters and marginal gains.

Evaluates each family on a shared sample-size sweep, shows how the
multi-argument extensions collapse onto the single-argument curve when
the context counts are zero, and prices out the value of extra data
via exact marginal gains.
"""

import numpy as np

from mtlc.curves import (
    CurveArgs,
    CurveFamily,
    ParamSet,
    curve_summary,
    eval_curve,
    marginal_gain,
)

params = ParamSet(a_i=2.0, a_sigma=0.15, a_ij=0.4, b=0.3, c=0.9, alpha=0.7, n_scale=1000.0)

print("A saturating learning curve approaches its asymptote c from below;")
print("b sets the gap at zero samples and the a coefficients set the rate.\n")

print(f"{'n':>6}", "  ".join(f"{f.value:>8}" for f in CurveFamily))
for n in (50, 100, 200, 500, 1000, 2000, 5000):
    row = []
    for family in CurveFamily:
        args = CurveArgs(
            n_t=float(n),
            n_sigma=5.0 * n if family in (CurveFamily.EXP3_2, CurveFamily.EXP3_3) else 0.0,
            n_aux=0.5 * n if family is CurveFamily.EXP3_3 else 0.0,
        )
        try:
            row.append(f"{eval_curve(family, params, args):8.4f}")
        except Exception:
            row.append("   --   ")
    print(f"{n:>6}", "  ".join(row))

print("\nWith zero context counts the extensions reduce to the base curve:")
a = CurveArgs(n_t=300.0)
v1 = eval_curve(CurveFamily.EXP3_1, params, a)
v2 = eval_curve(CurveFamily.EXP3_2, params, a)
v3 = eval_curve(CurveFamily.EXP3_3, params, a)
print(f"  EXP3_1 {v1:.6f} == EXP3_2 {v2:.6f} == EXP3_3 {v3:.6f}")

print("\nExact marginal gains for 500 extra samples at n_t=300:")
for which in ("target", "sigma", "aux"):
    g = marginal_gain(
        CurveFamily.EXP3_3, params, CurveArgs(n_t=300, n_sigma=1500, n_aux=150), 500, which
    )
    print(f"  +500 {which:>6} samples -> {g:+.4f}")

print("\nSummary:", curve_summary(CurveFamily.EXP3_3, params))
