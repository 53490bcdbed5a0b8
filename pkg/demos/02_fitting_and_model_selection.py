"""Curve fitting: recovery, the staged freezing protocol, and model
selection by squared versus prequential error.

Synthesizes noisy points from a known curve, recovers it with the
projected multi-start fitter, runs the three-stage protocol on a
multi-task fixture, and compares curve families the way the analysis
reports do.
"""

import numpy as np

from mtlc.curves import CurveArgs, CurveFamily, ParamSet, eval_curve
from mtlc.fitter import FitPoint, fit_curve, fit_staged, prequential_error, select_family

rng = np.random.default_rng(0)
truth = ParamSet(a_i=2.2, b=0.1, c=0.88, n_scale=900.0)

points = []
for m in range(1, 10):
    n = 100.0 * m
    v = eval_curve(CurveFamily.EXP3_1, truth, CurveArgs(n_t=n))
    points.append(FitPoint(args=CurveArgs(n_t=n), value=v + 0.01 * rng.standard_normal(),
                           fold_count=m))

res = fit_curve(points, CurveFamily.EXP3_1)
print("truth  a_i=%.3f b=%.3f c=%.3f" % (truth.a_i, truth.b, truth.c))
print("fitted a_i=%.3f b=%.3f c=%.3f  sse=%.2e  converged=%s"
      % (res.params.a_i, res.params.b, res.params.c, res.sse, res.converged))

pe = prequential_error(points, CurveFamily.EXP3_1)
print(f"prequential error (sequential next-fold prediction): {pe:.2e}\n")

# --- staged protocol: own rate, then context rate, then one pairwise rate
full = ParamSet(a_i=1.5, a_sigma=0.3, a_ij=0.6, b=0.2, c=0.9, n_scale=1000.0)
nts = np.linspace(100, 1000, 9)
stl = [FitPoint(args=CurveArgs(n_t=float(n)), fold_count=i + 1,
                value=eval_curve(CurveFamily.EXP3_1, full.replace(a_sigma=0, a_ij=0),
                                 CurveArgs(n_t=float(n))))
       for i, n in enumerate(nts)]
mtl = [FitPoint(args=CurveArgs(n_t=float(n), n_sigma=7 * float(n)), fold_count=i + 1,
                value=eval_curve(CurveFamily.EXP3_2, full.replace(a_ij=0),
                                 CurveArgs(n_t=float(n), n_sigma=7 * float(n))))
       for i, n in enumerate(nts)]
stag = []
for i, n in enumerate(nts[:-1]):
    args = CurveArgs(n_t=float(n), n_sigma=6 * float(n), n_aux=100.0 + 40 * i)
    stag.append(FitPoint(args=args, fold_count=i + 1,
                         value=eval_curve(CurveFamily.EXP3_3, full, args)))

staged = fit_staged(stl, mtl, {2: stag}, target=0)
print("staged fit (frozen rates carried bit-exactly):")
print(f"  stage 1: a_i     = {staged.stage1.params.a_i:.4f} (truth {full.a_i})")
print(f"  stage 2: a_sigma = {staged.stage2.params.a_sigma:.4f} (truth {full.a_sigma})")
print(f"  stage 3: a_ij    = {staged.stage3[2].params.a_ij:.4f} (truth {full.a_ij})\n")

# --- family selection: the generating family should win on E-columns
by_task = {}
for t in range(3):
    gt = ParamSet(a_i=rng.uniform(1.5, 3.5), b=rng.uniform(-0.4, 0.4),
                  c=rng.uniform(0.8, 0.95), n_scale=900.0)
    by_task[t] = {}
    for s in range(2):
        pts = []
        for m in range(1, 10):
            n = 100.0 * m + rng.uniform(-5, 5)
            v = eval_curve(CurveFamily.EXP3_1, gt, CurveArgs(n_t=n))
            pts.append(FitPoint(args=CurveArgs(n_t=n),
                                value=v + 0.02 * rng.standard_normal(), fold_count=m))
        by_task[t][s] = pts

rows = select_family(by_task, [CurveFamily.ILOG2, CurveFamily.EXP3_1, CurveFamily.EXP4])
print(f"{'family':>8} {'L2':>10} {'E[L2]':>10} {'preq':>10} {'E[preq]':>10}")
for r in rows:
    print(f"{r.family.value:>8} {r.l2:10.2e} {r.e_l2:10.2e} {r.preq:10.2e} {r.e_preq:10.2e}")
print("\nThe saturating 3-parameter family balances fit and prediction;")
print("the 4-parameter variant fits tighter but extrapolates worse.")
