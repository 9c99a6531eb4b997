"""A tour of the toolkit on simulated data.

Run with ``python demos/walkthrough.py``. Everything is synthetic, so the
script needs nothing beyond the installed package and finishes in well
under a minute on one core.
"""

import numpy as np

from premia import (AlignedDataset, confidence_set, cue_estimate, diagnostics, estimate_first_pass,
                    fm_pseudo_true, cue_pseudo_true, fm_two_pass, project)
from premia.drlm import make_axis
from premia.sim_lab import DgpSpec, generate, rejection_surface, scaled_model, synthetic_model
from premia.zoo_scan import precompute_moments, scan_all, summarize


def section(title):
    print(f"\n== {title}")


# A one-factor world with ten assets, a premium of 2 and pricing errors tilted toward beta.
model = synthetic_model(N=10, K=1, lambda_f=2.0, angle=0.5)
spec = DgpSpec(model, mu_f=[0.5], T=500, beta_scale=10.0, e_scale=2.0, seed=7)

section("one simulated sample")
ds = generate(spec)
fp = estimate_first_pass(ds)
fm = fm_two_pass(fp)
cue = cue_estimate(fp)
diag = diagnostics(fp)
print(f"FM premium  {fm.lambda_f[0]:8.3f}   (R^2 {fm.r_squared:.2f})")
print(f"CUE premium {cue.lambda_f[0]:8.3f}")
print(f"J  = {diag.j_stat:6.2f}  p = {diag.p_j:.3f}")
print(f"IS = {diag.is_stat:6.2f}  p = {diag.p_is:.3f}")

section("where the two estimators are headed")
pm = scaled_model(model, 10.0 / np.sqrt(spec.T), 2.0 / np.sqrt(spec.T))
print(f"FM pseudo-true  {fm_pseudo_true(pm)[0]:.3f}")
print(f"CUE pseudo-true {cue_pseudo_true(pm)[0][0]:.3f}")

section("DRLM confidence set for the premium")
grid = confidence_set(fp, [make_axis(-10, 10, 0.02)])
for iv in project(grid, 0):
    print(f"accepted [{iv.lo:.2f}, {iv.hi:.2f}]" + ("  (hits grid edge)" if iv.boundary_censored else ""))
print("shape:", grid.shape_class)

# both tests are aimed at the CUE pseudo-true value, which DRLM targets
section("rejection of the CUE pseudo-true premium (400 reps per cell)")
surf = rejection_surface(spec, [(2.5, 0.0), (2.5, 3.5), (0.5, 5.0)], tests=("fm_t", "drlm"),
                         h0_rule="pseudo_true_cue", reps=400)
for row in surf.rows():
    print(f"beta {row['beta_scale']:4.1f}  e {row['e_scale']:4.1f}  {row['test']:5s} "
          f"rejects {100 * row['rate']:5.1f}% (+/- {100 * row['mc_se']:.1f})")

section("scanning a small factor zoo")
rng = np.random.default_rng(3)
F = rng.normal(size=(400, 12))
load = rng.normal(size=(15, 12)) * (rng.uniform(size=12) < 0.5)
R = F @ load.T + rng.normal(size=(400, 15)) + 0.2 * rng.normal(size=15)
recs = scan_all(precompute_moments(R, F), 3)
summary = summarize(recs)
print(f"{summary.n_models} three-factor models, {summary.pct_misspecified:.0f}% rejected by J, "
      f"{summary.pct_weak:.0f}% weakly identified by IS")
