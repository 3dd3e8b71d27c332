"""
Four fusion rules on a synthetic cohort
=======================================

About a thousand synthetic scans whose slices vary in how informative they
are.  Mean fusion, majority vote, a learned fusion network and the fuzzy
integral are scored on the same held-out fifth of the scans, next to the
slice-level accuracy.
"""

from ichfuse.experiment import run_fig6
from ichfuse.synth import fig6_config

res = run_fig6(fig6_config(seed=42))
print(res.table())

# %%
# The ordering of fuzzy versus mean and majority holds across seeds; the
# learned network, which sees per-class summary statistics, is close to the
# fuzzy integral and sometimes ahead.
for seed in (1, 2, 3):
    r = run_fig6(fig6_config(seed=seed))
    accs = {m: round(r.accuracy(m), 3) for m in ("mean", "majority", "learned", "fuzzy")}
    print(seed, accs, "slice", round(r.slice_report.classification.accuracy, 3))
