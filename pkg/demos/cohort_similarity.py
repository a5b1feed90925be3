"""
How close is a regrown cohort?
==============================

Regrows the tumour of every phantom in a small cohort, conditioned on its
own features, and compares real and synthetic feature tables family by
family with cosine, Pearson and Spearman statistics.
"""

import sys

from radiosynth import (cohort_from_vectors, extract_features, family_report, make_phantom, remove_tumor,
                        synthesize, targets_from_features)
from radiosynth.synth import tumor_center

n = int(sys.argv[1]) if len(sys.argv) > 1 else 8
budget = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

real, synth = {}, {}
for s in range(n):
    image, labels = make_phantom(s)
    fv = extract_features(image, labels)
    background = remove_tumor(image, labels, seed=s)
    res = synthesize(background, tumor_center(labels), targets_from_features(fv), seed=s, budget=budget)
    real[f"p{s:02d}"], synth[f"p{s:02d}"] = fv, res.achieved
    print(f"phantom {s}: objective {res.objective:.3f}")

# both tables are z-scored against the real cohort before comparison
report = family_report(cohort_from_vectors(real), cohort_from_vectors(synth))
print()
print(report.to_text())
