"""Scan-level fusion of slice-wise CT classifier outputs.

Modules
-------
confmap   confidence-map data model and CSV/JSON I/O
imgprep   slice preprocessing (Otsu mask, foreground crop, bilinear resize)
featsel   PCA reduction and Shapley-value feature screening
boostnet  boosted mixed-activation network ensemble
fusion    entropy-aware lambda-measure / Choquet fusion and baselines
metrics   macro classification metrics and fit statistics
synth     seeded synthetic cohorts and the brute-force fusion oracle
cli       command-line entry point
"""

__version__ = "0.1.0"
