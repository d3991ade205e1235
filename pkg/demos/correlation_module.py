"""
Predicting a co-occurrence matrix from features
===============================================

The correlation module maps frame features and class embeddings to an
N x N matrix. Two correlation functions are available: a sigmoid of
projected differences (M1) and a scaled dot-product attention map (M2).
"""

import numpy as np

from cornet.corm import CormConfig, correlate_m1, correlate_m2, corm_forward, init_corm_params, param_count

rng = np.random.default_rng(1)

# M1 compares every pair of class features through two scalar projections.
feats = rng.standard_normal((4, 6))
phi_w, psi_w = rng.standard_normal((2, 6, 1))
m1 = correlate_m1(feats, phi_w, np.zeros(1), psi_w, np.zeros(1)).data
print("M1 entries in (0, 1):", bool(np.all((m1 > 0) & (m1 < 1))))

# With tied projections the matrix is complementary to its transpose.
tied = correlate_m1(feats, phi_w, np.zeros(1), phi_w, np.zeros(1)).data
print("tied M1 + transpose:\n", np.round(tied + tied.T, 12))

# M2 is row-stochastic.
m2 = correlate_m2(feats, rng.standard_normal((6, 3)), rng.standard_normal((6, 3))).data
print("M2 row sums:", m2.sum(axis=1))

# The full module on a short clip.
cfg = CormConfig(d0=16, n_classes=4, d_e=8, dv=8, d_k=4)
params = init_corm_params(cfg, rng)
r = corm_forward(rng.standard_normal((10, 16)), rng.standard_normal((4, 8)), params, cfg)
print("predicted matrix\n", np.round(r.data, 3))

# Size of the module on a large configuration.
big = CormConfig(d0=1024, n_classes=65, d_e=768, dv=32, d_k=16)
print("parameters:", param_count(big))
