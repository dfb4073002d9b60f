"""Dimensionality reduction, clustering and the quality metrics.

Planted Gaussian blobs go through the three PCA solvers, k-means and PAM
k-medoids under both metrics, the Kneedle elbow, and the full scoring stack
(NMI, homogeneity, S, within-cluster dissimilarities, D score).
"""

import numpy as np

from medclust.cluster import assign, elbow, kmeans_fit, kmedoids_fit
from medclust.metrics import (
    cluster_dissimilarity,
    d_score,
    homogeneity,
    nmi,
    s_score,
)
from medclust.pca import pca_fit, pca_transform

rng = np.random.default_rng(11)
k_true = 4
centers = rng.normal(size=(k_true, 12)) * 9.0
X = np.vstack([rng.normal(0, 1, (120, 12)) + c for c in centers])
truth = np.repeat(np.arange(k_true), 120)

# all three solvers agree on the retained subspace up to sign
for solver in ("full", "iterative", "randomized"):
    model = pca_fit(X, 3, solver=solver, seed=1)
    print(f"PCA {solver:10s} explained variance: "
          f"{np.round(model.explained_variance, 2)}")

Z = pca_transform(pca_fit(X, 3, solver="full"), X)

inertias = []
grid = [2, 3, 4, 5, 6, 8]
for kappa in grid:
    inertias.append(kmeans_fit(Z, kappa, seed=0, n_init=4).inertia)
selected, found = elbow(inertias, grid)
print(f"kneedle elbow over {grid}: kappa={selected} (knee found: {found})")

results = {}
results["kmeans"] = assign(kmeans_fit(Z, selected, seed=0), Z)[0]
results["kmedoids euclidean"] = assign(kmedoids_fit(Z, selected, "euclidean"), Z)[0]
results["kmedoids cosine"] = assign(kmedoids_fit(Z, selected, "cosine"), Z)[0]

for name, labels in results.items():
    nmi_v = nmi(truth, labels)
    hs_v = homogeneity(truth, labels)
    print(f"{name:20s} NMI={nmi_v:.3f}  HS={hs_v:.3f}")

# the composite scores, using the k-means labeling as the clustering
labels = results["kmeans"]
s = s_score(homogeneity(truth, labels), homogeneity(truth, labels),
            nmi(truth, labels), nmi(truth, labels))
diss = cluster_dissimilarity(Z - Z.min() + 1.0, labels, selected)
d, flagged = d_score(diss.mean, diss.mean)
print(f"S (harmonic of the four label metrics) = {s:.3f}")
print(f"within-cluster dissimilarity D = {diss.mean:.4f} +/- {diss.std:.4f} "
      f"-> D_score {d:.4f}")
