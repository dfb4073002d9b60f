"""medclust: batch annotation of medical imaging corpora.

Three per-instance sources (DICOM metadata, pixel images, narrative
diagnoses) are embedded, fused and clustered; cluster quality is scored by
label homogeneity / mutual information and within-cluster embedding
dissimilarity.
"""

__version__ = "0.1.0"
