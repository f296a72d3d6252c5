"""Heterogeneous hashing of images and frame-set videos.

Images (feature vectors) and videos (frame-feature matrices pooled into
log-covariance form) are mapped into one Hamming space by modality
projections trained jointly with exact gradients through the pooling
step. Subpackages: linear algebra helpers, covariance pooling, the hash
model, the triplet objective, training, retrieval, and file formats.
"""

__version__ = "0.1.0"
