"""Differentially private active learning on public data.

Subpackages: ``privacy`` (DP-SGD, accountant, mechanisms, ledger), ``data``
(datasets, IDX, label oracle) and ``pipeline`` (training, experiments, CLI).
Modules: ``numerics`` (PCA, k-means, eigensolver), ``model`` (MLP) and
``selection`` (the five selection strategies).
"""

__version__ = "0.1.0"
