"""Graph-based binary text classification with an embedding-head fusion.

Builds a heterogeneous document-word graph (TF-IDF and PPMI edges), trains
a two-layer GCN over it with hand-derived gradients, fuses its predictions
with a linear head over external document embeddings, and ships evaluation,
prompting, and interpretability tooling around that core.
"""

__version__ = "0.1.0"
