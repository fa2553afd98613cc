"""compose-probe: structure-aware image/text matching and evaluation tools.

Subpackages cover deterministic multi-scale crop planning, caption
segmentation, a bit-exact embedding store plus a remote-encoder client,
crop/segment similarity scoring, bidirectional retrieval metrics,
CLEVR-based swap-benchmark construction, and a small cross-modal
alignment transformer trained over frozen embeddings.
"""

__version__ = "0.1.0"
