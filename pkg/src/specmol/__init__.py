"""specmol: contrastive alignment of mass spectra with molecular structures.

A desk-scale dual-encoder pipeline: corpus handling with scaffold-disjoint
splitting, a spectral transformer encoder over Fourier-projected peaks, a
small SMILES transformer with optional low-rank adapters, contrastive
training, and zero-/few-shot retrieval evaluation.
"""

__version__ = "0.1.0"
