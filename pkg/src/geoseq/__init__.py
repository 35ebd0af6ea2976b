"""SE(3)-invariant token sequences for 3D molecules."""
from .molgraph import ColoredGraph, Molecule3D, connected_components, infer_bonds, parse_xyz, write_xyz
from .canon import CanonicalOrder, canonical_order, order_strategy, refine
from .geom import FrameBasis, SphericalRecord, build_frame, from_spherical, to_spherical
from .codec import TokenSequence, Vocabulary, build_vocab, decode, encode, roundtrip
from .metrics import MetricsReport, evaluate
from .lmgen import NgramModel, SamplerConfig, sample, train

__version__ = "0.1.0"
