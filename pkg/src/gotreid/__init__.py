"""Graph optimal transport alignment for visible-infrared person re-identification.

Submodules: ``ot`` (entropic OT, Gromov-Wasserstein, GOT distance), ``graph``
(graph attention with channel exchange), ``losses``, ``model`` (toy encoder,
training, checkpoints), ``evaluation`` (CMC, mAP, gallery protocol), ``data``
(synthetic features, feature files, batch sampler), ``config``, ``cli``.
"""

from .data import FeatureDataset, SynthConfig, read_features, synthesize, write_features
from .errors import GotReidError
from .evaluation import ProtocolConfig, run_protocol
from .model import Model, ModelConfig, TrainSchedule, train
from .ot import SinkhornConfig, got_distance, gromov_wasserstein, sinkhorn

__version__ = "0.1.0"

__all__ = [
    "FeatureDataset", "GotReidError", "Model", "ModelConfig", "ProtocolConfig",
    "SinkhornConfig", "SynthConfig", "TrainSchedule", "got_distance", "gromov_wasserstein",
    "read_features", "run_protocol", "sinkhorn", "synthesize", "train", "write_features",
]
