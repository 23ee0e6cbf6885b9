"""Real-time labeling of sensor streams with subspace-clustered dictionaries.

IMU samples are fused into orientation features, sliding windows form a
block-Hankel training matrix, ordered subspace clustering splits unlabeled
training runs into classes, and each incoming window is labeled by
collaborative-representation classification against the distilled
dictionary.
"""

__version__ = "0.1.0"

from .classifiers import crc_classify, crc_precompute, src_classify
from .config import PipelineConfig, braking_config, posture_config, preset
from .errors import ConfigError, DataError, HankelwaveError
from .ingest import (LabeledTrace, SignalTrace, load_trace, save_trace,
                     synthesize_braking_trace, synthesize_posture_trace)
from .signal_fusion import FilterGains, OrientationFilter, discretize, fuse
from .stream_pipeline import (StreamClassifier, evaluate, evaluate_runs, run_stream,
                              train_from_config)
from .subspace_trainer import LabeledDictionary, OscParams, distill_dictionary, osc_solve

__all__ = [
    "ConfigError", "DataError", "FilterGains", "HankelwaveError", "LabeledDictionary",
    "LabeledTrace", "OrientationFilter", "OscParams", "PipelineConfig", "SignalTrace",
    "StreamClassifier", "braking_config", "crc_classify", "crc_precompute", "discretize",
    "distill_dictionary", "evaluate", "evaluate_runs", "fuse", "load_trace", "osc_solve",
    "posture_config", "preset", "run_stream", "save_trace", "src_classify", "synthesize_braking_trace",
    "synthesize_posture_trace", "train_from_config",
]
