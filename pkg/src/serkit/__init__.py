"""Speech emotion recognition toolkit.

Spectral feature extraction, fixed-length sub-segmentation, a from-scratch
convolutional-recurrent classifier with an auxiliary gender head, and
speaker-independent evaluation, all on numpy.
"""

from .audio import AudioSignal, load_wav, write_wav
from .corpus import (DROP, FoldSplit, LabelMap, UtteranceRecord, apply_label_map,
                     cohen_kappa, corpus_stats, downsample_neutral, load_manifest,
                     oversample_balance, permute_emotions, save_manifest,
                     speaker_kfold)
from .errors import (AudioFormatError, ConfigError, DataError, ManifestError,
                     NumericsError, SerkitError)
from .evaluate import (ConfusionMatrix, SegmentGroup, aggregate_segment,
                       cross_corpus, crossval, evaluate_groups, select_strategy,
                       unweighted_average_recall, weighted_average_recall)
from .features import (FeatureStats, StftConfig, assemble_features,
                       compute_deltas, featurize_signal, mel_filterbank,
                       read_feature_cache, stft_magnitude, write_feature_cache)
from .gradcheck import run_gradcheck
from .model import (EmotionRecognizer, ModelSpec, default_2d_spec,
                    default_temporal_spec, load_checkpoint, save_checkpoint)
from .net import ConvSpec, PoolSpec, mask_size, softmax_cross_entropy
from .segments import ChopConfig, SubSegment, chop, count_subsegments, subsegment_count
from .synth import generate_synthetic_corpus
from .train import OptimizerConfig, fit, lr_at_step

__version__ = "0.1.0"

__all__ = [
    "AudioSignal", "load_wav", "write_wav",
    "DROP", "FoldSplit", "LabelMap", "UtteranceRecord", "apply_label_map",
    "cohen_kappa", "corpus_stats", "downsample_neutral", "load_manifest",
    "oversample_balance", "permute_emotions", "save_manifest", "speaker_kfold",
    "AudioFormatError", "ConfigError", "DataError", "ManifestError",
    "NumericsError", "SerkitError",
    "ConfusionMatrix", "SegmentGroup", "aggregate_segment", "cross_corpus",
    "crossval", "evaluate_groups", "select_strategy",
    "unweighted_average_recall", "weighted_average_recall",
    "FeatureStats", "StftConfig", "assemble_features", "compute_deltas",
    "featurize_signal", "mel_filterbank", "read_feature_cache",
    "stft_magnitude", "write_feature_cache",
    "run_gradcheck",
    "EmotionRecognizer", "ModelSpec", "default_2d_spec", "default_temporal_spec",
    "load_checkpoint", "save_checkpoint",
    "ConvSpec", "PoolSpec", "mask_size", "softmax_cross_entropy",
    "ChopConfig", "SubSegment", "chop", "count_subsegments", "subsegment_count",
    "generate_synthetic_corpus",
    "OptimizerConfig", "fit", "lr_at_step",
    "__version__",
]
