"""pcgkit: heartbeat-level phonocardiogram classification.

Pipeline stages: WAV/annotation ingestion (or synthetic data), preprocessing
(resample, band-pass, standardize), beat segmentation, MFCC/TVAR feature
maps, and four classifiers: a raw-waveform 1-D CNN, a feature-map 2-D CNN,
their score-fused ensemble, and a GMM-HMM baseline.
"""

from .beats import Beat, LengthPolicy, normalize_duration, segment_beats, zero_pad
from .core import Label, Signal, State, StateSequence
from .dsp import FilterSpec, design_butterworth_bandpass, filter_zero_phase, preprocess, resample, standardize
from .ensemble import (
    ClassScores,
    CnnClassifier,
    EnsembleClassifier,
    HmmClassifier,
    build_1dcnn,
    build_2dcnn,
    fuse_scores,
    load_model,
    predict,
    save_model,
)
from .features import FeatureMap, FrameConfig, MelFilterbank, levinson_durbin, mfcc_map, tvar_map
from .hmm import HmmModel, baum_welch, classify_hmm, forward_loglik, init_hmm, viterbi
from .io import DatasetManifest, build_manifest, load_annotations, load_wav, save_wav
from .metrics import EvalReport, evaluate
from .synth import SynthConfig, synth_pcg

__version__ = "0.1.0"

__all__ = [
    "Beat",
    "ClassScores",
    "CnnClassifier",
    "DatasetManifest",
    "EnsembleClassifier",
    "EvalReport",
    "FeatureMap",
    "FilterSpec",
    "FrameConfig",
    "HmmClassifier",
    "HmmModel",
    "Label",
    "LengthPolicy",
    "MelFilterbank",
    "Signal",
    "State",
    "StateSequence",
    "SynthConfig",
    "baum_welch",
    "build_1dcnn",
    "build_2dcnn",
    "build_manifest",
    "classify_hmm",
    "design_butterworth_bandpass",
    "evaluate",
    "filter_zero_phase",
    "forward_loglik",
    "fuse_scores",
    "init_hmm",
    "levinson_durbin",
    "load_annotations",
    "load_model",
    "load_wav",
    "mfcc_map",
    "normalize_duration",
    "predict",
    "preprocess",
    "resample",
    "save_model",
    "save_wav",
    "segment_beats",
    "standardize",
    "synth_pcg",
    "tvar_map",
    "viterbi",
    "zero_pad",
]
