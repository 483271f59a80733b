"""Keystroke recovery from dual-microphone touchscreen tap audio.

Pipeline: tap detection -> arrival-time difference -> quefrency features
-> SVD-based discriminant classification -> ranked PIN/word inference,
plus a physically grounded tap simulator that supplies ground truth.
"""

__version__ = "0.1.0"

from .audio_io import (
    AudioRecording,
    ChannelRole,
    TapLabel,
    load_labels,
    load_wav,
    save_labels,
    save_wav,
)
from .classify import (
    EvaluationReport,
    LdaModel,
    PredictionRanking,
    evaluate_loso,
    evaluate_split,
    load_model,
    macro_f1,
    predict,
    save_model,
    train_lda,
    undersample,
)
from .detect import (
    DetectorConfig,
    FeedbackKind,
    FeedbackTemplate,
    TapSegment,
    build_feedback_template,
    detect_taps,
    segment_at,
    subtract_feedback,
)
from .dsp import Signal, SpectralFrame, band_energy, butterworth_bandpass, cross_correlate, quefrency, stft
from .features import (
    Dataset,
    FeatureSet,
    FeatureVector,
    extract_dataset,
    extract_features,
)
from .inference import (
    AttackResult,
    NgramModel,
    ScoredSequence,
    dictionary_attack,
    enumerate_topk,
    fuse_and_rank,
    ngram_log_prob,
    score_attack,
    synthesize_word_rankings,
    train_ngram,
)
from .simulator import (
    DeviceGeometry,
    GroundTruth,
    KeyboardLayout,
    TapSynthConfig,
    expected_delay,
    phone_geometry,
    pin_pad_layout,
    qwerty_layout,
    speed_of_sound,
    synthesize_session,
    synthesize_tap,
    tablet_geometry,
    tdoa_map,
)
from .tdoa import DelayEstimate, DelayMethod, TdoaConfig, estimate_delay, feasible_lag_bound
