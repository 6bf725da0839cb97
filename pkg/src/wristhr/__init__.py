"""Heart-rate extraction from wrist PPG and 3-axis acceleration.

The pipeline combines an adaptive linear motion-artifact filter driven by
the accelerometer, a compact convolution + temporal-attention network with
a Gaussian (mu, sigma) heart-rate head, knowledge-guided training-set
augmentation, and a trust classifier that rejects windows whose pulse
content is unrecoverable.
"""

from .dsp import (
    Channel,
    FirFilter,
    NoDominantPeakError,
    Spectrum,
    apply_fir,
    design_bandstop,
    dft_forward,
    dft_inverse,
    dominant_frequency_bpm,
    resample,
)
from .sessions import (
    SessionRecording,
    load_session,
    validate_session,
    write_session,
)
from .frames import ANALYSIS_FS, SampleFrame, window_stream, zscore
from .mixfilter import (
    AdaptHyperParams,
    MixFilterModel,
    adapt_loss,
    predict_artifact,
    remove_artifacts,
    train_mix_filter,
)
from .nn import HrEstimate, adam_step, gaussian_head, gaussian_nll
from .model import (
    HrNetwork,
    HrNetworkConfig,
    TrainSettings,
    estimate_pair,
    load_network,
    save_network,
    train_network,
)
from .augment import (
    LabeledFrame,
    build_adversarial_subset,
    is_clean_frame,
    make_adversarial_example,
    make_high_hr_sample,
    merge_training_sets,
)
from .synth import AxisSpec, SynthSpec, gen_benchmark_suite, gen_session
from .pipeline import (
    MetricsReport,
    PipelineConfig,
    TrustDecision,
    classify_trust,
    evaluate,
    loso_folds,
    train_pipeline,
    trust_probability,
    variant_config,
)

__version__ = "0.1.0"
