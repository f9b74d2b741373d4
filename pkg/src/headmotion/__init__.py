"""Head-motion estimation for MR imaging.

Rigid tracking logs become scalar motion scores and frequency-band
targets; simulated k-space corruption turns clean volumes into motion-
degraded training data; and a small 3D convolutional network regresses
the scores straight from image volumes via a soft-binned distribution
head.

Set HEADMOTION_NUM_THREADS to bound the BLAS/FFT thread pools; it must
be set before the first import of this package to take effect.
"""

import os as _os

if "HEADMOTION_NUM_THREADS" in _os.environ:
    _threads = _os.environ["HEADMOTION_NUM_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import ConfigError, DomainError, FormatError, HeadMotionError
from .rigid import (
    JenkinsonParams,
    RateSeries,
    RigidTransform,
    SequenceWindow,
    Trajectory,
    framewise_differences,
    jenkinson_difference,
    motion_score,
    select_window,
)
from .bands import (
    BandSpec,
    FilterCoefficients,
    MotionBands,
    band_targets,
    design_butterworth,
    zero_phase_filter,
)
from .io import (
    DatasetManifest,
    ManifestEntry,
    Volume,
    read_manifest,
    read_nifti,
    read_tracking_log,
    write_manifest,
    write_nifti,
)
from .preprocess import AugmentConfig, augment, lsb8, mask_background, robust_scale
from .softbin import (
    BinGrid,
    Prediction,
    SoftLabel,
    decode,
    encode,
    kl_loss,
    mse_head_loss,
)
from .metrics import (
    CovariateCorrelation,
    EvalReport,
    ThresholdSeparation,
    aes,
    correlate_covariate,
    r2,
    spearman,
    threshold_separation,
)
from .simulate import (
    ReadoutSchedule,
    TrajectorySpec,
    build_dataset,
    corrupt_kspace,
    make_phantom,
    synth_trajectory,
)
from .network import (
    NetConfig,
    TrainConfig,
    fit,
    forward,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)

__version__ = "0.1.0"
