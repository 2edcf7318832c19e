"""EEG harmful-activity classification pipeline.

Montage derivation, wavelet spectrograms, label handling, augmentation,
from-scratch neural models, vote-weighted training, and KL evaluation,
with a command line front end.
"""

__version__ = "0.1.0"

from .signals import (  # noqa: F401
    CHAIN_NAMES,
    EegWindow,
    MontageSignals,
    MontageSpec,
    apply_montage,
    bandpass_filter,
    clip_signal,
    crop_center,
    load_eeg_window,
)
