"""ECG stress classification: STFT spectrograms, a from-scratch Vision Transformer,
a 1D CNN baseline and leave-one-subject-out evaluation."""

__version__ = "0.1.0"
