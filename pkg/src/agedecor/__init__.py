"""Age-difficulty decorrelation training on synthetic age-confounded data."""

__version__ = "0.1.0"
