"""melforge: two-stage adversarial text-to-speech with a spoofing evaluation protocol."""

__version__ = "0.1.0"
