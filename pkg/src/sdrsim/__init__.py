"""Multi-agent dialogue simulation with screening, diagnosis and regeneration of utterances."""

__version__ = "0.1.0"
