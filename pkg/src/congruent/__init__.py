"""Moving frames, constant-structure invariant coframes and congruence invariants."""

__version__ = "0.1.0"
