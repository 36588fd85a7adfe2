"""Profile-guided iterative kernel optimization loop.

Generates candidate kernels with an LLM, verifies them against a reference
runner, profiles the survivors with hardware counters, and feeds structured
bottleneck diagnoses back into the next refinement round while tracking the
historically best candidate.
"""

__version__ = "0.1.0"
