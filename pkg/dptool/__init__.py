"""dptool: decision problems for human-subjects experiments.

Formalize, audit, benchmark and simulate discrete decision problems.
"""

__version__ = "0.3.0"
