"""pgnaa-lab: classify short PGNAA gamma-ray measurements.

Subpackages follow the pipeline: spectra (calibrated data + synthesis),
sampling (random downsizing methods), nn (1D conv classifier with a GAP
head), cam (class activation maps and channel pruning), experiments
(harness: runs, sweeps, benchmarks), cli (command-line front end).
"""

__version__ = "0.1.0"
