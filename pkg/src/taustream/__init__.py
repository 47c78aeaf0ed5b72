"""Desk-scale TCSPC fluorescence lifetime estimation toolkit.

Modules:
    sim        timestamp simulation and exact mixture densities
    estimators center-of-mass and least-squares lifetime estimators
    rnn        streaming recurrent estimators (float reference)
    trainer    weighted-MSPE training with exact BPTT and Adam
    quant      fixed-point arithmetic and quantized GRU inference
    pipeline   event-driven four-core dataflow simulation
    crlb       Cramer-Rao bound computation and Monte Carlo comparison
    benchmark  metrics and estimator-comparison experiments
    io         file formats and provenance hashing
    cli        command-line interface
"""

__version__ = "0.1.0"

from . import benchmark, crlb, estimators, pipeline, quant, rnn, sim, trainer  # noqa: F401
