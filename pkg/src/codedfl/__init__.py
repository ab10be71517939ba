"""Coded cooperative semi-decentralized federated learning simulator.

Submodules:
    galois     field arithmetic and linear solving
    dnc        systematic diversity network code (build, mask, prune, decode)
    channel    outage probability and connectivity sampling
    quantizer  stochastic quantization and the finite-field message codec
    mlp        small dense classifier with analytic gradients
    data       synthetic dataset, IDX ingestion, client partitions
    fl_core    local SGD, aggregation rules, evaluation
    protocol   one communication round and full experiments
    theory     closed-form outage / participation / convergence quantities
    config     TOML config parsing and presets
    metrics    CSV metric records and run manifests
    cli        command-line entry point
"""

__version__ = "0.1.0"
