"""Blockchain-coordinated data sharing for robot swarms, as a simulator.

Modules:

- ``chain``: blocks, transactions, demurrage token accounts, replay
- ``pow``: per-node SHA-256 puzzles, live and simulated mining
- ``estimator``: compute estimate from proof histories, consistency ratios
- ``quality``: data stamps, density models, quality scores, coalition checks
- ``allocation``: choosing which data exchanges to run
- ``network``: the epoch-by-epoch swarm simulation
- ``scenario``: TOML scenario files
- ``cli``: ``swarmchain run | calibrate | bench``
"""
__version__ = "0.1.0"
