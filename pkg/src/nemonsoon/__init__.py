"""Discovery and evaluation of a two-area SST monsoon index.

Subpackages:
    geogrid   - gridded SST model, rectangle geometry, area reductions
    stations  - gauge QC, imputation, PCA, centroid-linkage clustering
    index     - candidate index, seasonal correlations, objective
    rl_env    - discrete shift/resize environment over area placements
    dqn       - Q-network, replay, training loop, exhaustive oracle
    forecast  - LSTM harness and with/without-index ablation
    synthdata - deterministic synthetic world with planted ground truth
    cli       - batch entry points
"""

from . import dqn, forecast, geogrid, index, rl_env, stations, synthdata

__all__ = ["dqn", "forecast", "geogrid", "index", "rl_env", "stations", "synthdata"]
__version__ = "0.1.0"
