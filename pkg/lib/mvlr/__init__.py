# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Multi-vehicular learning for hybrid MIMO channel estimation.

The package is organised bottom-up:

* `mvlr.numerics`: Hermitian eigen-solvers, whiteners and tensor identities.
* `mvlr.arrays`: URA geometry, DFT codebooks and analog stage assembly.
* `mvlr.channel`: sparse path sets, fading draws and analog compression.
* `mvlr.scenario`: the synthetic geometric environment and vehicle passages.
* `mvlr.beam_alignment`: power-matrix learning and per-region beam lists.
* `mvlr.estimation`: U-ML, JS-LR and DS-LR estimators.
* `mvlr.link`: digital precoder/combiner design and link metrics.
* `mvlr.store`: versioned persistence of learned artifacts.
"""
