"""wellcast: regression-pipeline toolkit for well-production prediction.

Library modules:
  table       tabular data model with explicit missingness + CSV I/O
  preprocess  filtering, imputation, encoding, pruning, splits, scaling
  cart        regression trees
  forest      bootstrap-averaged tree ensembles
  boosting    regularized additive tree boosting
  lstm        gated recurrent forecaster with BPTT and Adam
  tuning      Parzen-density hyperparameter search with k-fold CV objective
  evaluate    metrics, confidence intervals, seed-varied uncertainty
  synth       synthetic completion/production data generator
  figures     SVG charts with CSV sidecars
  pipeline    config-driven batch workflow
"""

__version__ = "0.1.0"
