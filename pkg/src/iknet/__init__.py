"""Keyword-guided index forecasting with explainable attributions.

Subpackages: tensor (autodiff core), nn (layers + Adam), indicators,
dataset (folds/samples/scaling), saliency (keyword extraction), model
(network + training), explain (grouped Kernel SHAP), evaluate (metrics,
DM test, baselines), backtest (long/flat simulation), pipeline + cli.
"""

__version__ = "0.1.0"
