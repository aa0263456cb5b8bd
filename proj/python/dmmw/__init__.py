"""Workbench for nonlinear Gaussian state-space models with structured
variational inference.

The heavy lifting lives in the compiled `_core` extension; this package keeps
the surface pythonic: configs go in as dicts, reports come back as dicts.
"""

import json as _json

from dmmw import _core
from dmmw._core import (
    ContractViolation,
    Dataset,
    Model,
    Net,
    NumericalError,
    SchemaError,
    apply_missingness,
    gen_actions_dataset,
    gen_linear_drift,
    gen_nonlinear2d,
    gen_toy_binary,
    load_checkpoint,
    posterior_rmse,
    save_checkpoint,
    validation_bound,
)

__all__ = [
    "ContractViolation",
    "Dataset",
    "Model",
    "Net",
    "NumericalError",
    "SchemaError",
    "apply_missingness",
    "compare_exact",
    "config_of",
    "counterfactual",
    "gen_actions_dataset",
    "gen_linear_drift",
    "gen_nonlinear2d",
    "gen_toy_binary",
    "load_checkpoint",
    "make_model",
    "make_net",
    "nll_report",
    "posterior_rmse",
    "save_checkpoint",
    "train",
    "validation_bound",
]


def _as_json(config):
    if config is None:
        return "{}"
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def make_model(config=None, seed=0, **overrides):
    """Build a generative model from a partial config dict.

    Unspecified fields keep their defaults; unknown keys raise ValueError.
    """
    cfg = dict(config or {})
    cfg.update(overrides)
    return Model.make(_as_json(cfg), seed)


def make_net(config=None, seed=0, **overrides):
    """Build an inference network from a partial config dict."""
    cfg = dict(config or {})
    cfg.update(overrides)
    return Net.make(_as_json(cfg), seed)


def config_of(obj):
    """The full config of a Model or Net, as a dict."""
    return _json.loads(obj.config_json)


def train(model, net, train_data, valid_data, config=None, checkpoint=None, **overrides):
    """Train model and net in place; returns the run summary as a dict."""
    cfg = dict(config or {})
    cfg.update(overrides)
    summary = _core.train(model, net, train_data, valid_data, _as_json(cfg), checkpoint or "")
    return _json.loads(summary)


def nll_report(model, net, test_data, samples, seed=0, threads=1):
    """Held-out likelihood report: dict with keys a, b, c, samples, formatted."""
    return _json.loads(_core.nll_report(model, net, test_data, samples, seed, threads))


def compare_exact(model, net, data, seed=0, threads=1):
    """Posterior quality of the net against exact linear-Gaussian inference."""
    return _json.loads(_core.compare_exact(model, net, data, seed, threads))


def counterfactual(model, net, cohort, k, horizon, n_rollouts,
                   dim=0, cut=0.5, seed=0, threads=1):
    """Paired factual/no-action rollout proportions as a dict."""
    return _json.loads(
        _core.counterfactual(model, net, cohort, k, horizon, n_rollouts, dim, cut, seed,
                             threads))
