# Copyright (C) 2026 The mtat Authors
# SPDX-License-Identifier: Apache-2.0
"""Mediator-token attention toolkit (Python bindings)."""

import json as _json

from ._mtat import (  # noqa: F401
    ConfigError,
    DimensionError,
    DomainError,
    NumericError,
    UsageError,
    attention_flops,
    cli,
    fid_proxy,
    js_divergence,
    kl_divergence,
    latent_distance,
    load_tensor,
    make_mediators,
    mediator_attention_head,
    mediator_flops,
    mediator_grid_for,
    pareto_envelope,
    redundancy_score,
    save_tensor,
    softmax_rows,
    vanilla_attention_head,
)
from ._mtat import schedule_counts as _schedule_counts


def schedule_counts(deltas, schedule):
    """Mediator count chosen after each step difference; ``schedule`` is a dict or JSON text."""
    text = schedule if isinstance(schedule, str) else _json.dumps(schedule)
    return _schedule_counts(list(deltas), text)


__all__ = [name for name in dir() if not name.startswith("_")]
