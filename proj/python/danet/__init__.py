# SPDX-License-Identifier: Apache-2.0
"""Dual attention segmentation: attention operators, model, data and tools."""

from ._danet import (
    ConfigError,
    ContractError,
    DimensionError,
    Model,
    channel_attention,
    generate_sample,
    mean_iou,
    poly_lr,
    position_attention,
    quantize_minmax,
    run_cli,
    verify,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Model",
    "channel_attention",
    "generate_sample",
    "mean_iou",
    "poly_lr",
    "position_attention",
    "quantize_minmax",
    "run_cli",
    "verify",
]
