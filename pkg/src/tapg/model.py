"""Joint parameter container, canonical traversal and (de)serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .boundary import NODE_IDS, CbgParams, init_cbg
from .relation import BRANCHES, PrbParams, init_prb


@dataclass
class ModelParams:
    cbg: CbgParams
    prb: PrbParams


def init_model(
    in_channels: int,
    base_width: int,
    u_width: int,
    sample_channels: int,
    n_samples: int,
    reduced_channels: int,
    seed: int,
    attention_enabled: bool = True,
    extension_ratio: float = 0.0,
) -> ModelParams:
    """Deterministic joint init; the confidence branch reads the base stem."""
    return ModelParams(
        cbg=init_cbg(in_channels, base_width, u_width, seed),
        prb=init_prb(
            base_width,
            sample_channels,
            n_samples,
            reduced_channels,
            seed + 1,
            attention_enabled=attention_enabled,
            extension_ratio=extension_ratio,
        ),
    )


def param_items(model: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Canonically ordered (name, array) pairs; arrays are live references.

    Names match the gradient dictionaries produced by the backward passes.
    """
    items = [
        ("cbg.base1.w", model.cbg.base1.weights),
        ("cbg.base1.b", model.cbg.base1.bias),
        ("cbg.base2.w", model.cbg.base2.weights),
        ("cbg.base2.b", model.cbg.base2.bias),
    ]
    for name in NODE_IDS:
        node = model.cbg.nodes[name]
        items += [
            (f"cbg.{name}.w", node.conv.weights),
            (f"cbg.{name}.b", node.conv.bias),
            (f"cbg.{name}.scale", node.scale),
            (f"cbg.{name}.shift", node.shift),
        ]
    items += [
        ("cbg.head1.w", model.cbg.head1.weights),
        ("cbg.head1.b", model.cbg.head1.bias),
        ("cbg.head2.w", model.cbg.head2.weights),
        ("cbg.head2.b", model.cbg.head2.bias),
        ("prb.reduce.w", model.prb.reduce.weights),
        ("prb.reduce.b", model.prb.reduce.bias),
        ("prb.samp.w", model.prb.samp_w),
        ("prb.samp.b", model.prb.samp_b),
        ("prb.attn.wa", model.prb.wa),
        ("prb.attn.wb", model.prb.wb),
        ("prb.attn.wv", model.prb.wv),
        ("prb.plain.w", model.prb.plain_w),
        ("prb.plain.b", model.prb.plain_b),
    ]
    for branch in BRANCHES:
        items += [
            (f"prb.head.{branch}.w", model.prb.head_w[branch]),
            (f"prb.head.{branch}.b", model.prb.head_b[branch]),
        ]
    return items


def num_params(model: ModelParams) -> int:
    return sum(a.size for _, a in param_items(model))


def l2_norm(model: ModelParams) -> float:
    """Sum of squares over every parameter."""
    return float(sum((a**2).sum() for _, a in param_items(model)))


def model_meta(model: ModelParams) -> dict:
    return {
        "in_channels": model.cbg.in_channels,
        "base_width": model.cbg.base1.out_channels,
        "u_width": model.cbg.head1.in_channels,
        "sample_channels": model.prb.reduce.out_channels,
        "n_samples": model.prb.n_samples,
        "reduced_channels": model.prb.reduced_channels,
        "attention_enabled": model.prb.attention_enabled,
        "extension_ratio": model.prb.extension_ratio,
    }


def save_model(path, model: ModelParams) -> None:
    payload = {
        "config": model_meta(model),
        "params": {name: arr.tolist() for name, arr in param_items(model)},
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_model(path) -> ModelParams:
    with open(path) as f:
        raw = json.load(f)
    cfg = raw["config"]
    model = init_model(
        in_channels=cfg["in_channels"],
        base_width=cfg["base_width"],
        u_width=cfg["u_width"],
        sample_channels=cfg["sample_channels"],
        n_samples=cfg["n_samples"],
        reduced_channels=cfg["reduced_channels"],
        seed=0,
        attention_enabled=cfg["attention_enabled"],
        extension_ratio=cfg["extension_ratio"],
    )
    for name, arr in param_items(model):
        stored = np.asarray(raw["params"][name], dtype=np.float64)
        if stored.shape != arr.shape:
            raise ValueError(
                f"{path}: parameter {name} has shape {stored.shape}, "
                f"expected {arr.shape}"
            )
        arr[...] = stored
    return model
