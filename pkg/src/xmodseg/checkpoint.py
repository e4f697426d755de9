"""Versioned, self-describing checkpoint files shared by the segmentation and
translation trainers: format version + kind tag + config dict + weight table
(+ optimizer state, step, fold index). Loading validates version and kind."""

from __future__ import annotations

from pathlib import Path

import torch

FORMAT_VERSION = 1
KINDS = ("segmentation", "translation")


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, kind: str, config: dict, weights: dict, *,
                    optimizer_state=None, step: int = 0, extra: dict | None = None):
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": dict(config),
        "weights": {k: v.detach().cpu() for k, v in weights.items()},
        "optimizer_state": optimizer_state,
        "step": int(step),
    }
    payload.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path, expected_kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"corrupt checkpoint file {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"corrupt checkpoint file {path}: no header")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {payload['format_version']} in {path}, "
            f"expected {FORMAT_VERSION}"
        )
    if payload.get("kind") != expected_kind:
        raise CheckpointError(
            f"checkpoint {path} holds a {payload.get('kind')!r} model, "
            f"expected {expected_kind!r}"
        )
    return payload
