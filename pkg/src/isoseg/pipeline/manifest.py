"""Plain-text run manifests: resolved config, chosen betas, seeds, software versions."""
from __future__ import annotations

import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy

from .. import __version__
from .config import TrainingConfig


def manifest_text(config: TrainingConfig, betas: Mapping[str, float] | None = None,
                  extra: Mapping[str, object] | None = None, timestamp: bool = True) -> str:
    lines = ["# isoseg run manifest"]
    if timestamp:
        lines.append(f"# created {datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    lines += [
        "[software]",
        f"isoseg = {__version__}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"python = {platform.python_version()}",
        "",
        "[conventions]",
        f"epoch = {config.train.patches_per_epoch} sampled patches "
        f"({config.steps_per_epoch} steps of batch {config.train.batch_size})",
        "model_selection = best validation macro-DSC over CSF, GM and WM",
        "gm_complement_mask = subject mask when stored, else union of nonzero voxels over channels",
        "prevalence = labeled voxels only (background excluded)",
        "",
    ]
    if betas:
        lines.append("[betas]")
        lines += [f"{k} = {v!r}" for k, v in betas.items()]
        lines.append("")
    if extra:
        lines.append("[run]")
        lines += [f"{k} = {v}" for k, v in extra.items()]
        lines.append("")
    lines.append(config.to_text())
    return "\n".join(lines)


def write_manifest(path, config: TrainingConfig, betas=None, extra=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest_text(config, betas, extra))
    return path
