"""Python bindings for the shadowsteer C++ core.

Arrays are float32 NumPy arrays. Structured inputs and outputs (controls,
guidance settings, manifests, run configs) travel as JSON; the helpers below
accept dicts and return dicts.
"""

import json as _json

from . import _core
from ._core import (
    CheckpointError,
    InputError,
    IoError,
    PreconditionError,
    alpha_bar,
    apply_shadow_mask,
    encode_mask,
    generate,
    half_face_mask,
    raycast_shadow,
    sampler_timesteps,
)

__all__ = [
    "CheckpointError",
    "InputError",
    "IoError",
    "PreconditionError",
    "alpha_bar",
    "apply_shadow_mask",
    "build_dataset",
    "encode_mask",
    "generate",
    "generate_with_control",
    "guidance_preset",
    "half_face_mask",
    "raycast_shadow",
    "sampler_timesteps",
    "validate_ablation_report",
]


def build_dataset(identities, lights, size, out_dir, seed=1, val_fraction=0.05, overwrite=False):
    return _json.loads(_core.build_dataset(identities, lights, size, str(out_dir), seed, val_fraction, overwrite))


def generate_with_control(diffusion, sd, id, label, seed, control, out_dir, guidance=None, sampler=None):
    text = _core.generate_with_control(
        str(diffusion), str(sd), str(id), label, seed, _json.dumps(control),
        _json.dumps(guidance or {}), str(out_dir), _json.dumps(sampler or {}),
    )
    return _json.loads(text)


def guidance_preset(name):
    return _json.loads(_core.guidance_preset(name))


def validate_ablation_report(report):
    _core.validate_ablation_report(report if isinstance(report, str) else _json.dumps(report))
