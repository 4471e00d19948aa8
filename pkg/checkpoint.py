"""
checkpoint files

a checkpoint at <path> is two files: <path>.json, a manifest listing every
named array with its shape and byte offset plus the configs, adam counters
and iteration; and <path>.bin, the arrays as raw little-endian float64 in
manifest order. random streams are derived from (seed, iteration, substep),
so storing the seed and iteration restores them exactly.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from estimator import ArchitectureConfig, EstimatorParams
from generators import FeaturePriorConfig, PriorGeneratorParams
from optim import AdamConfig, AdamState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """raised when a manifest and its blob or the expected architecture disagree"""


@dataclass
class TrainingState:
    estimator: EstimatorParams
    prior_weights: Optional[Dict[str, np.ndarray]] = None
    prior_description: Optional[dict] = None
    estimator_adam: Optional[AdamState] = None
    prior_adam: Optional[AdamState] = None
    iteration: int = 0
    seed: int = 0


def _paths(path) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_name(base.name + ".json"), base.with_name(base.name + ".bin")


def _adam_meta(state: Optional[AdamState]) -> Optional[dict]:
    if state is None:
        return None
    cfg = state.config
    return {"step": state.step, "base_rate": cfg.base_rate, "beta1": cfg.beta1, "beta2": cfg.beta2,
            "eps": cfg.eps, "decay_exponent": cfg.decay_exponent}


def _flatten(state: TrainingState) -> Dict[str, np.ndarray]:
    arrays = {f"estimator/{k}": v for k, v in state.estimator.weights.items()}
    if state.prior_weights is not None:
        arrays.update({f"prior/{k}": v for k, v in state.prior_weights.items()})
    for owner, adam in (("estimator", state.estimator_adam), ("prior", state.prior_adam)):
        if adam is not None:
            arrays.update({f"adam/{owner}/first/{k}": v for k, v in adam.first_moment.items()})
            arrays.update({f"adam/{owner}/second/{k}": v for k, v in adam.second_moment.items()})
    return arrays


def save_checkpoint(path, state: TrainingState) -> Path:
    """write manifest and blob; returns the manifest path"""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _flatten(state)

    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes

    manifest = {
        "format": FORMAT_VERSION,
        "architecture": state.estimator.config.to_dict(),
        "prior": state.prior_description,
        "adam": {"estimator": _adam_meta(state.estimator_adam), "prior": _adam_meta(state.prior_adam)},
        "iteration": state.iteration,
        "seed": state.seed,
        "blob_bytes": offset,
        "arrays": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    logger.info("checkpoint written to %s (iteration %d)", manifest_path, state.iteration)
    return manifest_path


def _read_arrays(manifest: dict, blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"blob holds {len(blob)} bytes but the manifest expects {manifest['blob_bytes']}")
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = entry["offset"] + count * _DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f"parameter '{entry['name']}' runs past the end of the blob ({end} > {len(blob)} bytes)")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=_DTYPE, count=count,
                                              offset=entry["offset"]).reshape(shape).astype(np.float64)
    return arrays


def _section(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _restore_adam(meta: Optional[dict], arrays, owner: str) -> Optional[AdamState]:
    if meta is None:
        return None
    config = AdamConfig(base_rate=meta["base_rate"], beta1=meta["beta1"], beta2=meta["beta2"],
                        eps=meta["eps"], decay_exponent=meta["decay_exponent"])
    return AdamState(config, _section(arrays, f"adam/{owner}/first/"),
                     _section(arrays, f"adam/{owner}/second/"), meta["step"])


def _check_shapes(expected: Dict[str, tuple], actual: Dict[str, np.ndarray], what: str) -> None:
    for name in sorted(set(expected) | set(actual)):
        if name not in actual:
            raise CheckpointError(f"{what} parameter '{name}' is missing from the checkpoint")
        if name not in expected:
            raise CheckpointError(f"{what} parameter '{name}' is not part of the architecture")
        if actual[name].shape != tuple(expected[name]):
            raise CheckpointError(
                f"{what} parameter '{name}' has shape {actual[name].shape}, expected {tuple(expected[name])}"
            )


def restore_checkpoint(path) -> TrainingState:
    """read a checkpoint, validating every array against the recorded architecture"""
    manifest_path, blob_path = _paths(path)
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"checkpoint files {manifest_path} / {blob_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{manifest_path}: manifest is not valid JSON ({err})") from err
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{manifest_path}: unsupported format {manifest.get('format')}")

    arrays = _read_arrays(manifest, blob_path.read_bytes())
    params = EstimatorParams(ArchitectureConfig(**manifest["architecture"]), _section(arrays, "estimator/"))
    _check_shapes(params.expected_shapes(), params.weights, "estimator")

    prior_weights = _section(arrays, "prior/") if manifest["prior"] is not None else None
    state = TrainingState(
        estimator=params,
        prior_weights=prior_weights,
        prior_description=manifest["prior"],
        estimator_adam=_restore_adam(manifest["adam"]["estimator"], arrays, "estimator"),
        prior_adam=_restore_adam(manifest["adam"]["prior"], arrays, "prior"),
        iteration=manifest["iteration"],
        seed=manifest["seed"],
    )
    if state.estimator_adam is not None:
        _check_shapes({k: v.shape for k, v in params.weights.items()}, state.estimator_adam.first_moment,
                      "estimator adam")
    logger.info("restored checkpoint %s at iteration %d", manifest_path, state.iteration)
    return state


def save_params(path, params: EstimatorParams) -> Path:
    return save_checkpoint(path, TrainingState(estimator=params))


def load_params(path) -> EstimatorParams:
    return restore_checkpoint(path).estimator


def rebuild_generator(state: TrainingState) -> Optional[PriorGeneratorParams]:
    """the generator described in a checkpoint, with its saved weights"""
    desc = state.prior_description
    if desc is None or desc.get("kind", "generator") != "generator":
        return None
    options = {k: desc[k] for k in ("knots", "hidden_width", "hidden_layers", "random_permutation")}
    params = PriorGeneratorParams(desc["setting"], desc["sparsity"], desc["p"],
                                  weights=dict(state.prior_weights), feature_prior=FeaturePriorConfig(desc["p"]),
                                  **options)
    _check_shapes(params.expected_shapes(), params.weights, "prior")
    return params
