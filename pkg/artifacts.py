import os
import json
import logging
from typing import Any, Dict, Iterable, Mapping, Optional
import numpy as np
import pandas as pd
from errors import MissingArtifactError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return [_to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # JSON has no infinities; keep them readable
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        if np.isnan(value):
            return None
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Mapping):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path: str, payload: Mapping[str, Any]) -> None:
    directory = os.path.dirname(path)
    if directory:
        ensure_dir(directory)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8") as fh:
        json.dump(_to_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp_path, path)
    logger.debug("Wrote %s", path)


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_table(path: str, columns: Mapping[str, Iterable[Any]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        ensure_dir(directory)
    frame = pd.DataFrame({name: list(values) for name, values in columns.items()})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("Wrote %s (%d rows)", path, len(frame))


def read_table(path: str, dtype: Optional[Mapping[str, Any]] = None) -> pd.DataFrame:
    return pd.read_csv(path, dtype=dtype)


def write_arrays(path: str, **arrays: Any) -> None:
    """npz with float payloads stored as little-endian float64."""
    packed = {}
    for name, value in arrays.items():
        array = np.asarray(value)
        if array.dtype.kind == "f":
            array = array.astype("<f8")
        packed[name] = array
    directory = os.path.dirname(path)
    if directory:
        ensure_dir(directory)
    np.savez(path, **packed)


def read_arrays(path: str) -> Dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as archive:
        return {name: archive[name] for name in archive.files}


def require(directory: str, names: Mapping[str, str]) -> None:
    """
    `names` maps artifact file name -> stage that produces it. Raises
    MissingArtifactError listing every absent file and the stages to rerun.
    """
    missing = [name for name in names if not os.path.exists(os.path.join(directory, name))]
    if missing:
        error = MissingArtifactError(missing, [names[name] for name in missing])
        logger.error("%s", error)
        raise error


def update_manifest(directory: str, stage: str, record: Mapping[str, Any],
                    resolved_config: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    path = os.path.join(directory, "manifest.json")
    manifest = read_json(path) if os.path.exists(path) else {"stages": {}, "order": []}
    manifest["stages"][stage] = dict(record)
    if stage not in manifest["order"]:
        manifest["order"].append(stage)
    if resolved_config is not None:
        manifest["config"] = resolved_config
    write_json(path, manifest)
    return manifest
