"""JSON and CSV emission with SHA-256 hashes for reproducible artefacts.

Results are written as a CSV table plus a sidecar JSON document. The sidecar
records a hash of the configuration that produced the table, a hash of the
exact CSV bytes and the seeds used. Keys whose values vary between otherwise
identical runs (wall time) are left out of sidecars and of every hash, so
reruns write identical files.

Main functions for external usage:

* `write_json_file` / `read_json_file` - canonical JSON documents.
* `get_config_hash` - SHA-256 of the canonical JSON form of a mapping.
* `write_table` - RFC-4180 CSV bytes of an `xarray.Dataset` table.
* `result_matches_sidecar` - recompute the CSV hash and compare it to the
  value recorded in its sidecar file.

"""

import json
import math
from hashlib import sha256
from pathlib import Path
from typing import Any

import numpy as np
import xarray as xr

# Fixed float formatting keeps CSV output byte-identical across reruns.
CSV_FLOAT_FORMAT = '%.10g'
CSV_LINE_TERMINATOR = '\r\n'


def serialise_value(value: Any) -> Any:
    """Convert a value to something that can be written as JSON.

    numpy scalars become Python scalars, arrays become nested lists and
    non-finite floats become `None`.

    """
    if isinstance(value, np.ndarray):
        cleaned_value = serialise_value(value.tolist())
    elif isinstance(value, np.bool_):
        cleaned_value = bool(value)
    elif isinstance(value, np.integer):
        cleaned_value = int(value)
    elif isinstance(value, float | np.floating):
        cleaned_value = float(value) if math.isfinite(value) else None
    elif isinstance(value, dict):
        cleaned_value = {str(key): serialise_value(item) for key, item in value.items()}
    elif isinstance(value, list | tuple):
        cleaned_value = [serialise_value(item) for item in value]
    elif isinstance(value, Path):
        cleaned_value = str(value)
    else:
        cleaned_value = value

    return cleaned_value


def is_varying_key(key: str) -> bool:
    """Determine if a metadata key can't be used for reference comparison.

    The key is lower-cased so that "Wall_Time_Seconds" and similar spellings
    are treated the same way.

    """
    return key.lower() in {'wall_time_seconds', 'history'}


def write_json_file(json_path: str | Path, document: dict[str, Any]):
    """Write a JSON document with sorted keys and two-space indentation."""
    with open(json_path, 'w', encoding='utf-8') as file_handler:
        json.dump(serialise_value(document), file_handler, indent=2, sort_keys=True)
        file_handler.write('\n')


def read_json_file(json_path: str | Path) -> dict[str, Any]:
    """Read a JSON document."""
    with open(json_path, encoding='utf-8') as file_handler:
        return json.load(file_handler)


def get_hash_value(content: bytes) -> str:
    """Return a string of a SHA-256 hash of the input bytes."""
    return sha256(content).hexdigest()


def get_config_hash(config: dict[str, Any]) -> str:
    """Hash the canonical JSON form of a configuration mapping.

    Varying keys are removed before hashing, so the hash identifies what was
    computed rather than when.

    """
    cleaned_config = {
        key: serialise_value(value)
        for key, value in config.items()
        if not is_varying_key(key)
    }
    return get_hash_value(
        json.dumps(cleaned_config, sort_keys=True).encode('utf-8')
    )


def table_to_csv_bytes(table: xr.Dataset) -> bytes:
    """Render a one-dimensional table as RFC-4180 CSV bytes.

    Columns follow the order of the data variables; the row index is not
    written.

    """
    frame = table.to_dataframe()[list(table.data_vars)]
    text = frame.to_csv(
        index=False,
        float_format=CSV_FLOAT_FORMAT,
        lineterminator=CSV_LINE_TERMINATOR,
    )
    return text.encode('utf-8')


def write_table(table: xr.Dataset, csv_path: str | Path) -> str:
    """Write the CSV bytes of `table` and return their SHA-256 hash."""
    csv_bytes = table_to_csv_bytes(table)
    Path(csv_path).write_bytes(csv_bytes)
    return get_hash_value(csv_bytes)


def result_matches_sidecar(csv_path: str | Path, sidecar_path: str | Path) -> bool:
    """Recompute the hash of a CSV file and compare it to its sidecar.

    Args:
        csv_path: Table written by `write_table`.
        sidecar_path: JSON document with a `table_hash` entry recorded when
            the table was written.

    """
    actual_hash = get_hash_value(Path(csv_path).read_bytes())
    reference_hash = read_json_file(sidecar_path).get('table_hash')
    return actual_hash == reference_hash
