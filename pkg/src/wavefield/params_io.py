"""Parameter files.

Format (UTF-8 text, one record per line)::

    WAVEFIELD-PARAMS 1
    meta <json object>
    <name> <shape> <hex floats...>

``<shape>`` is the comma-separated dimension list in parentheses, ``()`` for
scalars. Values are float64 in C order written with ``float.hex`` so a
save/load round trip is bit-exact. Names must not contain whitespace.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "WAVEFIELD-PARAMS"
VERSION = 1


class ParamFileError(ValueError):
    pass


def save_params(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True)]
    for name in sorted(params):
        if any(ch.isspace() for ch in name):
            raise ParamFileError(f"parameter name {name!r} contains whitespace")
        arr = np.asarray(params[name], dtype=np.float64)
        shape = "(" + ",".join(str(s) for s in arr.shape) + ")"
        values = " ".join(float(x).hex() for x in arr.ravel())
        lines.append(f"{name} {shape} {values}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].split() != [MAGIC, str(VERSION)]:
        raise ParamFileError(f"{path}: not a version-{VERSION} parameter file")
    if len(text) < 2 or not text[1].startswith("meta "):
        raise ParamFileError(f"{path}: missing meta line")
    meta = json.loads(text[1][5:])
    params = {}
    for lineno, line in enumerate(text[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) < 2:
            raise ParamFileError(f"{path}:{lineno}: malformed record")
        name, shape_txt, values = parts[0], parts[1], parts[2:]
        inner = shape_txt.strip("()")
        shape = tuple(int(s) for s in inner.split(",")) if inner else ()
        try:
            arr = np.array([float.fromhex(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise ParamFileError(f"{path}:{lineno}: bad value ({exc})") from None
        if arr.size != int(np.prod(shape)):
            raise ParamFileError(f"{path}:{lineno}: {name} has {arr.size} values for shape {shape}")
        params[name] = arr.reshape(shape)
    return params, meta
