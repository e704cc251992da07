"""Line-oriented `key = value` config files and run manifests.

Every command that writes outputs also writes a manifest recording the
exact config, seeds, and input digests, so a run can be reproduced from
the manifest alone.
"""

from __future__ import annotations

import hashlib
import os
import time

from . import __version__
from .errors import InputError

_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


def parse_config_text(text: str, path: str = "<config>") -> dict:
    """Parse `key = value` lines; # starts a comment, blanks ignored."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise InputError(f"{path}:{lineno}: empty key")
        if key in out:
            raise InputError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = _coerce(value)
    return out


def _coerce(value: str):
    low = value.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path=str(path))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Collects one run's settings and writes them as key = value text."""

    def __init__(self, command: str):
        self.command = command
        self.config: dict[str, object] = {}
        self.inputs: dict[str, str] = {}
        self._t0 = time.monotonic()

    def record(self, **kwargs) -> None:
        self.config.update(kwargs)

    def record_input(self, label: str, path) -> None:
        self.inputs[label] = sha256_file(path)

    def write(self, path) -> None:
        lines = [
            f"command = {self.command}",
            f"version = {__version__}",
            f"duration_s = {time.monotonic() - self._t0:.3f}",
        ]
        for key in sorted(self.config):
            lines.append(f"{key} = {format_value(self.config[key])}")
        for label in sorted(self.inputs):
            lines.append(f"sha256.{label} = {self.inputs[label]}")
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
