"""Run manifests: content hashes of inputs and outputs, atomic writes."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from bbmlab import __version__
from bbmlab.errors import IntegrityError

MANIFEST_FORMAT = "bbmlab-manifest/1"
MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data) -> Path:
    """Write via a temporary sibling and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


@dataclass
class RunManifest:
    command: str
    flags: dict
    config_digest: str
    config_text: str
    seeds: list = field(default_factory=list)
    inputs: list = field(default_factory=list)  # [{"path", "sha256"}]
    outputs: list = field(default_factory=list)  # [{"path" (relative to out dir), "sha256"}]
    wall_clock_s: float = 0.0
    steps: dict = field(default_factory=dict)
    tool_version: str = __version__
    threads: int = 1
    format: str = MANIFEST_FORMAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise IntegrityError(f"cannot read manifest {path}: {exc}") from None
        if d.get("format") != MANIFEST_FORMAT:
            raise IntegrityError(f"{path} is not a run manifest")
        return cls(**d)

    def write(self, out_dir) -> Path:
        return atomic_write(Path(out_dir) / MANIFEST_NAME, self.to_json())


def find_manifest(artifact) -> Path:
    """Manifest governing an artifact path (file, field stem or run directory)."""
    p = Path(artifact)
    d = p if p.is_dir() else p.parent
    m = d / MANIFEST_NAME
    if not m.exists():
        raise IntegrityError(f"no manifest next to {artifact}")
    return m


def verify_artifact(path) -> dict:
    """Check ``path`` exists and matches the hash in its run manifest.

    Returns the {"path", "sha256"} record (absolute path).
    """
    p = Path(path)
    if not p.exists():
        raise IntegrityError(f"missing artifact {path}")
    man = RunManifest.load(find_manifest(p))
    digest = sha256_file(p)
    for rec in man.outputs:
        if rec["path"] == p.name:
            if rec["sha256"] != digest:
                raise IntegrityError(f"hash mismatch for {path}")
            return {"path": str(p.resolve()), "sha256": digest}
    raise IntegrityError(f"{path} is not listed in its manifest")
