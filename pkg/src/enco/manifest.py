"""Run manifests: every CLI command records what it ran on and produced.

The manifest carries content hashes of all inputs, so re-running a
command against an identical manifest must reproduce the outputs
bit-exactly (the timestamp is informational and excluded from that
contract).
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seeds, inputs, outputs) -> dict:
    """Write a manifest JSON next to a command's outputs and return it."""
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return manifest
