"""Image sources feeding the reconstruction engine.

A source is any iterable of :class:`PhaseImage`.  :class:`DatasetSource`
replays a simulated dataset from disk; a networked front-end only needs to
yield images in acquisition order to drive the same :func:`run_stream` loop.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .core import PhaseImage, ScalarVolume
from .io import FormatError, read_phase_image, sha256_file
from .prfs import PRFSThermometry, SliceThermometry
from .reconstruct import ReconstructionEngine

MANIFEST = "manifest.json"


class ChecksumError(FormatError):
    pass


def load_manifest(dataset) -> dict:
    path = Path(dataset) / MANIFEST
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def verify_checksums(dataset, manifest: dict | None = None) -> None:
    """Raise :class:`ChecksumError` naming the first missing or altered file."""
    dataset = Path(dataset)
    manifest = manifest or load_manifest(dataset)
    for rel, digest in sorted(manifest["files"].items()):
        path = dataset / rel
        if not path.is_file():
            raise ChecksumError(f"missing file: {rel}")
        if sha256_file(path) != digest:
            raise ChecksumError(f"checksum mismatch: {rel}")


class DatasetSource:
    """Replays the live images of a dataset directory in timestamp order."""

    def __init__(self, dataset, t0: float = 20.0, verify: bool = True):
        self.root = Path(dataset)
        self.manifest = load_manifest(self.root)
        if verify:
            verify_checksums(self.root, self.manifest)
        self.t0 = t0

    def _images(self, role: str) -> list[PhaseImage]:
        entries = [e for e in self.manifest["images"] if e["role"] == role]
        images = [read_phase_image(self.root / e["stem"], t0=self.t0) for e in entries]
        return sorted(images, key=lambda im: im.timestamp) if role == "live" else images

    def references(self) -> list[PhaseImage]:
        return self._images("reference")

    def __iter__(self) -> Iterator[PhaseImage]:
        return iter(self._images("live"))


def run_stream(source: Iterable[PhaseImage], thermometry: PRFSThermometry, engine: ReconstructionEngine,
               on_update: Callable[[SliceThermometry, ScalarVolume], None] | None = None) -> ReconstructionEngine:
    """Convert and ingest each image as it arrives; ``on_update`` sees every new volume."""
    for image in source:
        (slice_,) = thermometry.transform([image])
        engine.partial_fit(slice_)
        if on_update is not None:
            on_update(slice_, engine.predict())
    return engine
