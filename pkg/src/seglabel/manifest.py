"""Dataset manifests: the JSON index that ties images, masks and classes.

Schema (version 1), stored as `manifest.json` next to the image files:

    {
      "version": 1,
      "dataset_id": "panels-01",
      "class_names": ["background", "blob", "scratch"],
      "palette": {"colors": [[0,0,0], [255,0,0], [0,255,0]], "separation": 255.0},
      "entries": [
        {"image_id": "img-0001", "image_path": "images/0001.png",
         "mask_path": "masks/0001.png", "split": "train"}
      ]
    }

`class_names` is id-indexed with background at index 0. `mask_path` is
optional (unlabeled entries) and points at a color PNG rendered with the
recorded palette. Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidManifest
from .palette import ColorPalette

SPLITS = ("train", "val", "test", "unassigned")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    mask_path: str | None = None
    split: str = "unassigned"

    def __post_init__(self):
        if not self.image_id:
            raise InvalidManifest("entry missing image_id")
        if self.split not in SPLITS:
            raise InvalidManifest(f"unknown split tag {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    class_names: tuple
    entries: tuple
    palette: ColorPalette | None = None
    root: Path | None = None

    def __post_init__(self):
        if not self.dataset_id:
            raise InvalidManifest("dataset_id must be nonempty")
        names = tuple(self.class_names)
        if not names or names[0] not in ("background", "bg"):
            raise InvalidManifest("class_names[0] must be the background class")
        entries = tuple(self.entries)
        ids = [e.image_id for e in entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidManifest(f"duplicate image ids: {dupes}")
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "entries", entries)
        if self.root is not None:
            object.__setattr__(self, "root", Path(self.root))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def entry(self, image_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, rel_path: str) -> Path:
        p = Path(rel_path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def to_jsonable(self) -> dict:
        doc = {
            "version": 1,
            "dataset_id": self.dataset_id,
            "class_names": list(self.class_names),
            "entries": [
                {
                    "image_id": e.image_id,
                    "image_path": e.image_path,
                    **({"mask_path": e.mask_path} if e.mask_path else {}),
                    "split": e.split,
                }
                for e in self.entries
            ],
        }
        if self.palette is not None:
            doc["palette"] = self.palette.to_jsonable()
        return doc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_jsonable(), indent=2) + "\n")
        return path


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest file.

    With `check_files` (the default) every referenced image/mask must exist
    on disk, which is the contract the rest of the pipeline relies on.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidManifest(f"cannot parse manifest {path}: {e}") from e
    return parse_manifest(doc, root=path.parent, check_files=check_files)


def parse_manifest(doc: dict, root=None, check_files: bool = True) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise InvalidManifest("manifest must be a JSON object")
    for key in ("dataset_id", "class_names", "entries"):
        if key not in doc:
            raise InvalidManifest(f"manifest missing required key {key!r}")
    try:
        entries = tuple(
            ManifestEntry(
                image_id=str(e["image_id"]),
                image_path=str(e["image_path"]),
                mask_path=str(e["mask_path"]) if e.get("mask_path") else None,
                split=str(e.get("split", "unassigned")),
            )
            for e in doc["entries"]
        )
    except (KeyError, TypeError) as e:
        raise InvalidManifest(f"malformed entry: {e}") from e
    palette = None
    if doc.get("palette"):
        try:
            palette = ColorPalette.from_jsonable(doc["palette"])
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidManifest(f"bad palette: {e}") from e
    manifest = DatasetManifest(
        dataset_id=str(doc["dataset_id"]),
        class_names=tuple(str(n) for n in doc["class_names"]),
        entries=entries,
        palette=palette,
        root=root,
    )
    if check_files:
        for e in manifest.entries:
            img = manifest.resolve(e.image_path)
            if not img.is_file():
                raise InvalidManifest(f"missing image file {img} for {e.image_id}")
            if e.mask_path:
                m = manifest.resolve(e.mask_path)
                if not m.is_file():
                    raise InvalidManifest(f"missing mask file {m} for {e.image_id}")
    return manifest
