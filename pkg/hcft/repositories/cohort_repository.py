"""
Cohort repository for the binary embedding store and bag manifest.

A cohort directory holds:

* ``raw.bin``        HCFTEMB1 store of raw patch vectors
* ``embeddings.bin`` HCFTEMB1 store of current embeddings (once an encoder ran)
* ``manifest.tsv``   ``slide_id<TAB>bag_label<TAB>split<TAB>first_index<TAB>count``
* ``truth.bin``      optional i32 instance truth labels, -1 when unknown
* ``mimic.bin``      optional i32 planted-mimic class, 0 when not a mimic
* ``recipe.json``    parameters a generated cohort was built from
"""

import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from hcft.core.logging import get_logger
from hcft.models.bag import Bag, Split
from hcft.schemas.cohort import CohortRecipe
from hcft.utils.exceptions import DataException, FormatException

logger = get_logger(__name__)

STORE_MAGIC = b"HCFTEMB1"
STORE_VERSION = 1
# magic, u32 version, u32 D, u64 count
_HEADER = struct.Struct("<8sIIQ")

RAW_FILE = "raw.bin"
EMBEDDINGS_FILE = "embeddings.bin"
MANIFEST_FILE = "manifest.tsv"
TRUTH_FILE = "truth.bin"
MIMIC_FILE = "mimic.bin"
RECIPE_FILE = "recipe.json"


def write_store(path: Path, rows: np.ndarray) -> None:
    """
    Write an HCFTEMB1 store.

    Args:
        path: Destination file
        rows: (count, D) matrix; values are stored as little-endian f32
    """
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise DataException(f"store rows must be 2-D, got shape {rows.shape}")
    count, dim = rows.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, dim, count))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_store(path: Path) -> np.ndarray:
    """
    Read an HCFTEMB1 store.

    Args:
        path: Store file

    Returns:
        np.ndarray: (count, D) float64 matrix

    Raises:
        FormatException: On a bad magic, unknown version or truncated payload
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatException("truncated header", offset=len(data), path=str(path))
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != STORE_MAGIC:
        raise FormatException(f"bad magic {magic!r}", offset=0, path=str(path))
    if version != STORE_VERSION:
        raise FormatException(f"unsupported version {version}", offset=8, path=str(path))
    expected = _HEADER.size + 4 * dim * count
    if len(data) < expected:
        raise FormatException(
            f"truncated payload, expected {expected} bytes", offset=len(data), path=str(path)
        )
    if len(data) > expected:
        raise FormatException("trailing bytes after payload", offset=expected, path=str(path))
    rows = np.frombuffer(data, dtype="<f4", count=dim * count, offset=_HEADER.size)
    return rows.astype(np.float64).reshape(count, dim)


def write_labels(path: Path, labels: np.ndarray) -> None:
    """Write a headerless little-endian i32 companion file."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())


def read_labels(path: Path, count: int) -> np.ndarray:
    """
    Read an i32 companion file holding exactly ``count`` values.

    Raises:
        FormatException: On a size mismatch
    """
    data = Path(path).read_bytes()
    if len(data) != 4 * count:
        raise FormatException(
            f"expected {count} i32 values", offset=min(len(data), 4 * count), path=str(path)
        )
    return np.frombuffer(data, dtype="<i4").astype(np.int64)


def _parse_manifest(path: Path) -> List[Tuple[str, int, Split, int, int]]:
    records = []
    offset = 0
    raw = Path(path).read_bytes()
    for line in raw.split(b"\n"):
        line_offset = offset
        offset += len(line) + 1
        if not line.strip():
            continue
        try:
            fields = line.decode("utf-8").split("\t")
        except UnicodeDecodeError as e:
            raise FormatException("manifest is not UTF-8", offset=line_offset, path=str(path)) from e
        if len(fields) != 5:
            raise FormatException(
                f"expected 5 fields, got {len(fields)}", offset=line_offset, path=str(path)
            )
        slide_id, label, split, first, count = fields
        try:
            records.append((slide_id, int(label), Split(split), int(first), int(count)))
        except ValueError as e:
            raise FormatException(f"bad manifest record: {e}", offset=line_offset, path=str(path)) from e
    return records


class CohortRepository:
    """Repository for one cohort directory."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def exists(self) -> bool:
        return (self.root / MANIFEST_FILE).is_file() and (self.root / RAW_FILE).is_file()

    def save(self, bags: Sequence[Bag]) -> None:
        """
        Save bags with their companions.

        Args:
            bags: Cohort in manifest order
        """
        if not bags:
            raise DataException("cannot save an empty cohort")
        self.root.mkdir(parents=True, exist_ok=True)

        lines = []
        first = 0
        for bag in bags:
            lines.append(f"{bag.slide_id}\t{bag.label}\t{bag.split.value}\t{first}\t{len(bag)}")
            first += len(bag)
        (self.root / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")

        write_store(self.root / RAW_FILE, np.vstack([b.raw for b in bags]))

        embeddings_path = self.root / EMBEDDINGS_FILE
        if all(b.embeddings is not None for b in bags):
            write_store(embeddings_path, np.vstack([b.require_embeddings() for b in bags]))
        elif embeddings_path.exists():
            embeddings_path.unlink()

        for name, attr, fill in ((TRUTH_FILE, "truth_labels", -1), (MIMIC_FILE, "mimic_of", 0)):
            path = self.root / name
            if any(getattr(b, attr) is not None for b in bags):
                parts = [
                    getattr(b, attr) if getattr(b, attr) is not None else np.full(len(b), fill)
                    for b in bags
                ]
                write_labels(path, np.concatenate(parts))
            elif path.exists():
                path.unlink()

        logger.info("Cohort saved", path=str(self.root), bags=len(bags), instances=first)

    def load(self) -> List[Bag]:
        """
        Load the cohort.

        Returns:
            List[Bag]: Bags in manifest order

        Raises:
            FormatException: When any file is malformed or files disagree
        """
        manifest_path = self.root / MANIFEST_FILE
        if not manifest_path.is_file():
            raise DataException(f"no cohort at {self.root}")
        records = _parse_manifest(manifest_path)
        raw = read_store(self.root / RAW_FILE)
        total = raw.shape[0]

        embeddings: Optional[np.ndarray] = None
        if (self.root / EMBEDDINGS_FILE).is_file():
            embeddings = read_store(self.root / EMBEDDINGS_FILE)
            if embeddings.shape[0] != total:
                raise FormatException(
                    f"{embeddings.shape[0]} embeddings for {total} instances",
                    offset=16,
                    path=str(self.root / EMBEDDINGS_FILE),
                )
        truth = read_labels(self.root / TRUTH_FILE, total) if (self.root / TRUTH_FILE).is_file() else None
        mimic = read_labels(self.root / MIMIC_FILE, total) if (self.root / MIMIC_FILE).is_file() else None

        bags = []
        expected_first = 0
        for slide_id, label, split, first, count in records:
            if first != expected_first or count < 1 or first + count > total:
                raise FormatException(
                    f"manifest range [{first}, {first + count}) of {slide_id} does not tile "
                    f"{total} instances",
                    path=str(manifest_path),
                )
            rows = slice(first, first + count)
            bags.append(
                Bag(
                    slide_id=slide_id,
                    label=label,
                    raw=raw[rows].copy(),
                    embeddings=None if embeddings is None else embeddings[rows].copy(),
                    truth_labels=None if truth is None else truth[rows].copy(),
                    mimic_of=None if mimic is None else mimic[rows].copy(),
                    split=split,
                )
            )
            expected_first = first + count
        if expected_first != total:
            raise FormatException(
                f"manifest covers {expected_first} of {total} instances", path=str(manifest_path)
            )
        logger.info("Cohort loaded", path=str(self.root), bags=len(bags), instances=total)
        return bags

    def save_recipe(self, recipe: CohortRecipe) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / RECIPE_FILE).write_text(recipe.model_dump_json(indent=2) + "\n", encoding="utf-8")

    def load_recipe(self) -> Optional[CohortRecipe]:
        """
        Load the recipe of a generated cohort.

        Returns:
            Optional[CohortRecipe]: None when the cohort carries no recipe

        Raises:
            FormatException: When the recipe file is malformed
        """
        path = self.root / RECIPE_FILE
        if not path.is_file():
            return None
        try:
            return CohortRecipe.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise FormatException(f"bad cohort recipe: {e.error_count()} errors", path=str(path)) from e
