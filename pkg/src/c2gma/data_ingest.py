"""Reading SAR records and visible-band annotations into LabeledImage collections."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolygonPath
from scipy import ndimage

from .datasets import GROUPS, DomainDataset, LabeledImage, one_hot
from .errors import CapacityError, ConfigurationError, GeometryError, ParseError, ShapeError
from .utils import keyed_rng

SAR_SIZE = 75
BAND_LENGTH = SAR_SIZE * SAR_SIZE
SAR_CLASSES = ("ship", "iceberg")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class RawSarRecord:
    id: str
    band_hh: np.ndarray
    band_hv: np.ndarray
    inc_angle: float | None
    is_iceberg: int


def _parse_record(index: int, entry) -> RawSarRecord:
    if not isinstance(entry, dict):
        raise ParseError(f"record {index}: expected an object, got {type(entry).__name__}")
    for key in ("id", "band_1", "band_2", "is_iceberg"):
        if key not in entry:
            raise ParseError(f"record {index}: missing key {key!r}")
    rid = str(entry["id"])
    bands = []
    for key in ("band_1", "band_2"):
        try:
            band = np.asarray(entry[key], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"record {index} ({rid}): {key} is not numeric") from exc
        if band.ndim != 1 or band.size != BAND_LENGTH:
            raise ShapeError(f"record {rid!r}: {key} has {band.size} values, expected {BAND_LENGTH}")
        bands.append(band.reshape(SAR_SIZE, SAR_SIZE))
    label = entry["is_iceberg"]
    if label not in (0, 1) or isinstance(label, bool):
        raise ParseError(f"record {index} ({rid}): is_iceberg must be 0 or 1, got {label!r}")
    angle = entry.get("inc_angle")
    if angle is None or angle == "na":
        angle = None
    else:
        try:
            angle = float(angle)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"record {index} ({rid}): bad inc_angle {angle!r}") from exc
    return RawSarRecord(rid, bands[0], bands[1], angle, int(label))


def parse_statoil(path) -> list[RawSarRecord]:
    """Parse a Statoil/C-CORE style JSON array of labelled SAR records."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be an array of records")
    return [_parse_record(i, entry) for i, entry in enumerate(doc)]


def combine_channels(hh, hv) -> np.ndarray:
    hh = np.asarray(hh, dtype=np.float64)
    hv = np.asarray(hv, dtype=np.float64)
    if hh.shape != hv.shape:
        raise ShapeError(f"channel shapes differ: {hh.shape} vs {hv.shape}")
    return np.sqrt(hh * hh + hv * hv)


def minmax_scale(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi - lo <= 0.0:
        return np.zeros_like(img, dtype=np.float64)
    return (img - lo) / (hi - lo)


def record_to_image(record: RawSarRecord, group: str | None = None) -> LabeledImage:
    """Combine polarisations and min-max scale to [0, 1]."""
    pixels = minmax_scale(combine_channels(record.band_hh, record.band_hv))
    return LabeledImage(
        pixels=pixels,
        label=one_hot(record.is_iceberg, len(SAR_CLASSES)),
        domain="target",
        group=group,
        id=record.id,
    )


# --- group splits ----------------------------------------------------------

def _counts(ship, iceberg):
    return {"ship": dict(zip(GROUPS, ship)), "iceberg": dict(zip(GROUPS, iceberg))}


@dataclass
class SplitSpec:
    """Per-class, per-group sample counts for one train split and the shared test split."""

    name: str
    train: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)

    def total(self, part: str, cls: str) -> int:
        return sum(getattr(self, part).get(cls, {}).values())


TEST_COUNTS = _counts((97, 158, 171), (99, 137, 141))
SPLIT_COUNTS = {
    "train1": SplitSpec("train1", _counts((96, 15, 17), (99, 13, 14)), TEST_COUNTS),
    "train2": SplitSpec("train2", _counts((96, 15, 17), (9, 137, 14)), TEST_COUNTS),
    "train3": SplitSpec("train3", _counts((96, 15, 17), (9, 13, 140)), TEST_COUNTS),
}


_stream = keyed_rng


def split_dataset(records, manifest: dict, split_spec: SplitSpec | str, seed: int = 0):
    """Sample a (train, test) pair of target datasets following per-group counts.

    The test draw depends only on ``seed``, so every train split shares the same
    test set; train items are drawn from what the test draw left behind.
    """
    if isinstance(split_spec, str):
        if split_spec not in SPLIT_COUNTS:
            raise ConfigurationError(f"unknown split {split_spec!r}; known: {sorted(SPLIT_COUNTS)}")
        split_spec = SPLIT_COUNTS[split_spec]

    ids = [r.id for r in records]
    missing = [i for i in ids if i not in manifest]
    if missing:
        raise ConfigurationError(f"{len(missing)} record ids have no group in the manifest, e.g. {missing[0]!r}")
    extra = set(manifest) - set(ids)
    if extra:
        raise ConfigurationError(f"manifest lists {len(extra)} ids absent from the dataset, e.g. {sorted(extra)[0]!r}")

    pools = {(c, g): [] for c in SAR_CLASSES for g in GROUPS}
    for r in records:
        pools[(SAR_CLASSES[r.is_iceberg], manifest[r.id])].append(r)

    train, test = [], []
    for cls in SAR_CLASSES:
        for g in GROUPS:
            pool = pools[(cls, g)]
            n_test = split_spec.test.get(cls, {}).get(g, 0)
            n_train = split_spec.train.get(cls, {}).get(g, 0)
            if n_test + n_train > len(pool):
                raise CapacityError(
                    f"class {cls!r} group {g!r}: requested {n_test} test + {n_train} train, only {len(pool)} available"
                )
            order = _stream(seed, "test", cls, g).permutation(len(pool))
            test_idx, rest = order[:n_test], order[n_test:]
            rest = np.sort(rest)
            pick = _stream(seed, "train", split_spec.name, cls, g).permutation(len(rest))[:n_train]
            test.extend(record_to_image(pool[i], g) for i in test_idx)
            train.extend(record_to_image(pool[rest[i]], g) for i in pick)

    return DomainDataset(train, SAR_CLASSES, "target"), DomainDataset(test, SAR_CLASSES, "target")


# --- visible crops ---------------------------------------------------------

def parse_annotations(path) -> list[tuple[np.ndarray, str]]:
    """Read quadrilateral annotations: 8 corner coordinates then a class token per line.

    Header lines and anything that does not start with 8 numbers are skipped.
    A trailing difficulty flag after the class token is ignored.
    """
    out = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 9:
                continue
            try:
                coords = np.array([float(p) for p in parts[:8]]).reshape(4, 2)
            except ValueError:
                continue
            out.append((coords, parts[8]))
    return out


def to_luminance(image) -> np.ndarray:
    img = np.asarray(image)
    scale = 255.0 if np.issubdtype(img.dtype, np.integer) else 1.0
    img = img.astype(np.float64) / scale
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] >= 3:
        return img[..., :3] @ LUMA_WEIGHTS
    raise ShapeError(f"expected an H x W or H x W x 3 image, got {img.shape}")


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _long_edge_angle(pts: np.ndarray) -> float:
    edges = np.roll(pts, -1, axis=0) - pts
    k = int(np.argmax(np.hypot(edges[:, 0], edges[:, 1])))
    theta = math.atan2(edges[k, 1], edges[k, 0])
    # fold into (-pi/2, pi/2]
    while theta <= -math.pi / 2:
        theta += math.pi
    while theta > math.pi / 2:
        theta -= math.pi
    return theta


def crop_quadrilateral(lum: np.ndarray, corners, size: int = SAR_SIZE, clip: bool = False):
    """Rotate, crop and resize one quadrilateral region; zero outside the polygon.

    Corner coordinates are (x, y) in pixel-edge units, i.e. the full frame of an
    H x W image is [0, W] x [0, H]. Returns ``(crop, inside_mask)``.
    """
    h, w = lum.shape
    pts = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    if abs(_polygon_area(pts)) < 1e-9:
        raise GeometryError("bounding box has zero area")
    outside = (pts[:, 0] < 0) | (pts[:, 0] > w) | (pts[:, 1] < 0) | (pts[:, 1] > h)
    if outside.any():
        if not clip:
            raise GeometryError(f"bounding box {pts.tolist()} extends outside the {w}x{h} image")
        warnings.warn("bounding box clipped to image bounds", stacklevel=3)
        pts = np.column_stack([np.clip(pts[:, 0], 0, w), np.clip(pts[:, 1], 0, h)])
        if abs(_polygon_area(pts)) < 1e-9:
            raise GeometryError("bounding box has zero area after clipping")

    theta = _long_edge_angle(pts)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, s], [-s, c]])  # rotates by -theta
    center = pts.mean(axis=0)
    local = (pts - center) @ rot.T
    (x0, y0), (x1, y1) = local.min(axis=0), local.max(axis=0)

    frac = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))
    src = np.stack([uu, vv], axis=-1) @ rot + center

    coords = np.stack([src[..., 1] - 0.5, src[..., 0] - 0.5])
    crop = ndimage.map_coordinates(lum, coords, order=1, mode="nearest")
    inside = PolygonPath(pts).contains_points(src.reshape(-1, 2)).reshape(size, size)
    crop = np.where(inside, crop, 0.0)
    return crop, inside


def extract_visible_crops(
    image,
    annotations,
    classes=SAR_CLASSES,
    class_map: dict | None = None,
    size: int = SAR_SIZE,
    clip: bool = False,
    id_prefix: str = "crop",
) -> list[LabeledImage]:
    """Cut each annotated object out of a visible image as a source-domain sample.

    ``class_map`` maps annotation tokens to roster names; tokens absent from
    both the map and the roster are skipped.
    """
    lum = to_luminance(image)
    class_map = class_map or {}
    out = []
    for k, (corners, token) in enumerate(annotations):
        name = class_map.get(token, token)
        if name not in classes:
            continue
        crop, _ = crop_quadrilateral(lum, corners, size=size, clip=clip)
        out.append(
            LabeledImage(
                pixels=crop,
                label=one_hot(classes.index(name), len(classes)),
                domain="source",
                id=f"{id_prefix}_{k}",
                provenance={"token": token},
            )
        )
    return out


def load_visible_directory(image_dir, label_dir, classes=SAR_CLASSES, class_map=None, size=SAR_SIZE, clip=True):
    """Walk a DOTA-style layout (``images/*.png`` + ``labelTxt/*.txt``) into one source dataset."""
    from PIL import Image

    items = []
    for img_path in sorted(Path(image_dir).iterdir()):
        ann_path = Path(label_dir) / (img_path.stem + ".txt")
        if not ann_path.exists():
            continue
        with Image.open(img_path) as im:
            arr = np.asarray(im.convert("RGB"))
        anns = parse_annotations(ann_path)
        items.extend(
            extract_visible_crops(arr, anns, classes, class_map, size=size, clip=clip, id_prefix=img_path.stem)
        )
    return DomainDataset(items, classes, "source")
