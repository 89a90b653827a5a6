"""CT slice ingestion, LR simulation, patch extraction and batch scheduling.

Slices are stored as 16-bit unsigned images holding ``HU - HU_INTERCEPT``
(the usual CT rescale convention), either as PNG or as raw little-endian
``.raw`` with a JSON sidecar ``<file>.json`` giving ``{"shape": [h, w]}``.
An optional ``spacing`` entry in the sidecar sets the voxel spacing.
"""
from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .resample import check_method, upsample2

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
HU_INTERCEPT = -1024
DEFAULT_HU_WINDOW = (-1024.0, 3071.0)
GEOMETRIES = {"supervised": (64, 32), "same-size": (64, 64)}


class ManifestError(ValueError):
    pass


@dataclass
class ImageSlice:
    pixels: np.ndarray
    hu_window: tuple = DEFAULT_HU_WINDOW
    spacing: tuple = (1.0, 1.0)
    slice_id: str = ""
    domain: Optional[str] = None
    pairing_id: Optional[str] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"slice {self.slice_id!r}: expected 2D pixels, got shape {self.pixels.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"slice {self.slice_id!r}: spacing must be positive, got {self.spacing}")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class DegradationSpec:
    factor: int = 2
    noise_sigma: float = 0.01
    noise_kind: str = "gaussian"
    antialias: bool = True
    seed: int = 0
    noise_after_downsample: bool = False

    def __post_init__(self):
        if self.factor != 2:
            raise ValueError("only x2 degradation is supported")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.noise_kind not in ("gaussian", "poisson-like"):
            raise ValueError(f"noise_kind must be 'gaussian' or 'poisson-like', got {self.noise_kind!r}")


@dataclass
class PatchPair:
    lr: Optional[np.ndarray]
    hr: Optional[np.ndarray]
    center: tuple
    paired: bool
    domain: Optional[str] = None  # X or Y for unpaired singletons
    source: str = ""


@dataclass
class UnpairedSet:
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)

    def __len__(self):
        return len(self.x) + len(self.y)


@dataclass
class ManifestEntry:
    path: str
    domain: str
    pairing_id: Optional[str]


@dataclass
class DatasetManifest:
    entries: list
    version: int = MANIFEST_VERSION
    header: dict = field(default_factory=dict)
    root: Path = Path(".")

    def validate(self) -> None:
        seen = {"X": set(), "Y": set()}
        for e in self.entries:
            if e.domain not in seen:
                raise ManifestError(f"entry {e.path!r}: domain must be X or Y, got {e.domain!r}")
            if e.pairing_id is None:
                continue
            if e.pairing_id in seen[e.domain]:
                raise ManifestError(f"pairing id {e.pairing_id!r} appears twice in domain {e.domain}")
            seen[e.domain].add(e.pairing_id)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#version"):
        raise ManifestError(f"{path}: first line must be '#version {MANIFEST_VERSION}'")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ManifestError(f"{path}: malformed version header {lines[0]!r}") from None
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {version}")
    header, entries = {}, []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                header[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        p, domain, pid = parts
        entries.append(ManifestEntry(p, domain, None if pid == "-" else pid))
    m = DatasetManifest(entries, version, header, path.parent)
    m.validate()
    return m


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    out = [f"#version {manifest.version}"]
    out += [f"#{k}={v}" for k, v in manifest.header.items()]
    out += [f"{e.path}\t{e.domain}\t{e.pairing_id or '-'}" for e in manifest.entries]
    Path(path).write_text("\n".join(out) + "\n")


def _sidecar(path: Path) -> dict:
    side = path.with_name(path.name + ".json")
    return json.loads(side.read_text()) if side.exists() else {}


def read_stored(path) -> tuple:
    """Raw uint16 values of a slice file and its sidecar metadata."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"slice file not found: {path}")
    meta = _sidecar(path)
    if path.suffix == ".raw":
        if "shape" not in meta:
            raise ManifestError(f"{path}: raw slice needs a sidecar with 'shape'")
        h, w = meta["shape"]
        data = np.fromfile(path, dtype="<u2")
        if data.size != h * w:
            raise ManifestError(f"{path}: expected {h * w} samples, found {data.size}")
        return data.reshape(h, w), meta
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise ManifestError(f"{path}: expected a single-channel image")
    return arr.astype(np.uint16), meta


def write_stored(path, values: np.ndarray, meta: Optional[dict] = None) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=np.uint16)
    if path.suffix == ".raw":
        values.astype("<u2").tofile(path)
        meta = dict(meta or {}, shape=list(values.shape))
    else:
        Image.fromarray(values).save(path, format="PNG")
    if meta:
        path.with_name(path.name + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def hu_to_unit(raw, window) -> np.ndarray:
    low, high = float(window[0]), float(window[1])
    if not low < high:
        raise ValueError(f"degenerate HU window ({low}, {high})")
    return np.clip((np.asarray(raw, dtype=np.float64) - low) / (high - low), 0.0, 1.0)


def unit_to_hu(pixels, window) -> np.ndarray:
    low, high = float(window[0]), float(window[1])
    return np.asarray(pixels, dtype=np.float64) * (high - low) + low


def encode_slice(pixels, window) -> np.ndarray:
    hu = unit_to_hu(np.clip(pixels, 0.0, 1.0), window)
    return np.clip(np.rint(hu - HU_INTERCEPT), 0, 65535).astype(np.uint16)


def decode_slice(stored, window) -> np.ndarray:
    return hu_to_unit(stored.astype(np.float64) + HU_INTERCEPT, window)


def read_slice(path, window=DEFAULT_HU_WINDOW, slice_id=None) -> ImageSlice:
    stored, meta = read_stored(path)
    return ImageSlice(
        decode_slice(stored, window),
        tuple(window),
        tuple(meta.get("spacing", (1.0, 1.0))),
        slice_id or Path(path).stem,
    )


def write_slice(path, sl: ImageSlice) -> None:
    meta = {"spacing": list(sl.spacing)} if tuple(sl.spacing) != (1.0, 1.0) or Path(path).suffix == ".raw" else None
    write_stored(path, encode_slice(sl.pixels, sl.hu_window), meta)


def load_slices(manifest_path, hu_window=DEFAULT_HU_WINDOW, min_size: int = 32) -> list:
    """Load every manifest entry, in manifest order, tagged with domain and pairing id."""
    manifest = read_manifest(manifest_path)
    slices = []
    for e in manifest.entries:
        path = manifest.resolve(e)
        sl = read_slice(path, hu_window, slice_id=Path(e.path).stem)
        if min(sl.shape) < min_size:
            raise ManifestError(f"{path}: slice shape {sl.shape} is below the minimum size {min_size}")
        sl.domain, sl.pairing_id = e.domain, e.pairing_id
        slices.append(sl)
    return slices


def _rng(*keys) -> np.random.Generator:
    ints = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(ints)


def _noise(img, spec: DegradationSpec, rng) -> np.ndarray:
    if spec.noise_sigma == 0:
        return img
    z = rng.standard_normal(img.shape)
    if spec.noise_kind == "gaussian":
        return img + spec.noise_sigma * z
    return img + spec.noise_sigma * np.sqrt(np.clip(img, 0.0, None)) * z


def downsample2(img: np.ndarray, antialias: bool = True) -> np.ndarray:
    if antialias:
        h, w = img.shape
        return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return img[::2, ::2].copy()


def simulate_lr(hr: ImageSlice, spec: DegradationSpec) -> ImageSlice:
    """Noise at HR scale, then x2 area averaging (or decimation); clamped to [0, 1].

    The noise stream is seeded by (spec.seed, slice_id).
    """
    h, w = hr.shape
    if h % 2 or w % 2:
        raise ValueError(f"slice {hr.slice_id!r}: dimensions {hr.shape} must be even")
    rng = _rng(int(spec.seed), hr.slice_id)
    img = hr.pixels
    if spec.noise_after_downsample:
        lr = _noise(downsample2(img, spec.antialias), spec, rng)
    else:
        lr = downsample2(_noise(img, spec, rng), spec.antialias)
    return ImageSlice(
        np.clip(lr, 0.0, 1.0),
        hr.hu_window,
        (hr.spacing[0] * 2, hr.spacing[1] * 2),
        hr.slice_id,
        "X",
        hr.pairing_id,
    )


def upsample_to_match(lr: ImageSlice, method: str = "nearest") -> ImageSlice:
    check_method(method)
    return ImageSlice(
        upsample2(lr.pixels, method),
        lr.hu_window,
        (lr.spacing[0] / 2, lr.spacing[1] / 2),
        lr.slice_id,
        lr.domain,
        lr.pairing_id,
    )


def _sizes(geometry: str, hr_size: int):
    if geometry not in GEOMETRIES:
        raise ValueError(f"geometry must be one of {sorted(GEOMETRIES)}, got {geometry!r}")
    return (hr_size, hr_size // 2) if geometry == "supervised" else (hr_size, hr_size)


def geometry_for_mode(mode: str) -> str:
    return "same-size" if mode == "unsupervised" else "supervised"


def extract_patches(hr, lr, geometry: str, count: int, seed: int, hr_size: int = 64) -> list:
    """Aligned (LR, HR) patch pairs with centers drawn uniformly inside both images."""
    hp, lp = _sizes(geometry, hr_size)
    hr_px = hr.pixels if isinstance(hr, ImageSlice) else np.asarray(hr, dtype=np.float64)
    lr_px = lr.pixels if isinstance(lr, ImageSlice) else np.asarray(lr, dtype=np.float64)
    scale = hp // lp
    if hr_px.shape != (lr_px.shape[0] * scale, lr_px.shape[1] * scale):
        raise ValueError(f"{geometry} geometry needs HR shape = {scale} x LR shape, "
                         f"got HR {hr_px.shape} and LR {lr_px.shape}")
    if min(lr_px.shape) < lp:
        raise ValueError(f"image {lr_px.shape} is smaller than the {lp}x{lp} patch")
    rng = _rng(int(seed), getattr(hr, "slice_id", ""), geometry)
    rows = rng.integers(0, lr_px.shape[0] - lp + 1, size=count)
    cols = rng.integers(0, lr_px.shape[1] - lp + 1, size=count)
    src = getattr(hr, "slice_id", "")
    out = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        R, C = r * scale, c * scale
        out.append(PatchPair(
            lr_px[r:r + lp, c:c + lp].copy(),
            hr_px[R:R + hp, C:C + hp].copy(),
            (R + hp // 2, C + hp // 2),
            True,
            source=src,
        ))
    return out


def extract_unpaired(sl: ImageSlice, domain: str, geometry: str, count: int, seed: int,
                     hr_size: int = 64) -> list:
    hp, lp = _sizes(geometry, hr_size)
    size = hp if domain == "Y" else lp
    if min(sl.shape) < size:
        raise ValueError(f"slice {sl.slice_id!r} {sl.shape} is smaller than the {size}x{size} patch")
    rng = _rng(int(seed), sl.slice_id, domain, geometry)
    rows = rng.integers(0, sl.shape[0] - size + 1, size=count)
    cols = rng.integers(0, sl.shape[1] - size + 1, size=count)
    scale = 1 if domain == "Y" else hp // lp
    out = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        patch = sl.pixels[r:r + size, c:c + size].copy()
        center = ((r + size // 2) * scale, (c + size // 2) * scale)
        if domain == "Y":
            out.append(PatchPair(None, patch, center, False, "Y", sl.slice_id))
        else:
            out.append(PatchPair(patch, None, center, False, "X", sl.slice_id))
    return out


def split_semi(pairs: list, paired_fraction: float, seed: int) -> tuple:
    """Keep floor(fraction * n) pairs; disassociate the rest into X / Y pools."""
    if not 0.0 <= paired_fraction <= 1.0:
        raise ValueError(f"paired_fraction must lie in [0, 1], got {paired_fraction}")
    n = len(pairs)
    k = math.floor(paired_fraction * n + 1e-9)
    rng = _rng(int(seed), "split")
    order = rng.permutation(n)
    paired = [pairs[i] for i in sorted(order[:k].tolist())]
    rest = order[k:]
    pools = UnpairedSet()
    for i in rest.tolist():
        p = pairs[i]
        pools.x.append(PatchPair(p.lr, None, p.center, False, "X", p.source))
    for i in rng.permutation(rest).tolist():
        p = pairs[i]
        pools.y.append(PatchPair(None, p.hr, p.center, False, "Y", p.source))
    return paired, pools


@dataclass
class Batch:
    kind: str  # "paired" or "unpaired"
    x: np.ndarray  # (N, 1, h, w) float32
    y: np.ndarray
    x_index: tuple = ()
    y_index: tuple = ()


def _stack(items, attr):
    return np.stack([getattr(p, attr) for p in items])[:, None].astype(np.float32)


class BatchStream:
    """Deterministic per-epoch batch lists; epoch ``e`` is shuffled from (seed, e)."""

    def __init__(self, paired, unpaired, batch_size, mode, seed, ratio=(1, 1)):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        if mode not in ("supervised", "semi", "unsupervised"):
            raise ValueError(f"unknown mode {mode!r}")
        unpaired = unpaired or UnpairedSet()
        self.batch_size = int(batch_size)
        self.mode = mode
        self.seed = int(seed)
        self.ratio = tuple(int(r) for r in ratio)
        self.paired = list(paired)
        self.xs = list(unpaired.x)
        self.ys = list(unpaired.y)
        if mode == "unsupervised":
            self.xs = self.xs + [PatchPair(p.lr, None, p.center, False, "X", p.source) for p in self.paired]
            self.ys = self.ys + [PatchPair(None, p.hr, p.center, False, "Y", p.source) for p in self.paired]
            self.paired = []
            if not self.xs or not self.ys:
                raise ValueError("unsupervised mode needs nonempty X and Y pools")
        elif not self.paired:
            raise ValueError(f"{mode} mode needs a nonempty paired set")
        if mode == "supervised":
            self.xs, self.ys = [], []
        if bool(self.xs) != bool(self.ys):
            raise ValueError("unpaired X and Y pools must both be empty or both nonempty")

    def _chunks(self, n, rng):
        perm = rng.permutation(n).tolist()
        return [perm[i:i + self.batch_size] for i in range(0, n, self.batch_size)]

    def _paired_batches(self, epoch):
        if not self.paired:
            return []
        rng = np.random.default_rng([self.seed, epoch, 0])
        out = []
        for idx in self._chunks(len(self.paired), rng):
            items = [self.paired[i] for i in idx]
            out.append(Batch("paired", _stack(items, "lr"), _stack(items, "hr"), tuple(idx), tuple(idx)))
        return out

    def _pool_order(self, n, total, rng):
        order = []
        while len(order) < total:
            order += rng.permutation(n).tolist()
        return order[:total]

    def _unpaired_batches(self, epoch):
        if not self.xs:
            return []
        total = max(len(self.xs), len(self.ys))
        xo = self._pool_order(len(self.xs), total, np.random.default_rng([self.seed, epoch, 1]))
        yo = self._pool_order(len(self.ys), total, np.random.default_rng([self.seed, epoch, 2]))
        out = []
        for s in range(0, total, self.batch_size):
            xi, yi = xo[s:s + self.batch_size], yo[s:s + self.batch_size]
            out.append(Batch(
                "unpaired",
                _stack([self.xs[i] for i in xi], "lr"),
                _stack([self.ys[i] for i in yi], "hr"),
                tuple(xi), tuple(yi),
            ))
        return out

    def epoch(self, epoch: int) -> list:
        p = self._paired_batches(epoch)
        u = self._unpaired_batches(epoch)
        if self.mode != "semi" or not u:
            return p + u
        rp, ru = self.ratio
        out = []
        while p or u:
            out += p[:rp]
            out += u[:ru]
            p, u = p[rp:], u[ru:]
        return out

    def batches_per_epoch(self) -> int:
        return len(self.epoch(0))


def make_batches(paired, unpaired, batch_size, mode, seed, ratio=(1, 1)) -> BatchStream:
    return BatchStream(paired, unpaired, batch_size, mode, seed, ratio)


def build_pools(slices: list, mode: str, patches_per_slice: int, paired_fraction: float, seed: int,
                upsample_method: str = "nearest", hr_size: int = 64) -> tuple:
    """Patch sets for ``mode`` from loaded slices.

    X/Y slices sharing a pairing id become patch pairs which are then split;
    slices without a partner feed the unpaired pools directly.
    """
    geometry = geometry_for_mode(mode)
    xs = {s.pairing_id: s for s in slices if s.domain == "X" and s.pairing_id is not None}
    pairs, pools = [], UnpairedSet()
    for s in slices:
        if s.domain == "Y" and s.pairing_id in xs:
            lr = xs[s.pairing_id]
            if geometry == "same-size":
                lr = upsample_to_match(lr, upsample_method)
            pairs.extend(extract_patches(s, lr, geometry, patches_per_slice, seed, hr_size))
    paired_ids = {s.pairing_id for s in slices if s.domain == "Y"} & set(xs)
    for s in slices:
        if s.pairing_id is not None and s.pairing_id in paired_ids:
            continue
        src = upsample_to_match(s, upsample_method) if (s.domain == "X" and geometry == "same-size") else s
        single = extract_unpaired(src, s.domain, geometry, patches_per_slice, seed, hr_size)
        (pools.x if s.domain == "X" else pools.y).extend(single)
    paired, split_pools = split_semi(pairs, paired_fraction, seed)
    pools.x.extend(split_pools.x)
    pools.y.extend(split_pools.y)
    log.info("patch split: %d paired, %d unpaired X, %d unpaired Y", len(paired), len(pools.x), len(pools.y))
    return paired, pools
