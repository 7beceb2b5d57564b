"""On-disk formats and synthetic data.

Binary tensors use a little-endian container: magic "LDMI", a version byte,
a dtype code (0=f32, 1=f64, 2=u8), a rank byte, u32 dims, then the raw
row-major payload. Images use binary PPM/PGM (P6/P5, maxval 255); mask
files are P5 with byte 0 = missing and 255 = observed.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .inr import make_coordinate_grid

MAGIC = b"LDMI"
VERSION = 1
MAX_RANK = 8

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_FOR_DTYPE = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}

SYNTHETIC_KINDS = ("gaussians", "stripes", "field")


def tensor_to_bytes(values, dims=None, dtype=None) -> bytes:
    arr = np.asarray(values, dtype=dtype)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        arr = arr.reshape(dims)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.dtype not in _CODE_FOR_DTYPE:
        raise FormatError("unknown-dtype", f"unsupported dtype {arr.dtype}")
    if arr.ndim > MAX_RANK:
        raise FormatError("bad-rank", f"rank {arr.ndim} exceeds {MAX_RANK}")
    code = _CODE_FOR_DTYPE[arr.dtype]
    arr = np.ascontiguousarray(arr.astype(_DTYPE_CODES[code], copy=False))
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 7:
        raise FormatError("truncated", "record shorter than header")
    if data[:4] != MAGIC:
        raise FormatError("bad-magic", f"expected {MAGIC!r}, got {data[:4]!r}")
    version, code, rank = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise FormatError("bad-version", f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError("unknown-dtype", f"unknown dtype code {code}")
    if rank < 1 or rank > MAX_RANK:
        raise FormatError("bad-rank", f"rank {rank} out of range")
    off = 7
    if len(data) < off + 4 * rank:
        raise FormatError("truncated", "header ends before dims")
    dims = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = data[off:]
    if len(payload) != expected:
        raise FormatError("truncated", f"payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_tensor(path, values, dims=None, dtype=None) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(values, dims, dtype))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


# ---------------------------------------------------------------------------
# PPM / PGM images


def _read_ppm_tokens(data: bytes, count: int):
    # header tokens are whitespace separated; '#' starts a comment to EOL
    tokens, i = [], 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError("bad-header", "unexpected end of header")
        c = data[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # skip single whitespace after maxval


def load_ppm(path) -> np.ndarray:
    """Load a P5/P6 image as float32 in [0, 1], shape (H, W, C)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError("unsupported-format", f"not a binary PPM/PGM: {data[:2]!r}")
    channels = 3 if data[:2] == b"P6" else 1
    tokens, off = _read_ppm_tokens(data, 4)
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise FormatError("unsupported-maxval", f"maxval {maxval}, only 255 supported")
    expected = width * height * channels
    raw = data[off : off + expected]
    if len(raw) != expected:
        raise FormatError("truncated", f"pixel data {len(raw)} bytes, expected {expected}")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return img.astype(np.float32) / 255.0


def save_ppm(path, image: np.ndarray) -> None:
    """Save float values in [0, 1] as P5 (1 channel) or P6 (3 channels)."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError("shape-mismatch", f"expected (H, W, 1|3), got {img.shape}")
    # round half up so quantization error stays within 1/510 per channel
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = b"P6" if img.shape[2] == 3 else b"P5"
    with open(path, "wb") as f:
        f.write(header + b"\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(q.tobytes())


def load_mask(path) -> np.ndarray:
    """Boolean (H, W) mask from P5: True where observed (byte >= 128)."""
    img = load_ppm(path)
    if img.shape[2] != 1:
        raise FormatError("unsupported-format", "masks must be single-channel P5")
    return img[:, :, 0] >= 0.5


def save_mask(path, mask: np.ndarray) -> None:
    save_ppm(path, mask.astype(np.float32))


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Signal:
    """One datum: coordinates plus the feature value at each coordinate."""

    coords: np.ndarray  # (N, coord_dim)
    features: np.ndarray  # (N, feat_dim)
    resolution: tuple[int, ...]


@dataclass
class Dataset:
    features: np.ndarray  # (n, *resolution, feat_dim), float32 in [0, 1]
    resolution: tuple[int, ...]
    coord_dim: int
    feat_dim: int

    def __len__(self) -> int:
        return self.features.shape[0]

    def grid_coords(self) -> np.ndarray:
        return make_coordinate_grid(self.resolution).coords.numpy()

    def signal(self, i: int) -> Signal:
        feats = self.features[i].reshape(-1, self.feat_dim)
        return Signal(coords=self.grid_coords(), features=feats, resolution=self.resolution)


def _render_gaussians(rng: np.random.Generator, coords: np.ndarray) -> np.ndarray:
    k = int(rng.integers(1, 4))
    img = np.zeros(coords.shape[0])
    for _ in range(k):
        center = rng.uniform(-0.8, 0.8, size=2)
        sigma = rng.uniform(0.15, 0.45)
        amp = rng.uniform(0.5, 1.0)
        d2 = ((coords - center) ** 2).sum(axis=1)
        img += amp * np.exp(-d2 / (2.0 * sigma * sigma))
    peak = img.max()
    if peak > 1.0:
        img /= peak
    return img


def _render_stripes(rng: np.random.Generator, coords: np.ndarray) -> np.ndarray:
    freq = rng.uniform(0.5, 3.0)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    proj = coords[:, 0] * np.cos(theta) + coords[:, 1] * np.sin(theta)
    return 0.5 + 0.5 * np.sin(np.pi * freq * proj + phase)


def _render_field(rng: np.random.Generator, coords: np.ndarray) -> np.ndarray:
    img = np.zeros(coords.shape[0])
    for _ in range(4):
        freq = rng.uniform(0.25, 1.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.normal(0.0, 1.0)
        img += amp * np.sin(np.pi * (coords @ freq) + phase)
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full_like(img, 0.5)
    return (img - lo) / (hi - lo)


_RENDERERS = {
    "gaussians": _render_gaussians,
    "stripes": _render_stripes,
    "field": _render_field,
}


def make_synthetic_dataset(kind: str, n: int, resolution, seed: int) -> Dataset:
    """Deterministic synthetic 2-D dataset; features land in [0, 1]."""
    if kind not in _RENDERERS:
        raise ConfigError("unknown-kind", f"unknown dataset kind {kind!r}")
    if n < 1:
        raise ConfigError("config-invalid", "dataset size must be >= 1")
    resolution = tuple(int(r) for r in resolution)
    rng = np.random.Generator(np.random.PCG64(seed))
    coords = make_coordinate_grid(resolution).coords.numpy()
    render = _RENDERERS[kind]
    items = [render(rng, coords).reshape(*resolution, 1) for _ in range(n)]
    feats = np.stack(items).astype(np.float32)
    return Dataset(features=feats, resolution=resolution, coord_dim=len(resolution), feat_dim=1)


def save_dataset(path, dataset: Dataset) -> None:
    write_tensor(path, dataset.features)


def load_dataset(path) -> Dataset:
    """Load a dataset tensor file, or a directory of same-shape PPM images."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.ppm")) + sorted(path.glob("*.pgm"))
        if not files:
            raise FormatError("empty-dataset", f"no .ppm/.pgm files in {path}")
        imgs = [load_ppm(f) for f in files]
        shape = imgs[0].shape
        if any(im.shape != shape for im in imgs):
            raise ShapeError("shape-mismatch", "dataset images differ in shape")
        feats = np.stack(imgs)
    else:
        feats = read_tensor(path).astype(np.float32)
        if feats.ndim != 4:
            raise ShapeError("shape-mismatch", f"dataset tensor must be rank 4, got {feats.ndim}")
    res = tuple(int(s) for s in feats.shape[1:-1])
    return Dataset(features=feats, resolution=res, coord_dim=len(res), feat_dim=int(feats.shape[-1]))
