"""Synthetic desk-scale datasets, binary image IO, and manifest handling.

Two generator families stand in for the real tasks: cluttered grayscale
"radiograph" backgrounds that may contain compact high-contrast foreign
objects, and a four-chamber cardiac layout that may grow a fifth central
ellipse. Both are pure functions of (spec, rng) and record ground-truth
geometry in the sample metadata so tests can check pixels against it.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    source: str
    label: int
    split: str = "train"
    image: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class SynthSpec:
    task: str = "foreign_object"
    size: int = 64
    object_count: tuple = (1, 4)
    object_radius: tuple = (4, 9)
    background_blobs: int = 6
    noise_sigma: float = 0.04
    blur: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("foreign_object", "lvot"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.size < 32:
            raise ValueError("size must be >= 32")
        for name in ("object_count", "object_radius"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be ordered and positive")
        if self.noise_sigma < 0 or self.background_blobs < 0:
            raise ValueError("noise_sigma and background_blobs must be non-negative")


@dataclass
class Volume:
    slices: np.ndarray  # [depth, H, W]

    def __post_init__(self):
        self.slices = np.asarray(self.slices)
        if self.slices.ndim != 3 or self.slices.shape[0] < 1:
            raise ValueError(f"volume needs [D >= 1, H, W], got {self.slices.shape}")


# -------------------------------------------------------------- generators


def _soft_limit(img: np.ndarray) -> np.ndarray:
    """Squash values into (0.02, 0.98) with a smooth knee instead of a hard
    clip: strictly monotone, so out-of-range texture compresses rather than
    saturating into constant plateaus."""
    lo, hi, knee = 0.02, 0.98, 0.04
    out = np.where(img > hi - knee,
                   hi - knee + knee * np.tanh((img - (hi - knee)) / knee), img)
    return np.where(out < lo + knee,
                    lo + knee + knee * np.tanh((out - (lo + knee)) / knee), out)


def _blob_background(size: int, blobs: int, sigma: float, rng) -> np.ndarray:
    """Smooth low-frequency texture plus pixel noise inside (0.02, 0.98).

    Base level and noise amplitude are jittered per image so that global
    statistics (mean/std/extrema) vary more across backgrounds than any
    single pasted object shifts them."""
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size), rng.uniform(0.35, 0.55))
    for _ in range(blobs):
        cy, cx = rng.uniform(0, size, size=2)
        s = rng.uniform(size / 8, size / 3)
        amp = rng.uniform(-0.30, 0.30)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    img += rng.normal(0.0, sigma * rng.uniform(0.7, 1.6), size=(size, size))
    return _soft_limit(img)


def _disk_mask(size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _square_mask(size: int, cy: float, cx: float, half: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)


def _bar_mask(size: int, cy: float, cx: float, half_len: float, half_width: float,
              horizontal: bool) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = np.abs(yy - cy), np.abs(xx - cx)
    if horizontal:
        return (dx <= half_len) & (dy <= half_width)
    return (dy <= half_len) & (dx <= half_width)


def _textured_paste(img: np.ndarray, mask: np.ndarray, contrast: float,
                    bg_lo: float, bg_hi: float) -> tuple:
    """Recolor `mask` to a constant offset from its local mean, overlaid
    with a +-amp single-pixel checkerboard (an engraved-surface texture).
    The base value keeps `amp` of headroom inside the background range, so
    pixel extrema stay uninformative while the checker gives the object a
    crisp signature at the highest spatial frequency — one no smooth blob,
    noise field, or thin clutter line produces coherently. Returns
    (base value, amp)."""
    local = float(img[mask].mean()) if mask.any() else 0.5
    side = 1.0 if bg_hi - local > local - bg_lo else -1.0
    amp = 0.18
    lo_b, hi_b = bg_lo + amp + 0.01, bg_hi - amp - 0.01
    if lo_b <= hi_b:
        value = min(max(local + side * contrast, lo_b), hi_b)
    else:
        value = 0.5 * (bg_lo + bg_hi)
        amp = max(0.0, 0.5 * (bg_hi - bg_lo) - 0.01)
    yy, xx = np.nonzero(mask)
    img[yy, xx] = value + amp * (((yy + xx) % 2) * 2.0 - 1.0)
    return float(value), float(amp)


def _paste(img: np.ndarray, mask: np.ndarray, contrast: float,
           bg_lo: float, bg_hi: float) -> float:
    """Recolor `mask` to a constant at `contrast` away from its local mean,
    toward whichever side of the background range has room, never outside
    the range itself. Range-limited values back off the rail by an amount
    tied to the contrast draw so no two pastes land on the same constant.
    Returns the pasted value."""
    local = float(img[mask].mean()) if mask.any() else 0.5
    side = 1.0 if bg_hi - local > local - bg_lo else -1.0
    value = local + side * contrast
    lo, hi = min(bg_lo, local), max(bg_hi, local)
    if value > hi:
        value = hi - 0.003 * contrast
    elif value < lo:
        value = lo + 0.003 * contrast
    img[mask] = value
    return float(value)


def _add_clutter(img: np.ndarray, size: int, rng) -> None:
    """Thin anatomy-like structures present in every image regardless of
    class: wavy 1-2 px polylines (rib/vessel analogs) and pixel speckles.
    Clutter carries faint per-pixel texture so no clutter region is ever
    exactly flat; locally constant regions stay specific to pasted
    objects."""
    bg_lo = float(img.min()) + 0.02
    bg_hi = float(img.max()) - 0.02
    yy, xx = np.mgrid[0:size, 0:size]

    def rough_paste(mask: np.ndarray, contrast: float) -> None:
        _paste(img, mask, contrast, bg_lo, bg_hi)
        img[mask] = _soft_limit(
            img[mask] + rng.normal(0.0, 0.012, int(mask.sum())))

    for _ in range(int(rng.integers(2, 5))):
        steps = int(rng.integers(30, 70))
        y = rng.uniform(4, size - 4)
        x = rng.uniform(4, size - 4)
        ang = rng.uniform(0, 2 * math.pi)
        wobble = rng.uniform(0.08, 0.25)
        rad = rng.uniform(0.6, 1.1)
        mask = np.zeros_like(img, dtype=bool)
        for _step in range(steps):
            ang += rng.normal(0.0, wobble)
            y = min(max(y + math.sin(ang), 1.0), size - 2.0)
            x = min(max(x + math.cos(ang), 1.0), size - 2.0)
            mask |= (yy - y) ** 2 + (xx - x) ** 2 <= rad * rad
        rough_paste(mask, float(rng.uniform(0.42, 0.55)))
    n_speckles = int(rng.integers(10, 26))
    sy = rng.integers(1, size - 1, size=n_speckles)
    sx = rng.integers(1, size - 1, size=n_speckles)
    for y, x in zip(sy, sx):
        mask = np.zeros_like(img, dtype=bool)
        mask[y:y + int(rng.integers(1, 3)), x:x + int(rng.integers(1, 3))] = True
        rough_paste(mask, float(rng.uniform(0.42, 0.55)))


def synth_foreign_object(spec: SynthSpec, positive: bool, rng) -> SampleRecord:
    """Blob-textured grayscale field with thin anatomy-like clutter in every
    image; positives additionally get 1..spec.object_count[1] solid compact
    shapes (disks, squares, bars) with an engraved checker finish. The class
    is carried by local structure — solid textured cores versus smooth
    fields and thin clutter — not by first-order intensity statistics.
    Background and clutter draw from one child stream and objects from
    another, so a positive and a negative generated from identically seeded
    rngs differ exactly on the object support."""
    if spec.task != "foreign_object":
        raise ValueError(f"spec task is {spec.task!r}")
    rng_bg, rng_obj = rng.spawn(2)
    img = _blob_background(spec.size, spec.background_blobs, spec.noise_sigma, rng_bg)
    _add_clutter(img, spec.size, rng_bg)
    objects = []
    support = np.zeros((spec.size, spec.size), dtype=bool)
    if positive:
        lo, hi = spec.object_count
        count = int(rng_obj.integers(lo, hi + 1))
        r_lo, r_hi = spec.object_radius
        # solid cores need a few pixels of girth; cap total support when
        # several objects land so the class signal stays local
        r_lo = max(5, r_lo)
        r_hi = max(r_lo, r_hi - (count - 1))
        # objects stay inside the image's own dynamic range so extrema
        # carry no label information
        bg_lo = float(img.min()) + 0.02
        bg_hi = float(img.max()) - 0.02
        for _ in range(count):
            r = float(rng_obj.integers(r_lo, r_hi + 1))
            kind = ("disk", "square", "bar")[int(rng_obj.integers(0, 3))]
            horizontal = bool(rng_obj.integers(0, 2))
            if kind == "disk":
                extent = r
            elif kind == "square":
                extent = 0.7 * r * math.sqrt(2.0)
            else:
                extent = math.hypot(1.6 * r, max(3.5, 0.45 * r))
            margin = extent + 2
            cy = float(rng_obj.uniform(margin, spec.size - margin))
            cx = float(rng_obj.uniform(margin, spec.size - margin))
            if kind == "disk":
                mask = _disk_mask(spec.size, cy, cx, r)
            elif kind == "square":
                mask = _square_mask(spec.size, cy, cx, 0.7 * r)
            else:
                mask = _bar_mask(spec.size, cy, cx, 1.6 * r,
                                 max(3.5, 0.45 * r), horizontal)
            value, amp = _textured_paste(img, mask,
                                         float(rng_obj.uniform(0.42, 0.55)),
                                         bg_lo, bg_hi)
            support |= mask
            objects.append({"kind": kind, "cy": cy, "cx": cx, "r": r,
                            "extent": float(extent), "value": value,
                            "amp": amp, "pixels": int(mask.sum())})
    return SampleRecord(
        source="synth:foreign_object", label=int(positive), image=img,
        meta={"objects": objects,
              "object_pixels": sum(o["pixels"] for o in objects),
              "support_pixels": int(support.sum())})


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float,
                  angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dy * math.cos(angle) + dx * math.sin(angle)
    v = -dy * math.sin(angle) + dx * math.cos(angle)
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def synth_lvot(spec: SynthSpec, positive: bool, rng) -> SampleRecord:
    """Dark field with four bright elliptical chambers; positives add a
    fifth smaller ellipse near the center. A mild random contrast reduction
    always applies; with spec.blur a small motion-blur kernel is convolved
    last, so blur-on and blur-off images at the same seed differ exactly by
    that convolution (kernel recorded in meta)."""
    if spec.task != "lvot":
        raise ValueError(f"spec task is {spec.task!r}")
    rng_bg, rng_obj = rng.spawn(2)
    size = spec.size
    img = np.clip(0.10 + rng_bg.normal(0.0, spec.noise_sigma, size=(size, size)), 0.0, 1.0)
    chambers = []
    nominal = ((0.34, 0.35), (0.36, 0.66), (0.68, 0.38), (0.66, 0.67))
    for ny, nx in nominal:
        cy = size * (ny + float(rng_obj.uniform(-0.03, 0.03)))
        cx = size * (nx + float(rng_obj.uniform(-0.03, 0.03)))
        ry = size * float(rng_obj.uniform(0.09, 0.14))
        rx = size * float(rng_obj.uniform(0.09, 0.14))
        angle = float(rng_obj.uniform(0, math.pi))
        value = float(rng_obj.uniform(0.55, 0.80))
        img[_ellipse_mask(size, cy, cx, ry, rx, angle)] = value
        chambers.append({"cy": cy, "cx": cx, "ry": ry, "rx": rx,
                         "angle": angle, "value": value})
    lvot = None
    if positive:
        cy = size * (0.5 + float(rng_obj.uniform(-0.04, 0.04)))
        cx = size * (0.5 + float(rng_obj.uniform(-0.04, 0.04)))
        ry = size * float(rng_obj.uniform(0.05, 0.08))
        rx = size * float(rng_obj.uniform(0.05, 0.08))
        angle = float(rng_obj.uniform(0, math.pi))
        value = float(rng_obj.uniform(0.85, 0.95))
        img[_ellipse_mask(size, cy, cx, ry, rx, angle)] = value
        lvot = {"cy": cy, "cx": cx, "ry": ry, "rx": rx, "angle": angle, "value": value}
    # supplementary-style degradations: always a mild contrast squeeze ...
    squeeze = float(rng_obj.uniform(0.80, 1.00))
    img = img.mean() + (img - img.mean()) * squeeze
    img = np.clip(img, 0.0, 1.0)
    kernel = None
    if spec.blur:
        # ... and, behind the flag, a short motion streak applied last
        k = np.zeros((3, 3))
        direction = int(rng_obj.integers(0, 2))
        if direction == 0:
            k[1, :] = 1.0
        else:
            np.fill_diagonal(k, 1.0)
        kernel = k / k.sum()
        img = ndimage.convolve(img, kernel, mode="nearest")
    return SampleRecord(
        source="synth:lvot", label=int(positive), image=img,
        meta={"chambers": chambers, "lvot": lvot,
              "blur_kernel": None if kernel is None else kernel.tolist()})


def generate_record(spec: SynthSpec, positive: bool, rng) -> SampleRecord:
    if spec.task == "foreign_object":
        return synth_foreign_object(spec, positive, rng)
    return synth_lvot(spec, positive, rng)


def slice_volume(v: Volume) -> list:
    """Depth-ordered list of 2-D slices; per-volume labels are inherited by
    every slice (that is what multiplies the sample count)."""
    return [v.slices[d] for d in range(v.slices.shape[0])]


# ------------------------------------------------------------------- IO


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary 8-bit PGM (P5), maxval 255, from a [h, w] image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM wants [h, w] grayscale, got {img.shape}")
    data = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_ppm(path: str, image: np.ndarray) -> None:
    """Binary 8-bit PPM (P6), maxval 255, from a [h, w, 3] image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM wants [h, w, 3] color, got {img.shape}")
    data = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def _read_header_tokens(f, count: int) -> list:
    """Whitespace-separated header ints, '#' comments skipped."""
    tokens = []
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated image header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            continue
        tok = b""
        while ch and not ch.isspace():
            tok += ch
            ch = f.read(1)
        tokens.append(int(tok))
    return tokens


def read_image(path: str) -> np.ndarray:
    """Read binary PGM/PPM into floats in [0, 1] ([h, w] or [h, w, 3])."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: unsupported magic {magic!r}")
        w, h, maxval = _read_header_tokens(f, 3)
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        channels = 1 if magic == b"P5" else 3
        raw = f.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(h, w) if channels == 1 else arr.reshape(h, w, 3)


def load_manifest(path: str) -> list:
    """CSV manifest (header: path,label,split) with images loaded eagerly.
    Paths are relative to the manifest's directory. Errors name the
    offending data row (header is row 1)."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise ValueError(f"manifest header must be path,label,split, got {header}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"manifest row {i}: expected 3 fields, got {len(row)}")
            rel, label_s, split = row
            if label_s not in ("0", "1"):
                raise ValueError(f"manifest row {i}: label must be 0 or 1, got {label_s!r}")
            if split not in SPLITS:
                raise ValueError(f"manifest row {i}: bad split {split!r}")
            img_path = os.path.join(base, rel)
            if not os.path.exists(img_path):
                raise ValueError(f"manifest row {i}: missing file {rel}")
            records.append(SampleRecord(source=rel, label=int(label_s), split=split,
                                        image=read_image(img_path)))
    return records


def split_counts(records) -> dict:
    counts = {s: 0 for s in SPLITS}
    for r in records:
        counts[r.split] += 1
    return counts


# ------------------------------------------------------------ processing


def histogram_equalize(image: np.ndarray) -> np.ndarray:
    """CDF remap over 256 bins; preserves pixel ordering. A constant image
    maps to 1.0 (top of its own degenerate CDF)."""
    img = np.asarray(image, dtype=np.float64)
    levels = np.clip(np.round(img * 255), 0, 255).astype(int)
    hist = np.bincount(levels.reshape(-1), minlength=256)
    cdf = np.cumsum(hist) / levels.size
    return cdf[levels]


# ------------------------------------------------------------- benchmark


def make_benchmark(spec: SynthSpec, n_train: int, n_val: int, n_test: int,
                   out_dir: str, workers: int = 1) -> str:
    """Balanced synthetic dataset on disk; returns the manifest path.

    Each record's rng derives from (spec.seed, split, index), so output
    bytes depend only on the spec, not on worker count or schedule.
    """
    for n in (n_train, n_val, n_test):
        if n < 2 or n % 2:
            raise ValueError("split sizes must be even and >= 2 (balanced classes)")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    jobs = []
    for split_idx, (split, n) in enumerate(zip(SPLITS, (n_train, n_val, n_test))):
        for i in range(n):
            positive = i % 2 == 0
            jobs.append((split_idx, split, i, positive))

    def build(job):
        split_idx, split, i, positive = job
        rng = np.random.default_rng([spec.seed, split_idx, i])
        rec = generate_record(spec, positive, rng)
        rec.split = split
        return rec

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            built = list(ex.map(build, jobs))
    else:
        built = [build(j) for j in jobs]

    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for (split_idx, split, i, positive), rec in zip(jobs, built):
            rel = os.path.join("images", f"{split}_{i:04d}_{'p' if positive else 'n'}.pgm")
            write_pgm(os.path.join(out_dir, rel), rec.image)
            writer.writerow([rel, rec.label, split])
    return manifest_path


# -------------------------------------------------------------- baseline


def threshold_baseline(train_records, eval_records) -> float:
    """Accuracy (percent) of the best single global-statistic threshold.

    Fits over features {mean, std, max, min} x all candidate thresholds x
    both polarities on the training split; reports eval accuracy. This is
    the sanity bar a spatial model must clearly beat.
    """
    feats = {
        "mean": lambda im: float(im.mean()),
        "std": lambda im: float(im.std()),
        "max": lambda im: float(im.max()),
        "min": lambda im: float(im.min()),
    }

    def table(records, fn):
        vals = np.array([fn(r.image) for r in records])
        labels = np.array([r.label for r in records])
        return vals, labels

    best = (0.0, None)
    for name, fn in feats.items():
        vals, labels = table(train_records, fn)
        order = np.sort(np.unique(vals))
        cuts = np.concatenate([[order[0] - 1], (order[:-1] + order[1:]) / 2,
                               [order[-1] + 1]])
        for cut in cuts:
            for polarity in (1, 0):
                pred = (vals > cut).astype(int) if polarity else (vals <= cut).astype(int)
                acc = float((pred == labels).mean())
                if acc > best[0]:
                    best = (acc, (name, float(cut), polarity))
    name, cut, polarity = best[1]
    vals, labels = table(eval_records, feats[name])
    pred = (vals > cut).astype(int) if polarity else (vals <= cut).astype(int)
    return float((pred == labels).mean()) * 100.0
