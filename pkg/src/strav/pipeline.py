"""Frame-by-frame orchestration of the whole inpainting flow.

For every frame, in temporal order:

    pad -> downsample -> joint align -> temporal aggregation
        -> spatial aggregation -> residual aggregation -> unpad -> write

All heavy work runs at the processing resolution (``1/s`` of the input).
Full-resolution frames are only touched to read the target, to sample
reference residuals around the hole, and to write the result; they are
never cached.  Completed frames go back into the reference pool and replace
their raw versions as references (their holes are filled by then).
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import io as fio
from .alignment import Reference, joint_align
from .core import (
    DTYPE,
    InvalidInputError,
    NoUsableReference,
    PadRecord,
    SpatialContextUnavailable,
    as_frame,
    as_mask,
    binarize,
    from_uint8,
    pad_to_multiple,
    to_uint8,
    unpad,
)
from .features import DEFAULT_LEVELS, encode
from .losses import LossWeights, SequenceSample, compute_all, total
from .metrics import MetricReport, sequence_report, write_csv
from .pyramid import downsample, downsample_mask, push_pull_fill
from .residual import HighResAssembly, LazyFrame, ResidualSource, assemble
from .spatial import SpatialAttention, blend_for_refine, spatial_attention, spatial_transfer
from .temporal import DEFAULT_TEMPERATURE, TemporalResult, compute_attention, temporal_inpaint

log = logging.getLogger(__name__)

VALID_SCALES = (1, 2, 4, 8)
ALIGNMENT_MODES = ("joint", "affine", "flow")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    scale: int = 4
    reference_window: int = 20
    flow_radius: int = 2
    tau: float = DEFAULT_TEMPERATURE
    tau_s: float = 0.5
    patch: int = 8
    visible_threshold: float = 1e-3
    emit_intermediates: bool = False
    levels: int = DEFAULT_LEVELS
    workers: int = 1
    alignment: str = "joint"

    def __post_init__(self):
        if self.alignment not in ALIGNMENT_MODES:
            raise InvalidInputError(f"alignment must be one of {ALIGNMENT_MODES}")
        if self.scale not in VALID_SCALES:
            raise InvalidInputError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        if self.reference_window < 1:
            raise InvalidInputError("reference_window must be at least 1")
        if self.flow_radius < 0:
            raise InvalidInputError("flow_radius must be nonnegative")
        if self.tau <= 0 or self.tau_s <= 0:
            raise InvalidInputError("temperatures must be positive")
        if self.patch < 1 or self.levels < 1 or self.workers < 1:
            raise InvalidInputError("patch, levels and workers must be positive")
        if not 0 <= self.visible_threshold < 1:
            raise InvalidInputError("visible_threshold must lie in [0, 1)")

    @property
    def multiple(self):
        """Full-resolution dims are padded to a multiple of this."""
        low = self.patch * 2 ** (self.levels - 1) // math.gcd(self.patch, 2 ** (self.levels - 1))
        return self.scale * low

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_file(cls, path, **overrides):
        values = parse_config_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _convert(name, typ, raw, lineno):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is str:
            return raw
        return float(raw)
    except ValueError:
        raise InvalidInputError(f"line {lineno}: bad value {raw!r} for {name}") from None


def parse_config_file(path):
    """Read flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[str(f.type)] for f in fields(PipelineConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"line {lineno}: expected 'key = value'")
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise InvalidInputError(f"line {lineno}: unknown key {key!r}")
            out[key] = _convert(key, types[key], raw, lineno)
    return out


# --------------------------------------------------------------------------
# frame sources, sinks and the reference pool


class AllocationCounter:
    """Counts live arrays by kind and remembers the peak of each."""

    def __init__(self):
        self._lock = threading.Lock()
        self.live = {}
        self.peak = {}

    def acquire(self, kind, n=1):
        with self._lock:
            self.live[kind] = self.live.get(kind, 0) + n
            self.peak[kind] = max(self.peak.get(kind, 0), self.live[kind])

    def release(self, kind, n=1):
        with self._lock:
            self.live[kind] = self.live.get(kind, 0) - n


class ArraySource:
    """In-memory frames and masks."""

    def __init__(self, frames, masks, names=None):
        if len(frames) != len(masks) or not len(frames):
            raise InvalidInputError("need the same nonzero number of frames and masks")
        self._frames = frames
        self._masks = masks
        self.names = list(names) if names else fio.frame_names(len(frames))

    def __len__(self):
        return len(self._frames)

    def frame(self, i):
        return as_frame(self._frames[i], f"frame {i}")

    def mask(self, i):
        return binarize(as_mask(self._masks[i], np.shape(self._frames[i]), f"mask {i}"))

    def view(self, i):
        """Unpadded frame and mask arrays without copying the frame."""
        return np.asarray(self._frames[i]), self.mask(i)


class DirectorySource:
    def __init__(self, frames_dir, masks_dir):
        self.frames_dir = frames_dir
        self.masks_dir = masks_dir
        self.names = fio.matched_names(frames_dir, masks_dir)

    def __len__(self):
        return len(self.names)

    def frame(self, i):
        return fio.read_frame(os.path.join(self.frames_dir, self.names[i]))

    def mask(self, i):
        return fio.read_mask(os.path.join(self.masks_dir, self.names[i]))


class MemorySink:
    """Keeps finished frames as 8-bit arrays, like a written PNG would."""

    def __init__(self, names):
        self.names = names
        self._data = {}

    def put(self, i, frame):
        self._data[i] = to_uint8(frame)

    def get(self, i):
        return from_uint8(self._data[i])

    def outputs(self):
        return [self.get(i) for i in sorted(self._data)]

    def view(self, i):
        return self._data[i]


class DirectorySink:
    def __init__(self, directory, names):
        self.directory = directory
        self.names = names
        os.makedirs(directory, exist_ok=True)

    def path(self, i):
        return os.path.join(self.directory, self.names[i])

    def put(self, i, frame):
        fio.write_frame(self.path(i), frame)

    def get(self, i):
        return fio.read_frame(self.path(i))


@dataclass
class _LowRes:
    frame: np.ndarray
    mask: np.ndarray
    completed: bool


class ReferencePool:
    """Low-resolution frames for the current reference window.

    Entries are created on first use from the (padded) raw frame and replaced
    by the completed frame once it has been processed.  Entries that can no
    longer fall inside any later window are evicted.
    """

    def __init__(self, source, sink, cfg, counter):
        self.source = source
        self.sink = sink
        self.cfg = cfg
        self.counter = counter
        self._cache = {}
        self._done = set()
        # full-resolution frames of directory jobs, decoded once into 8-bit
        # .npy files and memory-mapped so residual lookups read only a crop
        self._tmp = None
        self._stored = {}

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None
        self._stored.clear()

    def _store(self, key, arr):
        if self._tmp is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="strav-")
        path = os.path.join(self._tmp.name, key + ".npy")
        np.save(path, arr)
        self._stored[key] = path

    def _open(self, key):
        path = self._stored.get(key)
        return None if path is None else np.load(path, mmap_mode="r")

    def _remember_raw(self, i, f, m):
        if hasattr(self.source, "view") or f"raw{i}" in self._stored:
            return
        self._store(f"raw{i}", to_uint8(f))
        self._store(f"mask{i}", np.where(m > 0.5, 255, 0).astype(np.uint8))

    def view(self, i):
        """Lazily cropped full-resolution frame ``i`` (completed if available) and its mask."""
        if i in self._done:
            data = self.sink.view(i) if hasattr(self.sink, "view") else self._open(f"out{i}")
            if data is None:
                data = to_uint8(self.sink.get(i))
            return LazyFrame(data, self._padded(data)), None
        if hasattr(self.source, "view"):
            f, m = self.source.view(i)
        else:
            f, m = self._open(f"raw{i}"), self._open(f"mask{i}")
            if f is None:
                f, m = self.source.frame(i), self.source.mask(i)
                self._remember_raw(i, f, m)
                f, m = self._open(f"raw{i}"), self._open(f"mask{i}")
        shape = self._padded(f)
        return LazyFrame(f, shape), LazyFrame(m, shape, is_mask=True)

    def _padded(self, a):
        k = self.cfg.multiple
        return tuple(-(-d // k) * k for d in a.shape[:2])

    def __len__(self):
        return len(self._cache)

    def _pad(self, frame, mask=None):
        return pad_to_multiple(frame, self.cfg.multiple, mask)

    def load_full(self, i, padded=True):
        """Full-resolution frame ``i`` (completed if available) and its hole mask (zero once completed)."""
        self.counter.acquire("full")
        try:
            if i in self._done:
                f = self.sink.get(i)
                m = np.zeros(f.shape[:2], DTYPE)
            else:
                f = self.source.frame(i)
                m = self.source.mask(i)
        except Exception:
            self.counter.release("full")
            raise
        if i not in self._done:
            self._remember_raw(i, f, m)
        if padded:
            f, m, _ = self._pad(f, m)
        return f, m

    def low(self, i):
        entry = self._cache.get(i)
        if entry is None:
            f, m = self.load_full(i)
            s = self.cfg.scale
            entry = _LowRes(downsample(f, s), downsample_mask(m, s), i in self._done)
            del f, m
            self.counter.release("full")
            self._cache[i] = entry
            self.counter.acquire("low")
        return entry

    def complete(self, i, padded_output, output=None):
        self._done.add(i)
        if output is not None and not hasattr(self.sink, "view"):
            self._store(f"out{i}", to_uint8(output))
        s = self.cfg.scale
        if i in self._cache:
            self.counter.release("low")
        self._cache[i] = _LowRes(downsample(padded_output, s), np.zeros([d // s for d in padded_output.shape[:2]], DTYPE), True)
        self.counter.acquire("low")

    def neighbours(self, t):
        """The ``reference_window`` frames closest in time to ``t`` (earlier first on ties)."""
        others = [i for i in range(len(self.source)) if i != t]
        others.sort(key=lambda i: (abs(i - t), i))
        return sorted(others[:self.cfg.reference_window])

    def evict_before(self, t):
        """Drop entries no window centred at ``t`` or later can reach."""
        for i in [i for i in self._cache if i < t - self.cfg.reference_window]:
            del self._cache[i]
            self.counter.release("low")

    def residual_source(self, i):
        """Lazy residual lookups into full-resolution reference ``i``."""
        holder = {}

        def load():
            self.counter.acquire("full")
            f, m = self.view(i)
            holder["mask"] = m
            return f

        def release():
            holder.clear()
            self.counter.release("full")

        def mask():
            return holder.get("mask")

        return ResidualSource(load, self.cfg.scale, mask=mask, release=release)


# --------------------------------------------------------------------------
# per-frame processing


@dataclass
class FrameResult:
    output: np.ndarray                       # unpadded full-resolution result
    low_result: np.ndarray | None = None     # y_t2 at processing resolution
    low_hole: np.ndarray | None = None
    leftover: np.ndarray | None = None
    c_visible: np.ndarray | None = None
    temporal: TemporalResult | None = None
    spatial: SpatialAttention | None = None
    assembly: HighResAssembly | None = None
    pad: PadRecord = field(default_factory=PadRecord)
    fallback: bool = False
    skipped: bool = False

    def variant(self, name):
        """Unpadded full-res ``"bilinear"``, ``"temporal"`` or ``"full"`` assembly result."""
        if self.assembly is None:
            return self.output
        arr = {"bilinear": self.assembly.upsampled_base, "temporal": self.assembly.temporal_result,
               "full": self.assembly.result}[name]
        return unpad(arr, self.pad)


@dataclass
class JobState:
    source: object
    sink: object
    cfg: PipelineConfig
    counter: AllocationCounter = field(default_factory=AllocationCounter)
    pool: ReferencePool | None = None
    mapper: object = map
    intermediates_dir: str | None = None
    keep_assembly: bool = False

    def __post_init__(self):
        if self.pool is None:
            self.pool = ReferencePool(self.source, self.sink, self.cfg, self.counter)


def _spatial_refine(y_t1, x_low, hole, leftover, cfg):
    if not leftover.any():
        return y_t1, None
    f = blend_for_refine(y_t1, x_low, hole)
    try:
        att = spatial_attention(f, leftover, cfg.patch, cfg.tau_s)
    except SpatialContextUnavailable as exc:
        log.warning("spatial aggregation skipped: %s", exc)
        return f, None
    return spatial_transfer(f, leftover, att), att


def process_frame(t, state: JobState, cfg: PipelineConfig | None = None) -> FrameResult:
    """Inpaint frame ``t`` and feed the result back into the reference pool."""
    cfg = cfg or state.cfg
    pool = state.pool
    x, m = pool.load_full(t, padded=False)
    try:
        if not m.any():
            log.debug("frame %d has an empty mask; copied through", t)
            state.sink.put(t, x)
            pool.complete(t, pad_to_multiple(x, cfg.multiple)[0], x)
            return FrameResult(output=x, skipped=True)

        xp, mp, rec = pad_to_multiple(x, cfg.multiple, m)
        s = cfg.scale
        low = pool.low(t)
        x_low, m_low = low.frame, low.mask
        hole = binarize(m_low)

        refs = [Reference(pool.low(i).frame, pool.low(i).mask, i) for i in pool.neighbours(t)]
        temporal = None
        fallback = False
        try:
            aligned = joint_align(
                x_low, m_low, refs, target_index=t, flow_radius=cfg.flow_radius, mapper=state.mapper,
                use_affine=cfg.alignment != "flow", use_flow=cfg.alignment != "affine",
            )
            temporal = temporal_inpaint(
                x_low, m_low, aligned, encode, cfg.levels, cfg.tau, cfg.visible_threshold, state.mapper
            )
            y_t1, leftover, c_visible = temporal.y_t1, temporal.leftover, temporal.attention.c_visible
        except NoUsableReference as exc:
            log.warning("frame %d: %s; using the spatial-only path", t, exc)
            fallback = True
            aligned = []
            y_t1 = push_pull_fill(x_low, hole)
            leftover = hole
            c_visible = np.zeros_like(hole)

        y_t2, spatial = _spatial_refine(y_t1, x_low, hole, leftover, cfg)

        sources = [pool.residual_source(a.source_index) for a in aligned]
        assembly = assemble(
            xp, mp, y_t2, c_visible, s,
            temporal_weights=temporal.attention.weights if temporal is not None else None,
            alignments=[a.transform for a in aligned],
            ref_residuals=sources,
            spatial=spatial,
        )
        out = unpad(assembly.result, rec)
        state.sink.put(t, out)
        pool.complete(t, pad_to_multiple(out, cfg.multiple)[0], out)
        result = FrameResult(
            output=out, low_result=y_t2, low_hole=hole, leftover=leftover, c_visible=c_visible,
            temporal=temporal, spatial=spatial, assembly=assembly if state.keep_assembly else None,
            pad=rec, fallback=fallback,
        )
        if state.intermediates_dir:
            write_intermediates(state.intermediates_dir, state.source.names[t], result)
        return result
    finally:
        state.counter.release("full")


def write_intermediates(directory, name, result: FrameResult):
    """Low-res result, leftover, C_visible, attention maps and top-1 maps for one frame."""
    os.makedirs(directory, exist_ok=True)
    stem = os.path.splitext(name)[0]

    def p(tag):
        return os.path.join(directory, f"{stem}_{tag}.png")

    fio.write_frame(p("lowres"), result.low_result)
    fio.write_mask(p("leftover"), result.leftover)
    fio.write_gray(p("cvisible"), result.c_visible)
    att = result.temporal.attention if result.temporal is not None else None
    if att is not None:
        for k, w in enumerate(att.weights):
            fio.write_gray(p(f"attn{k:02d}"), w)
        top = att.top1()
        # index image: 0 = no donor, k + 1 = reference k of the attention list
        fio.write_gray(p("top1_temporal"), (top + 1) / max(1, len(att.weights)))
    if result.spatial is not None:
        cm = result.spatial.correspondence_map().astype(np.float64)
        n = max(1.0, float(np.prod(result.spatial.grid_shape)))
        fio.write_gray(p("top1_spatial"), np.repeat(np.repeat((cm + 1) / n, result.spatial.patch_size, 0),
                                                    result.spatial.patch_size, 1))


# --------------------------------------------------------------------------
# whole jobs


@dataclass
class VideoJob:
    frames_dir: str
    masks_dir: str
    output_dir: str
    gt_dir: str | None = None
    metrics_name: str = "metrics.csv"


def _run(state: JobState, n):
    results = []
    executor = None
    if state.cfg.workers > 1:
        executor = ThreadPoolExecutor(max_workers=state.cfg.workers)
        state.mapper = executor.map
    try:
        for t in range(n):
            try:
                r = process_frame(t, state)
            except OSError as exc:
                raise OSError(f"frame {t} ({state.source.names[t]}): {exc}") from exc
            state.pool.evict_before(t + 1)
            results.append(r if state.keep_assembly else dataclasses.replace(r, output=None, assembly=None))
    finally:
        if executor is not None:
            executor.shutdown()
            state.mapper = map
        state.pool.close()
    return results


def run(job: VideoJob, cfg: PipelineConfig = PipelineConfig()):
    """Process a frame-directory job; returns the metric report when ground truth is given."""
    source = DirectorySource(job.frames_dir, job.masks_dir)
    gt_names = None
    if job.gt_dir:
        gt_names = fio.list_images(job.gt_dir)
        if set(gt_names) != set(source.names):
            raise InvalidInputError("ground-truth names do not match the input frames")
    sink = DirectorySink(job.output_dir, source.names)
    inter = os.path.join(job.output_dir, "intermediates") if cfg.emit_intermediates else None
    state = JobState(source, sink, cfg, intermediates_dir=inter)
    _run(state, len(source))
    if not job.gt_dir:
        return None
    rows = []
    for name in source.names:
        a = fio.read_frame(os.path.join(job.output_dir, name))
        b = fio.read_frame(os.path.join(job.gt_dir, name))
        rows.append(sequence_report([a], [b]))
    report = MetricReport(*[float(np.mean([r.as_row()[k] for r in rows])) for k in range(3)],
                          per_frame=[r.per_frame[0] for r in rows])
    write_csv(report, os.path.join(job.output_dir, job.metrics_name), source.names)
    return report


def run_arrays(frames, masks, cfg: PipelineConfig = PipelineConfig(), ground_truths=None, keep_assembly=False):
    """In-memory variant of :func:`run`.

    Returns ``(outputs, report, state, results)``; outputs are 8-bit
    quantised like files written by :func:`run`.
    """
    source = ArraySource(frames, masks)
    sink = MemorySink(source.names)
    state = JobState(source, sink, cfg, keep_assembly=keep_assembly)
    results = _run(state, len(source))
    outputs = sink.outputs()
    report = sequence_report(outputs, ground_truths) if ground_truths is not None else None
    return outputs, report, state, results


# --------------------------------------------------------------------------
# loss evaluation


def evaluate_sequence_losses(frames, masks, ground_truths, outputs, cfg: PipelineConfig = PipelineConfig(),
                             weights: LossWeights = LossWeights()):
    """All eight loss terms and their weighted total for a finished sequence.

    Everything is evaluated at the processing resolution: references are
    jointly aligned to each frame, the temporal attention gives ``C_visible``
    and the leftover, and the outputs stand in for the generator output.
    """
    n = len(frames)
    if not (len(masks) == len(ground_truths) == len(outputs) == n) or n == 0:
        raise InvalidInputError("frames, masks, ground truths and outputs must have the same nonzero length")
    s = cfg.scale

    def low(f, m=None):
        fp, mp, _ = pad_to_multiple(f, cfg.multiple, m)
        return downsample(fp, s), (downsample_mask(mp, s) if mp is not None else None)

    lf, lm = zip(*[low(f, binarize(as_mask(m))) for f, m in zip(frames, masks)])
    lg = [low(g)[0] for g in ground_truths]
    lo = [low(o)[0] for o in outputs]
    aligned_per_t, c_vis, leftovers = [], [], []
    for t in range(n):
        near = sorted(sorted((i for i in range(n) if i != t), key=lambda i: (abs(i - t), i))[:cfg.reference_window])
        refs = [Reference(lf[i], lm[i], i) for i in near]
        hole = binarize(lm[t])
        try:
            aligned = joint_align(lf[t], lm[t], refs, target_index=t, flow_radius=cfg.flow_radius,
                                  use_affine=cfg.alignment != "flow", use_flow=cfg.alignment != "affine")
            att = compute_attention(lf[t], lm[t], aligned, encode, cfg.levels, cfg.tau, cfg.visible_threshold)
            cv = att.c_visible
        except NoUsableReference:
            aligned, cv = [], np.zeros_like(hole)
        aligned_per_t.append(aligned)
        c_vis.append(cv)
        leftovers.append(hole * (1 - cv))
    sample = SequenceSample(list(lf), list(lm), lg, lo)
    losses = compute_all(sample, aligned_per_t, c_vis, leftovers, lo)
    losses["total"] = total(losses, weights)
    return losses
