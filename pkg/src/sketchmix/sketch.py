"""Sketching operator: empirical sketches of data, analytic sketches of GMMs.

The empirical sketch is the vector ``z_j = (1/(n sqrt(m))) sum_i exp(-i w_j.x_i)``.
It is computed chunk by chunk and combined with a fixed-shape binary reduction
tree keyed to the chunk index, so the result is bit-identical no matter how
many workers computed the per-chunk partials (floating-point addition is not
associative, and reproducibility is part of the contract).  Sketches of
disjoint datasets merge by count-weighted averaging.
"""

from __future__ import annotations

import itertools
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .freqdesign import FrequencySet
from .model import Dataset, GaussianParams, Mixture

DEFAULT_CHUNK_SIZE = 65536

# Cap on the rows x m complex work buffer inside one chunk (number of
# entries); chunks are processed in row-order sub-blocks of this size.
_WORK_BUFFER_ENTRIES = 4_000_000


class FingerprintMismatch(ValueError):
    """Raised when a sketch is paired with the wrong frequency set."""


def worker_count() -> int:
    """Worker cap from SKETCHMIX_THREADS (0 or unset = automatic)."""
    raw = os.environ.get("SKETCHMIX_THREADS", "0")
    try:
        v = int(raw)
    except ValueError:
        v = 0
    if v > 0:
        return v
    return min(os.cpu_count() or 1, 8)


@dataclass(frozen=True)
class Sketch:
    """Sketch vector plus the item count and frequency fingerprint.

    Analytic sketches (computed from mixture parameters rather than data)
    carry ``count = 0`` and ``analytic = True``; they cannot be merged.
    """

    values: np.ndarray
    count: int
    freq_fingerprint: int
    analytic: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("sketch values must be a nonempty vector")
        if not self.analytic:
            if self.count == 0 and np.any(v != 0):
                raise ValueError("empty empirical sketch must be all zeros")
            if self.count > 0:
                bound = 1.0 / np.sqrt(v.size) + 1e-12
                if np.any(np.abs(v) > bound):
                    raise ValueError("empirical sketch entries exceed 1/sqrt(m)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size


def charfn_values(freqs: np.ndarray, mean: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Gaussian characteristic function at each frequency row."""
    return np.exp(-0.5 * ((freqs * freqs) @ variances) - 1j * (freqs @ mean))


def sketch_atom(p: GaussianParams, fs: FrequencySet):
    """Sketch of one Gaussian atom and its Euclidean norm.

    The norm can underflow all the way to 0.0 for extremely wide atoms; it is
    returned as-is and callers must guard before normalizing.
    """
    if p.dim != fs.d:
        raise ValueError("atom and frequency dimensions differ")
    values = charfn_values(fs.freqs, p.mean, p.variances) / np.sqrt(fs.m)
    return values, float(np.linalg.norm(values))


def sketch_gmm(mix: Mixture, fs: FrequencySet) -> Sketch:
    """Analytic sketch of a finalized mixture (no data involved)."""
    mix.require_finalized()
    if mix.dim != fs.d:
        raise ValueError("mixture and frequency dimensions differ")
    values = np.zeros(fs.m, dtype=np.complex128)
    for w, comp in zip(mix.weights, mix.components):
        values += w * charfn_values(fs.freqs, comp.mean, comp.variances)
    return Sketch(values / np.sqrt(fs.m), 0, fs.fingerprint, analytic=True)


def _chunk_partial(rows: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Un-normalized sum of exp(-i w.x) over the rows of one chunk."""
    m = freqs.shape[0]
    block = max(1, _WORK_BUFFER_ENTRIES // m)
    acc_re = np.zeros(m)
    acc_im = np.zeros(m)
    for start in range(0, rows.shape[0], block):
        phase = rows[start:start + block] @ freqs.T
        acc_re += np.cos(phase).sum(axis=0)
        acc_im -= np.sin(phase).sum(axis=0)
    return acc_re + 1j * acc_im


class SketchAccumulator:
    """Single-writer accumulator of un-normalized chunk partials.

    Partials are combined with a binary-counter reduction: the combine tree
    depends only on how many chunks have been pushed, never on timing, so
    feeding the same chunks in the same order always yields identical bits.
    """

    def __init__(self, fs: FrequencySet):
        self._fs = fs
        self._levels: list[np.ndarray | None] = []
        self.count = 0

    @property
    def freq_fingerprint(self) -> int:
        return self._fs.fingerprint

    def push_partial(self, partial: np.ndarray, rows: int):
        v = partial
        for i in range(len(self._levels)):
            if self._levels[i] is None:
                self._levels[i] = v
                break
            v = self._levels[i] + v  # earlier chunks stay on the left
            self._levels[i] = None
        else:
            self._levels.append(v)
        self.count += rows

    def absorb(self, rows: np.ndarray):
        """Compute and push the partial for one chunk of rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self._fs.d:
            raise ValueError("data and frequency dimensions differ")
        if rows.shape[0] == 0:
            return
        self.push_partial(_chunk_partial(rows, self._fs.freqs), rows.shape[0])

    @property
    def partial_sums(self) -> np.ndarray:
        total = None
        for level in reversed(self._levels):  # highest level = oldest chunks
            if level is None:
                continue
            total = level if total is None else total + level
        if total is None:
            return np.zeros(self._fs.m, dtype=np.complex128)
        return total

    def finalize(self) -> Sketch:
        if self.count == 0:
            return Sketch(np.zeros(self._fs.m, dtype=np.complex128), 0,
                          self._fs.fingerprint)
        values = self.partial_sums / (self.count * np.sqrt(self._fs.m))
        return Sketch(values, self.count, self._fs.fingerprint)


def _iter_chunks(samples: np.ndarray, chunk_size: int):
    for start in range(0, samples.shape[0], chunk_size):
        yield samples[start:start + chunk_size]


def sketch_chunks(chunks, fs: FrequencySet, workers: int | None = None) -> Sketch:
    """Sketch an iterable of row chunks (the streaming entry point)."""
    if workers is None:
        workers = worker_count()
    acc = SketchAccumulator(fs)
    chunks = iter(chunks)
    if workers <= 1:
        for chunk in chunks:
            acc.absorb(chunk)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while True:
                batch = [np.atleast_2d(np.asarray(b, dtype=np.float64))
                         for b in itertools.islice(chunks, workers)]
                if not batch:
                    break
                if any(b.shape[1] != fs.d for b in batch):
                    raise ValueError("data and frequency dimensions differ")
                for partial, rows in zip(
                        pool.map(_chunk_partial, batch,
                                 itertools.repeat(fs.freqs)),
                        [b.shape[0] for b in batch]):
                    acc.push_partial(partial, rows)
    return acc.finalize()


def sketch_empirical(data: Dataset, fs: FrequencySet,
                     chunk_size: int = DEFAULT_CHUNK_SIZE) -> Sketch:
    """Empirical sketch z_j = (1/(n sqrt(m))) sum_i exp(-i w_j.x_i)."""
    if data.d != fs.d:
        raise ValueError("data and frequency dimensions differ")
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    return sketch_chunks(_iter_chunks(data.samples, chunk_size), fs)


def sketch_merge(a: Sketch, b: Sketch) -> Sketch:
    """Count-weighted merge of two empirical sketches of disjoint data."""
    if a.analytic or b.analytic:
        raise ValueError("analytic sketches cannot be merged")
    if a.m != b.m:
        raise ValueError("sketch lengths differ")
    if a.freq_fingerprint != b.freq_fingerprint:
        raise FingerprintMismatch("sketches use different frequency sets")
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    total = a.count + b.count
    values = (a.count * a.values + b.count * b.values) / total
    return Sketch(values, total, a.freq_fingerprint)


# ---------------------------------------------------------------------------
# CLSKCH01: magic, u32 m, u64 count, u8 analytic_flag, u64 freq_fingerprint,
# m pairs (f64 re, f64 im).
# CLDATA01: magic, u32 d, u64 n, n*d f64 row-major.  CSV is also accepted for
# data ingestion (one row per sample).  All binary fields little-endian.
# ---------------------------------------------------------------------------

SKETCH_MAGIC = b"CLSKCH01"
DATA_MAGIC = b"CLDATA01"


def write_sketch(path, sk: Sketch):
    with open(path, "wb") as f:
        f.write(SKETCH_MAGIC)
        f.write(struct.pack("<IQBQ", sk.m, sk.count, int(sk.analytic),
                            sk.freq_fingerprint))
        pairs = np.empty((sk.m, 2), dtype="<f8")
        pairs[:, 0] = sk.values.real
        pairs[:, 1] = sk.values.imag
        f.write(pairs.tobytes(order="C"))


def read_sketch(path) -> Sketch:
    with open(path, "rb") as f:
        if f.read(8) != SKETCH_MAGIC:
            raise ValueError(f"{path}: not a CLSKCH01 file")
        m, count, analytic, fingerprint = struct.unpack("<IQBQ", f.read(21))
        pairs = np.frombuffer(f.read(16 * m), dtype="<f8").reshape(m, 2)
    return Sketch(pairs[:, 0] + 1j * pairs[:, 1], count, fingerprint,
                  analytic=bool(analytic))


def write_data(path, data: Dataset):
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(struct.pack("<IQ", data.d, data.n))
        f.write(data.samples.astype("<f8").tobytes(order="C"))


def data_file_shape(path) -> tuple[int, int]:
    """(n, d) of a CLDATA01 file without reading the payload."""
    with open(path, "rb") as f:
        if f.read(8) != DATA_MAGIC:
            raise ValueError(f"{path}: not a CLDATA01 file")
        d, n = struct.unpack("<IQ", f.read(12))
    return n, d


def _is_binary_data(path) -> bool:
    with open(path, "rb") as f:
        return f.read(8) == DATA_MAGIC


def stream_data(path, chunk_size: int = DEFAULT_CHUNK_SIZE):
    """Yield row chunks from a CLDATA01 or CSV file without loading it all."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    if _is_binary_data(path):
        with open(path, "rb") as f:
            f.read(8)
            d, n = struct.unpack("<IQ", f.read(12))
            remaining = n
            while remaining > 0:
                take = min(chunk_size, remaining)
                buf = f.read(8 * take * d)
                if len(buf) != 8 * take * d:
                    raise ValueError(f"{path}: truncated CLDATA01 payload")
                yield np.frombuffer(buf, dtype="<f8").reshape(take, d)
                remaining -= take
    else:
        with open(path, "r", encoding="utf-8") as f:
            while True:
                lines = list(itertools.islice(f, chunk_size))
                if not lines:
                    break
                yield np.loadtxt(lines, delimiter=",", ndmin=2)


def read_data(path) -> Dataset:
    """Load a whole data file (binary or CSV) into memory."""
    chunks = list(stream_data(path))
    return Dataset(np.concatenate(chunks, axis=0))
