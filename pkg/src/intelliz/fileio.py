"""Binary file formats and WAV I/O.

All integers are little-endian u32 unless noted; all payload reals are
little-endian float32.

Mel file::

    b"IZMEL1" | T | M | hop | sample_rate | T*M float32 (row-major)

Mask file::

    b"IZMSK1" | T | T bytes, each 0 or 1

Embedding file::

    b"IZEMB1" | d | d float32

Checkpoint file::

    b"IZCKPT1"
    meta_len | meta_len bytes of UTF-8 JSON (free-form metadata)
    n_entries
    n_entries times: u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dims
    payloads: each entry's values as float32, concatenated in manifest order

Every writer goes through a temp file in the destination directory followed
by ``os.replace``, so a failed write never leaves a partial file behind.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import wave
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .dsp import AperiodicityMask, AudioBuffer, MelSpectrogram
from .errors import AudioFormatError, FileFormatError

MEL_MAGIC = b"IZMEL1"
MASK_MAGIC = b"IZMSK1"
EMB_MAGIC = b"IZEMB1"
CKPT_MAGIC = b"IZCKPT1"


@contextmanager
def atomic_write(path):
    """Yield a binary file handle; the target appears only on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FileFormatError(f"truncated file while reading {what}")
    return buf


def _check_magic(fh, magic, path):
    got = fh.read(len(magic))
    if got != magic:
        raise FileFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


# -- WAV ---------------------------------------------------------------------

def read_wav(path) -> AudioBuffer:
    """Read a mono PCM16 WAV; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV ({w.getcomptype()}) not supported")
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            sr = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from None
    except EOFError:
        raise AudioFormatError(f"{path}: truncated WAV file") from None
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, sr)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round-trip samples through PCM16 so in-memory audio matches disk."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    return pcm.astype(np.float64) / 32768.0


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with atomic_write(path) as fh:
        with wave.open(fh, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(audio.sample_rate)
            w.writeframes(pcm.tobytes())


# -- mel / mask / embedding --------------------------------------------------

def write_mel(path, mel: MelSpectrogram):
    T, M = mel.frames.shape
    with atomic_write(path) as fh:
        fh.write(MEL_MAGIC)
        fh.write(struct.pack("<4I", T, M, mel.hop_size, mel.sample_rate))
        fh.write(mel.frames.astype("<f4").tobytes())


def read_mel(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        _check_magic(fh, MEL_MAGIC, path)
        T, M, hop, sr = struct.unpack("<4I", _read_exact(fh, 16, "mel header"))
        data = np.frombuffer(_read_exact(fh, 4 * T * M, "mel payload"), dtype="<f4")
    return MelSpectrogram(data.reshape(T, M).astype(np.float64), hop, sr)


def write_mask(path, mask: AperiodicityMask):
    with atomic_write(path) as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<I", len(mask)))
        fh.write(mask.bits.astype(np.uint8).tobytes())


def read_mask(path) -> AperiodicityMask:
    with open(path, "rb") as fh:
        _check_magic(fh, MASK_MAGIC, path)
        (T,) = struct.unpack("<I", _read_exact(fh, 4, "mask header"))
        bits = np.frombuffer(_read_exact(fh, T, "mask payload"), dtype=np.uint8)
    try:
        return AperiodicityMask(bits.copy())
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def write_embedding(path, v: np.ndarray):
    v = np.asarray(v).reshape(-1)
    with atomic_write(path) as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", v.size))
        fh.write(v.astype("<f4").tobytes())


def read_embedding(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, EMB_MAGIC, path)
        (d,) = struct.unpack("<I", _read_exact(fh, 4, "embedding header"))
        data = np.frombuffer(_read_exact(fh, 4 * d, "embedding payload"), dtype="<f4")
    return data.astype(np.float64)


# -- checkpoints -------------------------------------------------------------

def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    names = list(tensors)
    with atomic_write(path) as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.asarray(tensors[name])
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors as float64, metadata)."""
    with open(path, "rb") as fh:
        _check_magic(fh, CKPT_MAGIC, path)
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "meta length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FileFormatError(f"{path}: corrupt checkpoint metadata ({exc})") from None
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        manifest = []
        for _ in range(n):
            (nl,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nl, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            manifest.append((name, shape))
        tensors = {}
        for name, shape in manifest:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count, f"payload of {name}"), dtype="<f4")
            tensors[name] = data.reshape(shape).astype(np.float64)
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after checkpoint payload")
    return tensors, meta
