"""Encoder + decoder bundle and the binary checkpoint format.

Checkpoint layout (all integers little-endian):

    magic            8 bytes  b"RNNGVAE\\0"
    format version   uint32
    config length    uint32, then that many bytes of ``key = value`` text
    n params         uint32
    per param:       name length uint16, name utf-8, ndim uint8, dims uint32 each
    param blobs      float32 little-endian, in header order
    pretrained       ndim/dims as above, then float32 blob (frozen vectors)
    vocab length     uint32, then the serialized vocabulary text
"""
from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .decoder import Decoder
from .encoder import Encoder
from .layers import ParamStore
from .treebank import Vocab

MAGIC = b"RNNGVAE\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named, reproducible random stream derived from the run seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode()), *extra])


class RNNGVAE:
    def __init__(self, config: TrainConfig, vocab: Vocab, pretrained: np.ndarray | None = None):
        self.config = config
        self.vocab = vocab
        self.dtype = np.dtype(config.dtype)
        n_words, n_nt, n_pos = len(vocab.words), len(vocab.nonterminals), len(vocab.pos_tags)
        if pretrained is None:
            pretrained = np.zeros((n_words, config.pretrained_dim))
        if pretrained.shape != (n_words, config.pretrained_dim):
            raise ValueError(f"pretrained table has shape {pretrained.shape}, "
                             f"expected {(n_words, config.pretrained_dim)}")
        self.pretrained = pretrained.astype(self.dtype)
        self.store = ParamStore(substream(config.seed, "init"), self.dtype)
        self.encoder = Encoder(config, n_words, n_nt, n_pos, self.store, self.pretrained)
        self.decoder = Decoder(config, n_words, n_nt, self.store, self.pretrained)

    @property
    def params(self):
        return list(self.store)

    def zero_grad(self):
        self.store.zero_grad()

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", FORMAT_VERSION))
        cfg = self.config.to_text().encode()
        buf.write(struct.pack("<I", len(cfg)))
        buf.write(cfg)
        items = list(self.store.items())
        buf.write(struct.pack("<I", len(items)))
        for name, p in items:
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            _write_shape(buf, p.value.shape)
        for _, p in items:
            buf.write(p.value.astype("<f4").tobytes())
        _write_shape(buf, self.pretrained.shape)
        buf.write(self.pretrained.astype("<f4").tobytes())
        vocab = self.vocab.to_text().encode()
        buf.write(struct.pack("<I", len(vocab)))
        buf.write(vocab)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, config: TrainConfig | None = None) -> "RNNGVAE":
        buf = io.BytesIO(data)
        if buf.read(8) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", buf.read(4))
        stored = TrainConfig.from_text(buf.read(n).decode())
        if config is not None:
            _check_dims(stored, config)
        else:
            config = stored
        (count,) = struct.unpack("<I", buf.read(4))
        header = []
        for _ in range(count):
            (ln,) = struct.unpack("<H", buf.read(2))
            header.append((buf.read(ln).decode(), _read_shape(buf)))
        blobs = {}
        for name, shape in header:
            size = int(np.prod(shape)) * 4
            blobs[name] = np.frombuffer(buf.read(size), dtype="<f4").reshape(shape)
        pshape = _read_shape(buf)
        pretrained = np.frombuffer(buf.read(int(np.prod(pshape)) * 4), dtype="<f4").reshape(pshape)
        (ln,) = struct.unpack("<I", buf.read(4))
        vocab = Vocab.from_text(buf.read(ln).decode())
        model = cls(config, vocab, pretrained.astype(np.float64))
        if set(blobs) != set(model.store.params):
            missing = set(model.store.params) ^ set(blobs)
            raise CheckpointError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for name, p in model.store.items():
            if blobs[name].shape != p.value.shape:
                raise CheckpointError(f"{name}: checkpoint shape {blobs[name].shape}, "
                                      f"model expects {p.value.shape}")
            p.value[...] = blobs[name]
        return model

    @classmethod
    def load(cls, path, config: TrainConfig | None = None) -> "RNNGVAE":
        return cls.from_bytes(Path(path).read_bytes(), config)


_DIM_KEYS = ("learned_dim", "pretrained_dim", "pos_dim", "enc_lstm_dim", "dec_lstm_dim",
             "lstm_layers", "nt_dim", "attention_dim", "enc_mlp_dim", "dec_mlp_dim")


def _check_dims(stored: TrainConfig, config: TrainConfig):
    for key in _DIM_KEYS:
        a, b = getattr(stored, key), getattr(config, key)
        if a != b:
            raise CheckpointError(f"dimension mismatch for {key}: checkpoint {a}, config {b}")


def _write_shape(buf, shape):
    buf.write(struct.pack("<B", len(shape)))
    for d in shape:
        buf.write(struct.pack("<I", d))


def _read_shape(buf):
    (ndim,) = struct.unpack("<B", buf.read(1))
    return tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
