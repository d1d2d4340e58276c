# File: integrations/optimizer_state_io.py
from pathlib import Path
from typing import Union

import numpy as np

from schemas.errors import CorruptPackage, VersionError
from services.differentiable_renderer import PARAMETER_GROUPS
from services.optimizer_service import AdamState

STATE_FILE = "optimizer_state.bin"
MAGIC = b"FRSTADAM"
STATE_VERSION = 1


def write_optimizer_state(path: Union[str, Path], state: AdamState) -> None:
    """Header (magic, version, step, group count), then per group: name, size, moments as f64."""
    chunks = [
        MAGIC,
        np.array([STATE_VERSION], dtype="<u4").tobytes(),
        np.array([state.step], dtype="<u8").tobytes(),
        np.array([len(PARAMETER_GROUPS)], dtype="<u4").tobytes(),
    ]
    for name in PARAMETER_GROUPS:
        encoded = name.encode("ascii")
        first = np.asarray(state.exp_avg[name], dtype="<f8").reshape(-1)
        second = np.asarray(state.exp_avg_sq[name], dtype="<f8").reshape(-1)
        chunks += [
            np.array([len(encoded)], dtype="<u2").tobytes(),
            encoded,
            np.array([first.size], dtype="<u8").tobytes(),
            first.tobytes(),
            second.tobytes(),
        ]
    Path(path).write_bytes(b"".join(chunks))


class _Cursor:
    def __init__(self, raw: bytes, path: str):
        self.raw, self.path, self.pos = raw, path, 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise CorruptPackage("optimizer state ends early", path=self.path, offset=self.pos)
        chunk = self.raw[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def number(self, dtype: str) -> int:
        size = np.dtype(dtype).itemsize
        return int(np.frombuffer(self.take(size), dtype=dtype)[0])


def read_optimizer_state(path: Union[str, Path]) -> AdamState:
    path = str(path)
    cursor = _Cursor(Path(path).read_bytes(), path)
    if cursor.take(len(MAGIC)) != MAGIC:
        raise CorruptPackage("not an optimizer state file", path=path, offset=0)
    version = cursor.number("<u4")
    if version > STATE_VERSION:
        raise VersionError(str(version), str(STATE_VERSION), path=path)
    step = cursor.number("<u8")
    exp_avg, exp_avg_sq = {}, {}
    for _ in range(cursor.number("<u4")):
        name = cursor.take(cursor.number("<u2")).decode("ascii")
        size = cursor.number("<u8")
        exp_avg[name] = np.frombuffer(cursor.take(8 * size), dtype="<f8").astype(np.float64)
        exp_avg_sq[name] = np.frombuffer(cursor.take(8 * size), dtype="<f8").astype(np.float64)
    return AdamState(step=step, exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)
