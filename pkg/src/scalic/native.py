"""Adapter for the native entropy coder over its foreign-function boundary.

The native coder ships separately (see ``frontend/``); it exposes three calls
(build_tables, encode, decode) over flat integer buffers via a subprocess
with a binary stdin/stdout protocol. The Python fallback in :mod:`.rans`
implements the identical byte format, so streams are interchangeable.
"""

from __future__ import annotations

import struct
import subprocess
from pathlib import Path

import numpy as np

from .rans import CodedBuffer

DEFAULT_CLI = Path(__file__).resolve().parents[2] / "frontend" / "dist" / "src" / "cli.js"


class NativeCoder:
    def __init__(self, cli_path: str | Path = DEFAULT_CLI, node: str = "node"):
        self.cli_path = Path(cli_path)
        self.node = node

    def available(self) -> bool:
        return self.cli_path.exists()

    def _run(self, request: bytes) -> bytes:
        proc = subprocess.run(
            [self.node, str(self.cli_path)],
            input=request,
            capture_output=True,
            check=False,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"native coder failed: {proc.stderr.decode(errors='replace')}")
        return proc.stdout

    @staticmethod
    def _request_head(op: int, freqs: np.ndarray, table_ids: np.ndarray) -> bytearray:
        freqs = np.asarray(freqs, dtype=">u4")
        table_ids = np.asarray(table_ids, dtype=">u4")
        head = bytearray()
        head += struct.pack(">BII", op, freqs.shape[0], freqs.shape[1])
        head += freqs.tobytes()
        head += struct.pack(">I", table_ids.shape[0])
        head += table_ids.tobytes()
        return head

    def encode(self, symbols: np.ndarray, freqs: np.ndarray, table_ids: np.ndarray) -> CodedBuffer:
        req = self._request_head(1, freqs, table_ids)
        req += np.asarray(symbols, dtype=">u2").tobytes()
        out = self._run(bytes(req))
        (length,) = struct.unpack(">I", out[:4])
        return CodedBuffer.from_bytes(out[4:4 + length])

    def decode(self, buffer: CodedBuffer, freqs: np.ndarray, table_ids: np.ndarray) -> np.ndarray:
        req = self._request_head(2, freqs, table_ids)
        wire = buffer.to_bytes()
        req += struct.pack(">I", len(wire))
        req += wire
        out = self._run(bytes(req))
        return np.frombuffer(out, dtype=">u2").astype(np.int64)
