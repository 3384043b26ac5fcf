"""Byte-exact container for a compressed image.

Layout (all integers big-endian):

    magic     4 bytes  "ABC1"
    version   u8
    height    u16      original image height (pre-padding)
    width     u16      original image width
    quality   u8
    task      u8
    choices   3 x u8   generative edge variants (hyper_synthesis, synthesis, merge)
    s_intra   u8
    tiles     ceil(C_groups*4*4/8) bytes, 4-bit labels packed row-major
              (group, row, col), first label in the high nibble
    payload_z u32 length + bytes (coded-buffer wire format)
    payload_y u32 length + bytes

Only generative-side structure travels in the header; inference-side choices
are never serialized. y symbols are ordered stage-major, then raster within a
stage, then ascending channel at each position.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import groups_for

MAGIC = b"ABC1"
VERSION = 1


@dataclass
class Header:
    height: int
    width: int
    quality: int
    task: int
    gen_choices: tuple[int, int, int]  # hyper_synthesis, synthesis, merge
    s_intra: int
    tile: torch.Tensor  # (C_groups, 2, 2) long

    def __post_init__(self) -> None:
        for name, val, hi in (
            ("height", self.height, 1 << 16),
            ("width", self.width, 1 << 16),
            ("quality", self.quality, 256),
            ("task", self.task, 256),
            ("s_intra", self.s_intra, 256),
        ):
            if not 0 <= val < hi:
                raise ValueError(f"{name}={val} out of range")


def pack_tile_nibbles(tile: torch.Tensor) -> bytes:
    labels = tile.reshape(-1).tolist()
    if any(not 0 <= v < 16 for v in labels):
        raise ValueError("tile labels must fit in 4 bits")
    if len(labels) % 2 == 1:
        labels.append(0)
    out = bytearray()
    for hi, lo in zip(labels[0::2], labels[1::2]):
        out.append((hi << 4) | lo)
    return bytes(out)


def unpack_tile_nibbles(data: bytes, c_groups: int) -> torch.Tensor:
    labels = []
    for byte in data:
        labels.append(byte >> 4)
        labels.append(byte & 0x0F)
    labels = labels[: c_groups * 4]
    return torch.tensor(labels, dtype=torch.long).reshape(c_groups, 2, 2)


def header_num_bytes(c_groups: int) -> int:
    return 4 + 1 + 4 + 1 + 1 + 3 + 1 + (c_groups * 4 * 4 + 7) // 8


def pack(header: Header, payload_z: bytes, payload_y: bytes) -> bytes:
    out = bytearray()
    out += MAGIC
    out.append(VERSION)
    out += header.height.to_bytes(2, "big")
    out += header.width.to_bytes(2, "big")
    out.append(header.quality)
    out.append(header.task)
    for c in header.gen_choices:
        if not 0 <= c < 256:
            raise ValueError(f"edge choice {c} does not fit a byte")
        out.append(c)
    out.append(header.s_intra)
    out += pack_tile_nibbles(header.tile)
    out += len(payload_z).to_bytes(4, "big")
    out += payload_z
    out += len(payload_y).to_bytes(4, "big")
    out += payload_y
    return bytes(out)


def unpack(raw: bytes, latent_channels: int) -> tuple[Header, bytes, bytes]:
    """Parse a stream; the tile's group count follows from s_intra and the
    model's latent channel count (the same rule both ends use)."""
    if len(raw) < 15:
        raise ValueError("stream truncated: header incomplete")
    if raw[:4] != MAGIC:
        raise ValueError(f"bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise ValueError(f"unknown stream version {raw[4]}")
    height = int.from_bytes(raw[5:7], "big")
    width = int.from_bytes(raw[7:9], "big")
    quality = raw[9]
    task = raw[10]
    gen_choices = (raw[11], raw[12], raw[13])
    s_intra = raw[14]
    if s_intra < 1:
        raise ValueError("header declares zero partites")
    c_groups = groups_for(latent_channels, s_intra)
    tile_bytes = (c_groups * 4 * 4 + 7) // 8
    if len(raw) < 15 + tile_bytes:
        raise ValueError("stream truncated: tile labels incomplete")
    tile = unpack_tile_nibbles(raw[15:15 + tile_bytes], c_groups)
    pos = 15 + tile_bytes

    def read_payload(pos: int) -> tuple[bytes, int]:
        if len(raw) < pos + 4:
            raise ValueError("stream truncated: payload length missing")
        length = int.from_bytes(raw[pos:pos + 4], "big")
        end = pos + 4 + length
        if len(raw) < end:
            raise ValueError(
                f"stream truncated: declared {length} payload bytes, found {len(raw) - pos - 4}"
            )
        return raw[pos + 4:end], end

    payload_z, pos = read_payload(pos)
    payload_y, pos = read_payload(pos)
    if pos != len(raw):
        raise ValueError(f"{len(raw) - pos} trailing bytes after payloads")
    header = Header(
        height=height,
        width=width,
        quality=quality,
        task=task,
        gen_choices=gen_choices,
        s_intra=s_intra,
        tile=tile,
    )
    return header, payload_z, payload_y
