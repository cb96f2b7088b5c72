"""
Framed binary files shared by the kernel bank and network checkpoints.

Layout: 4-byte magic, little-endian u32 header length, UTF-8 JSON header,
then a raw little-endian float32 blob. The header always carries
``dtype: "f32"`` and ``endianness: "little"``.
"""
import json
import logging
import struct

import numpy as np

from strf.exceptions import FormatError

log = logging.getLogger(__name__)

KERNEL_BANK_MAGIC = b"RFB1"
CHECKPOINT_MAGIC = b"SCK1"
EVENT_STREAM_MAGIC = b"EVS1"
MANIFEST_FORMAT = "strf-manifest/1"

FORMAT_VERSIONS = {
    "kernel_bank": KERNEL_BANK_MAGIC.decode("ascii"),
    "checkpoint": CHECKPOINT_MAGIC.decode("ascii"),
    "event_stream": EVENT_STREAM_MAGIC.decode("ascii"),
    "manifest": MANIFEST_FORMAT,
}

_LENGTH = struct.Struct("<I")


def write_framed(path, magic, header, arrays):
    """
    Write ``arrays`` as one float32 blob behind a JSON ``header``.
    """
    header = dict(header, dtype="f32", endianness="little")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as stream:
        stream.write(magic)
        stream.write(_LENGTH.pack(len(header_bytes)))
        stream.write(header_bytes)
        for array in arrays:
            stream.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    log.debug("Wrote %s (%d header bytes)", path, len(header_bytes))


def read_framed(path, magic):
    """
    Read a framed file and return ``(header, blob)`` with ``blob`` a flat float32 array.
    """
    with open(path, "rb") as stream:
        found = stream.read(len(magic))
        if found != magic:
            raise FormatError(f"{path}: expected magic {magic!r}, found {found!r}")
        raw_length = stream.read(_LENGTH.size)
        if len(raw_length) != _LENGTH.size:
            raise FormatError(f"{path}: truncated header length")
        (length,) = _LENGTH.unpack(raw_length)
        try:
            header = json.loads(stream.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
        blob = np.frombuffer(stream.read(), dtype="<f4")
    if header.get("dtype") != "f32" or header.get("endianness") != "little":
        raise FormatError(f"{path}: unsupported blob encoding {header.get('dtype')}/{header.get('endianness')}")
    return header, blob


def split_blob(blob, shapes, path="<blob>"):
    """
    Cut a flat blob into arrays of the given shapes, in order.
    """
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        if offset + count > blob.size:
            raise FormatError(f"{path}: blob holds {blob.size} values, header needs more")
        arrays.append(blob[offset : offset + count].reshape(shape))
        offset += count
    if offset != blob.size:
        raise FormatError(f"{path}: {blob.size - offset} trailing values after the declared arrays")
    return arrays
