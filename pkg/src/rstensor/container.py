"""Versioned binary container for reference and RS tensors.

Layout: a magic string, then tagged sections.  Each section is an 8-byte
ASCII tag, an unsigned 64-bit little-endian payload length, and the
payload.  Numeric arrays are raw little-endian 64-bit floats (or signed
64-bit integers for index data) in C order; one small JSON metadata section
carries scalars and shapes.  Writing is fully deterministic, so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError
from .formats import CCT, CanonicalTensor, RSCanonical, RSTucker, TuckerTensor
from .kernels import QuadratureRule, RadialKernel, ReferenceCanonical
from .particles import Box3, Grid3

MAGIC = b"rs-tensor-container v1\n"


def _write_section(fh, tag: str, payload: bytes) -> None:
    raw = tag.encode("ascii")
    if len(raw) > 8:
        raise ValueError(f"tag too long: {tag!r}")
    fh.write(raw.ljust(8))
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _array_bytes(a: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(a).astype(dtype).tobytes()


def _read_sections(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise ParseError(f"{path}: not an rs-tensor container (bad magic)")
        sections = {}
        while True:
            tag = fh.read(8)
            if not tag:
                break
            if len(tag) != 8:
                raise ParseError(f"{path}: truncated section tag")
            (length,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(length)
            if len(payload) != length:
                raise ParseError(f"{path}: truncated section {tag!r}")
            sections[tag.decode("ascii").strip()] = payload
        return sections


def _floats(sections: dict, tag: str, shape=None) -> np.ndarray:
    a = np.frombuffer(sections[tag], dtype="<f8").astype(np.float64)
    return a.reshape(shape) if shape is not None else a


def _ints(sections: dict, tag: str, shape=None) -> np.ndarray:
    a = np.frombuffer(sections[tag], dtype="<i8").astype(np.int64)
    return a.reshape(shape) if shape is not None else a


def _meta_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True).encode("ascii")


def write_reference(ref: ReferenceCanonical, path) -> None:
    meta = {
        "type": "reference",
        "grid_n": ref.grid.n,
        "grid_b": ref.grid.box.half_width,
        "doubled": ref.doubled,
        "entry_rule": ref.entry_rule,
        "split_index": ref.split_index,
        "kernel": ref.rule.kernel.kind,
        "lam": ref.rule.kernel.lam,
        "M": ref.rule.M,
        "C0": ref.rule.C0,
        "h_M": ref.rule.h_M,
        "r_range": list(ref.rule.r_range),
        "symmetric_folded": ref.rule.symmetric_folded,
        "rank": ref.R,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_section(fh, "META", _meta_bytes(meta))
        _write_section(fh, "QNOD", _array_bytes(ref.rule.nodes, "<f8"))
        _write_section(fh, "QWTS", _array_bytes(ref.rule.weights, "<f8"))
        _write_section(fh, "TWTS", _array_bytes(ref.tensor.weights, "<f8"))
        _write_section(fh, "SIDE", _array_bytes(ref.tensor.factors[0], "<f8"))


def read_reference(path) -> ReferenceCanonical:
    sections = _read_sections(path)
    meta = json.loads(sections["META"].decode("ascii"))
    if meta.get("type") != "reference":
        raise ParseError(f"{path}: container holds {meta.get('type')!r}, not a reference")
    kernel = RadialKernel(meta["kernel"], meta["lam"])
    rule = QuadratureRule(
        kernel=kernel,
        M=meta["M"],
        C0=meta["C0"],
        h_M=meta["h_M"],
        nodes=_floats(sections, "QNOD"),
        weights=_floats(sections, "QWTS"),
        r_range=tuple(meta["r_range"]),
        symmetric_folded=meta["symmetric_folded"],
    )
    n = meta["grid_n"]
    grid = Grid3(n, Box3(meta["grid_b"]))
    side = np.ascontiguousarray(_floats(sections, "SIDE", (n, meta["rank"])))
    tensor = CanonicalTensor(_floats(sections, "TWTS"), (side, side, side))
    return ReferenceCanonical(
        tensor=tensor,
        rule=rule,
        grid=grid,
        doubled=meta["doubled"],
        entry_rule=meta["entry_rule"],
        split_index=meta["split_index"],
    )


def write_rs(rs, path) -> None:
    if isinstance(rs, RSCanonical):
        long_format = "canonical"
    elif isinstance(rs, RSTucker):
        long_format = "tucker"
    else:
        raise ParseError(f"cannot serialize {type(rs).__name__}")
    short = rs.short
    meta = {
        "type": "rs",
        "long_format": long_format,
        "grid_n": rs.grid.n,
        "grid_b": rs.grid.box.half_width,
        "gamma": short.gamma,
        "overlap_policy": short.overlap_policy,
        "max_overlap": short.max_overlap,
        "local_rank": short.local.rank,
        "local_size": short.local.mode_sizes[0],
        "count": short.count,
    }
    if long_format == "canonical":
        meta["long_rank"] = rs.long.rank
    else:
        meta["tucker_ranks"] = list(rs.long.ranks)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_section(fh, "META", _meta_bytes(meta))
        if long_format == "canonical":
            _write_section(fh, "LWTS", _array_bytes(rs.long.weights, "<f8"))
            for ell in range(3):
                _write_section(fh, f"LV{ell}", _array_bytes(rs.long.factors[ell], "<f8"))
        else:
            _write_section(fh, "CORE", _array_bytes(rs.long.core, "<f8"))
            for ell in range(3):
                _write_section(fh, f"TF{ell}", _array_bytes(rs.long.factors[ell], "<f8"))
        _write_section(fh, "U0WT", _array_bytes(short.local.weights, "<f8"))
        for ell in range(3):
            _write_section(fh, f"U0V{ell}", _array_bytes(short.local.factors[ell], "<f8"))
        _write_section(fh, "CTRS", _array_bytes(short.centers, "<i8"))
        _write_section(fh, "CWTS", _array_bytes(short.weights, "<f8"))


def read_rs(path):
    sections = _read_sections(path)
    meta = json.loads(sections["META"].decode("ascii"))
    if meta.get("type") != "rs":
        raise ParseError(f"{path}: container holds {meta.get('type')!r}, not an RS tensor")
    n = meta["grid_n"]
    grid = Grid3(n, Box3(meta["grid_b"]))
    size = meta["local_size"]
    r0 = meta["local_rank"]
    local = CanonicalTensor(
        _floats(sections, "U0WT"),
        tuple(_floats(sections, f"U0V{ell}", (size, r0)) for ell in range(3)),
    )
    short = CCT(
        local=local,
        gamma=meta["gamma"],
        centers=_ints(sections, "CTRS", (meta["count"], 3)),
        weights=_floats(sections, "CWTS"),
        mode_sizes=(n, n, n),
        overlap_policy=meta["overlap_policy"],
        max_overlap=meta["max_overlap"],
    )
    if meta["long_format"] == "canonical":
        rank = meta["long_rank"]
        long = CanonicalTensor(
            _floats(sections, "LWTS"),
            tuple(_floats(sections, f"LV{ell}", (n, rank)) for ell in range(3)),
        )
        return RSCanonical(long=long, short=short, grid=grid)
    r1, r2, r3 = meta["tucker_ranks"]
    long = TuckerTensor(
        _floats(sections, "CORE", (r1, r2, r3)),
        tuple(
            _floats(sections, f"TF{ell}", (n, r))
            for ell, r in zip(range(3), (r1, r2, r3))
        ),
    )
    return RSTucker(long=long, short=short, grid=grid)
