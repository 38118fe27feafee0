"""Binary container for saved factorizations.

Layout (all integers little-endian)::

    8 bytes   magic  b"FIOINV\\x00\\x01"
    4 bytes   uint32 format version
    8 bytes   uint64 length of the JSON header
    ...       JSON header (UTF-8): metadata plus a block table
    ...       raw array payload, each block at its recorded offset

Each block-table entry gives ``name``, ``dtype`` (a little-endian numpy
type string), ``shape``, ``offset`` into the payload and ``nbytes``.  The
container holds what a solve needs: the butterfly factors, the stage
matrices and root LU of the inverse factorization, and enough metadata to
rebuild the problem.  The peeled hierarchical matrix is not stored.
The format carries no stability promise across versions.
"""

import json
import struct

import numpy as np
import scipy.sparse as sp

from .butterfly import ButterflyFactor
from .errors import InvalidInputError
from .hif import InverseFactorization
from .problems import make_problem
from .solver import FioInverse, InverseConfig
from .trees import build_tree

__all__ = ["FORMAT_VERSION", "MAGIC", "load_inverse", "save_inverse"]

MAGIC = b"FIOINV\x00\x01"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _le(a):
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


class _Writer:
    def __init__(self):
        self.table = []
        self.chunks = []
        self.offset = 0

    def add(self, name, a):
        a = _le(np.asarray(a))
        raw = a.tobytes()
        self.table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                           "offset": self.offset, "nbytes": len(raw)})
        self.chunks.append(raw)
        self.offset += len(raw)

    def add_csr(self, name, m):
        m = m.tocsr()
        self.add(name + ".data", m.data.astype(np.complex128))
        self.add(name + ".indices", m.indices.astype(np.int64))
        self.add(name + ".indptr", m.indptr.astype(np.int64))
        self.add(name + ".shape", np.array(m.shape, dtype=np.int64))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, np.generic):
            v = v.item()
        out[str(k)] = v
    return out


def save_inverse(inv, path):
    """Write ``inv`` to ``path``; returns the number of bytes written."""
    w = _Writer()
    for i, f in enumerate(inv.bf.factors):
        w.add_csr(f"bf.{i}", f)
    for i, s in enumerate(inv.g.stages):
        w.add_csr(f"stage.{i}", s)
    w.add("root.labels", inv.g.root_labels.astype(np.int64))
    if inv.g.root_labels.size:
        lu, piv = inv.g.root_lu
        w.add("root.lu", lu.astype(np.complex128))
        w.add("root.piv", piv.astype(np.int64))
    p = inv.problem
    header = {
        "problem": {"label": p.label, "params": p.params},
        "config": dict(inv.config.__dict__),
        "timings": _jsonable(inv.timings),
        "bf": {"middle": inv.bf.middle, "rank": inv.bf.rank, "tol": inv.bf.tol,
               "levels": inv.bf.levels, "nfactors": len(inv.bf.factors),
               "stats": _jsonable(inv.bf.stats)},
        "g": {"N": inv.g.N, "nstages": len(inv.g.stages), "stats": _jsonable(inv.g.stats)},
        "blocks": w.table,
    }
    hdr = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hdr)))
        fh.write(hdr)
        for c in w.chunks:
            fh.write(c)
    return _PREFIX.size + len(hdr) + w.offset


def _read_blocks(path):
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) != _PREFIX.size:
            raise InvalidInputError(f"{path}: truncated container")
        magic, version, hlen = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: not a factorization container")
        if version != FORMAT_VERSION:
            raise InvalidInputError(f"{path}: unsupported container version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    blocks = {}
    for e in header["blocks"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise InvalidInputError(f"{path}: block {e['name']} runs past end of file")
        a = np.frombuffer(payload, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                          offset=e["offset"])
        blocks[e["name"]] = a.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    return header, blocks


def _csr(blocks, name):
    shape = tuple(int(s) for s in blocks[name + ".shape"])
    return sp.csr_matrix((blocks[name + ".data"], blocks[name + ".indices"],
                          blocks[name + ".indptr"]), shape=shape)


def load_inverse(path):
    """Read a container written by :func:`save_inverse` (``h`` is ``None``)."""
    header, blocks = _read_blocks(path)
    pinfo = header["problem"]
    params = dict(pinfo["params"])
    if "centers" in params:
        params["centers"] = np.asarray(params["centers"])
    problem = make_problem(pinfo["label"], **params)
    b = header["bf"]
    factors = [_csr(blocks, f"bf.{i}") for i in range(b["nfactors"])]
    tree = build_tree(problem.grid, levels=b["levels"])
    bf = ButterflyFactor(factors, b["middle"], tree, b["rank"], b["tol"], b["stats"])
    stages = []
    for i in range(header["g"]["nstages"]):
        m = _csr(blocks, f"stage.{i}")
        m.adj = m.conj().T.tocsr()
        stages.append(m)
    labels = blocks["root.labels"]
    root_lu = (blocks["root.lu"], blocks["root.piv"]) if labels.size else None
    g = InverseFactorization(header["g"]["N"], [], stages, labels, root_lu,
                             stats=header["g"]["stats"])
    config = InverseConfig(**header["config"])
    return FioInverse(problem, bf, None, g, config, header["timings"])
