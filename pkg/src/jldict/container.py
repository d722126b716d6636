"""Binary model container.

Layout::

    JLDICT-MODEL\\n
    version: 1\\n
    key: value\\n            scalar settings, one per line
    block: NAME ROWS COLS\\n  one line per matrix, in payload order
    end\\n
    <payload>                row-major little-endian float64 blocks
    <checksum>               FNV-1a 64 of everything above, little-endian

Floats in the header use repr(), so saving a loaded model reproduces the file
byte for byte.
"""

from __future__ import annotations

import struct
from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from .classify import ClassifierModel, ClassMedoids, _ClassState
from .embed import ProjectionModel
from .errors import CorruptModel
from .sparse import SparseCoderConfig

MAGIC = b"JLDICT-MODEL\n"
VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _medoid_blocks(medoids: ClassMedoids):
    labels = medoids.labels
    members, owner, sums, index = [], [], [], []
    for c in labels:
        state = medoids.classes[c]
        members.extend(state.members)
        owner.extend([c] * len(state.members))
        sums.extend(state.sums)
        index.append(state.medoid)
    K = medoids.dim
    return {
        "members": np.array(members, dtype=np.float64).reshape(-1, K).T,
        "member_class": np.array(owner, dtype=np.float64).reshape(1, -1),
        "member_sums": np.array(sums, dtype=np.float64).reshape(1, -1),
        "medoid_index": np.array(index, dtype=np.float64).reshape(1, -1),
    }


def dumps(model: ClassifierModel) -> bytes:
    proj = model.projection
    coder = model.coder
    header = {
        "version": VERSION,
        "mode": proj.mode,
        "p": proj.p,
        "epsilon": float(proj.epsilon),
        "scale_jl": bool(proj.scale_jl),
        "kernel": proj.kernel,
        "bandwidth": float(proj.bandwidth) if proj.bandwidth is not None else float("nan"),
        "tau": float(model.tau),
        "sigma2": float(coder.sigma2),
        "max_iters": coder.max_iters,
        "prune_threshold": float(coder.prune_threshold),
        "coder_tol": float(coder.tol),
        "update_rule": coder.update_rule,
        "feature_scale": float(model.feature_scale),
        "coef_dim": model.medoids.dim,
    }
    if model.class_names is not None:
        header["class_names"] = ",".join(quote(str(n), safe="") for n in model.class_names)
    blocks = {}
    if proj.mode == "linear":
        blocks["U"] = proj.U
    else:
        blocks["V"] = proj.V
        blocks["train_features"] = proj.train_features
    blocks["eigenvalues"] = np.asarray(proj.eigenvalues, dtype=np.float64).reshape(1, -1)
    blocks["D"] = model.dictionary
    if model.mean is not None:
        blocks["mean"] = model.mean.reshape(-1, 1)
        blocks["scale"] = model.scale.reshape(-1, 1)
    blocks.update(_medoid_blocks(model.medoids))

    lines = [f"{k}: {_fmt(v)}" for k, v in header.items()]
    lines += [f"block: {name} {m.shape[0]} {m.shape[1]}" for name, m in blocks.items()]
    lines.append("end")
    head = MAGIC + ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(m, dtype="<f8").tobytes() for m in blocks.values())
    body = head + payload
    return body + struct.pack("<Q", fnv1a64(body))


def save_model(model: ClassifierModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def _parse_header(data: bytes):
    if not data.startswith(MAGIC):
        raise CorruptModel("not a model file (bad magic)")
    end = data.find(b"\nend\n", len(MAGIC) - 1)
    if end < 0:
        raise CorruptModel("header terminator not found")
    text = data[len(MAGIC):end + 1].decode("ascii", errors="replace")
    header, blocks = {}, []
    for line in text.splitlines():
        key, sep, value = line.partition(": ")
        if not sep:
            raise CorruptModel(f"malformed header line {line!r}")
        if key == "block":
            parts = value.split()
            if len(parts) != 3:
                raise CorruptModel(f"malformed block line {line!r}")
            blocks.append((parts[0], int(parts[1]), int(parts[2])))
        else:
            header[key] = value
    return header, blocks, end + len(b"\nend\n")


def loads(data: bytes) -> ClassifierModel:
    if len(data) < len(MAGIC) + 8:
        raise CorruptModel("file too short")
    body, tail = data[:-8], data[-8:]
    if struct.unpack("<Q", tail)[0] != fnv1a64(body):
        raise CorruptModel("checksum mismatch")
    header, layout, offset = _parse_header(body)
    if int(header.get("version", -1)) != VERSION:
        raise CorruptModel(f"unsupported version {header.get('version')!r}")
    expected = sum(r * c for _, r, c in layout) * 8
    if len(body) - offset != expected:
        raise CorruptModel(f"payload is {len(body) - offset} bytes, header promises {expected}")
    blocks = {}
    for name, rows, cols in layout:
        n = rows * cols
        blocks[name] = np.frombuffer(body, dtype="<f8", count=n, offset=offset) \
            .reshape(rows, cols).astype(np.float64)
        offset += 8 * n

    try:
        return _build(header, blocks)
    except (KeyError, ValueError) as exc:
        raise CorruptModel(f"inconsistent model contents: {exc}") from exc


def _build(header, blocks) -> ClassifierModel:
    mode = header["mode"]
    bandwidth = float(header["bandwidth"])
    proj = ProjectionModel(
        mode=mode, p=int(header["p"]), epsilon=float(header["epsilon"]),
        U=blocks.get("U"), V=blocks.get("V"),
        bandwidth=None if np.isnan(bandwidth) else bandwidth,
        train_features=blocks.get("train_features"),
        scale_jl=header["scale_jl"] == "1",
        eigenvalues=blocks["eigenvalues"][0], kernel=header["kernel"])
    K = int(header["coef_dim"])
    members = blocks["members"]
    owner = blocks["member_class"][0].astype(np.int64)
    sums = blocks["member_sums"][0]
    index = blocks["medoid_index"][0].astype(np.int64)
    medoids = ClassMedoids(dim=K)
    for i, c in enumerate(np.unique(owner)):
        sel = np.flatnonzero(owner == c)
        medoids.classes[int(c)] = _ClassState([members[:, j].copy() for j in sel],
                                              sums[sel].tolist(), int(index[i]))
    coder = SparseCoderConfig(sigma2=float(header["sigma2"]), max_iters=int(header["max_iters"]),
                              prune_threshold=float(header["prune_threshold"]),
                              tol=float(header["coder_tol"]), update_rule=header["update_rule"])
    names = None
    if "class_names" in header:
        names = [unquote(n) for n in header["class_names"].split(",")]
    mean = blocks.get("mean")
    scale = blocks.get("scale")
    return ClassifierModel(proj, blocks["D"], medoids, tau=float(header["tau"]), coder=coder,
                           mean=None if mean is None else mean[:, 0],
                           scale=None if scale is None else scale[:, 0],
                           feature_scale=float(header["feature_scale"]), class_names=names)


def load_model(path) -> ClassifierModel:
    return loads(Path(path).read_bytes())
