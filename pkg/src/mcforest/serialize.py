"""Versioned binary forest files and sparse weight export.

Layout: magic line, one version byte, an 8-byte little-endian header length,
a JSON header (sorted keys) describing every array, then the raw
little-endian array bytes in header order. Nothing time- or host-dependent
is written, so equal forests give byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct

import numpy as np

from .data import FeatureSpec, SampleSplit
from .errors import DataError
from .forest import Forest, ForestConfig
from .splitting import ContrastSet, CriterionConfig
from .tree import Tree, TreeConfig, populate_honest

MAGIC = b"MCFOREST\n"
VERSION = 1


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def config_to_dict(cfg: ForestConfig) -> dict:
    return _jsonable(dataclasses.asdict(cfg))


def config_from_dict(raw: dict) -> ForestConfig:
    raw = dict(raw)
    tree = dict(raw.pop("tree"))
    crit = dict(tree.pop("criterion"))
    cs = crit.pop("contrasts")
    if cs is not None:
        cs = ContrastSet(tuple(tuple(p) for p in cs["pairs"]), tuple(cs["weights"]))
    crit_cfg = CriterionConfig(contrasts=cs, **crit)
    fc = raw.pop("contrasts")
    if fc is not None:
        fc = ContrastSet(tuple(tuple(p) for p in fc["pairs"]), tuple(fc["weights"]))
    return ForestConfig(tree=TreeConfig(criterion=crit_cfg, **tree), contrasts=fc, **raw)


class _Writer:
    def __init__(self):
        self.entries = []
        self.blobs = []
        self.offset = 0

    def add(self, name, arr):
        arr = np.asarray(arr)
        if arr.dtype.kind in "UO":
            raise TypeError("string arrays go into the header")
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        self.entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                             "offset": self.offset, "nbytes": len(raw)})
        self.blobs.append(raw)
        self.offset += len(raw)


def _column(w: _Writer, meta: dict, name: str, arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "UO":
        meta[name] = [str(v) for v in arr.tolist()]
    else:
        w.add(name, arr)


def save_forest(f: Forest, path) -> None:
    """Write ``f`` to ``path``; the centering forests are not stored."""
    w = _Writer()
    strings = {}
    w.add("x_b", f.x_b)
    w.add("d_b", f.d_b)
    w.add("y_b", f.y_b)
    w.add("y_b_raw", f.y_b_raw)
    w.add("x_a", f.x_a)
    w.add("d_a", f.d_a)
    w.add("y_a", f.y_a)
    if f.y_tilde is not None:
        w.add("y_tilde", f.y_tilde)
    if f.split is not None:
        w.add("split_a", f.split.a_indices)
        w.add("split_b", f.split.b_indices)
    extra_names = sorted(f.extra_b)
    for k in extra_names:
        _column(w, strings, f"extra:{k}", f.extra_b[k])
    groups = []
    for g, grp in enumerate(f.groups):
        trees = [pt.tree for pt in grp]
        groups.append(len(trees))
        cat_node, cat_len, cat_vals = [], [], []
        for t, tr in enumerate(trees):
            for k, lev in sorted(tr.left_levels.items()):
                cat_node.append((t, k))
                cat_len.append(len(lev))
                cat_vals.extend(lev)
        parts = {
            "n_nodes": [tr.n_nodes for tr in trees],
            "feature": np.concatenate([tr.feature for tr in trees]),
            "threshold": np.concatenate([tr.threshold for tr in trees]),
            "left": np.concatenate([tr.left for tr in trees]),
            "right": np.concatenate([tr.right for tr in trees]),
            "n_build": [tr.build.size for tr in trees],
            "build": np.concatenate([tr.build for tr in trees]),
            "n_populate": [-1 if tr.populate is None else tr.populate.size for tr in trees],
            "populate": np.concatenate([np.zeros(0, np.int64) if tr.populate is None
                                        else tr.populate for tr in trees]),
            "degenerate": [tr.degenerate for tr in trees],
            "stream": [tr.stream for tr in trees],
            "cat_node": np.asarray(cat_node, dtype=np.int64).reshape(-1, 2),
            "cat_len": np.asarray(cat_len, dtype=np.int64),
            "cat_vals": np.asarray(cat_vals, dtype=np.int64),
            "n_levels": np.vstack([tr.n_levels for tr in trees]),
        }
        for k, v in parts.items():
            arr = np.asarray(v)
            if arr.dtype == bool:
                arr = arr.astype(np.uint8)
            w.add(f"g{g}:{k}", arr)
    header = {
        "config": config_to_dict(f.config),
        "m": f.m,
        "features": [[s.name, s.kind, s.index] for s in f.features],
        "treatment_labels": _jsonable(list(f.treatment_labels)),
        "levels": _jsonable({k: list(v) for k, v in f.levels.items()}),
        "split_seed": None if f.split is None else f.split.seed,
        "lam": repr(float(f.lam)),
        "n_dropped": f.n_dropped,
        "log": _jsonable(f.log),
        "groups": groups,
        "extra": extra_names,
        "strings": strings,
        "arrays": w.entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in w.blobs:
            fh.write(blob)


def load_forest(path) -> Forest:
    """Read a forest file written by :func:`save_forest`.

    Raises
    ------
    DataError
        On a wrong magic, unsupported version or truncated file.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise DataError(f"{path}: not a forest file")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<B", buf, pos)
    if version != VERSION:
        raise DataError(f"{path}: unsupported forest file version {version}")
    (hlen,) = struct.unpack_from("<Q", buf, pos + 1)
    start = pos + 9
    header = json.loads(buf[start:start + hlen])
    body = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = body + e["offset"]
        if lo + e["nbytes"] > len(buf):
            raise DataError(f"{path}: truncated forest file")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"])),
                            offset=lo).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    strings = header["strings"]
    cfg = config_from_dict(header["config"])
    m = header["m"]
    x_b, d_b, y_b = arrays["x_b"], arrays["d_b"], arrays["y_b"]
    groups = []
    for g, n_trees in enumerate(header["groups"]):
        a = {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith(f"g{g}:")}
        cats = {}
        pos_v = 0
        for (t, k), ln in zip(a["cat_node"].tolist(), a["cat_len"].tolist()):
            cats.setdefault(t, {})[k] = tuple(int(v) for v in a["cat_vals"][pos_v:pos_v + ln])
            pos_v += ln
        no = np.concatenate([[0], np.cumsum(a["n_nodes"])])
        bo = np.concatenate([[0], np.cumsum(a["n_build"])])
        npop = a["n_populate"]
        po = np.concatenate([[0], np.cumsum(np.maximum(npop, 0))])
        grp = []
        for t in range(n_trees):
            sl = slice(no[t], no[t + 1])
            feat = a["feature"][sl].copy()
            leaves = np.flatnonzero(feat < 0)
            lon = np.full(feat.size, -1, dtype=np.int64)
            lon[leaves] = np.arange(leaves.size)
            tree = Tree(feat, a["threshold"][sl].copy(), a["left"][sl].copy(),
                        a["right"][sl].copy(), cats.get(t, {}), lon, a["n_levels"][t].copy(),
                        a["build"][bo[t]:bo[t + 1]].copy(),
                        None if npop[t] < 0 else a["populate"][po[t]:po[t + 1]].copy(),
                        bool(a["degenerate"][t]), int(a["stream"][t]))
            grp.append(populate_honest(tree, x_b, d_b, y_b, m))
        groups.append(grp)
    extra_b = {}
    for k in header["extra"]:
        key = f"extra:{k}"
        extra_b[k] = np.asarray(strings[key]) if key in strings else arrays[key]
    split = None
    if "split_a" in arrays:
        split = SampleSplit(arrays["split_a"], arrays["split_b"], header["split_seed"])
    features = tuple(FeatureSpec(n, k, i) for n, k, i in header["features"])
    return Forest(cfg, m, features, tuple(header["treatment_labels"]), split, groups,
                  x_b, d_b, y_b, arrays["y_b_raw"], extra_b, arrays["x_a"], arrays["d_a"],
                  arrays["y_a"], arrays.get("y_tilde"), float(header["lam"]),
                  header["n_dropped"], header["log"], None,
                  {k: tuple(v) for k, v in header["levels"].items()})


def export_weights(path, weights) -> None:
    """Write weight vectors as ``eval_id,b_index,weight`` triplets (nonzero entries only)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eval_id", "b_index", "weight"])
        for e, w in enumerate(weights):
            for j, v in zip(w.indices.tolist(), w.values.tolist()):
                wr.writerow([e if w.tag is None else w.tag, j, repr(v)])
