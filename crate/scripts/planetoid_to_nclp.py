#!/usr/bin/env python3
"""Convert Planetoid raw files (ind.<name>.*) into an nclp dataset directory.

    python scripts/planetoid_to_nclp.py --raw planetoid/data --name cora --out data/cora

Needs numpy and scipy (the raw files are pickled scipy matrices).
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as f:
        if sys.version_info > (3, 0):
            return pickle.load(f, encoding="latin1")
        return pickle.load(f)


def load(raw, name):
    x, tx, allx, graph = (load_pickle(raw / f"ind.{name}.{k}") for k in ("x", "tx", "allx", "graph"))
    test_idx = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_range = np.sort(test_idx)
    if name == "citeseer":
        # Some test nodes are isolated and missing from tx; pad with zero rows.
        full = range(test_range.min(), test_range.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_range - test_range.min(), :] = tx
        tx = tx_ext
    features = sp.vstack((allx, tx)).tolil()
    features[test_idx, :] = features[test_range, :]
    n = features.shape[0]
    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    return features.toarray().astype(np.float32), sorted(edges)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", type=Path, required=True, help="directory holding ind.<name>.* files")
    ap.add_argument("--name", required=True, choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    x, edges = load(args.raw, args.name)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "meta.json").write_text(
        json.dumps({"num_nodes": int(x.shape[0]), "num_features": int(x.shape[1])}) + "\n"
    )
    with open(args.out / "graph.tsv", "w") as f:
        for u, v in edges:
            f.write(f"{u}\t{v}\n")
    with open(args.out / "features.csv", "w") as f:
        for row in x:
            f.write(",".join(f"{v:g}" for v in row) + "\n")
    print(f"{x.shape[0]} nodes, {len(edges)} edges, {x.shape[1]} features -> {args.out}")


if __name__ == "__main__":
    main()
