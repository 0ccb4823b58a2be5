"""Graph container, normalized adjacency, synthetic chains, and file I/O.

Node features live in an m x n matrix X with one column per node.  Edges are
undirected, deduplicated pairs without self-loops; self-loops only enter
during adjacency normalization.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DanglingNodeIdError,
    DimensionMismatchError,
    InfeasibleSplitError,
    ParseError,
)

DEFAULT_SPLIT_RATIOS = (0.05, 0.10, 0.85)


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset  # of (u, v) tuples with u < v
    X: np.ndarray  # m x n, one column per node
    labels: np.ndarray  # length n, class id or -1 for unlabeled
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop ({u},{v}) stored in edge set")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise DanglingNodeIdError(f"edge ({u},{v}) references a missing node")
        if self.X.shape[1] != self.n:
            raise DimensionMismatchError(
                f"X has {self.X.shape[1]} columns for {self.n} nodes"
            )
        if self.labels.shape != (self.n,):
            raise DimensionMismatchError("labels length must equal node count")
        for a, b in (
            (self.train_mask, self.val_mask),
            (self.train_mask, self.test_mask),
            (self.val_mask, self.test_mask),
        ):
            if np.any(a & b):
                raise ValueError("train/val/test masks must be pairwise disjoint")
        labeled = self.labels[self.labels >= 0]
        if labeled.size and labeled.max() >= self.num_classes:
            raise ValueError("label id exceeds declared class count")

    @property
    def feature_dim(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ChainsSpec:
    classes: int
    chains_per_class: int
    length: int
    feature_dim: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.chains_per_class < 1:
            raise ValueError("need at least 1 chain per class")
        if self.length < 2:
            raise ValueError("chains must have at least 2 nodes")
        if self.feature_dim < self.classes:
            raise ValueError("feature_dim must be >= classes for the one-hot code")

    @property
    def n_nodes(self) -> int:
        return self.classes * self.chains_per_class * self.length


def normalized_adjacency(graph: Graph) -> np.ndarray:
    """S = D^{-1/2} (A + I) D^{-1/2}, exactly symmetric, eigenvalues in [-1, 1]."""
    n = graph.n
    A = np.zeros((n, n))
    for u, v in graph.edges:
        A[u, v] = 1.0
        A[v, u] = 1.0
    A += np.eye(n)
    scale = 1.0 / np.sqrt(A.sum(axis=1))
    S = scale[:, None] * A * scale[None, :]
    return 0.5 * (S + S.T)


def make_split(labels, ratios, seed, num_classes):
    """Uniform train/val/test masks with every class present in train."""
    n = labels.shape[0]
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n_train < num_classes:
        raise InfeasibleSplitError(
            f"train share yields {n_train} nodes for {num_classes} classes"
        )
    rng = np.random.default_rng(seed)
    # One node per class first, to guarantee trainability.
    seeded = []
    for k in range(num_classes):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            raise InfeasibleSplitError(f"class {k} has no labeled nodes")
        seeded.append(int(rng.choice(members)))
    rest = np.setdiff1d(np.arange(n), np.array(seeded))
    rest = rng.permutation(rest)
    train = np.concatenate([np.array(seeded, dtype=np.int64), rest[: n_train - num_classes]])
    val = rest[n_train - num_classes : n_train - num_classes + n_val]
    test = rest[n_train - num_classes + n_val :]
    masks = []
    for idx in (train, val, test):
        m = np.zeros(n, dtype=bool)
        m[idx] = True
        masks.append(m)
    return tuple(masks)


def generate_chains(spec: ChainsSpec) -> Graph:
    """Disjoint path graphs, one-hot class code on the lowest-index end node.

    Chain ch (class ch // chains_per_class) occupies nodes
    [ch*length, (ch+1)*length); consecutive nodes are linked. Only the first
    node of each chain carries a nonzero feature: e_k in the first `classes`
    dimensions.
    """
    n = spec.n_nodes
    edges = set()
    labels = np.empty(n, dtype=np.int64)
    X = np.zeros((spec.feature_dim, n))
    for ch in range(spec.classes * spec.chains_per_class):
        k = ch // spec.chains_per_class
        base = ch * spec.length
        labels[base : base + spec.length] = k
        X[k, base] = 1.0
        for p in range(spec.length - 1):
            edges.add((base + p, base + p + 1))
    train, val, test = make_split(labels, DEFAULT_SPLIT_RATIOS, spec.seed, spec.classes)
    return Graph(
        n=n,
        edges=frozenset(edges),
        X=X,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=spec.classes,
    )


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line


def _read_edges(path, n):
    edges = set()
    for line_no, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(path, line_no, f"expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(path, line_no, f"non-integer node id in {line!r}")
        if u == v:
            raise ParseError(path, line_no, f"self-loop on node {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise DanglingNodeIdError(f"{path}:{line_no}: node id out of range: {line!r}")
        edges.add((min(u, v), max(u, v)))
    return frozenset(edges)


def _read_features(path):
    lines = list(_data_lines(path))
    if not lines:
        raise ParseError(path, 1, "empty feature file")
    header_no, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise ParseError(path, header_no, "expected header 'm n'")
    try:
        m, n = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(path, header_no, "non-integer header fields")
    if len(lines) - 1 != n:
        raise ParseError(path, header_no, f"expected {n} feature rows, got {len(lines) - 1}")
    X = np.zeros((m, n))
    for i, (line_no, line) in enumerate(lines[1:]):
        vals = line.split()
        if len(vals) != m:
            raise ParseError(path, line_no, f"expected {m} values, got {len(vals)}")
        try:
            X[:, i] = [float(v) for v in vals]
        except ValueError:
            raise ParseError(path, line_no, "non-numeric feature value")
    return X


def _read_labels(path, n, num_classes=None):
    labels = np.full(n, -1, dtype=np.int64)
    for line_no, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(path, line_no, f"expected 'node_id class_id', got {line!r}")
        try:
            node, cls = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(path, line_no, f"non-integer field in {line!r}")
        if not (0 <= node < n):
            raise DanglingNodeIdError(f"{path}:{line_no}: node id {node} out of range")
        if cls < 0 or (num_classes is not None and cls >= num_classes):
            raise ParseError(path, line_no, f"class id {cls} outside [0, {num_classes})")
        labels[node] = cls
    return labels


def _read_split_file(path, n):
    masks = {name: np.zeros(n, dtype=bool) for name in ("train", "val", "test")}
    for line_no, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2 or parts[1] not in masks:
            raise ParseError(path, line_no, f"expected 'node_id {{train|val|test}}', got {line!r}")
        try:
            node = int(parts[0])
        except ValueError:
            raise ParseError(path, line_no, f"non-integer node id in {line!r}")
        if not (0 <= node < n):
            raise DanglingNodeIdError(f"{path}:{line_no}: node id {node} out of range")
        masks[parts[1]][node] = True
    return masks["train"], masks["val"], masks["test"]


def load_graph(edge_path, feature_path, label_path, split_spec, split_seed=0, num_classes=None):
    """Assemble a Graph from the documented text formats.

    split_spec is either 'ratio:0.05,0.10,0.85' (uses split_seed) or the path
    of a 'node_id {train|val|test}' file.
    """
    X = _read_features(feature_path)
    n = X.shape[1]
    edges = _read_edges(edge_path, n)
    labels = _read_labels(label_path, n, num_classes)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if np.any(labels >= 0) else 0
    if isinstance(split_spec, str) and split_spec.startswith("ratio:"):
        ratios = tuple(float(r) for r in split_spec[len("ratio:") :].split(","))
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be three values summing to 1: {split_spec}")
        train, val, test = make_split(labels, ratios, split_seed, num_classes)
    else:
        train, val, test = _read_split_file(split_spec, n)
    return Graph(
        n=n,
        edges=edges,
        X=X,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=num_classes,
    )


def save_graph(graph: Graph, out_dir):
    """Write edges/features/labels/splits in the loadable text formats."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "edges": os.path.join(out_dir, "edges.txt"),
        "features": os.path.join(out_dir, "features.txt"),
        "labels": os.path.join(out_dir, "labels.txt"),
        "splits": os.path.join(out_dir, "splits.txt"),
    }
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for u, v in sorted(graph.edges):
            fh.write(f"{u} {v}\n")
    m = graph.feature_dim
    with open(paths["features"], "w", encoding="utf-8") as fh:
        fh.write(f"{m} {graph.n}\n")
        for i in range(graph.n):
            fh.write(" ".join(repr(float(x)) for x in graph.X[:, i]) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for i in range(graph.n):
            if graph.labels[i] >= 0:
                fh.write(f"{i} {graph.labels[i]}\n")
    with open(paths["splits"], "w", encoding="utf-8") as fh:
        for name, mask in (
            ("train", graph.train_mask),
            ("val", graph.val_mask),
            ("test", graph.test_mask),
        ):
            for i in np.flatnonzero(mask):
                fh.write(f"{i} {name}\n")
    return paths


def load_graph_dir(data_dir, split_spec=None, split_seed=0, num_classes=None):
    """Load a dataset written by save_graph from its directory."""
    if split_spec is None:
        split_spec = os.path.join(data_dir, "splits.txt")
    return load_graph(
        os.path.join(data_dir, "edges.txt"),
        os.path.join(data_dir, "features.txt"),
        os.path.join(data_dir, "labels.txt"),
        split_spec,
        split_seed=split_seed,
        num_classes=num_classes,
    )
