"""Dataset directories, split generation and a homophily-controlled generator.

A dataset directory holds tab-separated text files (each may also be stored
gzip-compressed with a ``.gz`` suffix):

``manifest.tsv``  one line ``n<TAB>D<TAB>C``
``edges.tsv``     one ``u<TAB>v`` pair per line, 0-indexed
``features.tsv``  line ``i`` holds the ``D`` feature values of node ``i``
``labels.tsv``    line ``i`` holds the integer class of node ``i``
``splits.tsv``    optional; line ``i`` is one of train, val, test, none
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError, ValidationError
from .graph import Graph, build_graph

SPLIT_NAMES = ("train", "val", "test", "none")
BUNDLED = ("cora",)


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    raw_edges: np.ndarray
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def raw_edge_count(self) -> int:
        return int(self.raw_edges.shape[0])

    @property
    def has_splits(self) -> bool:
        return self.train_mask is not None

    def mask(self, split: str) -> np.ndarray:
        masks = {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}
        if split not in masks:
            raise ConfigError(f"unknown split {split!r}; expected train, val or test")
        if masks[split] is None:
            raise ConfigError(f"dataset {self.name!r} has no {split} split")
        return masks[split]

    def with_splits(self, train, val, test) -> "Dataset":
        train, val, test = (np.asarray(m, dtype=bool) for m in (train, val, test))
        if (train & val).any() or (train & test).any() or (val & test).any():
            raise ValidationError("train/val/test masks overlap")
        return replace(self, train_mask=train, val_mask=val, test_mask=test)

    def stats(self) -> dict:
        return {
            "name": self.name,
            "nodes": self.n,
            "raw_edges": self.raw_edge_count,
            "undirected_edges": self.graph.undirected_edge_count,
            "directed_edges_with_loops": self.graph.num_edges,
            "features": self.n_features,
            "classes": self.n_classes,
        }


# ---------------------------------------------------------------------------
# reading


def _find(directory: Path, name: str, required: bool = True) -> Path | None:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    if required:
        raise LoadError(f"{directory}: missing {name}")
    return None


def _lines(path: Path):
    """Yield ``(line_number, stripped_line)`` skipping blank lines."""
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield no, line


def _where(path: Path, no: int) -> str:
    return f"{path.name}:{no}"


def resolve_dataset(spec) -> Path:
    """Map a directory path or a bundled dataset name to a directory."""
    path = Path(spec)
    if path.is_dir():
        return path
    if str(spec) in BUNDLED:
        return Path(str(resources.files("jsdmp") / "datasets" / str(spec)))
    raise LoadError(f"dataset {spec!r} is neither a directory nor a bundled dataset {BUNDLED}")


def load_dataset(directory) -> Dataset:
    directory = resolve_dataset(directory)

    mpath = _find(directory, "manifest.tsv")
    rows = list(_lines(mpath))
    if len(rows) != 1:
        raise LoadError(f"{mpath.name}: expected a single line 'n<TAB>D<TAB>C'")
    no, line = rows[0]
    try:
        n, D, C = (int(x) for x in line.split("\t"))
    except ValueError:
        raise LoadError(f"{_where(mpath, no)}: expected 'n<TAB>D<TAB>C', got {line!r}") from None
    if n < 1 or D < 1 or C < 1:
        raise ValidationError(f"{_where(mpath, no)}: n, D and C must be positive")

    epath = _find(directory, "edges.tsv")
    pairs = []
    line_numbers = []
    for no, line in _lines(epath):
        parts = line.split("\t")
        try:
            u, v = int(parts[0]), int(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise LoadError(f"{_where(epath, no)}: expected 'u<TAB>v', got {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise ValidationError(f"{_where(epath, no)}: edge ({u}, {v}) references a node outside [0, {n})")
        pairs.append((u, v))
        line_numbers.append(no)
    raw_edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    fpath = _find(directory, "features.tsv")
    feats = np.empty((n, D))
    count = 0
    for no, line in _lines(fpath):
        if count >= n:
            raise ValidationError(f"{_where(fpath, no)}: more feature rows than n={n}")
        try:
            row = np.array(line.split("\t"), dtype=np.float64)
        except ValueError:
            raise LoadError(f"{_where(fpath, no)}: non-numeric feature value") from None
        if row.shape[0] != D:
            raise ValidationError(f"{_where(fpath, no)}: expected {D} values, got {row.shape[0]}")
        if not np.all(np.isfinite(row)) or np.any(row < 0):
            raise ValidationError(f"{_where(fpath, no)}: features must be finite and non-negative")
        feats[count] = row
        count += 1
    if count != n:
        raise ValidationError(f"{fpath.name}: expected {n} rows, got {count}")

    lpath = _find(directory, "labels.tsv")
    labels = []
    for no, line in _lines(lpath):
        try:
            y = int(line)
        except ValueError:
            raise LoadError(f"{_where(lpath, no)}: expected an integer label, got {line!r}") from None
        if not 0 <= y < C:
            raise ValidationError(f"{_where(lpath, no)}: label {y} outside [0, {C})")
        labels.append(y)
    if len(labels) != n:
        raise ValidationError(f"{lpath.name}: expected {n} labels, got {len(labels)}")

    ds = Dataset(
        name=directory.name,
        graph=build_graph(n, raw_edges, source=epath.name),
        features=feats,
        labels=np.array(labels, dtype=np.int64),
        n_classes=C,
        raw_edges=raw_edges,
    )

    spath = _find(directory, "splits.tsv", required=False)
    if spath is not None:
        tags = []
        for no, line in _lines(spath):
            if line not in SPLIT_NAMES:
                raise LoadError(f"{_where(spath, no)}: split must be one of {SPLIT_NAMES}, got {line!r}")
            tags.append(line)
        if len(tags) != n:
            raise ValidationError(f"{spath.name}: expected {n} lines, got {len(tags)}")
        tags = np.array(tags)
        ds = ds.with_splits(tags == "train", tags == "val", tags == "test")
    return ds


# ---------------------------------------------------------------------------
# writing


def _write(path: Path, text: str, compress: bool):
    if compress:
        with gzip.open(path.with_name(path.name + ".gz"), "wt", encoding="utf-8", compresslevel=9) as fh:
            fh.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def write_dataset(ds: Dataset, directory, compress: bool = False) -> Path:
    """Write ``ds`` in the directory format; floats keep 17 significant digits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write(directory / "manifest.tsv", f"{ds.n}\t{ds.n_features}\t{ds.n_classes}\n", compress)
    _write(directory / "edges.tsv", "".join(f"{u}\t{v}\n" for u, v in ds.raw_edges.tolist()), compress)
    buf = io.StringIO()
    for row in ds.features:
        buf.write("\t".join(format(x, ".17g") for x in row.tolist()))
        buf.write("\n")
    _write(directory / "features.tsv", buf.getvalue(), compress)
    _write(directory / "labels.tsv", "".join(f"{y}\n" for y in ds.labels.tolist()), compress)
    if ds.has_splits:
        tags = np.full(ds.n, "none", dtype=object)
        tags[ds.train_mask] = "train"
        tags[ds.val_mask] = "val"
        tags[ds.test_mask] = "test"
        _write(directory / "splits.tsv", "".join(f"{t}\n" for t in tags), compress)
    return directory


def read_linqs(content_path, cites_path, name: str = "cora") -> Dataset:
    """Import the LINQS ``.content``/``.cites`` pair (paper id, words..., class label)."""
    ids, rows, classes = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                ids.append(parts[0])
                rows.append([float(x) for x in parts[1:-1]])
                classes.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes], dtype=np.int64)
    pairs = []
    with open(cites_path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                pairs.append((index[parts[1]], index[parts[0]]))
            except KeyError:
                raise LoadError(f"{Path(cites_path).name}:{no}: citation references an unknown paper") from None
    raw = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return Dataset(
        name=name,
        graph=build_graph(len(ids), raw),
        features=np.array(rows),
        labels=labels,
        n_classes=len(names),
        raw_edges=raw,
    )


# ---------------------------------------------------------------------------
# splits


def make_splits(
    ds: Dataset,
    policy: str,
    rng: np.random.Generator,
    train_per_class: int | None = 20,
    train_total: int | None = None,
    n_val: int = 500,
    n_test: int = 1000,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
):
    """Return ``(train, val, test)`` boolean masks.

    ``planetoid`` draws ``train_per_class`` labelled nodes per class (or
    ``train_total`` nodes overall), then ``n_val`` and ``n_test`` nodes from
    the rest.  ``fractional`` splits every class by ``fractions``.
    """
    n, labels = ds.n, ds.labels
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    if policy == "planetoid":
        if train_total is not None:
            if train_total < 1 or train_total + n_val + n_test > n:
                raise ConfigError(f"cannot draw {train_total}/{n_val}/{n_test} nodes from {n}")
            chosen = rng.permutation(n)[:train_total]
        else:
            chosen = []
            for c in range(ds.n_classes):
                members = np.flatnonzero(labels == c)
                if members.size < train_per_class:
                    raise ConfigError(f"class {c} has {members.size} nodes, cannot draw {train_per_class}")
                chosen.append(rng.permutation(members)[:train_per_class])
            chosen = np.concatenate(chosen)
        train[chosen] = True
        rest = rng.permutation(np.flatnonzero(~train))
        if n_val + n_test > rest.size:
            raise ConfigError(f"only {rest.size} nodes left for {n_val} validation and {n_test} test nodes")
        val[rest[:n_val]] = True
        test[rest[n_val : n_val + n_test]] = True
    elif policy == "fractional":
        f_train, f_val, _ = fractions
        for c in range(ds.n_classes):
            members = rng.permutation(np.flatnonzero(labels == c))
            k_train = int(round(f_train * members.size))
            k_val = int(round(f_val * members.size))
            train[members[:k_train]] = True
            val[members[k_train : k_train + k_val]] = True
            test[members[k_train + k_val :]] = True
        if not (train.any() and val.any() and test.any()):
            raise ConfigError("fractional split left an empty partition")
    else:
        raise ConfigError(f"unknown split policy {policy!r}; expected planetoid or fractional")
    return train, val, test


# ---------------------------------------------------------------------------
# synthetic graphs


def edge_homophily(graph: Graph, labels: np.ndarray) -> float:
    """Fraction of undirected non-loop edges joining same-class nodes."""
    keep = graph.src < graph.dst
    if not keep.any():
        return float("nan")
    return float(np.mean(labels[graph.src[keep]] == labels[graph.dst[keep]]))


def synthesize_graph(
    n: int,
    C: int,
    D: int,
    h: float,
    avg_degree: float,
    rng: np.random.Generator,
    doc_length: int = 40,
    topic_share: float = 0.5,
    name: str = "synthetic",
) -> Dataset:
    """Random graph with edge homophily close to ``h`` and word-frequency features.

    Every node proposes ``round(avg_degree / 2)`` edges (so the mean degree of
    the symmetrized graph is about ``avg_degree``); each goes to a uniformly
    chosen node of the same class with probability ``h`` and to a uniformly
    chosen node of another class otherwise.  Features are word frequencies of
    a ``doc_length``-token document that draws each token from its class topic
    with probability ``topic_share`` and from a shared background otherwise.
    """
    if n < 2 or C < 1 or D < 1 or doc_length < 1:
        raise ConfigError("synthetic graph needs n >= 2, C >= 1, D >= 1, doc_length >= 1")
    if not 0.0 <= h <= 1.0:
        raise ConfigError(f"homophily must lie in [0, 1], got {h}")
    if avg_degree <= 0:
        raise ConfigError(f"avg_degree must be positive, got {avg_degree}")
    if not 0.0 <= topic_share <= 1.0:
        raise ConfigError(f"topic_share must lie in [0, 1], got {topic_share}")

    labels = rng.integers(0, C, size=n)
    order = np.argsort(labels, kind="stable")
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    sizes = np.bincount(labels, minlength=C)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    m = max(1, int(round(avg_degree / 2)))
    u = np.repeat(np.arange(n), m)
    cls = labels[u]
    same = rng.random(u.size) < h
    if same.any() and np.any(sizes[cls[same]] < 2):
        raise ConfigError("homophilous edges requested but some class has a single node")
    if (~same).any() and np.any(sizes[cls[~same]] == n):
        raise ConfigError("heterophilous edges requested but only one class is populated")
    v = np.empty_like(u)
    # same class: uniform over the block minus the node itself
    s = np.flatnonzero(same)
    r = np.floor(rng.random(s.size) * (sizes[cls[s]] - 1)).astype(np.int64)
    r += r >= pos[u[s]] - starts[cls[s]]
    v[s] = order[starts[cls[s]] + r]
    # other classes: uniform over the complement of the block
    o = np.flatnonzero(~same)
    r = np.floor(rng.random(o.size) * (n - sizes[cls[o]])).astype(np.int64)
    r += (r >= starts[cls[o]]) * sizes[cls[o]]
    v[o] = order[r]
    raw = np.stack([u, v], axis=1)

    topics = rng.dirichlet(np.full(D, 0.2), size=C)
    background = rng.dirichlet(np.full(D, 1.0))
    word_probs = topic_share * topics[labels] + (1.0 - topic_share) * background
    counts = np.stack([rng.multinomial(doc_length, p) for p in word_probs])
    return Dataset(
        name=name,
        graph=build_graph(n, raw),
        features=counts / float(doc_length),
        labels=labels.astype(np.int64),
        n_classes=C,
        raw_edges=raw,
    )
