"""Dataset ingestion (UCR archive files, KDD Cup 99) and the preprocessing
protocol: minority class as anomaly, 20% stratified test split, normal-only
training set, min-max scaling fitted on the training portion.
"""

from __future__ import annotations

import gzip
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataFormatError(ValueError):
    """Input file cannot be parsed; the message carries file and line context."""


@dataclass
class Dataset:
    name: str
    X: np.ndarray  # (n, T) float64
    classes: np.ndarray  # original class identifiers, as strings
    labels: np.ndarray | None = None  # 0 normal / 1 anomalous, once assigned
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"samples must form a 2-D array, got shape {self.X.shape}")
        self.classes = np.asarray(self.classes, dtype=str)
        if self.ids is None:
            self.ids = np.arange(len(self.X))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0 or 1")
        n = len(self.X)
        if len(self.classes) != n or len(self.ids) != n or (self.labels is not None and len(self.labels) != n):
            raise ValueError("samples, classes, labels and ids must have equal length")

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def size(self) -> int:
        return len(self.X)

    @property
    def anomaly_ratio(self) -> float:
        if self.labels is None:
            raise ValueError(f"dataset {self.name!r} has no anomaly labels yet")
        return float(self.labels.mean()) if self.size else 0.0

    def class_histogram(self) -> dict[str, int]:
        return dict(sorted(Counter(self.classes.tolist()).items()))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(np.int64)  # [] arrives as float64
        return replace(
            self,
            X=self.X[idx],
            classes=self.classes[idx],
            labels=None if self.labels is None else self.labels[idx],
            ids=self.ids[idx],
        )


# ---------------------------------------------------------------------------
# UCR archive


def _canonical_class(token: str) -> str:
    # old archive releases write labels as floats, e.g. "1.0000000e+00"
    try:
        v = float(token)
    except ValueError:
        return token
    return str(int(v)) if v.is_integer() else token


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt")
    return open(path)


def load_ucr(paths: str | Path | Sequence[str | Path], name: str | None = None) -> Dataset:
    """Read one or more UCR-style files (label first, then T values per row).

    Tab and comma delimiters are both accepted.  Several files (e.g. the
    archive's _TRAIN and _TEST halves) are concatenated in order.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = [Path(p) for p in paths]
    rows: list[list[float]] = []
    classes: list[str] = []
    T = None
    for path in paths:
        with _open_text(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = line.split("\t") if "\t" in line else line.split(",")
                if len(fields) < 2:
                    raise DataFormatError(f"{path}:{lineno}: expected a label and at least one value")
                try:
                    vals = [float(f) for f in fields[1:]]
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
                if T is None:
                    T = len(vals)
                elif len(vals) != T:
                    raise DataFormatError(f"{path}:{lineno}: ragged row of length {len(vals)}, expected {T}")
                rows.append(vals)
                classes.append(_canonical_class(fields[0].strip()))
    if not rows:
        raise DataFormatError(f"{', '.join(map(str, paths))}: no data rows")
    if name is None:
        name = paths[0].stem.split("_")[0]
    return Dataset(name, np.array(rows), np.array(classes))


def load_ucr_archive(root: str | Path, name: str) -> Dataset:
    """Load <root>/<name>/<name>_TRAIN.* and _TEST.* as a single dataset."""
    folder = Path(root) / name
    for ext in (".tsv", ".txt", ".csv", ""):
        parts = [folder / f"{name}_{s}{ext}" for s in ("TRAIN", "TEST")]
        if all(p.exists() for p in parts):
            return load_ucr(parts, name=name)
    raise FileNotFoundError(f"no {name}_TRAIN/{name}_TEST files under {folder}")


def _class_key(c: str):
    try:
        return (0, float(c), c)
    except ValueError:
        return (1, 0.0, c)


def relabel_minority(d: Dataset) -> Dataset:
    """Mark the least frequent original class as anomalous (1), all others normal.

    Count ties go to the smaller class identifier.
    """
    hist = Counter(d.classes.tolist())
    if len(hist) < 2:
        raise ValueError(f"dataset {d.name!r} has a single class; cannot pick a minority")
    minority = min(hist, key=lambda c: (hist[c], _class_key(c)))
    return replace(d, labels=(d.classes == minority).astype(np.int64))


# ---------------------------------------------------------------------------
# KDD Cup 99

KDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)  # fmt: skip


def kdd99_vocabulary() -> dict[str, list[str]]:
    """Category vocabularies of the 10% subset for every one-hot encoded column."""
    text = resources.files("velc.resources").joinpath("kdd99_vocab.json").read_text()
    return json.loads(text)


def kdd99_feature_names() -> list[str]:
    vocab = kdd99_vocabulary()
    names = []
    for col in KDD_COLUMNS:
        if col in vocab:
            names.extend(f"{col}={v}" for v in vocab[col])
        else:
            names.append(col)
    return names


def load_kdd99(path: str | Path, name: str = "KDD99") -> Dataset:
    """Parse KDD Cup 99 records into 121-dimensional vectors.

    Symbolic and flag-like columns are one-hot encoded against the frozen
    vocabulary; unknown categories raise.  Records labelled ``normal.`` are
    the anomalous class (1); every attack record is normal (0).
    """
    path = Path(path)
    vocab = kdd99_vocabulary()
    index = {col: {v: i for i, v in enumerate(vals)} for col, vals in vocab.items()}
    width = len(kdd99_feature_names())
    rows: list[np.ndarray] = []
    classes: list[str] = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(KDD_COLUMNS) + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {len(KDD_COLUMNS) + 1} fields, got {len(fields)}")
            vec = np.zeros(width)
            pos = 0
            for col, tok in zip(KDD_COLUMNS, fields):
                if col in index:
                    hit = index[col].get(tok)
                    if hit is None:
                        raise DataFormatError(f"{path}:{lineno}: unknown {col} value {tok!r}")
                    vec[pos + hit] = 1.0
                    pos += len(index[col])
                else:
                    try:
                        vec[pos] = float(tok)
                    except ValueError:
                        raise DataFormatError(f"{path}:{lineno}: non-numeric {col} value {tok!r}") from None
                    pos += 1
            rows.append(vec)
            classes.append(fields[-1])
    if not rows:
        raise DataFormatError(f"{path}: no records")
    classes_arr = np.array(classes)
    labels = (classes_arr == "normal.").astype(np.int64)
    return Dataset(name, np.vstack(rows), classes_arr, labels)


# ---------------------------------------------------------------------------
# scaling and splitting


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    # only "normal-only" exists: anomalies never enter the training set
    policy: str = "normal-only"

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.policy != "normal-only":
            raise ValueError(f"unsupported training-set policy {self.policy!r}")


@dataclass
class MinMaxScaler:
    """Per-dimension affine map onto [0, 1] over the fitted data.

    Constant dimensions are shifted but not rescaled.  Transformed values of
    unseen data may fall outside [0, 1]; nothing is clipped.
    """

    data_min: np.ndarray = field(default_factory=lambda: np.zeros(0))
    data_range: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def fit(self, X: np.ndarray) -> "MinMaxScaler":
        lo = X.min(axis=0)
        rng = X.max(axis=0) - lo
        self.data_min = lo
        self.data_range = np.where(rng > 0, rng, 1.0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.data_min) / self.data_range


def scale_and_split(d: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, MinMaxScaler]:
    """Stratified test split; normals left over form the training set.

    Every anomalous sample lands in the test set.  The scaler is fitted on the
    training set alone and applied to both halves.
    """
    if d.labels is None:
        raise ValueError(f"dataset {d.name!r} needs anomaly labels before splitting")
    rng = np.random.default_rng(spec.seed)
    test_idx: list[np.ndarray] = []
    train_idx = np.array([], dtype=np.int64)
    for label in (0, 1):
        members = rng.permutation(np.flatnonzero(d.labels == label))
        n_test = int(round(spec.test_fraction * len(members)))
        test_idx.append(members[:n_test])
        if label == 0:
            train_idx = members[n_test:]
        else:
            test_idx.append(members[n_test:])
    if len(train_idx) == 0:
        raise ValueError(f"dataset {d.name!r}: no normal samples left for training")
    train = d.subset(np.sort(train_idx))
    test = d.subset(np.sort(np.concatenate(test_idx)))
    scaler = MinMaxScaler().fit(train.X)
    train = replace(train, X=scaler.transform(train.X))
    test = replace(test, X=scaler.transform(test.X))
    return train, test, scaler


def prepare(d: Dataset, spec: SplitSpec = SplitSpec(), relabel: bool = True):
    """relabel_minority (when labels are absent) followed by scale_and_split."""
    if d.labels is None and relabel:
        d = relabel_minority(d)
    return scale_and_split(d, spec)


# ---------------------------------------------------------------------------
# canonical text file

_MAGIC = "#velc-dataset"


def write_canonical(d: Dataset, path: str | Path) -> None:
    """Header line, then ``id, class, label, values...`` per row, tab separated."""
    if d.labels is None:
        raise ValueError("canonical files store labelled datasets only")
    if any(ch.isspace() for ch in d.name):
        raise ValueError(f"dataset name {d.name!r} must not contain whitespace")
    with open(path, "w") as fh:
        fh.write(f"{_MAGIC}\tname={d.name}\tT={d.T}\tsize={d.size}\tanomaly_ratio={d.anomaly_ratio!r}\n")
        for i, c, y, row in zip(d.ids, d.classes, d.labels, d.X):
            fh.write(f"{i}\t{c}\t{y}\t" + "\t".join(format(v, ".17g") for v in row) + "\n")


def read_canonical(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        head = fh.readline().rstrip("\n").split("\t")
        if not head or head[0] != _MAGIC:
            raise DataFormatError(f"{path}:1: not a canonical dataset file")
        meta = dict(f.split("=", 1) for f in head[1:])
        T, size = int(meta["T"]), int(meta["size"])
        ids, classes, labels, rows = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != T + 3:
                raise DataFormatError(f"{path}:{lineno}: expected {T + 3} fields, got {len(parts)}")
            try:
                ids.append(int(parts[0]))
                labels.append(int(parts[2]))
                rows.append([float(v) for v in parts[3:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            classes.append(parts[1])
    if len(rows) != size:
        raise DataFormatError(f"{path}: header promises {size} rows, found {len(rows)}")
    X = np.array(rows, dtype=np.float64).reshape(size, T)
    return Dataset(meta["name"], X, np.array(classes, dtype=str), np.array(labels), np.array(ids))


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    return (
        a.name == b.name
        and a.X.shape == b.X.shape
        and np.array_equal(a.X, b.X)
        and np.array_equal(a.classes, b.classes)
        and np.array_equal(a.ids, b.ids)
        and ((a.labels is None and b.labels is None) or np.array_equal(a.labels, b.labels))
    )


def iter_ids(d: Dataset, wanted: Iterable[int]) -> list[int]:
    """Row positions for sample ids; raises KeyError naming any unknown id."""
    pos = {int(i): k for k, i in enumerate(d.ids)}
    out = []
    for i in wanted:
        if int(i) not in pos:
            raise KeyError(f"unknown sample id {i} in dataset {d.name!r}")
        out.append(pos[int(i)])
    return out
