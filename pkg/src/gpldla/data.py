"""Few-shot datasets and episode sampling.

A dataset is a feature table partitioned by class, carved into train /
val / test splits with disjoint class sets (novel-class protocol).
Episodes are C-way k-shot tasks: C classes drawn without replacement,
then k support + k_q query rows per class, with global class ids
remapped to episode-local labels 1..C in sorted-id order.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError, ParseError, ValidationError
from .rng import Rng

SPLIT_TAGS = ("train", "val", "test")


@dataclass
class LabeledSet:
    """Feature rows with episode-local labels in 1..C."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.features.shape[0]


@dataclass
class Episode:
    support: LabeledSet
    query: LabeledSet
    way: int
    shots: int
    queries_per_class: int


@dataclass
class DatasetSplit:
    tag: str
    class_ids: list
    features_by_class: dict

    @property
    def input_dim(self):
        first = self.features_by_class[self.class_ids[0]]
        return first.shape[1]


@dataclass
class Dataset:
    train: DatasetSplit
    val: DatasetSplit
    test: DatasetSplit

    def __post_init__(self):
        seen = {}
        for split in (self.train, self.val, self.test):
            for cid in split.class_ids:
                if cid in seen:
                    raise ValidationError(
                        f"class {cid} appears in both '{seen[cid]}' and '{split.tag}' splits")
                seen[cid] = split.tag

    @property
    def input_dim(self):
        return self.train.input_dim

    def split(self, tag):
        if tag not in SPLIT_TAGS:
            raise ContractError(f"unknown split tag {tag!r}")
        return getattr(self, tag)


@dataclass
class SyntheticTaskConfig:
    """Gaussian class-cluster pool standing in for image benchmarks."""

    input_dim: int = 16
    latent_classes: int = 40
    train_classes: int = 24
    val_classes: int = 8
    test_classes: int = 8
    center_scale: float = 5.0
    noise_scale: float = 1.0
    samples_per_class: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.center_scale <= 0 or self.noise_scale < 0:
            raise ContractError("synthetic scales must be positive (noise may be zero)")
        if self.train_classes + self.val_classes + self.test_classes > self.latent_classes:
            raise ContractError("split class counts exceed the latent class count")
        if min(self.input_dim, self.latent_classes, self.samples_per_class,
               self.train_classes, self.val_classes, self.test_classes) < 1:
            raise ContractError("synthetic config counts must be positive")


def generate_synthetic_pool(cfg: SyntheticTaskConfig) -> Dataset:
    """Draw class centers from N(0, center_scale^2 I), samples around them."""
    rng = Rng(cfg.seed).child("pool")
    centers = rng.normal((cfg.latent_classes, cfg.input_dim)) * cfg.center_scale
    features_by_class = {}
    for cid in range(cfg.latent_classes):
        noise = rng.normal((cfg.samples_per_class, cfg.input_dim)) * cfg.noise_scale
        features_by_class[cid] = centers[cid][None, :] + noise

    ids = list(range(cfg.latent_classes))
    cut1 = cfg.train_classes
    cut2 = cut1 + cfg.val_classes
    cut3 = cut2 + cfg.test_classes

    def make(tag, class_ids):
        return DatasetSplit(tag, class_ids,
                            {cid: features_by_class[cid] for cid in class_ids})

    return Dataset(make("train", ids[:cut1]), make("val", ids[cut1:cut2]),
                   make("test", ids[cut2:cut3]))


def _parse_feature_csv(path, has_header):
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not tok.strip() for tok in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ParseError(f"{path}:{lineno}: need at least one feature and a class id")
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                feats = [float(tok) for tok in row[:-1]]
                cid = int(row[-1].strip())
            except ValueError as err:
                raise ParseError(f"{path}:{lineno}: {err}") from err
            rows.append((feats, cid))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def _parse_split_file(path):
    splits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'tag: id,id,...'")
            tag, _, rest = line.partition(":")
            tag = tag.strip()
            if tag not in SPLIT_TAGS:
                raise ParseError(f"{path}:{lineno}: unknown split tag {tag!r}")
            if tag in splits:
                raise ParseError(f"{path}:{lineno}: duplicate split tag {tag!r}")
            try:
                ids = [int(tok) for tok in rest.split(",") if tok.strip()]
            except ValueError as err:
                raise ParseError(f"{path}:{lineno}: {err}") from err
            splits[tag] = ids
    missing = [tag for tag in SPLIT_TAGS if tag not in splits]
    if missing:
        raise ParseError(f"{path}: missing split tags {missing}")
    return splits


def load_dataset(features_path, split_path, has_header=False) -> Dataset:
    """Load a CSV feature table plus its sidecar class-split file."""
    rows = _parse_feature_csv(features_path, has_header)
    by_class = {}
    for feats, cid in rows:
        by_class.setdefault(cid, []).append(feats)
    tables = {cid: np.asarray(block, dtype=np.float64) for cid, block in by_class.items()}

    splits = _parse_split_file(split_path)
    for tag, ids in splits.items():
        unknown = [cid for cid in ids if cid not in tables]
        if unknown:
            raise ValidationError(f"split '{tag}' lists class ids {unknown} absent from {features_path}")

    def make(tag):
        ids = splits[tag]
        return DatasetSplit(tag, ids, {cid: tables[cid] for cid in ids})

    return Dataset(make("train"), make("val"), make("test"))


def sample_episode(split: DatasetSplit, way, shots, queries_per_class, rng: Rng) -> Episode:
    """Draw a C-way episode; support and query rows are disjoint by construction."""
    if len(split.class_ids) < way:
        raise CapacityError(
            f"episode needs {way} classes but split '{split.tag}' has {len(split.class_ids)}")
    picked = rng.choice_without_replacement(len(split.class_ids), way)
    chosen = sorted(split.class_ids[i] for i in picked)

    need = shots + queries_per_class
    sup_feats, sup_labels, qry_feats, qry_labels = [], [], [], []
    for local, cid in enumerate(chosen, start=1):
        table = split.features_by_class[cid]
        if table.shape[0] < need:
            raise CapacityError(
                f"class {cid} has {table.shape[0]} samples, episode needs {need}")
        order = rng.permutation(table.shape[0])[:need]
        sup_feats.append(table[order[:shots]])
        qry_feats.append(table[order[shots:]])
        sup_labels.extend([local] * shots)
        qry_labels.extend([local] * queries_per_class)

    support = LabeledSet(np.concatenate(sup_feats, axis=0),
                         np.asarray(sup_labels, dtype=np.int64))
    query = LabeledSet(np.concatenate(qry_feats, axis=0),
                       np.asarray(qry_labels, dtype=np.int64))
    return Episode(support, query, way, shots, queries_per_class)
