"""Append-only multimodal-Gaussian prototype memory.

Each label owns a small set of diagonal-Gaussian components. Queries reduce to
a min over the label's components (``label_distance``), an argmin over a
candidate label set (``classify``), and a chi-square-thresholded
out-of-distribution check (``validate``).

Two axes of configuration mirror the ablations this memory supports:

* ``distance_metric``: "mahalanobis" (component variances weight each axis) or
  "euclidean" (variances ignored for distances; validation then needs an
  explicit radius because the chi-square rule has no meaning without them).
* ``storage_mode``: "prototype" (one fitted multimodal prototype per label,
  labels are write-once) or "element" (raw training vectors accumulate as
  single-point components; appends may extend an existing label).

The memory is append-only in the strong sense: nothing is ever removed or
mutated, and the serialized form of an older snapshot is a byte prefix of any
later one. Snapshots serialize to a JSON index plus a little-endian binary
record stream (one length-prefixed record per component, in true append
order).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, LabelConflict, LabelNotFound
from .gauss import GaussianComponent, chi2_quantile

SNAPSHOT_VERSION = 1

METRIC_MAHALANOBIS = "mahalanobis"
METRIC_EUCLIDEAN = "euclidean"

MODE_PROTOTYPE = "prototype"
MODE_ELEMENT = "element"


@dataclass
class Prototype:
    """A label plus its ordered list of Gaussian components."""

    label: int
    components: list[GaussianComponent]

    def __post_init__(self):
        if not self.components:
            raise ContractViolation("a prototype needs at least one component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ContractViolation(f"components of label {self.label} disagree on dimension: {dims}")

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass
class PrototypeMemory:
    """Insertion-ordered, append-only store of prototypes."""

    dimension: int
    distance_metric: str = METRIC_MAHALANOBIS
    storage_mode: str = MODE_PROTOTYPE
    entries: dict[int, Prototype] = field(default_factory=dict)
    _order: list[int] = field(default_factory=list)
    _log: list[tuple[int, GaussianComponent]] = field(default_factory=list, repr=False)
    _stacked: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)
    _gstack: tuple | None = field(default=None, repr=False)
    _ranks: dict[int, int] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ContractViolation("dimension must be >= 1")
        if self.distance_metric not in (METRIC_MAHALANOBIS, METRIC_EUCLIDEAN):
            raise ContractViolation(f"unknown distance metric {self.distance_metric!r}")
        if self.storage_mode not in (MODE_PROTOTYPE, MODE_ELEMENT):
            raise ContractViolation(f"unknown storage mode {self.storage_mode!r}")

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label: int) -> bool:
        return label in self.entries

    @property
    def labels(self) -> list[int]:
        """Labels in canonical (insertion) order."""
        return list(self._order)

    def label_positions(self) -> dict[int, int]:
        """Label -> position in canonical order (cached)."""
        if self._ranks is None:
            self._ranks = {label: i for i, label in enumerate(self._order)}
        return self._ranks

    def _stack(self, label: int) -> tuple[np.ndarray, np.ndarray]:
        cached = self._stacked.get(label)
        if cached is None:
            comps = self.entries[label].components
            means = np.ascontiguousarray([c.mean for c in comps])
            variances = np.ascontiguousarray([c.variance for c in comps])
            cached = (means, variances)
            self._stacked[label] = cached
        return cached

    def _global_stack(self):
        """All components of all labels in one array, grouped by label.

        Rows stay grouped per label in canonical order; ``starts`` gives the
        first row of each label's block (for min-reductions per label).
        """
        if self._gstack is None:
            means, variances, starts = [], [], []
            row = 0
            for label in self._order:
                comps = self.entries[label].components
                starts.append(row)
                row += len(comps)
                for c in comps:
                    means.append(c.mean)
                    variances.append(c.variance)
            self._gstack = (
                np.ascontiguousarray(means),
                np.ascontiguousarray(variances),
                np.asarray(starts, dtype=np.intp),
            )
        return self._gstack

    def _check_query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ContractViolation(
                f"query dimension {x.shape} does not match memory dimension {self.dimension}"
            )
        return x

    def all_label_sq_distances(self, x) -> np.ndarray:
        """Squared distance to every label, aligned with canonical order.

        One vectorized pass over all components; the per-label minimum agrees
        bit-for-bit with ``label_distance`` squared.
        """
        x = self._check_query(x)
        if not self._order:
            return np.empty(0)
        means, variances, starts = self._global_stack()
        d = x - means
        if self.distance_metric == METRIC_MAHALANOBIS:
            sq = np.sum(d * d / variances, axis=1)
        else:
            sq = np.sum(d * d, axis=1)
        return np.minimum.reduceat(sq, starts)

    def label_distance(self, x, label: int) -> float:
        """Min over the label's components of the configured distance."""
        if label not in self.entries:
            raise LabelNotFound(label)
        x = self._check_query(x)
        means, variances = self._stack(label)
        d = x - means
        if self.distance_metric == METRIC_MAHALANOBIS:
            sq = np.sum(d * d / variances, axis=1)
        else:
            sq = np.sum(d * d, axis=1)
        return float(np.sqrt(sq.min()))

    def classify(self, x, candidates) -> int:
        """Nearest-prototype label among ``candidates``.

        Ties go to the earliest label in canonical order; candidates are
        scanned in that order with a strict improvement test.
        """
        cand = list(candidates)
        if not cand:
            raise ContractViolation("candidate set must be nonempty")
        missing = [c for c in cand if c not in self.entries]
        if missing:
            raise LabelNotFound(missing[0])
        rank = self.label_positions()
        sq = self.all_label_sq_distances(x)
        rows = sorted(rank[c] for c in set(cand))
        best_row = rows[int(np.argmin(sq[rows]))]
        return self._order[best_row]

    def validate(self, x, label: int, confidence: float, radius: float | None = None) -> bool:
        """In-distribution check for ``x`` against one label.

        Mahalanobis mode: squared distance <= chi-square quantile
        q(dimension, confidence). Euclidean mode: distance <= ``radius``;
        when no radius is given it defaults to sqrt(q) times the mean
        per-axis standard deviation stored with the label's components.
        """
        if label not in self.entries:
            raise LabelNotFound(label)
        if not 0.0 < confidence < 1.0:
            raise ContractViolation(f"confidence must lie in (0, 1), got {confidence!r}")
        dist = self.label_distance(x, label)
        q = chi2_quantile(self.dimension, confidence)
        if self.distance_metric == METRIC_MAHALANOBIS:
            return dist * dist <= q
        if radius is None:
            _, variances = self._stack(label)
            radius = float(np.sqrt(q) * np.mean(np.sqrt(variances)))
        return dist <= radius

    def validate_all(self, x, confidence: float) -> np.ndarray:
        """Vectorized ``validate`` over every label, aligned with canonical order.

        Mahalanobis mode only; euclidean validation needs per-label radii and
        stays per-call.
        """
        if self.distance_metric != METRIC_MAHALANOBIS:
            raise ContractViolation("validate_all is defined for the mahalanobis metric")
        if not 0.0 < confidence < 1.0:
            raise ContractViolation(f"confidence must lie in (0, 1), got {confidence!r}")
        q = chi2_quantile(self.dimension, confidence)
        return self.all_label_sq_distances(x) <= q

    # -- updates ---------------------------------------------------------

    def append(self, prototypes) -> None:
        """Append prototypes; existing entries are never touched.

        In prototype mode a label collision is an error. In element mode a
        collision extends the existing label's component list instead.
        """
        incoming = list(prototypes)
        for proto in incoming:
            if proto.dim != self.dimension:
                raise ContractViolation(
                    f"prototype for label {proto.label} has dimension {proto.dim}, expected {self.dimension}"
                )
        if self.storage_mode == MODE_PROTOTYPE:
            seen = set()
            for proto in incoming:
                if proto.label in self.entries or proto.label in seen:
                    raise LabelConflict(f"label {proto.label} already present")
                seen.add(proto.label)

        for proto in incoming:
            if proto.label in self.entries:
                self.entries[proto.label].components.extend(proto.components)
                self._stacked.pop(proto.label, None)
            else:
                self.entries[proto.label] = Prototype(proto.label, list(proto.components))
                self._order.append(proto.label)
            for comp in proto.components:
                self._log.append((proto.label, comp))
        self._gstack = None
        self._ranks = None

    # -- persistence -----------------------------------------------------

    def snapshot_bytes(self) -> bytes:
        """Binary record stream: one ``<I I dim*f8 dim*f8`` record per component.

        Records appear in true append order, so an older snapshot is always a
        byte prefix of a newer one.
        """
        chunks = []
        for label, comp in self._log:
            payload = comp.mean.astype("<f8").tobytes() + comp.variance.astype("<f8").tobytes()
            chunks.append(struct.pack("<II", len(payload) + 4, label) + payload)
        return b"".join(chunks)

    def index_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "dimension": self.dimension,
            "distance_metric": self.distance_metric,
            "storage_mode": self.storage_mode,
            "labels": list(self._order),
            "component_counts": {str(label): len(self.entries[label].components) for label in self._order},
        }

    def save(self, directory, stem: str = "memory") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.idx.json").write_text(
            json.dumps(self.index_dict(), sort_keys=True, indent=2) + "\n"
        )
        (directory / f"{stem}.bin").write_bytes(self.snapshot_bytes())

    @classmethod
    def load(cls, directory, stem: str = "memory") -> "PrototypeMemory":
        directory = Path(directory)
        idx = json.loads((directory / f"{stem}.idx.json").read_text())
        if idx["version"] != SNAPSHOT_VERSION:
            raise ContractViolation(f"unsupported snapshot version {idx['version']}")
        dim = idx["dimension"]
        mem = cls(dimension=dim, distance_metric=idx["distance_metric"], storage_mode=idx["storage_mode"])
        raw = (directory / f"{stem}.bin").read_bytes()
        offset = 0
        while offset < len(raw):
            rec_len, label = struct.unpack_from("<II", raw, offset)
            body = raw[offset + 8 : offset + 4 + rec_len]
            offset += 4 + rec_len
            mean = np.frombuffer(body[: 8 * dim], dtype="<f8").copy()
            var = np.frombuffer(body[8 * dim :], dtype="<f8").copy()
            comp = GaussianComponent(mean, var)
            if label in mem.entries:
                mem.entries[label].components.append(comp)
            else:
                mem.entries[label] = Prototype(label, [comp])
                mem._order.append(label)
            mem._log.append((label, comp))
        if mem._order != idx["labels"]:
            raise ContractViolation("snapshot corrupt: label order mismatch between index and stream")
        for label in mem._order:
            if len(mem.entries[label].components) != idx["component_counts"][str(label)]:
                raise ContractViolation(f"snapshot corrupt: component count mismatch for label {label}")
        return mem
