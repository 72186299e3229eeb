"""Margins, certified radii, Lipschitz composition, and report assembly.

For an L-Lipschitz logit map, a prediction with margin M (target logit
minus runner-up) is provably stable against any l2 perturbation smaller
than max(0, M / (sqrt(2) L)): a pairwise logit difference is at most
sqrt(2) L-Lipschitz. When the classifier head has explicit unit-norm rows,
the per-pair constant improves to L * ||w_t - w_j||, giving the sharper
head-aware radius implemented here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError
from .tensor import as_real_array

REPORT_VERSION = 1


def margin(logits, t: int) -> float:
    """Target logit minus the best competing logit; negative iff misclassified."""
    z = as_real_array(logits).reshape(-1)
    if z.size < 2:
        raise ContractError("margin needs at least two classes")
    if not 0 <= t < z.size:
        raise ContractError(f"label {t} out of range for {z.size} classes")
    rest = np.delete(z, t)
    return float(z[t] - np.max(rest))


def certified_radius(m: float, lipschitz_bound: float) -> float:
    """max(0, m / (sqrt(2) L)) for an L-Lipschitz logit map."""
    if not lipschitz_bound > 0:
        raise ContractError("Lipschitz bound must be positive")
    return max(0.0, m / (math.sqrt(2.0) * lipschitz_bound))


def lln_certified_radius(logits, t: int, head_rows, l_backbone: float) -> float:
    """Head-aware radius min_j (z_t - z_j) / (L ||w_t - w_j||).

    `head_rows` are the rows actually applied to the backbone features
    (unit-normalized for a normalized head). Pairs with identical rows and
    z_t > z_j can never flip and are skipped; if every pair is skipped the
    radius is unbounded and +inf is returned.
    """
    z = as_real_array(logits).reshape(-1)
    rows = as_real_array(head_rows)
    if rows.ndim != 2 or rows.shape[0] != z.size:
        raise ContractError(f"head rows {rows.shape} do not match {z.size} logits")
    if not l_backbone > 0:
        raise ContractError("backbone Lipschitz bound must be positive")
    if z.size < 2:
        raise ContractError("need at least two classes")
    if not 0 <= t < z.size:
        raise ContractError(f"label {t} out of range")
    best = math.inf
    for j in range(z.size):
        if j == t:
            continue
        gap = float(z[t] - z[j])
        dist = float(np.linalg.norm(rows[t] - rows[j]))
        if dist == 0.0:
            if gap > 0.0:
                continue  # identical rows, permanently dominated pair
            return 0.0
        best = min(best, gap / (l_backbone * dist))
    return max(0.0, best)


@dataclass
class LipschitzModel:
    """Ordered (operator kind, Lipschitz constant) pairs of one network."""

    layers: list[tuple[str, float]]

    @property
    def composed_bound(self) -> float:
        return compose_lipschitz(self)


def compose_lipschitz(model: LipschitzModel) -> float:
    """Product of the per-layer constants."""
    bound = 1.0
    for kind, constant in model.layers:
        if not constant > 0:
            raise ContractError(f"layer {kind!r} has non-positive constant")
        bound *= constant
    return bound


def radius_stats(radii) -> tuple[float, float, float]:
    """(median, population variance, Fisher-Pearson skewness) of the radii.

    The median uses the midpoint convention for even counts; skewness is
    m3 / m2^(3/2) with population moments, 0 by convention when m2 = 0.
    """
    arr = np.sort(as_real_array(radii).reshape(-1))
    if arr.size == 0:
        raise ContractError("radius list must be non-empty")
    mid = arr.size // 2
    if arr.size % 2:
        med = float(arr[mid])
    else:
        med = float(0.5 * (arr[mid - 1] + arr[mid]))
    centered = arr - np.mean(arr)
    m2 = float(np.mean(centered ** 2))
    m3 = float(np.mean(centered ** 3))
    skew = 0.0 if m2 == 0.0 else m3 / m2 ** 1.5
    return med, m2, skew


@dataclass
class SampleRecord:
    true_label: int
    predicted: int
    margin: float
    radius: float


@dataclass
class CertificationReport:
    """Per-sample certificates plus the distribution aggregates."""

    records: list[SampleRecord]
    lipschitz_bound: float
    curve: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        for rec in self.records:
            if rec.radius < 0:
                raise ContractError("negative certified radius in report")
            if rec.predicted != rec.true_label and rec.radius != 0.0:
                raise ContractError("misclassified sample with positive radius")

    def radii(self) -> np.ndarray:
        return np.asarray([rec.radius for rec in self.records])

    def stats(self) -> tuple[float, float, float]:
        return radius_stats(self.radii())

    def clean_accuracy(self) -> float:
        if not self.records:
            return 0.0
        hits = sum(1 for rec in self.records if rec.predicted == rec.true_label)
        return hits / len(self.records)

    def save(self, path) -> None:
        med, var, skew = self.stats()
        header = {
            "version": REPORT_VERSION,
            "kind": "certification-report",
            "lipschitz_bound": self.lipschitz_bound,
            "count": len(self.records),
            "clean_accuracy": self.clean_accuracy(),
            "stats": {"median": med, "variance": var, "skewness": skew},
            "curve": [[r, a] for r, a in self.curve],
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for rec in self.records:
                fh.write(json.dumps({
                    "true": rec.true_label, "pred": rec.predicted,
                    "margin": rec.margin, "radius": rec.radius}) + "\n")

    @classmethod
    def load(cls, path) -> "CertificationReport":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise FormatError("empty report file")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad report header: {exc}") from exc
        if header.get("version") != REPORT_VERSION:
            raise FormatError(f"unsupported report version {header.get('version')}")
        records = []
        for ln in lines[1:]:
            try:
                raw = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad report record: {exc}") from exc
            records.append(SampleRecord(int(raw["true"]), int(raw["pred"]),
                                        float(raw["margin"]), float(raw["radius"])))
        if len(records) != header.get("count"):
            raise FormatError("record count does not match header")
        curve = [(float(r), float(a)) for r, a in header.get("curve", [])]
        return cls(records, float(header["lipschitz_bound"]), curve)


def accuracy_radius_curve(report: CertificationReport, grid) -> list[tuple[float, float]]:
    """Fraction of samples that are correct and certified at each grid radius."""
    radii = np.asarray(grid, dtype=np.float64).reshape(-1)
    if np.any(np.diff(radii) < 0):
        raise ContractError("radius grid must be sorted ascending")
    if not report.records:
        return [(float(r), 0.0) for r in radii]
    eps = report.radii()
    correct = np.asarray([rec.predicted == rec.true_label for rec in report.records])
    out = []
    for r in radii:
        frac = float(np.mean(correct & (eps >= r)))
        out.append((float(r), frac))
    return out


def build_report(logits, labels, lipschitz_bound: float, head_rows=None,
                 grid=None) -> CertificationReport:
    """Assemble a report from batch logits.

    Uses the head-aware bound when `head_rows` is given, otherwise the
    sqrt(2) formula. Misclassified samples get radius zero; ties count as
    correct with zero radius.
    """
    z = as_real_array(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    records = []
    for i in range(z.shape[0]):
        t = int(labels[i])
        m = margin(z[i], t)
        # A tied argmax is resolved toward the true label: ties certify at
        # radius zero but still count as clean hits.
        pred = t if m >= 0 else int(np.argmax(z[i]))
        if m <= 0:
            radius = 0.0
        elif head_rows is not None:
            radius = lln_certified_radius(z[i], t, head_rows, lipschitz_bound)
        else:
            radius = certified_radius(m, lipschitz_bound)
        records.append(SampleRecord(t, pred, m, radius))
    report = CertificationReport(records, float(lipschitz_bound))
    if grid is not None:
        report.curve = accuracy_radius_curve(report, grid)
    return report
