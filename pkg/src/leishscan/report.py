"""Infection statistics, the plain-text report, and evaluation against annotations."""

from __future__ import annotations

import datetime as _dt
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .associate import AssociationResult

TIMESTAMP_FORMAT = "%d - %m - %Y @ %H:%M"
NO_TIMESTAMP = "-- - -- - ---- @ --:--"


class UndefinedAccuracyError(ValueError):
    pass


@dataclass
class RegionResult:
    """Classification outcome of one segmented region."""

    id: int
    area: int
    centroid: tuple[float, float]
    touches_border: bool
    rule_vote: int | None  # None: too large to classify
    svm_vote: int | None = None
    final: int | None = None
    agreed: bool = True
    shape: int = 1
    subcentroids: list[tuple[float, float]] = field(default_factory=list)

    @property
    def counted(self) -> bool:
        """Contributes to totals: not on the border, not noise, not unclassified."""
        return not self.touches_border and self.final is not None and self.final > 0


@dataclass
class InfectionReport:
    image_path: str
    generated_at: _dt.datetime | None
    macrophagic_regions: int = 0
    uni_nucleic_macrophagic: int = 0
    multi_nucleic_macrophagic: int = 0
    parasitic_regions: int = 0
    uni_nucleic_parasitic: int = 0
    multi_nucleic_parasitic: int = 0
    total_macrophages: int = 0
    total_parasites: int = 0
    sync_rate_macrophages: float = 0.0  # percent
    sync_rate_parasites: float = 0.0
    infection_ratio: float = 0.0
    avg_parasites_per_infected: float = 0.0
    avg_parasites_per_total: float = 0.0
    infected_macrophages: int = 0
    associated_parasites: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generated_at"] = self.generated_at.strftime("%Y-%m-%dT%H:%M") if self.generated_at else None
        return d


def _channel_counts(results: list[RegionResult]) -> tuple[int, int, int, int, float]:
    counted = [r for r in results if r.counted]
    uni = sum(1 for r in counted if r.final == 1)
    multi = sum(1 for r in counted if r.final >= 2)
    total = sum(r.final for r in counted)
    sync = 100.0 * sum(1 for r in counted if r.agreed) / len(counted) if counted else 0.0
    return len(results), uni, multi, total, sync


def compute_stats(
    macrophages: list[RegionResult],
    parasites: list[RegionResult],
    association: AssociationResult,
    image_path: str = "",
    generated_at: _dt.datetime | None = None,
) -> InfectionReport:
    m_regions, m_uni, m_multi, m_total, m_sync = _channel_counts(macrophages)
    p_regions, p_uni, p_multi, p_total, p_sync = _channel_counts(parasites)
    infected = len(association.infected_macrophages)
    assoc = association.associated_parasites
    warnings = []
    if m_total == 0:
        warnings.append("no-macrophages")
    if infected == 0:
        warnings.append("no-infected-macrophages")
    if infected > m_total:
        # declustering produced more nuclei than the votes; keep the ratio bounded
        warnings.append("infected-exceeds-total")
        infected = m_total
    return InfectionReport(
        image_path=image_path,
        generated_at=generated_at,
        macrophagic_regions=m_regions,
        uni_nucleic_macrophagic=m_uni,
        multi_nucleic_macrophagic=m_multi,
        parasitic_regions=p_regions,
        uni_nucleic_parasitic=p_uni,
        multi_nucleic_parasitic=p_multi,
        total_macrophages=m_total,
        total_parasites=p_total,
        sync_rate_macrophages=m_sync,
        sync_rate_parasites=p_sync,
        infection_ratio=infected / m_total if m_total else 0.0,
        avg_parasites_per_infected=assoc / infected if infected else 0.0,
        avg_parasites_per_total=assoc / m_total if m_total else 0.0,
        infected_macrophages=infected,
        associated_parasites=assoc,
        warnings=warnings,
    )


def format_ratio(x: float) -> str:
    """Shortest single-precision decimal, written like Java's ``Float.toString``."""
    f = np.float32(x)
    if not math.isfinite(f):
        return "NaN" if math.isnan(f) else ("Infinity" if f > 0 else "-Infinity")
    if f == 0 or 1e-3 <= abs(f) < 1e7:
        s = np.format_float_positional(f, unique=True, trim="0")
        return s
    s = np.format_float_scientific(f, unique=True, trim="0", exp_digits=1)
    mant, exp = s.split("e")
    return f"{mant}E{int(exp)}"


def format_percent(x: float) -> str:
    """Up to four decimals, trailing zeros dropped, followed by ``%``."""
    d = Decimal(repr(float(x))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s + "%"


_LINES = (
    ("Macrophagic regions", "macrophagic_regions"),
    ("Uni-nucleic macrophagic regions", "uni_nucleic_macrophagic"),
    ("Multi-nucleic macrophagic regions", "multi_nucleic_macrophagic"),
    None,
    ("Parasitic regions", "parasitic_regions"),
    ("Uni-nucleic parasitic regions", "uni_nucleic_parasitic"),
    ("Multi-nucleic parasitic regions", "multi_nucleic_parasitic"),
    None,
    ("Total counted macrophages", "total_macrophages"),
    ("Total counted parasites", "total_parasites"),
    None,
    ("Classifier synchronization rate (macrophages)", "sync_rate_macrophages"),
    ("Classifier synchronization rate (parasites)", "sync_rate_parasites"),
    None,
    ("Overall infection ratio", "infection_ratio"),
    None,
    ("Average parasites per infected macrophage", "avg_parasites_per_infected"),
    ("Average parasites per total macrophages", "avg_parasites_per_total"),
)
_PERCENT = {"sync_rate_macrophages", "sync_rate_parasites"}
_RATIO = {"infection_ratio", "avg_parasites_per_infected", "avg_parasites_per_total"}


def render_report(report: InfectionReport, timestamp: bool = True) -> str:
    stamp = report.generated_at.strftime(TIMESTAMP_FORMAT) if (timestamp and report.generated_at) else NO_TIMESTAMP
    out = [report.image_path, f"Report generated on: {stamp}", ""]
    for item in _LINES:
        if item is None:
            out.append("")
            continue
        label, name = item
        v = getattr(report, name)
        if name in _PERCENT:
            text = format_percent(v)
        elif name in _RATIO:
            text = format_ratio(v)
        else:
            text = str(int(v))
        out.append(f"{label}: {text}")
    return "\n".join(out) + "\n"


def parse_report(text: str) -> InfectionReport:
    """Inverse of :func:`render_report` (also accepts comma decimals)."""
    lines = text.splitlines()
    if len(lines) < 2 or not lines[1].startswith("Report generated on: "):
        raise ValueError("not a report: missing header")
    stamp = lines[1][len("Report generated on: "):]
    when = None if stamp == NO_TIMESTAMP else _dt.datetime.strptime(stamp, TIMESTAMP_FORMAT)
    values = {}
    by_label = {item[0]: item[1] for item in _LINES if item}
    for line in lines[2:]:
        m = re.fullmatch(r"(.+?): (\S+)", line)
        if not m or m.group(1) not in by_label:
            continue
        name, raw = by_label[m.group(1)], m.group(2).replace(",", ".")
        if name in _PERCENT:
            values[name] = float(raw.rstrip("%"))
        elif name in _RATIO:
            values[name] = float(raw)
        else:
            values[name] = int(raw)
    missing = set(by_label.values()) - set(values)
    if missing:
        raise ValueError(f"report lacks fields: {sorted(missing)}")
    return InfectionReport(image_path=lines[0], generated_at=when, **values)


def sidecar_json(report: InfectionReport, regions: dict[str, list[RegionResult]] | None = None,
                 extra: dict | None = None) -> str:
    obj = {"report": report.to_dict()}
    if extra:
        obj.update(extra)
    if regions is not None:
        obj["regions"] = {ch: [asdict(r) for r in rs] for ch, rs in regions.items()}
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


REGION_CSV_FIELDS = ("channel", "id", "area", "cx", "cy", "touches_border", "shape",
                     "rule_vote", "svm_vote", "final", "agreed")


def regions_csv(regions: dict[str, list[RegionResult]]) -> str:
    rows = [",".join(REGION_CSV_FIELDS)]
    for ch, rs in regions.items():
        for r in rs:
            vals = (ch, r.id, r.area, f"{r.centroid[0]:.4f}", f"{r.centroid[1]:.4f}", int(r.touches_border),
                    r.shape, "" if r.rule_vote is None else r.rule_vote,
                    "" if r.svm_vote is None else r.svm_vote, "" if r.final is None else r.final, int(r.agreed))
            rows.append(",".join(map(str, vals)))
    return "\n".join(rows) + "\n"


def segmentation_accuracy(detected, ground_truth) -> float:
    """Correct detections over ground-truth objects, summed over images."""
    correct = int(np.sum(detected))
    total = int(np.sum(ground_truth))
    if total <= 0:
        raise UndefinedAccuracyError("accuracy undefined without ground-truth objects")
    return correct / total


@dataclass(frozen=True)
class EvalResult:
    mean: float
    std: float
    algorithm: float
    annotations: tuple[float, ...]

    @property
    def upper(self) -> float:
        return self.mean + 2.0 * self.std

    @property
    def lower(self) -> float:
        return self.mean - 2.0 * self.std

    @property
    def error(self) -> float:
        return abs(self.algorithm - self.mean)

    @property
    def within_bounds(self) -> bool:
        return self.error <= 2.0 * self.std


def evaluate(alg: float, annotations) -> EvalResult:
    """Model the annotators as a normal sample; population sigma."""
    x = np.asarray(annotations, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("need at least two annotation values")
    mu = float(x.mean())
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    return EvalResult(mu, sigma, float(alg), tuple(x.tolist()))


_EVAL_ROWS = (
    ("Mean (µ)", lambda e: e.mean),
    ("Standard Deviation (σ)", lambda e: e.std),
    ("µ + 2σ", lambda e: e.upper),
    ("µ - 2σ", lambda e: e.lower),
    ("Algorithm Error", lambda e: e.error),
)


def evaluation_table(results: dict[str, EvalResult]) -> str:
    """Tab-separated table, one column per metric, values rounded to integers."""
    metrics = list(results)
    lines = ["\t" + "\t".join(metrics)]
    for label, get in _EVAL_ROWS:
        lines.append(label + "\t" + "\t".join(str(int(Decimal(repr(get(results[m]))).quantize(Decimal(1), rounding="ROUND_HALF_UP"))) for m in metrics))
    lines.append("Within ±2σ\t" + "\t".join("yes" if results[m].within_bounds else "no" for m in metrics))
    return "\n".join(lines) + "\n"


def report_field_names() -> list[str]:
    return [f.name for f in fields(InfectionReport)]
