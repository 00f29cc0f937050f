"""Synthetic demand benchmark, CSV ingestion, and prediction output.

The generator composes a daily sinusoid, a weekday/weekend offset, Gaussian
noise, and random demand events. Every event announces itself with a
templated local text one slot before the spike starts, which is what makes
the text modality genuinely predictive; events hitting two or more regions
at once also emit a shared global text. ``text_mode`` can shuffle the texts
across slots (destroying the alignment, not the marginals) or blank them.

All numeric draws come from streams that do not depend on ``text_mode``, so
the three variants of a seed share identical demand series.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import ConfigError, DataError
from .numeric import SeededRng

__all__ = [
    "GeneratorConfig",
    "RegionSeries",
    "DemandDataset",
    "PredictionRow",
    "generate_synthetic",
    "load_csv",
    "write_dataset",
    "write_predictions",
    "atomic_write_text",
]

START_TIME = datetime(2024, 1, 1, tzinfo=timezone.utc)  # a Monday

DEMAND_HEADER = "region_id,timestamp,demand,avg_passengers,avg_distance,is_holiday,is_weekend"
LOCAL_TEXT_HEADER = "region_id,timestamp,description"
GLOBAL_TEXT_HEADER = "timestamp,description"
PREDICTION_HEADER = "region_id,timestamp,horizon_step,y_true,y_pred"

EVENT_LEVELS = ("moderate", "high", "severe")


@dataclass
class GeneratorConfig:
    regions: int = 3
    days: int = 6
    slots_per_day: int = 48
    base_demand: float = 10.0
    daily_amp: float = 5.0
    weekly_amp: float = 2.0
    noise_sigma: float = 0.3
    event_rate: float = 0.04
    event_amp_lo: float = 8.0
    event_amp_hi: float = 16.0
    text_mode: str = "full"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.regions < 1 or self.days < 1 or self.slots_per_day < 1:
            raise ConfigError("regions, days and slots_per_day must be positive")
        if 86400 % self.slots_per_day != 0:
            raise ConfigError(f"slots_per_day must divide 86400 seconds, got {self.slots_per_day}")
        if self.daily_amp < 0 or self.weekly_amp < 0 or self.noise_sigma < 0:
            raise ConfigError("amplitudes and noise_sigma must be >= 0")
        if not 0.0 <= self.event_rate <= 1.0:
            raise ConfigError(f"event_rate must lie in [0, 1], got {self.event_rate}")
        if self.event_amp_lo > self.event_amp_hi:
            raise ConfigError("event_amp_lo must not exceed event_amp_hi")
        if self.text_mode not in ("full", "shuffled", "empty"):
            raise ConfigError(f"text_mode must be full, shuffled or empty, got {self.text_mode!r}")


@dataclass
class RegionSeries:
    region: str
    timestamps: list[datetime]
    demand: np.ndarray
    passengers: np.ndarray
    distance: np.ndarray
    is_holiday: np.ndarray
    is_weekend: np.ndarray
    local_texts: list[str]


@dataclass
class DemandDataset:
    regions: list[RegionSeries]
    global_texts: list[str]
    timestamps: list[datetime]
    slot_seconds: int

    @property
    def slots_per_day(self) -> int:
        return 86400 // self.slot_seconds

    def region_names(self) -> list[str]:
        return [r.region for r in self.regions]


def _seasonal_curve(cfg: GeneratorConfig, slot_index: int) -> float:
    slot = slot_index % cfg.slots_per_day
    day = slot_index // cfg.slots_per_day
    weekday = day % 7 < 5
    weekly = cfg.weekly_amp if weekday else -cfg.weekly_amp
    return cfg.base_demand + cfg.daily_amp * math.sin(2.0 * math.pi * slot / cfg.slots_per_day) + weekly


def _event_level(cfg: GeneratorConfig, amplitude: float) -> str:
    span = cfg.event_amp_hi - cfg.event_amp_lo
    if span <= 0:
        return EVENT_LEVELS[-1]
    frac = (amplitude - cfg.event_amp_lo) / span
    return EVENT_LEVELS[min(2, int(frac * 3))]


def generate_synthetic(cfg: GeneratorConfig) -> DemandDataset:
    """Build the benchmark dataset as a pure function of the config."""
    total = cfg.days * cfg.slots_per_day
    slot_seconds = 86400 // cfg.slots_per_day
    timestamps = [START_TIME + timedelta(seconds=slot_seconds * i) for i in range(total)]
    root = SeededRng(cfg.seed)
    noise_rng = root.child("noise")
    event_rng = root.child("events")
    feature_rng = root.child("features")
    shuffle_rng = root.child("shuffle")

    names = [f"r{i}" for i in range(cfg.regions)]
    demand = np.zeros((cfg.regions, total))
    for i in range(total):
        base = _seasonal_curve(cfg, i)
        for r in range(cfg.regions):
            demand[r, i] = base
    local_texts = [["" for _ in range(total)] for _ in range(cfg.regions)]
    global_texts = ["" for _ in range(total)]

    def append_text(store: list[str], idx: int, text: str) -> None:
        store[idx] = text if not store[idx] else store[idx] + " " + text

    for i in range(total):
        if event_rng.random() >= cfg.event_rate:
            continue
        affected = [r for r in range(cfg.regions) if event_rng.random() < 0.5]
        if not affected:
            affected = [event_rng.integers(0, cfg.regions)]
        amplitude = cfg.event_amp_lo + (cfg.event_amp_hi - cfg.event_amp_lo) * event_rng.random()
        duration = event_rng.integers(1, 5)
        level = _event_level(cfg, amplitude)
        for r in affected:
            demand[r, i: i + duration] += amplitude
            if i >= 1:
                append_text(local_texts[r], i - 1, f"large concert near region {names[r]}; expect {level} extra demand")
        if len(affected) >= 2 and i >= 1:
            append_text(global_texts, i - 1, f"citywide gatherings announced; expect {level} demand increase across regions")

    if cfg.noise_sigma > 0.0:
        demand += noise_rng.normal((cfg.regions, total), std=cfg.noise_sigma)
    else:
        noise_rng.normal((cfg.regions, total), std=1.0)  # keep stream usage fixed
    demand = np.maximum(demand, 0.0)

    slots = np.arange(total) % cfg.slots_per_day
    days = np.arange(total) // cfg.slots_per_day
    weekend = ((days % 7) >= 5).astype(np.int64)
    passengers_rows = []
    distance_rows = []
    for r in range(cfg.regions):
        phase = 2.0 * math.pi * slots / cfg.slots_per_day
        passengers_rows.append(1.4 + 0.4 * np.sin(phase + 1.3) + feature_rng.normal((total,), std=0.05))
        distance_rows.append(3.0 + 1.0 * np.sin(phase + 2.1) + feature_rng.normal((total,), std=0.1))

    if cfg.text_mode == "shuffled":
        for r in range(cfg.regions):
            perm = shuffle_rng.permutation(total)
            local_texts[r] = [local_texts[r][j] for j in perm]
        perm = shuffle_rng.permutation(total)
        global_texts = [global_texts[j] for j in perm]
    elif cfg.text_mode == "empty":
        local_texts = [["" for _ in range(total)] for _ in range(cfg.regions)]
        global_texts = ["" for _ in range(total)]

    regions = [
        RegionSeries(
            region=names[r],
            timestamps=list(timestamps),
            demand=demand[r].copy(),
            passengers=np.maximum(passengers_rows[r], 0.0),
            distance=np.maximum(distance_rows[r], 0.0),
            is_holiday=np.zeros(total, dtype=np.int64),
            is_weekend=weekend.copy(),
            local_texts=local_texts[r],
        )
        for r in range(cfg.regions)
    ]
    return DemandDataset(regions=regions, global_texts=global_texts, timestamps=list(timestamps), slot_seconds=slot_seconds)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_ts(raw: str, where: str) -> datetime:
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00")).astimezone(timezone.utc)
    except ValueError as exc:
        raise DataError(f"unparsable timestamp {raw!r} in {where}") from exc


def atomic_write_text(path, content: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = str(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
    os.replace(tmp, path)


def write_dataset(dataset: DemandDataset, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [DEMAND_HEADER]
    for series in dataset.regions:
        for i, ts in enumerate(series.timestamps):
            lines.append(
                f"{series.region},{_iso(ts)},{_fmt(series.demand[i])},{_fmt(series.passengers[i])},"
                f"{_fmt(series.distance[i])},{int(series.is_holiday[i])},{int(series.is_weekend[i])}"
            )
    atomic_write_text(os.path.join(out_dir, "demand.csv"), "\n".join(lines) + "\n")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOCAL_TEXT_HEADER.split(","))
    for series in dataset.regions:
        for i, ts in enumerate(series.timestamps):
            if series.local_texts[i]:
                writer.writerow([series.region, _iso(ts), series.local_texts[i]])
    atomic_write_text(os.path.join(out_dir, "local_text.csv"), buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GLOBAL_TEXT_HEADER.split(","))
    for i, ts in enumerate(dataset.timestamps):
        if dataset.global_texts[i]:
            writer.writerow([_iso(ts), dataset.global_texts[i]])
    atomic_write_text(os.path.join(out_dir, "global_text.csv"), buf.getvalue())


def load_csv(demand_path, local_text_path=None, global_text_path=None) -> DemandDataset:
    """Read the dataset schema back; missing text rows become empty texts."""
    per_region: dict[str, dict] = {}
    with open(demand_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{demand_path}: empty demand file")
        expected = DEMAND_HEADER.split(",")
        if [h.strip() for h in header] not in (expected, expected[:5]):
            raise DataError(f"{demand_path}: unexpected header {header}")
        has_flags = len(header) == 7
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{demand_path} row {rowno}: expected {len(header)} fields, got {len(row)}")
            region = row[0]
            ts = _parse_ts(row[1], f"{demand_path} row {rowno}")
            try:
                demand = float(row[2])
                passengers = float(row[3])
                distance = float(row[4])
                holiday = int(row[5]) if has_flags else 0
                weekend = int(row[6]) if has_flags else 0
            except ValueError as exc:
                raise DataError(f"{demand_path} row {rowno}: unparsable number: {exc}") from exc
            if demand < 0:
                raise DataError(f"{demand_path} row {rowno}: negative demand {demand}")
            bucket = per_region.setdefault(
                region,
                {"timestamps": [], "demand": [], "passengers": [], "distance": [], "holiday": [], "weekend": []},
            )
            if bucket["timestamps"] and ts <= bucket["timestamps"][-1]:
                raise DataError(f"{demand_path} row {rowno}: timestamps not strictly increasing for region {region}")
            bucket["timestamps"].append(ts)
            bucket["demand"].append(demand)
            bucket["passengers"].append(passengers)
            bucket["distance"].append(distance)
            bucket["holiday"].append(holiday)
            bucket["weekend"].append(weekend)
    if not per_region:
        raise DataError(f"{demand_path}: no data rows")

    slot_seconds = None
    reference: list[datetime] | None = None
    for region, bucket in per_region.items():
        ts = bucket["timestamps"]
        if len(ts) >= 2:
            widths = {int((b - a).total_seconds()) for a, b in zip(ts, ts[1:])}
            if len(widths) != 1:
                raise DataError(f"region {region}: slot width is not constant")
            width = widths.pop()
            if slot_seconds is None:
                slot_seconds = width
            elif slot_seconds != width:
                raise DataError(f"region {region}: slot width {width}s differs from {slot_seconds}s")
        if reference is None:
            reference = ts
        elif ts != reference:
            raise DataError(f"region {region}: timestamps differ from other regions")
    if slot_seconds is None:
        slot_seconds = 1800
    if 86400 % slot_seconds != 0:
        raise DataError(f"slot width {slot_seconds}s does not divide one day")

    index = {ts: i for i, ts in enumerate(reference)}
    total = len(reference)
    local_texts = {region: ["" for _ in range(total)] for region in per_region}
    if local_text_path is not None and os.path.exists(local_text_path):
        with open(local_text_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for rowno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise DataError(f"{local_text_path} row {rowno}: expected 3 fields, got {len(row)}")
                region, raw_ts, text = row
                if region not in per_region:
                    raise DataError(f"{local_text_path} row {rowno}: unknown region {region!r}")
                ts = _parse_ts(raw_ts, f"{local_text_path} row {rowno}")
                if ts not in index:
                    raise DataError(f"{local_text_path} row {rowno}: timestamp {raw_ts} matches no demand slot")
                local_texts[region][index[ts]] = text
    global_texts = ["" for _ in range(total)]
    if global_text_path is not None and os.path.exists(global_text_path):
        with open(global_text_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for rowno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise DataError(f"{global_text_path} row {rowno}: expected 2 fields, got {len(row)}")
                raw_ts, text = row
                ts = _parse_ts(raw_ts, f"{global_text_path} row {rowno}")
                if ts not in index:
                    raise DataError(f"{global_text_path} row {rowno}: timestamp {raw_ts} matches no demand slot")
                global_texts[index[ts]] = text

    regions = [
        RegionSeries(
            region=region,
            timestamps=bucket["timestamps"],
            demand=np.array(bucket["demand"], dtype=np.float64),
            passengers=np.array(bucket["passengers"], dtype=np.float64),
            distance=np.array(bucket["distance"], dtype=np.float64),
            is_holiday=np.array(bucket["holiday"], dtype=np.int64),
            is_weekend=np.array(bucket["weekend"], dtype=np.int64),
            local_texts=local_texts[region],
        )
        for region, bucket in per_region.items()
    ]
    return DemandDataset(regions=regions, global_texts=global_texts, timestamps=list(reference), slot_seconds=slot_seconds)


@dataclass
class PredictionRow:
    region: str
    timestamp: datetime
    horizon_step: int
    y_true: float
    y_pred: float


def write_predictions(rows: list[PredictionRow], path) -> None:
    lines = [PREDICTION_HEADER]
    for row in rows:
        lines.append(f"{row.region},{_iso(row.timestamp)},{row.horizon_step},{_fmt(row.y_true)},{_fmt(row.y_pred)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
