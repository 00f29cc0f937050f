"""Two-stage training orchestration, prediction, and model persistence.

Stage 1 fits the local fusion and graph parameters against a one-step-ahead
auxiliary head, then freezes the epoch-averaged relation matrix. Stage 2
trains the whole value path end to end under the joint objective with that
matrix held fixed. Both stages are deterministic given the config seed.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .data import DemandDataset
from .errors import ConfigError, FormatError, NumericError, TrainingError
from .model import ALL_COMPONENTS, Model, SeriesWindow, TrainConfig, build_model, joint_loss
from .numeric import SeededRng, backward, clear_tape, no_tape
from .optim import AdamState, adam_step
from .text import EncoderConfig, TextRecord, encode

log = logging.getLogger(__name__)

__all__ = [
    "MODEL_MAGIC",
    "SplitWindows",
    "build_windows",
    "split_windows",
    "compute_scaler",
    "train_stage1",
    "train_stage2",
    "fit",
    "predict",
    "save_model",
    "load_model",
]

MODEL_MAGIC = b"KGCM1"
FEATURE_COUNT = 5  # demand, avg_passengers, avg_distance, is_holiday, is_weekend

TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.15


def _slot_of_day(ts: datetime, slot_seconds: int) -> int:
    midnight = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    return int((ts - midnight).total_seconds()) // slot_seconds


def build_windows(dataset: DemandDataset, config: TrainConfig, encoder: EncoderConfig | None = None) -> dict[str, list[SeriesWindow]]:
    """Stride-1 windows per region with pre-encoded text vectors."""
    if encoder is None:
        encoder = EncoderConfig(mode="hashed", dim=config.d)
    t, horizon = config.window, config.horizon
    token_cache: dict[str, np.ndarray] = {}
    pooled_cache: dict[str, np.ndarray] = {}

    def tokens_for(text: str, rec_id: str) -> np.ndarray:
        key = text if encoder.mode == "hashed" else rec_id
        if key not in token_cache:
            token_cache[key] = encode(TextRecord(text, id=rec_id), encoder).tokens
        return token_cache[key]

    def pooled_for(text: str, rec_id: str) -> np.ndarray:
        key = text if encoder.mode == "hashed" else rec_id
        if key not in pooled_cache:
            pooled_cache[key] = encode(TextRecord(text, id=rec_id), encoder).pooled
        return pooled_cache[key]

    out: dict[str, list[SeriesWindow]] = {}
    for series in dataset.regions:
        total = len(series.timestamps)
        features = np.column_stack(
            [series.demand, series.passengers, series.distance,
             series.is_holiday.astype(np.float64), series.is_weekend.astype(np.float64)]
        )
        slots = [_slot_of_day(ts, dataset.slot_seconds) for ts in series.timestamps]
        dows = [ts.weekday() for ts in series.timestamps]
        for s in slots:
            if s >= config.day_slots:
                raise ConfigError(
                    f"dataset has {dataset.slots_per_day} slots per day but the model tables cover {config.day_slots}"
                )
        windows = []
        for start in range(0, total - t - horizon + 1):
            local = [
                tokens_for(series.local_texts[start + k], f"{series.region}|{series.timestamps[start + k].isoformat()}")
                for k in range(t)
            ]
            last_input = start + t - 1
            pooled = pooled_for(
                dataset.global_texts[last_input], f"global|{dataset.timestamps[last_input].isoformat()}"
            )
            if pooled.shape != (config.d,):
                raise ConfigError(f"text vectors have dimension {pooled.shape[0]}, model expects {config.d}")
            windows.append(
                SeriesWindow(
                    region=series.region,
                    inputs=features[start: start + t],
                    targets=series.demand[start + t: start + t + horizon].copy(),
                    slots=slots[start: start + t],
                    dows=dows[start: start + t],
                    local_tokens=local,
                    global_pooled=pooled,
                    start_index=start,
                    target_times=series.timestamps[start + t: start + t + horizon],
                )
            )
        out[series.region] = windows
    return out


@dataclass
class SplitWindows:
    train: list[SeriesWindow]
    val: list[SeriesWindow]
    test: list[SeriesWindow]


def split_windows(per_region: dict[str, list[SeriesWindow]]) -> SplitWindows:
    """Chronological 70/15/15 split of each region's window list."""
    train: list[SeriesWindow] = []
    val: list[SeriesWindow] = []
    test: list[SeriesWindow] = []
    for region in sorted(per_region):
        windows = per_region[region]
        k = len(windows)
        n_train = max(1, int(k * TRAIN_FRACTION))
        n_val = int(k * VAL_FRACTION)
        train.extend(windows[:n_train])
        val.extend(windows[n_train: n_train + n_val])
        test.extend(windows[n_train + n_val:])
    return SplitWindows(train=train, val=val, test=test)


def compute_scaler(windows: list[SeriesWindow]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.concatenate([w.inputs for w in windows], axis=0)
    return rows.mean(axis=0), rows.std(axis=0)


def _chunks(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i: i + size]


def _accumulate(model_params: dict, grads_by_tensor: dict, sums: dict[str, np.ndarray]) -> None:
    for name, tensor in model_params.items():
        g = grads_by_tensor.get(tensor)
        if g is None:
            continue
        if name in sums:
            sums[name] = sums[name] + g
        else:
            sums[name] = g


def _batch_grads(params: dict, sums: dict[str, np.ndarray], batch_size: int) -> dict[str, np.ndarray]:
    return {
        k: (sums[k] / batch_size if k in sums else np.zeros_like(params[k].data))
        for k in params
    }


def train_stage1(model: Model, windows: list[SeriesWindow], config: TrainConfig) -> None:
    """Fit fusion + graph weights on the auxiliary objective; freeze the matrix."""
    if not model.uses_stage1:
        raise TrainingError("stage 1 requires the graph or local-text component")
    if not windows:
        raise TrainingError("stage 1 needs a nonempty training set")
    params = model.stage1_parameters()
    adam = AdamState(lr=config.lr, clip_norm=config.clip_norm)
    shuffle = SeededRng(config.seed).child("stage1/shuffle")
    d = config.d
    matrix_sum = np.zeros((d, d))
    matrix_count = 0
    for epoch in range(config.epochs_stage1):
        order = shuffle.permutation(len(windows))
        last_epoch = epoch == config.epochs_stage1 - 1
        loss_total = 0.0
        for batch_no, batch in enumerate(_chunks(order, config.batch_size)):
            sums: dict[str, np.ndarray] = {}
            try:
                for idx in batch:
                    loss, result = model.stage1_forward(windows[idx])
                    loss_total += loss.item()
                    grads = backward(loss)
                    _accumulate(params, grads, sums)
                    model.pad_events += result.pad_count
                    if last_epoch and result.final_matrices is not None:
                        matrix_sum += result.final_matrices[-1]
                        matrix_count += 1
                adam_step(adam, params, _batch_grads(params, sums, len(batch)))
            except NumericError as exc:
                raise TrainingError(f"stage 1, epoch {epoch}, batch {batch_no}: {exc}") from exc
        model.stage1_history.append(loss_total / len(windows))
    if matrix_count:
        model.freeze_structure(matrix_sum / matrix_count)
    if model.pad_events:
        log.debug("stage 1 padded %d short history lifts", model.pad_events)


def train_stage2(model: Model, windows: list[SeriesWindow], config: TrainConfig) -> None:
    """End-to-end training of the full value path under the joint objective."""
    if not windows:
        raise TrainingError("stage 2 needs a nonempty training set")
    params = model.stage2_parameters()
    adam = AdamState(lr=config.lr, clip_norm=config.clip_norm)
    shuffle = SeededRng(config.seed).child("stage2/shuffle")
    frozen_bytes = model.a_star.tobytes() if model.a_star is not None else None
    for epoch in range(config.epochs_stage2):
        order = shuffle.permutation(len(windows))
        loss_total = 0.0
        for batch_no, batch in enumerate(_chunks(order, config.batch_size)):
            sums: dict[str, np.ndarray] = {}
            try:
                for idx in batch:
                    window = windows[idx]
                    result = model.stage2_forward(window)
                    loss = joint_loss(
                        result.predictions,
                        model.scale_targets(window.targets),
                        model.lpo,
                        config.lambda_prompt,
                    )
                    loss_total += loss.item()
                    grads = backward(loss)
                    _accumulate(params, grads, sums)
                adam_step(adam, params, _batch_grads(params, sums, len(batch)))
            except NumericError as exc:
                raise TrainingError(f"stage 2, epoch {epoch}, batch {batch_no}: {exc}") from exc
        model.stage2_history.append(loss_total / len(windows))
    if frozen_bytes is not None and model.a_star.tobytes() != frozen_bytes:
        raise TrainingError("frozen relation matrix changed during stage 2")


def fit(dataset: DemandDataset, config: TrainConfig, components: frozenset[str] = ALL_COMPONENTS,
        encoder: EncoderConfig | None = None) -> Model:
    """Both stages over the chronological train split; returns the trained model."""
    per_region = build_windows(dataset, config, encoder)
    split = split_windows(per_region)
    if not split.train:
        raise TrainingError("no training windows can be constructed from this dataset")
    model = build_model(config, components, FEATURE_COUNT)
    mean, std = compute_scaler(split.train)
    model.set_scaler(mean, std)
    clear_tape()
    if model.uses_stage1:
        train_stage1(model, split.train, config)
    train_stage2(model, split.train, config)
    return model


def predict(model: Model, window: SeriesWindow) -> np.ndarray:
    """Forecast in demand units for one window."""
    with no_tape():
        result = model.stage2_forward(window)
    return model.unscale_predictions(result.predictions.data)


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise FormatError(f"truncated model file at offset {self.pos}")
        out = self.blob[self.pos: self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [struct.pack("<I", len(encoded)), encoded, struct.pack("<B", arr.ndim)]
    for dim in arr.shape:
        parts.append(struct.pack("<I", dim))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _meta_records(model: Model) -> dict[str, np.ndarray]:
    out = {
        "_meta/scaler_mean": model.scaler_mean,
        "_meta/scaler_std": model.scaler_std,
    }
    if model.stage1_history:
        out["_meta/history_stage1"] = np.array(model.stage1_history, dtype=np.float64)
    if model.stage2_history:
        out["_meta/history_stage2"] = np.array(model.stage2_history, dtype=np.float64)
    return out


def save_model(model: Model, path) -> None:
    """Write the pinned binary layout: magic, sorted records, matrix, config."""
    from .configio import render_model_config

    records = {name: t.data for name, t in model.named_parameters().items()}
    records.update(_meta_records(model))
    body = [MODEL_MAGIC, struct.pack("<I", len(records))]
    for name in sorted(records):
        body.append(_pack_record(name, records[name]))
    if model.a_star is not None:
        body.append(struct.pack("<B", 1))
        body.append(struct.pack("<I", model.a_star.shape[0]))
        body.append(np.ascontiguousarray(model.a_star, dtype="<f8").tobytes())
    else:
        body.append(struct.pack("<B", 0))
    config_text = render_model_config(model.config, model.components, model.feature_count)
    encoded = config_text.encode("utf-8")
    body.append(struct.pack("<I", len(encoded)))
    body.append(encoded)
    blob = b"".join(body)
    path = str(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_model(path) -> Model:
    from .configio import parse_model_config

    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic, not a model file")
    count = reader.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u8()
        dims = tuple(reader.u32() for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(dims).copy()
        records[name] = arr
    a_star = None
    if reader.u8():
        d = reader.u32()
        a_star = np.frombuffer(reader.take(8 * d * d), dtype="<f8").reshape(d, d).copy()
    config_text = reader.take(reader.u32()).decode("utf-8")
    config, components, features = parse_model_config(config_text)
    model = build_model(config, components, features)
    params = model.named_parameters()
    stored = {k: v for k, v in records.items() if not k.startswith("_meta/")}
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise FormatError(f"{path}: parameter names disagree (missing {missing}, extra {extra})")
    for name, arr in stored.items():
        if params[name].data.shape != arr.shape:
            raise FormatError(f"{path}: record {name} has shape {arr.shape}, expected {params[name].data.shape}")
        params[name].data = arr
    if a_star is not None:
        a_star.setflags(write=False)
        model.a_star = a_star
    model.scaler_mean = records["_meta/scaler_mean"]
    model.scaler_std = records["_meta/scaler_std"]
    model.stage1_history = list(records.get("_meta/history_stage1", np.array([])))
    model.stage2_history = list(records.get("_meta/history_stage2", np.array([])))
    return model
