"""Grayscale PGM and CSV input/output.

Images are read as float64 and written as binary PGM (P5), clamped and
rounded to [0, 255] only at write time.  Floats in CSV files use repr so
that repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from debiasing.errors import InvalidDimensionError


def read_pgm(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=float)


def write_pgm(path: Path, image: np.ndarray) -> Path:
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise InvalidDimensionError(f"PGM output needs a 2D image, got shape {image.shape}")
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PPM")
    return path


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def write_signal_csv(path: Path, values: np.ndarray) -> Path:
    values = np.asarray(values, dtype=float).ravel()
    return write_csv(path, ["index", "value"], enumerate(values))


def read_signal_csv(path: Path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        return np.array([float(row["value"]) for row in csv.DictReader(fh)])


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
