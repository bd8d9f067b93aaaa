"""File formats for masks, matrices, count data and reports.

Phase masks export as 8-bit grayscale images (value v encodes phase
2 pi v / 256, row-major, origin at the top-left pixel) or as plain-text
float arrays.  Complex matrices and vectors are stored as JSON objects with
separate re/im parts; tabular data goes to CSV with a header row.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "quantize_phase",
    "dequantize_phase",
    "save_mask_image",
    "load_mask_image",
    "save_phase_text",
    "load_phase_text",
    "complex_to_json",
    "complex_from_json",
    "save_complex",
    "load_complex",
    "save_csv",
]

PHASE_LEVELS = 256


def quantize_phase(phase: np.ndarray, levels: int = PHASE_LEVELS) -> np.ndarray:
    """Map phases (radians) to integer gray levels, wrapping at 2 pi."""
    wrapped = np.mod(np.asarray(phase, dtype=float), 2.0 * np.pi)
    v = np.floor(wrapped / (2.0 * np.pi) * levels).astype(np.int64)
    return np.mod(v, levels).astype(np.uint8 if levels <= 256 else np.uint16)


def dequantize_phase(values: np.ndarray, levels: int = PHASE_LEVELS) -> np.ndarray:
    return np.asarray(values, dtype=float) * (2.0 * np.pi / levels)


def save_mask_image(path, phase: np.ndarray) -> None:
    """Write a phase array (radians) as an 8-bit grayscale PNG or PGM."""
    path = Path(path)
    img = Image.fromarray(quantize_phase(phase), mode="L")
    fmt = "PPM" if path.suffix.lower() == ".pgm" else None
    img.save(path, format=fmt)


def load_mask_image(path) -> np.ndarray:
    """Read an 8-bit mask image back to phases in [0, 2 pi)."""
    img = Image.open(path).convert("L")
    return dequantize_phase(np.asarray(img, dtype=np.uint8))


def save_phase_text(path, phase: np.ndarray) -> None:
    np.savetxt(path, np.asarray(phase, dtype=float), fmt="%.9e")


def load_phase_text(path) -> np.ndarray:
    return np.loadtxt(path)


def complex_to_json(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.complex128)
    return {"shape": list(arr.shape), "re": arr.real.tolist(), "im": arr.imag.tolist()}


def complex_from_json(obj: dict) -> np.ndarray:
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float)
    return (re + 1j * im).reshape(obj["shape"])


def save_complex(path, arr: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(complex_to_json(arr), fh)


def load_complex(path) -> np.ndarray:
    with open(path) as fh:
        return complex_from_json(json.load(fh))


def save_csv(path, header: list[str], rows, comments: list[str] | None = None) -> None:
    """Write rows of plain values with a header line; floats use repr-stable formatting."""
    with open(path, "w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (np.floating,)):
        return f"{float(v):.12g}"
    if isinstance(v, (np.integer,)):
        return int(v)
    return v
