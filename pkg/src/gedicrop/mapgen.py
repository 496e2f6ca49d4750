"""Wall-to-wall maize maps from a HARM-20 forest."""
from __future__ import annotations

import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, ValidationError
from .forest import Forest, predict_proba
from .ingest import GridHeader, LabelRaster, check_aligned, non_crop_codes

MAIZE_CODE = 1
NON_MAIZE_CODE = 0
NODATA = -9999
MAP_LEGEND = {NON_MAIZE_CODE: "non-maize", MAIZE_CODE: "maize"}


@dataclass(eq=False)
class FeatureRaster:
    """Per-cell HARM-20 vectors; rows of NaN mark cells without features."""

    header: GridHeader
    values: np.ndarray  # (n_rows, n_cols, 20)

    def __post_init__(self):
        self.header = GridHeader(*self.header)
        if self.values.shape[:2] != (self.header.n_rows, self.header.n_cols):
            raise GridMismatchError(f"feature array {self.values.shape} does not match header {self.header}")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values).any(axis=2)


def save_feature_raster(f, fr: FeatureRaster):
    """Write an ``.npz`` archive (path or binary file) with fixed zip timestamps."""
    arrays = {"header": np.array(fr.header[:3], dtype=float),
              "shape": np.array(fr.header[3:], dtype=np.int64),
              "values": np.ascontiguousarray(fr.values)}
    with zipfile.ZipFile(f, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            with zf.open(info, "w", force_zip64=True) as out:
                np.lib.format.write_array(out, arr, allow_pickle=False)


def load_feature_raster(path) -> FeatureRaster:
    with np.load(path) as z:
        xll, yll, cs = z["header"].tolist()
        n_rows, n_cols = z["shape"].tolist()
        return FeatureRaster(GridHeader(xll, yll, cs, int(n_rows), int(n_cols)), z["values"])


def cropland_cells(cropland: LabelRaster) -> np.ndarray:
    """Boolean grid: cell has a class and that class is not non-crop."""
    mask = cropland.cells != cropland.nodata
    for code in non_crop_codes(cropland):
        mask &= cropland.cells != code
    return mask


def _tiles(n_rows, n_cols, edge):
    for r0 in range(0, n_rows, edge):
        for c0 in range(0, n_cols, edge):
            yield slice(r0, min(r0 + edge, n_rows)), slice(c0, min(c0 + edge, n_cols))


def predict_map(forest: Forest, features: FeatureRaster, cropland: LabelRaster, tile: int = 512,
                workers: int = 1):
    """Classify every cropland cell that has features.

    Returns ``(classes, confidence)``: a :class:`LabelRaster` with codes
    maize/non-maize/nodata, and a float array of maize-vote fractions (NaN
    where the class raster is nodata). Tiles are independent and are
    assembled in a fixed order.
    """
    if forest.feature_kind != "HARM20":
        raise ValidationError(f"map prediction needs a HARM20 forest, got {forest.feature_kind}")
    check_aligned(features.header, cropland.header)
    usable = cropland_cells(cropland) & ~features.missing
    classes = np.full(cropland.cells.shape, NODATA, dtype=np.int64)
    confidence = np.full(cropland.cells.shape, np.nan)

    def run(tile_slices):
        rs, cs = tile_slices
        sel = usable[rs, cs]
        if not sel.any():
            return tile_slices, sel, None
        return tile_slices, sel, predict_proba(forest, features.values[rs, cs][sel])

    tiles = list(_tiles(*cropland.cells.shape, tile))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]
    for (rs, cs), sel, proba in results:
        if proba is None:
            continue
        block_cls = classes[rs, cs]
        block_conf = confidence[rs, cs]
        block_cls[sel] = np.where(proba > 0.5, MAIZE_CODE, NON_MAIZE_CODE)
        block_conf[sel] = proba
        classes[rs, cs] = block_cls
        confidence[rs, cs] = block_conf
    out = LabelRaster(cropland.xll, cropland.yll, cropland.cell_size, classes, NODATA, dict(MAP_LEGEND))
    return out, confidence


def map_report(predicted: LabelRaster, truth: LabelRaster, maize_code: int | None = None) -> dict:
    """Cellwise maize/non-maize agreement over cells valid in both rasters.

    ``maize_code`` is the truth raster's maize code (looked up by legend name
    when omitted). Non-crop truth cells are outside the comparison.
    """
    check_aligned(predicted.header, truth.header)
    if maize_code is None:
        maize_code = truth.code_for("maize")
    valid = (predicted.cells != predicted.nodata) & cropland_cells(truth)
    pred_maize = predicted.cells[valid] == MAIZE_CODE
    true_maize = truth.cells[valid] == maize_code
    n = int(valid.sum())
    cell_area = predicted.cell_size ** 2
    correct = int((pred_maize == true_maize).sum())
    return {
        "n_cells": n,
        "accuracy": correct / n if n else None,
        "confusion": [[int((~pred_maize & ~true_maize).sum()), int((~pred_maize & true_maize).sum())],
                      [int((pred_maize & ~true_maize).sum()), int((pred_maize & true_maize).sum())]],
        "predicted_maize_cells": int(pred_maize.sum()),
        "true_maize_cells": int(true_maize.sum()),
        "predicted_maize_area_deg2": int(pred_maize.sum()) * cell_area,
        "true_maize_area_deg2": int(true_maize.sum()) * cell_area,
        "cell_area_deg2": cell_area,
    }
