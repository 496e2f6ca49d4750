import io

import numpy as np
import pytest

from gedicrop.errors import GridMismatchError, ValidationError
from gedicrop.experiments import compute_metrics
from gedicrop.forest import ForestConfig, predict, predict_proba, train_forest
from gedicrop.ingest import GridHeader, LabelRaster
from gedicrop.mapgen import (FeatureRaster, cropland_cells, load_feature_raster, map_report, predict_map,
                             save_feature_raster)

LEGEND = {0: "non-crop", 1: "maize", 5: "soybean"}


def _toy(n_rows=6, n_cols=7, seed=0):
    rng = np.random.default_rng(seed)
    cells = rng.choice([0, 1, 5, -9999], size=(n_rows, n_cols), p=[0.2, 0.35, 0.35, 0.1])
    crop = LabelRaster(10.0, 20.0, 0.5, cells, -9999, dict(LEGEND))
    values = rng.normal(size=(n_rows, n_cols, 20))
    values[..., 3] += np.where(cells == 1, 2.0, -2.0)
    values[0, 0] = np.nan
    fr = FeatureRaster(crop.header, values)
    X = rng.normal(size=(200, 20))
    y = rng.integers(0, 2, 200)
    X[:, 3] += np.where(y == 1, 2.0, -2.0)
    forest = train_forest(X, y, ForestConfig(n_trees=25, seed=1))
    return crop, fr, forest


def test_all_nodata_mask():
    crop, fr, forest = _toy()
    empty = LabelRaster(crop.xll, crop.yll, crop.cell_size, np.full(crop.cells.shape, -9999), -9999, dict(LEGEND))
    classes, conf = predict_map(forest, fr, empty)
    assert np.all(classes.cells == classes.nodata)
    assert np.all(np.isnan(conf))


def test_header_passthrough_and_codes():
    crop, fr, forest = _toy()
    classes, conf = predict_map(forest, fr, crop, tile=4)
    assert classes.header == crop.header
    assert (classes.xll, classes.yll, classes.cell_size) == (crop.xll, crop.yll, crop.cell_size)
    assert set(np.unique(classes.cells)) <= {0, 1, classes.nodata}
    usable = cropland_cells(crop) & ~fr.missing
    assert np.array_equal(classes.cells != classes.nodata, usable)
    assert np.all((conf[usable] >= 0) & (conf[usable] <= 1))
    assert np.all(np.isnan(conf[~usable]))


def test_cellwise_matches_forest_predict():
    crop, fr, forest = _toy(30, 25)
    usable = cropland_cells(crop) & ~fr.missing
    for tile, workers in ((512, 1), (7, 1), (5, 3)):
        classes, conf = predict_map(forest, fr, crop, tile=tile, workers=workers)
        np.testing.assert_array_equal(classes.cells[usable], predict(forest, fr.values[usable]))
        np.testing.assert_array_equal(conf[usable], predict_proba(forest, fr.values[usable]))


def test_errors():
    crop, fr, forest = _toy()
    shifted = FeatureRaster(GridHeader(10.5, 20.0, 0.5, 6, 7), fr.values)
    with pytest.raises(GridMismatchError, match="10.5"):
        predict_map(forest, shifted, crop)
    rh_forest = train_forest(np.random.default_rng(0).normal(size=(20, 11)), np.arange(20) % 2,
                             ForestConfig(n_trees=2))
    with pytest.raises(ValidationError):
        predict_map(rh_forest, fr, crop)
    with pytest.raises(GridMismatchError):
        FeatureRaster(crop.header, np.zeros((5, 7, 20)))


def test_map_report_identity_and_complement():
    crop, _, _ = _toy()
    as_pred = np.where(crop.cells == 1, 1, np.where(crop.cells == -9999, -9999, 0))
    pred = LabelRaster(crop.xll, crop.yll, crop.cell_size, as_pred, -9999, {0: "non-maize", 1: "maize"})
    rep = map_report(pred, crop)
    assert rep["accuracy"] == 1.0
    n_maize = int((crop.cells == 1).sum())
    assert rep["true_maize_cells"] == rep["predicted_maize_cells"] == n_maize
    assert rep["true_maize_area_deg2"] == pytest.approx(n_maize * 0.25)
    flipped = np.where(as_pred == -9999, -9999, 1 - as_pred)
    rep = map_report(LabelRaster(crop.xll, crop.yll, crop.cell_size, flipped, -9999, {}), crop)
    assert rep["accuracy"] == 0.0


def test_map_report_matches_flattened_metrics():
    crop, fr, forest = _toy(40, 40, seed=3)
    classes, _ = predict_map(forest, fr, crop)
    rep = map_report(classes, crop)
    valid = (classes.cells != -9999) & (crop.cells != -9999) & (crop.cells != 0)
    m = compute_metrics(classes.cells[valid] == 1, crop.cells[valid] == 1)
    assert rep["accuracy"] == m.accuracy
    assert rep["confusion"] == m.confusion
    assert rep["n_cells"] == m.n_test


def test_map_report_no_overlap():
    crop, _, _ = _toy()
    none = LabelRaster(crop.xll, crop.yll, crop.cell_size, np.full(crop.cells.shape, -9999), -9999, {})
    assert map_report(none, crop)["accuracy"] is None


def test_feature_raster_file_round_trip(tmp_path):
    _, fr, _ = _toy()
    buf_a, buf_b = io.BytesIO(), io.BytesIO()
    save_feature_raster(buf_a, fr)
    save_feature_raster(buf_b, fr)
    assert buf_a.getvalue() == buf_b.getvalue()
    path = tmp_path / "f.npz"
    path.write_bytes(buf_a.getvalue())
    back = load_feature_raster(path)
    assert back.header == fr.header
    np.testing.assert_array_equal(back.values, fr.values)
