"""Spatial and regional averages, the forward model and batched evaluation."""

import numpy as np
import pytest

from conftest import ToyModel, make_graph
from errors import ModelEvaluationError, NumericalError, ValidationError
from qoi import (
    QoIModel,
    QoISeries,
    evaluate_many,
    lobe_volume_weights,
    regional_averages,
    spatial_average,
)
from solver import SolverConfig


def test_spatial_average():
    assert spatial_average([0.0, 1.0, 0.5]) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        spatial_average([])


def test_regional_average_is_volume_weighted():
    g = make_graph([1, 1], [(0, 1, 1.0)], volumes=[1.0, 3.0])
    np.testing.assert_allclose(regional_averages(g, [0.0, 1.0]), [0.75])


def test_regional_average_of_constant_field(small_graph):
    np.testing.assert_allclose(regional_averages(small_graph, np.ones(small_graph.num_nodes)), 1.0)


def test_mask_removes_nodes():
    g = make_graph([1, 1, 2], [(0, 1, 1.0), (1, 2, 1.0)], volumes=[1.0, 3.0, 2.0])
    c = np.array([0.0, 1.0, 0.4])
    np.testing.assert_allclose(regional_averages(g, c, mask=np.array([True, False, True])), [0.0, 0.4])


def test_fully_masked_region_is_rejected():
    g = make_graph([1, 1, 2], [(0, 1, 1.0), (1, 2, 1.0)])
    with pytest.raises(ValidationError, match="masked out"):
        regional_averages(g, np.zeros(3), mask=np.array([True, True, False]))


def test_total_normalization():
    g = make_graph([1, 2], [(0, 1, 1.0)], volumes=[1.0, 3.0])
    np.testing.assert_allclose(regional_averages(g, [1.0, 1.0], normalization="total"), [0.25, 0.75])
    with pytest.raises(ValidationError, match="normalization"):
        regional_averages(g, [1.0, 1.0], normalization="lobe")


def test_lobe_volume_weights_sum_to_one(small_graph):
    w = lobe_volume_weights(small_graph)
    assert w.shape == (7,)
    assert w.sum() == pytest.approx(1.0)


def test_qoi_model_shapes(small_graph, short_cfg):
    model = QoIModel(small_graph, np.full(small_graph.num_nodes, 0.1), short_cfg)
    assert model.dimension == 7
    assert model.num_outputs == 8
    out = model.evaluate_batch(np.full((3, 7), 0.1))
    assert out.shape == (3, 2, 8)
    series = model(np.full(7, 0.1))
    assert isinstance(series, QoISeries)
    np.testing.assert_allclose(series.as_array(), out[0], rtol=1e-12)
    assert list(series.to_frame().columns[:3]) == ["time", "global", "region_1"]


def test_qoi_series_round_trip():
    values = np.arange(6, dtype=float).reshape(2, 3)
    series = QoISeries.from_array([1.0, 2.0], values)
    np.testing.assert_array_equal(series.global_avg, [0.0, 3.0])
    np.testing.assert_array_equal(series.as_array(), values)


def test_regional_qoi_monotone_in_reaction(small_graph):
    cfg = SolverConfig(dt=0.1, T=5.0)
    model = QoIModel(small_graph, np.full(small_graph.num_nodes, 0.1), cfg)
    low = model(np.full(7, 0.05)).regional_avg[-1]
    high = model(np.full(7, 0.25)).regional_avg[-1]
    assert (high > low).all()


def test_evaluate_many_independent_of_threads(small_graph, short_cfg):
    model = QoIModel(small_graph, np.full(small_graph.num_nodes, 0.1), short_cfg)
    params = np.random.default_rng(3).normal(0.1, 0.05, size=(13, 7))
    serial = evaluate_many(model, params, batch_size=4, threads=1)
    threaded = evaluate_many(model, params, batch_size=4, threads=4)
    np.testing.assert_array_equal(serial, threaded)
    assert serial.shape == (13, 2, 8)


class FailingModel(ToyModel):
    """Raises for any parameter point with p_1 > 1."""

    def evaluate_batch(self, params):
        params = np.atleast_2d(params)
        if (params[:, 0] > 1.0).any():
            raise NumericalError("diverged")
        return super().evaluate_batch(params)


def test_model_failure_names_parameter_point():
    params = np.array([[0.0, 0.0], [0.5, 0.0], [2.0, 0.3], [0.1, 0.1]])
    with pytest.raises(ModelEvaluationError) as info:
        evaluate_many(FailingModel(2), params, batch_size=4)
    np.testing.assert_array_equal(info.value.parameters, [2.0, 0.3])
