import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aasgan import nncore
from aasgan.data import Scene, Trajectory
from aasgan.evaluation import (
    CSV_HEADER,
    MetricsReport,
    ade,
    best_of_n_errors,
    best_of_n_eval,
    best_of_n_scene,
    fde,
    format_metrics_table,
    leave_one_out,
    plot_scene,
    read_metrics_csv,
    scene_generator,
    write_metrics_csv,
)
from aasgan.models import GeneratorModel


@pytest.fixture
def G(tiny_dims):
    enc, pool_cfg, dec = tiny_dims
    return GeneratorModel(8, 20, enc, pool_cfg, dec, nncore.make_generator(1))


class TestMetrics:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 12, 2))
        assert ade(x, x) == 0.0 and fde(x, x) == 0.0

    def test_constant_offset(self, rng):
        gt = rng.normal(size=(12, 2))
        assert abs(ade(gt + [3, 4], gt) - 5.0) < 1e-9
        assert abs(fde(gt + [3, 4], gt) - 5.0) < 1e-9

    def test_single_step(self):
        assert ade([[1.0, 1.0]], [[0.0, 0.0]]) == math.sqrt(2)

    def test_fde_only_last_point(self, rng):
        gt = np.zeros((12, 2))
        pred = rng.normal(0, 100, (12, 2))
        pred[-1] = (0.6, 0.8)
        assert abs(fde(pred, gt) - 1.0) < 1e-9

    def test_pedestrian_mean(self):
        gt = np.zeros((2, 3, 2))
        pred = gt.copy()
        pred[0] += (3, 4)
        assert ade(pred, gt) == 2.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ade(np.zeros((12, 2)), np.zeros((11, 2)))
        with pytest.raises(ValueError):
            fde(np.zeros((0, 2)), np.zeros((0, 2)))

    @settings(max_examples=40)
    @given(arrays(np.float64, (2, 5, 2), elements=st.floats(-50, 50)),
           arrays(np.float64, (2, 5, 2), elements=st.floats(-50, 50)),
           st.floats(-np.pi, np.pi), st.tuples(st.floats(-100, 100), st.floats(-100, 100)))
    def test_rigid_invariance(self, pred, gt, theta, shift):
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        move = lambda x: x @ R.T + np.asarray(shift)
        assert abs(ade(move(pred), move(gt)) - ade(pred, gt)) < 1e-9
        assert abs(fde(move(pred), move(gt)) - fde(pred, gt)) < 1e-9

    @given(arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
           arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
    def test_zero_iff_equal(self, pred, gt):
        assert (ade(pred, gt) == 0) == np.array_equal(pred, gt)


class TestBestOfN:
    def test_monotone_nested(self, G, toy_real):
        a1 = best_of_n_errors(G, toy_real[:10], 1, seed=3)[0]
        a5 = best_of_n_errors(G, toy_real[:10], 5, seed=3)[0]
        a20 = best_of_n_errors(G, toy_real[:10], 20, seed=3)[0]
        assert (a20 <= a5).all() and (a5 <= a1).all()

    def test_n1_is_single_sample(self, G, toy_real):
        scene = toy_real[0]
        pred, a, f = best_of_n_scene(G, scene, 1, scene_generator(0, 0))
        gen = scene_generator(0, 0)
        from aasgan.models import SceneBatch
        batch = SceneBatch.from_scenes([scene])
        z = nncore.sample_standard_normal((batch.n_peds, G.noise_dim), gen)
        with torch.no_grad():
            direct = (G.predict(batch.prefix(8), z) + batch.origin[:, None]).numpy()
        gt = scene.positions()[:, 8:]
        np.testing.assert_array_equal(pred, direct)
        assert a == pytest.approx(ade(direct, gt), abs=1e-12)
        assert f == pytest.approx(fde(direct, gt), abs=1e-12)

    def test_report(self, G, toy_real):
        r = best_of_n_eval(G, toy_real[:5], seed=2, dataset_name="toy")
        assert r.n_samples_N == 20 and r.n_scenes == 5 and r.dataset_name == "toy"
        again = best_of_n_eval(G, toy_real[:5], seed=2, dataset_name="toy")
        assert r == again

    def test_invalid(self, G, toy_real):
        with pytest.raises(ValueError):
            best_of_n_eval(G, toy_real, N=0)
        with pytest.raises(ValueError):
            best_of_n_eval(G, [])


class TestLeaveOneOut:
    def test_counts_and_average(self, G, toy_real):
        datasets = {f"d{i}": toy_real[4 * i:4 * i + 4] for i in range(5)}
        seen = []

        def train_fn(train):
            seen.append(len(train))
            return G

        reports = leave_one_out(datasets, train_fn, N=2, seed=0)
        assert [r.dataset_name for r in reports] == ["d0", "d1", "d2", "d3", "d4", "average"]
        assert seen == [16] * 5
        assert abs(reports[-1].ade - np.mean([r.ade for r in reports[:5]])) < 1e-12

    def test_needs_two(self, G, toy_real):
        with pytest.raises(ValueError):
            leave_one_out({"only": toy_real}, lambda s: G)


class TestOutputs:
    def test_csv_round_trip(self, tmp_path):
        reports = [MetricsReport("eth", 0.1234567890123, 0.2, 10, 20, 0), MetricsReport("average", 1 / 3, 2 / 3, 10, 20, 0)]
        path = tmp_path / "m.csv"
        write_metrics_csv(reports, path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
        assert read_metrics_csv(path) == reports
        assert "eth" in format_metrics_table(reports)

    def test_plot(self, tmp_path, toy_real, rng):
        scene = toy_real[0]
        preds = {"a": scene.positions()[:, 8:] + 0.1, "b": scene.positions()[:, 8:] - 0.1}
        p1, p2 = tmp_path / "1.svg", tmp_path / "2.svg"
        plot_scene(scene, preds, p1)
        plot_scene(scene, preds, p2)
        assert p1.stat().st_size > 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_plot_ground_truth_only(self, tmp_path, toy_real):
        path = plot_scene(toy_real[1], {}, tmp_path / "gt.svg")
        assert path.read_text().startswith("<?xml")
