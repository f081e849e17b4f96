"""Importance weights: softmax head, accumulation and dataset reports."""

import json

import numpy as np
import pytest
import torch

from irwgan.diffnet import NetworkKind, NetworkSpec, build_network
from irwgan.errors import DatasetError, DivergenceError
from irwgan.importance import (
    WeightVector,
    accumulate_score_grads,
    batch_weights,
    dataset_weights,
    raw_scores,
    scores_no_grad,
    softmax_score_grad,
    uniform_weights,
)

from conftest import micro_network, random_domain


def _beta_net(seed=0):
    spec = NetworkSpec(kind=NetworkKind.IMPORTANCE_BACKBONE, channels=1, resolution=8, sizing=micro_network())
    return build_network("beta_X", spec, seed)


class TestBatchWeights:
    def test_constraint_suite(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(rng.integers(2, 65))
            scores = torch.from_numpy(rng.normal(0.0, rng.uniform(0.1, 20.0), size=n))
            w = batch_weights(scores).weights
            assert (w >= 0).all()
            assert abs(w.sum().item() - n) <= 1e-10

    def test_equal_scores_give_uniform_weights(self):
        w = batch_weights(torch.full((5,), 3.7)).weights
        torch.testing.assert_close(w, torch.ones(5, dtype=torch.float64))

    def test_large_scores_do_not_overflow(self):
        w = batch_weights(torch.tensor([1000.0, 0.0])).weights
        torch.testing.assert_close(w, torch.tensor([2.0, 0.0], dtype=torch.float64))

    def test_two_sample_example(self):
        w = batch_weights(torch.tensor([np.log(3.0), 0.0])).weights
        torch.testing.assert_close(w, torch.tensor([1.5, 0.5], dtype=torch.float64))

    def test_three_sample_example(self):
        w = batch_weights(torch.tensor([np.log(2.0), 0.0, 0.0])).weights
        torch.testing.assert_close(w, torch.tensor([1.5, 0.75, 0.75], dtype=torch.float64))

    def test_single_sample_rejected(self):
        with pytest.raises(DatasetError):
            batch_weights(torch.tensor([0.3]))

    def test_non_finite_score(self):
        with pytest.raises(DivergenceError):
            batch_weights(torch.tensor([0.0, float("nan")]))

    def test_weight_vector_validates_sum(self):
        with pytest.raises(ValueError):
            WeightVector(torch.tensor([1.0, 2.0]))
        assert len(WeightVector.uniform(4)) == 4


class TestSoftmaxGradient:
    def test_matches_autograd(self):
        rng = np.random.default_rng(1)
        scores = torch.from_numpy(rng.normal(size=7)).requires_grad_(True)
        upstream = torch.from_numpy(rng.normal(size=7))
        beta = 7 * torch.softmax(scores, dim=0)
        (beta * upstream).sum().backward()
        ours = softmax_score_grad(beta.detach(), upstream)
        torch.testing.assert_close(ours, scores.grad, rtol=1e-12, atol=1e-14)

    def test_micro_batch_accumulation_is_exact(self):
        images = torch.rand(8, 1, 8, 8, generator=torch.Generator().manual_seed(2)) * 2 - 1
        upstream = torch.linspace(-1.0, 1.0, 8)

        def full_batch_grads():
            net = _beta_net(seed=4)
            beta = batch_weights(raw_scores(net, images)).weights
            (beta * upstream).sum().backward()
            return net.params.grads().clone()

        def accumulated(micro):
            net = _beta_net(seed=4)
            beta = batch_weights(scores_no_grad(net, images, micro)).weights
            accumulate_score_grads(net, images, softmax_score_grad(beta, upstream), micro)
            return net.params.grads().clone()

        reference = full_batch_grads()
        for micro in (1, 4, 8):
            torch.testing.assert_close(accumulated(micro), reference, rtol=1e-10, atol=1e-13)


class TestDatasetWeights:
    def test_global_normalization(self):
        ds = random_domain("X", 13, seed=0)
        report = dataset_weights(_beta_net(), ds, chunk=4, batch_size=5)
        assert len(report) == 13
        assert report.weights.sum() == pytest.approx(13, abs=1e-9)
        assert report.filenames[0] == "X_00000.png"

    def test_chunk_size_does_not_matter(self):
        ds = random_domain("X", 13, seed=0)
        a = dataset_weights(_beta_net(), ds, chunk=3).weights
        b = dataset_weights(_beta_net(), ds, chunk=64).weights
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_batch_convention_sums_per_block(self):
        ds = random_domain("X", 11, seed=0)
        report = dataset_weights(_beta_net(), ds, batch_size=5)
        # blocks of 5, 6 (a trailing singleton folds into the previous block)
        assert report.batch_convention[:5].sum() == pytest.approx(5)
        assert report.batch_convention[5:].sum() == pytest.approx(6)

    def test_too_small(self):
        with pytest.raises(DatasetError):
            dataset_weights(_beta_net(), random_domain("X", 1, seed=0))

    def test_report_files(self, tmp_path):
        ds = random_domain("X", 12, seed=0)
        report = dataset_weights(_beta_net(), ds)
        report.write_csv(tmp_path / "weights_X.csv")
        report.write_summary(tmp_path / "weights_X.json")
        report.write_histogram_csv(tmp_path / "histogram_X.csv")

        lines = (tmp_path / "weights_X.csv").read_text().splitlines()
        assert lines[0] == "index,filename,weight,label"
        assert len(lines) == 13

        summary = json.loads((tmp_path / "weights_X.json").read_text())
        assert summary["n"] == 12
        assert 1.0 <= summary["ess"] <= 12.0
        assert summary["beta_report"]["n_aligned"] == 8
        assert sum(summary["histogram"]["counts"]) == 12

        header = (tmp_path / "histogram_X.csv").read_text().splitlines()[0]
        assert header == "bin_low,bin_high,count_aligned,count_unaligned,count_total"

    def test_unlabeled_report_has_no_beta_report(self):
        report = dataset_weights(_beta_net(), random_domain("Y", 6, seed=0, labeled=False))
        assert "beta_report" not in report.summary()

    def test_unlabeled_histogram_fills_only_the_total(self, tmp_path):
        report = dataset_weights(_beta_net(), random_domain("Y", 6, seed=0, labeled=False))
        report.write_histogram_csv(tmp_path / "histogram_Y.csv")
        rows = [line.split(",") for line in (tmp_path / "histogram_Y.csv").read_text().splitlines()[1:]]
        assert all(row[2] == "" and row[3] == "" for row in rows)
        assert sum(int(row[4]) for row in rows) == 6

    def test_uniform_report(self):
        ds = random_domain("X", 9, seed=0)
        report = uniform_weights(ds)
        assert np.array_equal(report.weights, np.ones(9))
        assert report.summary()["ess"] == pytest.approx(9.0)
        assert report.filenames == [ds.filename(i) for i in range(9)]
        with pytest.raises(DatasetError):
            uniform_weights(random_domain("X", 1, seed=0))
