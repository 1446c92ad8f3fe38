import math

import numpy as np
import pytest

from elmanlab.data import Dataset, generate_dataset
from elmanlab.network import NetworkParams, forward, init_params
from elmanlab.probes_init import (backward_sparse_probe, chain_operator,
                                  forward_norm_probe, fresh_randomness_probe,
                                  intermediate_spectral_probe,
                                  separability_probe, sparse_spectral_probe)
from elmanlab.rng import SeededRng


def setup(seed, n=3, L=4, m=256, delta=0.4):
    rng = SeededRng(seed)
    dataset = generate_dataset(n, L, 4, 2, delta, rng.split("data"))
    params = init_params(m, 4, 2, rng.split("init"))
    return params, dataset, forward(params, dataset)


class TestForwardNormProbe:
    def test_bound_expressions(self):
        _, _, trace = setup(0)
        report = forward_norm_probe(trace)
        by_index = {
            (r.indices["i"], r.indices["l"], r.indices["kind"]): r
            for r in report.records
        }
        assert by_index[(0, 3, "h")].bound == 10.0  # 2*3 + 4
        assert by_index[(0, 3, "g")].bound == 20.0  # 4*3 + 8
        # lower-bound exponent counts the state index: first state gets
        # one factor of (1 - 1/(4L)), here L = 4
        assert by_index[(0, 0, "h")].indices["lower"] == 1.0 - 1.0 / 16.0

    def test_bounds_hold_at_init(self):
        # shallow depth keeps the first-state lower bound well clear of
        # the O(1/sqrt(m)) norm fluctuation
        _, _, trace = setup(1, L=2, m=512)
        report = forward_norm_probe(trace)
        assert report.all_passed

    def test_record_count(self):
        _, dataset, trace = setup(2)
        report = forward_norm_probe(trace)
        assert len(report.records) == 2 * dataset.n * dataset.L


class TestFreshRandomnessProbe:
    def test_first_layer_residual_is_state_norm(self):
        _, _, trace = setup(3)
        report = fresh_randomness_probe(trace)
        first = [r for r in report.records if r.indices["l"] == 0]
        for record in first:
            i = record.indices["i"]
            assert record.measured == pytest.approx(
                np.linalg.norm(trace.h[i, 0])
            )

    def test_zero_sequence_flagged(self):
        # an all-zero token sequence keeps its hidden states at zero, so
        # every residual vanishes and fails the positivity check
        rng = SeededRng(4)
        dataset = generate_dataset(2, 3, 4, 2, 0.3, rng.split("data"))
        tokens = dataset.tokens.copy()
        tokens[1] = 0.0
        dead = Dataset(tokens=tokens, labels=dataset.labels, delta=0.0)
        params = init_params(64, 4, 2, rng.split("init"))
        trace = forward(params, dead)
        report = fresh_randomness_probe(trace)
        bad = [r for r in report.records if r.indices["i"] == 1]
        assert all(r.measured == 0.0 for r in bad)
        assert not any(r.passed for r in bad)

    def test_duplicate_sample_residuals_match(self):
        # a duplicated sequence produces identical hidden states, hence
        # identical residual norms at every layer
        rng = SeededRng(21)
        dataset = generate_dataset(2, 3, 4, 2, 0.3, rng.split("data"))
        tokens = dataset.tokens.copy()
        tokens[1] = tokens[0]
        dup = Dataset(tokens=tokens, labels=dataset.labels, delta=0.0)
        params = init_params(64, 4, 2, rng.split("init"))
        trace = forward(params, dup)
        report = fresh_randomness_probe(trace)
        by_key = {(r.indices["i"], r.indices["l"]): r.measured
                  for r in report.records}
        for l in range(3):
            assert by_key[(0, l)] == pytest.approx(by_key[(1, l)], rel=1e-9)

    def test_residuals_positive_at_init(self):
        _, _, trace = setup(5, m=512)
        report = fresh_randomness_probe(trace)
        assert report.all_passed
        assert min(r.measured for r in report.records) > 0.01


class TestSeparabilityProbe:
    def test_single_sample_gives_empty_report(self):
        _, _, trace = setup(6, n=1)
        report = separability_probe(trace, 0.4)
        assert report.records == []

    def test_identical_sequences_not_separable(self):
        rng = SeededRng(7)
        dataset = generate_dataset(2, 3, 4, 2, 0.3, rng.split("data"))
        tokens = dataset.tokens.copy()
        tokens[1] = tokens[0]
        dup = Dataset(tokens=tokens, labels=dataset.labels, delta=0.0)
        params = init_params(64, 4, 2, rng.split("init"))
        trace = forward(params, dup)
        report = separability_probe(trace, 0.3)
        assert all(r.measured < 1e-9 for r in report.records)

    def test_symmetric_pairs_present(self):
        _, dataset, trace = setup(8, n=3)
        report = separability_probe(trace, 0.4)
        keys = {(r.indices["i"], r.indices["j"], r.indices["l"])
                for r in report.records}
        for i, j, l in keys:
            assert (j, i, l) in keys

    def test_half_delta_holds_at_init(self):
        _, _, trace = setup(9, m=512, delta=0.5)
        report = separability_probe(trace, 0.5)
        assert report.all_passed


class TestIntermediateSpectralProbe:
    def test_chain_operator_matches_dense_product(self):
        params, _, trace = setup(10, m=32)
        matvec, rmatvec = chain_operator(params, trace, 0, 2, 4)
        dense = np.eye(32)
        for s in range(2, 5):
            dense = np.diag(trace.mask(0, s).astype(float)) @ params.w @ dense
        gen = SeededRng(11).generator()
        for _ in range(5):
            v = gen.normal(size=32)
            assert np.allclose(matvec(v), dense @ v, atol=1e-10)
            assert np.allclose(rmatvec(v), dense.T @ v, atol=1e-10)

    def test_zero_w_gives_zero_chains(self):
        params, dataset, _ = setup(12, m=32)
        zero = NetworkParams(
            w=np.zeros_like(params.w), a=params.a, b=params.b
        )
        trace = forward(zero, dataset)
        report = intermediate_spectral_probe(zero, trace, 0)
        assert all(r.measured == 0.0 for r in report.records)

    def test_single_layer_near_two_at_init(self):
        # a random m x m matrix with entry variance 2/m has spectral norm
        # close to 2 sqrt(2) > chain value; the masked chain stays below
        params, _, trace = setup(13, m=1024)
        report = intermediate_spectral_probe(
            params, trace, 0, pairs=[(2, 2)]
        )
        assert 0.5 < report.records[0].measured < 4.0

    def test_values_match_svd_oracle_small(self):
        params, _, trace = setup(14, m=24)
        report = intermediate_spectral_probe(params, trace, 0, pairs=[(1, 3)],
                                             rel_tol=1e-10)
        dense = np.eye(24)
        for s in range(1, 4):
            dense = np.diag(trace.mask(0, s).astype(float)) @ params.w @ dense
        oracle = np.linalg.svd(dense, compute_uv=False)[0]
        assert report.records[0].measured == pytest.approx(oracle, rel=1e-6)


class TestSparseProbes:
    def test_reference_scale_value(self):
        # the sparse bilinear reference scale at s=1, m=4096
        value = 1 * math.log(4096) / 4096 ** (1.0 / 6.0)
        assert value == pytest.approx(2.08, abs=0.01)

    def test_sparse_probe_runs_and_bounded(self):
        params, _, trace = setup(15, m=256)
        report = sparse_spectral_probe(
            params, trace, 0, s=2, trials=50, rng=SeededRng(16)
        )
        assert len(report.records) == 1
        assert report.records[0].measured >= 0.0

    def test_backward_zero_b(self):
        params, dataset, _ = setup(17, m=64)
        zero_b = NetworkParams(w=params.w, a=params.a,
                               b=np.zeros_like(params.b))
        trace = forward(zero_b, dataset)
        report = backward_sparse_probe(
            zero_b, trace, 0, s=1, trials=20, rng=SeededRng(18)
        )
        assert all(r.measured == 0.0 for r in report.records)

    def test_backward_probe_records_both_kinds(self):
        params, _, trace = setup(19, m=128)
        report = backward_sparse_probe(
            params, trace, 0, s=1, trials=30, rng=SeededRng(20)
        )
        kinds = {r.indices["kind"] for r in report.records}
        assert kinds == {"sparse", "dense"}
