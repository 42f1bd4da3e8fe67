import math

import numpy as np
import pytest
import torch

from protoreg.errors import MasksUnavailableError, NumericalError, ValidationError
from protoreg.losses import (
    BatchContext,
    LossWeights,
    angular_similarity,
    loss_cluster,
    loss_mse,
    loss_occurrence,
    loss_pas,
    loss_psd,
    loss_total,
)
from protoreg.prototypes import PrototypeBank

import oracles


def make_ctx(similarities, sample_labels, prototype_labels, delta_l=5.0, k=3, **kw):
    return BatchContext(
        similarities=torch.as_tensor(similarities, dtype=torch.float64),
        sample_labels=torch.as_tensor(sample_labels, dtype=torch.float64),
        prototype_labels=torch.as_tensor(prototype_labels, dtype=torch.float64),
        delta_l=delta_l,
        k=k,
        **kw,
    )


def bank_from(vectors, labels):
    vectors = torch.as_tensor(vectors, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.float32)
    return PrototypeBank(vectors, labels, torch.ones(len(labels)))


def random_ctx(rng, n=None, m=None, with_maps=False, grid=(2, 2, 2)):
    n = n or int(rng.integers(1, 9))
    m = m or int(rng.integers(2, 9))
    kw = {}
    if with_maps:
        kw["occurrence_maps"] = torch.tensor(rng.random((n, m, *grid)), dtype=torch.float64)
        kw["lv_masks"] = torch.tensor(
            (rng.random((n, *grid)) > 0.5).astype(np.float64), dtype=torch.float64
        )
    return make_ctx(
        rng.uniform(-1, 1, (n, m)),
        rng.uniform(10, 90, n),
        rng.uniform(10, 90, m),
        delta_l=float(rng.uniform(2, 20)),
        k=int(rng.integers(1, 5)),
        **kw,
    )


class TestMse:
    def test_zero_on_perfect_fit(self):
        y = torch.tensor([10.0, 50.0, 90.0])
        assert loss_mse(y, y).item() == 0.0

    def test_single_element_square(self):
        assert loss_mse(torch.tensor([50.0]), torch.tensor([54.0])).item() == pytest.approx(16.0)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        pred, y = rng.uniform(10, 90, 7), rng.uniform(10, 90, 7)
        got = loss_mse(torch.tensor(pred), torch.tensor(y)).item()
        assert got == pytest.approx(oracles.mse(pred, y), abs=1e-7)


class TestCluster:
    def test_perfect_clustering_hits_minus_one(self):
        # each sample: one in-range prototype with similarity 1
        s = torch.eye(3)
        ctx = make_ctx(s, [10.0, 50.0, 90.0], [10.0, 50.0, 90.0], delta_l=5.0, k=3)
        assert loss_cluster(ctx).item() == pytest.approx(-1.0)

    def test_hand_topk_mean(self):
        # n=1, in-range sims {0.8, 0.5, 0.2, 0.1}, k=3 -> -(0.8+0.5+0.2)/3
        ctx = make_ctx([[0.8, 0.5, 0.2, 0.1]], [50.0], [50.0, 51.0, 52.0, 49.0], k=3)
        assert loss_cluster(ctx).item() == pytest.approx(-0.5)

    def test_empty_candidate_set_contributes_zero(self):
        ctx = make_ctx([[0.9, 0.9]], [50.0], [10.0, 90.0], delta_l=5.0)
        assert loss_cluster(ctx).item() == 0.0

    def test_empty_sets_still_count_in_denominator(self):
        s = [[1.0, 0.0], [0.5, 0.5]]
        ctx = make_ctx(s, [10.0, 50.0], [10.0, 90.0], delta_l=5.0, k=1)
        # sample 0 contributes -1, sample 1 nothing; mean over n=2
        assert loss_cluster(ctx).item() == pytest.approx(-0.5)

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            value = loss_cluster(random_ctx(rng)).item()
            assert -1.0 - 1e-9 <= value <= 1.0 + 1e-9


class TestPsd:
    def test_coincident_samples_zero_loss(self):
        ctx = make_ctx([[1.0, 1.0]], [50.0], [40.0, 60.0])
        assert loss_psd(ctx).item() == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_best_sample(self):
        ctx = make_ctx([[0.0]], [50.0], [50.0])
        assert loss_psd(ctx).item() == pytest.approx(math.log(2.0), abs=1e-9)

    def test_matches_loop_oracle_5x8(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(-1, 1, (5, 8))
        ctx = make_ctx(s, rng.uniform(10, 90, 5), rng.uniform(10, 90, 8))
        assert loss_psd(ctx).item() == pytest.approx(oracles.psd_loss(s), abs=1e-6)

    def test_nonnegative_always(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            assert loss_psd(random_ctx(rng)).item() >= 0.0


class TestAngularSimilarity:
    @pytest.mark.parametrize("cs,expected", [(1.0, 1.0), (0.0, 0.5), (-1.0, 0.0)])
    def test_anchor_values(self, cs, expected):
        got = angular_similarity(torch.tensor(cs, dtype=torch.float64)).item()
        assert got == pytest.approx(expected, abs=1e-12)

    def test_monotone_on_grid(self):
        grid = torch.linspace(-1.0, 1.0, 2001, dtype=torch.float64)
        values = angular_similarity(grid)
        assert (values.diff() >= 0).all()

    def test_matches_scalar_oracle(self):
        for cs in np.linspace(-1, 1, 41):
            got = angular_similarity(torch.tensor(cs)).item()
            assert got == pytest.approx(oracles.angular_similarity(cs), abs=1e-9)


class TestPas:
    def test_two_orthogonal_far_prototypes(self):
        bank = bank_from([[1.0, 0.0], [0.0, 1.0]], [10.0, 90.0])
        assert loss_pas(bank, 5.0).item() == pytest.approx(math.log(2.0), abs=1e-9)

    def test_boundary_gap_is_excluded(self):
        # |l_i - l_j| == delta exactly: strict inequality leaves both sets empty
        bank = bank_from([[1.0, 0.0], [0.0, 1.0]], [50.0, 55.0])
        assert loss_pas(bank, 5.0).item() == 0.0

    def test_near_parallel_grows_monotonically(self):
        def bank_at(angular_sim):
            phi = (1.0 - angular_sim) * math.pi
            return bank_from([[1.0, 0.0], [math.cos(phi), math.sin(phi)]], [10.0, 90.0])

        closer = loss_pas(bank_at(1.0 - 1e-3), 5.0).item()
        closest = loss_pas(bank_at(1.0 - 1e-4), 5.0).item()
        assert closest > closer > 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m = int(rng.integers(2, 9))
            vectors = rng.standard_normal((m, int(rng.integers(2, 17))))
            labels = rng.uniform(10, 90, m)
            bank = bank_from(vectors, labels)
            got = loss_pas(bank, 10.0).item()
            want = oracles.pas_loss(vectors, bank.labels.numpy(), 10.0)
            assert got == pytest.approx(want, abs=1e-6)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        vectors = rng.standard_normal((6, 8))
        labels = rng.uniform(10, 90, 6)
        base = loss_pas(bank_from(vectors, labels), 8.0).item()
        for _ in range(5):
            perm = rng.permutation(6)
            shuffled = loss_pas(bank_from(vectors[perm], labels[perm]), 8.0).item()
            assert shuffled == pytest.approx(base, abs=1e-9)

    def test_nonnegative_always(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            m = int(rng.integers(2, 9))
            bank = bank_from(rng.standard_normal((m, 8)), rng.uniform(10, 90, m))
            assert loss_pas(bank, 5.0).item() >= 0.0

    def test_one_gradient_step_separates_parallel_prototypes(self):
        # two far-label prototypes nearly parallel: a step must reduce their AS
        phi = 1e-2
        vectors = torch.tensor(
            [[1.0, 0.0], [math.cos(phi), math.sin(phi)]], dtype=torch.float64
        )
        bank = PrototypeBank(vectors, torch.tensor([10.0, 90.0]), torch.ones(2))
        before = angular_similarity(
            torch.nn.functional.cosine_similarity(
                bank.vectors[0], bank.vectors[1], dim=0
            )
        ).item()
        loss = loss_pas(bank, 5.0)
        loss.backward()
        with torch.no_grad():
            stepped = bank.vectors - 1e-3 * bank.vectors.grad
        after = angular_similarity(
            torch.nn.functional.cosine_similarity(stepped[0], stepped[1], dim=0)
        ).item()
        assert after < before

    def test_needs_two_prototypes(self):
        bank = PrototypeBank(torch.ones(1, 3), torch.tensor([50.0]), torch.ones(1))
        with pytest.raises(ValidationError):
            loss_pas(bank, 5.0)


class TestOccurrence:
    def test_all_activation_inside_mask_is_free(self):
        maps = torch.zeros(1, 2, 2, 2, 2)
        maps[0, :, 0, 0, 0] = 3.0
        masks = torch.zeros(1, 2, 2, 2)
        masks[0, 0, 0, 0] = 1.0
        ctx = make_ctx([[0.0, 0.0]], [50.0], [40.0, 60.0],
                       occurrence_maps=maps.double(), lv_masks=masks.double())
        assert loss_occurrence(ctx, rho=0.0).item() == 0.0

    def test_no_region_anywhere_mean_of_ones(self):
        ctx = make_ctx([[0.0, 0.0]], [50.0], [40.0, 60.0],
                       occurrence_maps=torch.ones(1, 2, 2, 2, 2).double(),
                       lv_masks=torch.zeros(1, 2, 2, 2).double())
        assert loss_occurrence(ctx, rho=0.0).item() == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            ctx = random_ctx(rng, with_maps=True)
            rho = float(rng.uniform(0, 0.1))
            got = loss_occurrence(ctx, rho=rho).item()
            want = oracles.occurrence_loss(
                ctx.occurrence_maps.numpy(), ctx.lv_masks.numpy(), rho
            )
            assert got == pytest.approx(want, abs=1e-6)

    def test_missing_masks_demand_zero_weight(self):
        ctx = make_ctx([[0.0]], [50.0], [50.0],
                       occurrence_maps=torch.ones(1, 1, 2, 2, 2).double())
        with pytest.raises(MasksUnavailableError):
            loss_occurrence(ctx)


class TestTotal:
    def test_all_weights_zero(self):
        weights = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        parts = {"mse": torch.tensor(3.0), "pas": torch.tensor(1.0)}
        total, breakdown = loss_total(parts, weights)
        assert total.item() == 0.0
        assert breakdown["total"] == 0.0

    def test_selector_behaviour(self):
        weights = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        parts = {"mse": torch.tensor(7.5), "clst": torch.tensor(-0.9),
                 "psd": torch.tensor(0.4)}
        total, _ = loss_total(parts, weights)
        assert total.item() == pytest.approx(7.5)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            weights = LossWeights(*rng.uniform(0, 2, 5), rho=0.0)
            parts = {name: torch.tensor(float(v), dtype=torch.float64)
                     for name, v in zip(("mse", "clst", "psd", "pas", "occur"),
                                        rng.standard_normal(5))}
            total, breakdown = loss_total(parts, weights)
            want = oracles.total_loss({k: v.item() for k, v in parts.items()},
                                      weights.as_dict())
            assert total.item() == pytest.approx(want, abs=1e-9)
            recombined = sum(breakdown[f"weighted_{k}"] for k in parts)
            assert breakdown["total"] == pytest.approx(recombined, abs=1e-9)

    def test_nan_part_names_offender(self):
        weights = LossWeights()
        with pytest.raises(NumericalError, match="psd"):
            loss_total({"mse": torch.tensor(1.0), "psd": torch.tensor(float("nan"))},
                       weights)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda_mse=-0.1)


class TestOracleEquivalenceSweep:
    """100 random small instances per loss against the loop oracles."""

    def test_cluster_sweep(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            ctx = random_ctx(rng)
            want = oracles.cluster_loss(
                ctx.similarities.numpy(), ctx.sample_labels.numpy(),
                ctx.prototype_labels.numpy(), ctx.delta_l, ctx.k,
            )
            assert loss_cluster(ctx).item() == pytest.approx(want, abs=1e-6)

    def test_psd_sweep(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            ctx = random_ctx(rng)
            assert loss_psd(ctx).item() == pytest.approx(
                oracles.psd_loss(ctx.similarities.numpy()), abs=1e-6
            )

    def test_pas_sweep(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            m = int(rng.integers(2, 9))
            d = int(rng.integers(2, 17))
            vectors = rng.standard_normal((m, d))
            labels = rng.uniform(10, 90, m)
            delta = float(rng.uniform(2, 30))
            bank = bank_from(vectors, labels)
            want = oracles.pas_loss(vectors, bank.labels.numpy(), delta)
            assert loss_pas(bank, delta).item() == pytest.approx(want, abs=1e-6)

    def test_occurrence_sweep(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            ctx = random_ctx(rng, with_maps=True)
            want = oracles.occurrence_loss(
                ctx.occurrence_maps.numpy(), ctx.lv_masks.numpy(), 1e-3
            )
            assert loss_occurrence(ctx, rho=1e-3).item() == pytest.approx(want, abs=1e-6)
