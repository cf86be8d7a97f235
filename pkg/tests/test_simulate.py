import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wyperm.core import InputError
from wyperm.marginal import rank_sum_lattice, wilcoxon_pvalue
from wyperm.simulate import (
    SimulationScenario,
    apply_shift,
    load_scenario,
    null_pvalues,
    sample_block,
    sample_perfect_block,
    sample_toeplitz,
)


def corr(z, i, j):
    return np.corrcoef(z[i], z[j])[0, 1]


class TestToeplitz:
    def test_lag_correlations(self):
        z = sample_toeplitz(3, 200_000, 0.95, seed=1)
        # sd of a sample correlation near 0.95 with 2e5 draws is about 2e-4
        assert corr(z, 0, 1) == pytest.approx(0.95, abs=2e-3)
        assert corr(z, 0, 2) == pytest.approx(0.9025, abs=2e-3)
        assert corr(z, 1, 2) == pytest.approx(0.95, abs=2e-3)

    def test_unit_variance(self):
        z = sample_toeplitz(20, 50_000, 0.9, seed=2)
        assert z.var(axis=1) == pytest.approx(np.ones(20), abs=0.03)

    def test_zero_rho_independent(self):
        z = sample_toeplitz(2, 100_000, 0.0, seed=3)
        assert abs(corr(z, 0, 1)) < 0.02

    def test_batch_shape(self):
        assert sample_toeplitz(4, 6, 0.5, seed=0, size=(3,)).shape == (3, 4, 6)

    @pytest.mark.parametrize("rho", [-0.1, 1.0])
    def test_bad_rho(self, rho):
        with pytest.raises(InputError):
            sample_toeplitz(3, 3, rho)


class TestBlock:
    def test_within_and_across(self):
        z = sample_block(4, 200_000, 0.9, block_size=2, seed=4)
        assert corr(z, 0, 1) == pytest.approx(0.9, abs=3e-3)
        assert corr(z, 2, 3) == pytest.approx(0.9, abs=3e-3)
        assert abs(corr(z, 1, 2)) < 0.01

    def test_unit_variance(self):
        z = sample_block(6, 100_000, 0.6, block_size=3, seed=5)
        assert z.var(axis=1) == pytest.approx(np.ones(6), abs=0.02)

    def test_block_size_one_is_iid(self):
        z = sample_block(3, 100_000, 0.9, block_size=1, seed=6)
        assert abs(corr(z, 0, 1)) < 0.02

    def test_short_last_block(self):
        assert sample_block(7, 5, 0.5, block_size=3, seed=0).shape == (7, 5)

    def test_perfect_block_rows_repeat(self):
        z = sample_perfect_block(6, 5, 3, seed=1)
        assert np.array_equal(z[0], z[2]) and not np.array_equal(z[2], z[3])


class TestShift:
    def test_zero_delta(self):
        x = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(apply_shift(x, ["a", "a", "b", "b"], [0, 2], 0.0), x)

    def test_no_alternatives(self):
        x = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(apply_shift(x, ["a", "a", "b", "b"], [], 2.0), x)

    def test_shifts_second_group_only(self):
        x = np.zeros((3, 4))
        out = apply_shift(x, ["a", "a", "b", "b"], [1], 2.0)
        assert out.tolist() == [[0, 0, 0, 0], [0, 0, 2, 2], [0, 0, 0, 0]]
        assert not x.any()

    def test_out_of_range(self):
        with pytest.raises(InputError):
            apply_shift(np.zeros((2, 4)), [0, 0, 1, 1], [2], 1.0)


class TestScenario:
    def test_generate_deterministic(self):
        sc = SimulationScenario(m=30, n1=5, n2=5, rho=0.5, block_size=10, n_alternatives=3,
                                alternative_pool=30, seed=9)
        (a, alts_a), (b, alts_b) = sc.generate(4), sc.generate(4)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(alts_a, alts_b)
        assert not np.array_equal(sc.generate(5)[0].features, a.features)

    def test_pinned_alternatives(self):
        sc = SimulationScenario(m=10, n1=4, n2=4, alternatives=(7, 2))
        assert sc.generate(3)[1].tolist() == [2, 7]

    def test_redraw_off(self):
        sc = SimulationScenario(m=50, n1=4, n2=4, n_alternatives=5, alternative_pool=50,
                                redraw_alternatives=False)
        assert np.array_equal(sc.alternatives_for(0), sc.alternatives_for(7))

    def test_alternatives_come_from_pool(self):
        sc = SimulationScenario(m=500, n1=4, n2=4, n_alternatives=10, alternative_pool=100)
        for r in range(20):
            alts = sc.alternatives_for(r)
            assert alts.size == 10 and alts.max() < 100 and np.unique(alts).size == 10

    def test_too_many_alternatives(self):
        with pytest.raises(InputError):
            SimulationScenario(m=5, n_alternatives=6)

    def test_unknown_structure(self):
        with pytest.raises(InputError):
            SimulationScenario(m=5, structure="spiral")

    def test_json_round_trip(self, tmp_path):
        sc = SimulationScenario(m=40, structure="toeplitz", rho=0.95, alternatives=(1, 5), seed=3)
        p = tmp_path / "s.json"
        p.write_text(json.dumps(sc.to_dict()))
        assert load_scenario(p) == sc

    def test_unknown_field(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text('{"m": 3, "colour": "red"}')
        with pytest.raises(InputError, match="colour"):
            load_scenario(p)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{m: 3")
        with pytest.raises(InputError):
            load_scenario(p)

    def test_complete_null_has_no_shift(self):
        sc = SimulationScenario(m=20, n1=3, n2=3, n_alternatives=5, alternative_pool=20)
        null = sc.complete_null()
        assert null.shift == 0.0 and null.generate(0)[1].size == 0

    def test_partition_merges_all_alternative_blocks(self):
        sc = SimulationScenario(m=6, n1=3, n2=3, block_size=2, alternatives=(2, 3))
        part = sc.partition(sc.alternatives)
        assert part.true_nulls == {0, 1, 4, 5}
        assert sorted(len(b) for b in part.blocks) == [2, 4]

    def test_independent_partition(self):
        sc = SimulationScenario(m=5, n1=3, n2=3, structure="independent", alternatives=(1,))
        assert sc.partition([1]).n_blocks == 4


class TestNullPvalues:
    def test_matches_marginal_test(self):
        sc = SimulationScenario(m=6, n1=4, n2=5, rho=0.3, block_size=3, n_alternatives=0)
        p = null_pvalues(sc, 1, seed=2)
        z = sc.noise(np.random.default_rng([2, 0x5EED]), (1,))[0]
        ref = [wilcoxon_pvalue(row[:4], row[4:]) for row in z]
        assert p[0] == pytest.approx(ref, rel=1e-12)

    def test_uniform_marginal(self):
        sc = SimulationScenario(m=1, n1=6, n2=6, structure="independent", n_alternatives=0)
        p = null_pvalues(sc, 20_000, seed=1)[:, 0]
        # P(p <= s) = s on the lattice
        for s in np.unique(p)[:5]:
            assert np.mean(p <= s) == pytest.approx(s, abs=4 * np.sqrt(s / 20_000) + 1e-3)

    def test_seeded(self):
        sc = SimulationScenario(m=4, n1=3, n2=3, n_alternatives=0)
        assert np.array_equal(null_pvalues(sc, 5, seed=1), null_pvalues(sc, 5, seed=1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["toeplitz", "block", "independent", "perfect_block"]))
def test_null_pvalues_on_lattice(seed, structure):
    sc = SimulationScenario(m=5, n1=4, n2=3, structure=structure, rho=0.5, block_size=2,
                            n_alternatives=0)
    lattice = set(np.round(rank_sum_lattice(4, 3).values, 12))
    assert set(np.round(null_pvalues(sc, 10, seed=seed).ravel(), 12)) <= lattice
