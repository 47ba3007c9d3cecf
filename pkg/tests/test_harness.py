"""Population synthesis, Monte Carlo aggregation, and robustness protocols.

The expensive paths run with tiny models and small populations; correctness
of the aggregation arithmetic is checked against hand constructions and a
streaming oracle.
"""

import numpy as np
import pytest

from wgansim.estimators import EstimatorOptions
from wgansim.harness import (
    MonteCarloReport,
    SyntheticPopulation,
    draw_sample,
    ground_truth_att,
    load_population,
    make_population,
    model_hash,
    monte_carlo,
    robustness_architecture,
    robustness_subsample,
    robustness_training_size,
    run_pipeline,
    save_population,
    synthesize_population,
    train_models,
)
from wgansim.seeds import derive_seed, substream
from wgansim.tabular import ColumnSchema, Dataset
from wgansim.wgan import TrainConfig, TrainingError

TINY = TrainConfig(total_steps=4, n_critic=2, batch_size=16, gen_hidden=(8,),
                   critic_hidden=(8,), seed=0)


def _causal_ds(seed=0, n=160, effect=2.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    w = (rng.random(n) < 0.4).astype(float)
    y = x + effect * w + 0.5 * rng.normal(size=n)
    return Dataset(
        [
            ColumnSchema("x", "continuous"),
            ColumnSchema("t", "binary", role="treatment"),
            ColumnSchema("y", "continuous", role="outcome"),
        ],
        np.column_stack([x, w, y]),
    )


def _shift_population(seed=1, n=4000, effect=2.0, d=2):
    """Randomized design with a constant unit-level effect."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    W = (rng.random(n) < 0.4).astype(float)
    Y0 = X @ np.ones(d) + rng.normal(size=n)
    return make_population(X, W, Y0, Y0 + effect)


class TestPopulation:
    def test_ground_truth_constant_shift(self):
        pop = _shift_population(effect=2.0)
        assert pop.tau_true == pytest.approx(2.0, abs=1e-12)
        pop0 = _shift_population(effect=0.0)
        assert pop0.tau_true == 0.0

    def test_ground_truth_matches_streaming_oracle(self):
        rng = np.random.default_rng(2)
        n = 1_000_000
        W = (rng.random(n) < 0.3).astype(float)
        Y0 = rng.normal(size=n)
        Y1 = Y0 + rng.normal(1.5, 2.0, size=n)
        pop = make_population(np.zeros((n, 1)), W, Y0, Y1)
        # single-pass running mean over treated rows
        mean, k = 0.0, 0
        for d in (Y1 - Y0)[W == 1.0]:
            k += 1
            mean += (d - mean) / k
        assert ground_truth_att(pop) == pytest.approx(mean, abs=1e-12)

    def test_no_treated_error(self):
        with pytest.raises(ValueError, match="no treated"):
            make_population(np.zeros((4, 1)), np.zeros(4), np.zeros(4), np.ones(4))

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="number of units"):
            make_population(np.zeros((4, 1)), np.ones(4), np.zeros(3), np.ones(4))
        with pytest.raises(ValueError, match="0/1"):
            make_population(np.zeros((4, 1)), np.full(4, 0.5), np.zeros(4), np.ones(4))

    def test_dataset_view_shows_observed_outcome(self):
        pop = make_population(
            np.arange(4.0)[:, None],
            np.array([1.0, 0.0, 1.0, 0.0]),
            np.array([10.0, 20.0, 30.0, 40.0]),
            np.array([11.0, 21.0, 31.0, 41.0]),
        )
        ds = pop.dataset()
        np.testing.assert_array_equal(ds.outcome(), [11.0, 20.0, 31.0, 40.0])
        assert ds.treatment_name == "w"
        assert ds.names("covariate") == ["x1"]


@pytest.fixture(scope="module")
def models():
    return train_models(_causal_ds(), TINY, seed=3)[:2]


class TestSynthesize:

    def test_population_contract(self, models):
        gX, gY = models
        pop = synthesize_population(gX, gY, N=500, treated_fraction=0.4, seed=4)
        assert pop.n == 500
        assert pop.n_treated == 200
        assert abs(pop.n_treated / pop.n - 0.4) <= 1 / pop.n
        assert np.all(np.isfinite(pop.Y0)) and np.all(np.isfinite(pop.Y1))
        assert pop.tau_true == ground_truth_att(pop)
        assert [c.name for c in pop.x_schema] == ["x"]
        assert pop.treatment_schema.name == "t"
        assert pop.outcome_schema.name == "y"
        assert pop.provenance["gx"] == model_hash(gX)

    def test_same_seed_same_population(self, models):
        gX, gY = models
        a = synthesize_population(gX, gY, 300, 0.4, seed=5)
        b = synthesize_population(gX, gY, 300, 0.4, seed=5)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y0, b.Y0)
        np.testing.assert_array_equal(a.Y1, b.Y1)
        c = synthesize_population(gX, gY, 300, 0.4, seed=6)
        assert np.any(a.X != c.X)

    def test_smoke_population_n10(self, models):
        gX, gY = models
        pop = synthesize_population(gX, gY, 10, 0.4, seed=7)
        assert pop.n == 10 and pop.n_treated == 4
        assert pop.Y0.shape == (10,) and pop.Y1.shape == (10,)

    def test_fraction_validation(self, models):
        gX, gY = models
        with pytest.raises(ValueError, match="treated_fraction"):
            synthesize_population(gX, gY, 100, 0.0, seed=0)
        with pytest.raises(ValueError, match="empty arm"):
            synthesize_population(gX, gY, 100, 0.001, seed=0)

    def test_round_trip_file(self, models, tmp_path):
        gX, gY = models
        pop = synthesize_population(gX, gY, 50, 0.4, seed=8)
        path = tmp_path / "pop.npz"
        save_population(pop, path)
        back = load_population(path)
        np.testing.assert_array_equal(back.X, pop.X)
        np.testing.assert_array_equal(back.W, pop.W)
        np.testing.assert_array_equal(back.Y0, pop.Y0)
        np.testing.assert_array_equal(back.Y1, pop.Y1)
        assert back.tau_true == pop.tau_true
        assert back.provenance == pop.provenance
        assert [c.name for c in back.x_schema] == ["x"]

    def test_population_bytes_stable(self, models, tmp_path):
        gX, gY = models
        pop = synthesize_population(gX, gY, 40, 0.4, seed=9)
        p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
        save_population(pop, p1)
        save_population(pop, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()

    def test_tampered_header_rejected(self, models, tmp_path):
        import json

        gX, gY = models
        pop = synthesize_population(gX, gY, 30, 0.4, seed=10)
        path = tmp_path / "pop.npz"
        save_population(pop, path)
        hdr = json.loads((tmp_path / "pop.json").read_text())
        hdr["tau_true"] = hdr["tau_true"] + 1.0
        (tmp_path / "pop.json").write_text(json.dumps(hdr))
        with pytest.raises(ValueError, match="tau_true"):
            load_population(path)
        hdr["format"] = "other"
        (tmp_path / "pop.json").write_text(json.dumps(hdr))
        with pytest.raises(ValueError, match="format"):
            load_population(path)


class TestDraws:
    def test_arm_counts_preserved(self):
        pop = _shift_population(n=1000)
        n1_pop = pop.n_treated
        X, w, y = draw_sample(pop, 200, np.random.default_rng(0))
        assert len(w) == 200
        assert w.sum() == int(np.rint(200 * n1_pop / 1000))
        # without replacement: all drawn rows distinct
        assert len(np.unique(X[:, 0])) == 200

    def test_observed_outcome_mixture(self):
        pop = make_population(
            np.zeros((6, 1)),
            np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
            np.zeros(6),
            np.ones(6),
        )
        _, w, y = draw_sample(pop, 6, np.random.default_rng(1))
        np.testing.assert_array_equal(y, w)

    def test_uniform_option(self):
        pop = _shift_population(n=500)
        X, w, y = draw_sample(pop, 100, np.random.default_rng(2), arm_preserving=False)
        assert len(w) == 100

    def test_size_validation(self):
        pop = _shift_population(n=100)
        with pytest.raises(ValueError):
            draw_sample(pop, 101, np.random.default_rng(0))
        with pytest.raises(ValueError):
            draw_sample(pop, 0, np.random.default_rng(0))


class TestMonteCarlo:
    def test_rmse_identity_and_fields(self):
        pop = _shift_population()
        rep = monte_carlo(pop, n=300, R=40, estimators=("diff",), master_seed=11)
        s = rep["diff"]
        assert s.rmse**2 == pytest.approx(s.bias**2 + s.sdev**2, rel=1e-9)
        assert 0.0 <= s.coverage <= 1.0
        assert s.failures == 0
        assert rep.replications == 40 and rep.n == 300 and rep.seed == 11

    def test_diff_unbiased_on_randomized_design(self):
        pop = _shift_population(seed=12, n=20000, effect=1.0)
        rep = monte_carlo(pop, n=500, R=200, estimators=("diff",), master_seed=13)
        s = rep["diff"]
        assert abs(s.bias) < 3 * s.sdev / np.sqrt(200)

    def test_parallel_matches_serial(self):
        pop = _shift_population(seed=14, n=3000)
        kw = dict(n=250, R=24, estimators=("diff", "dr_lm"), master_seed=15)
        serial = monte_carlo(pop, **kw, n_jobs=1)
        par2 = monte_carlo(pop, **kw, n_jobs=2)
        par3 = monte_carlo(pop, **kw, n_jobs=3)
        assert serial.to_dict() == par2.to_dict() == par3.to_dict()

    def test_seed_determinism(self):
        pop = _shift_population(seed=16, n=2000)
        a = monte_carlo(pop, 200, 12, ("diff",), master_seed=17)
        b = monte_carlo(pop, 200, 12, ("diff",), master_seed=17)
        c = monte_carlo(pop, 200, 12, ("diff",), master_seed=18)
        assert a.to_dict() == b.to_dict()
        assert a["diff"].bias != c["diff"].bias

    def test_failures_counted_and_excluded(self):
        # one covariate, constant outcome per arm is fine for diff; rb needs
        # enough controls: force failures by making nuisance data degenerate
        rng = np.random.default_rng(19)
        n = 60
        W = np.r_[np.ones(4), np.zeros(n - 4)]
        X = np.zeros((n, 1))  # constant covariate: lm propensity still fits
        Y0 = rng.normal(size=n)
        pop = make_population(X, W, Y0, Y0 + 1.0)
        rep = monte_carlo(pop, n=30, R=10, estimators=("diff", "bcm"), master_seed=20)
        assert rep["diff"].failures == 0
        assert rep["bcm"].failures in range(0, 11)  # present regardless of outcome

    def test_validation(self):
        pop = _shift_population(n=100)
        with pytest.raises(ValueError, match="R must be"):
            monte_carlo(pop, 50, 1, ("diff",))
        with pytest.raises(ValueError, match="sample size"):
            monte_carlo(pop, 101, 5, ("diff",))

    def test_report_rows_layout(self):
        pop = _shift_population(n=1000)
        rep = monte_carlo(pop, 100, 5, ("diff",), master_seed=21)
        rows = rep.rows()
        assert rows[0]["estimator"] == "diff"
        assert set(rows[0]) == {"estimator", "bias", "sdev", "rmse", "coverage", "failures"}

    def test_degenerate_se_flagged(self):
        # constant outcome and constant effect: diff has zero spread, se > 0
        # path unreachable, so build the degenerate case directly
        n = 40
        W = np.r_[np.ones(10), np.zeros(30)]
        pop = make_population(np.zeros((n, 1)), W, np.zeros(n), np.full(n, 2.0))
        rep = monte_carlo(pop, n=20, R=5, estimators=("diff",), master_seed=22)
        s = rep["diff"]
        assert s.rmse == 0.0
        assert s.coverage == 1.0
        assert "degenerate_se" in s.flags


class TestPipeline:
    def test_end_to_end_smoke(self):
        data = _causal_ds(seed=23)
        rep = run_pipeline(
            data,
            TINY,
            seed=24,
            population_size=400,
            replications=6,
            sample_size=80,
            options=EstimatorOptions(estimators=("diff", "dr_lm")),
        )
        assert isinstance(rep, MonteCarloReport)
        s = rep["dr_lm"]
        assert s.rmse**2 == pytest.approx(s.bias**2 + s.sdev**2, rel=1e-9)

    def test_pipeline_deterministic(self):
        data = _causal_ds(seed=25)
        kw = dict(population_size=300, replications=4, sample_size=60,
                  options=EstimatorOptions(estimators=("diff",)))
        a = run_pipeline(data, TINY, seed=26, **kw)
        b = run_pipeline(data, TINY, seed=26, **kw)
        assert a.to_dict() == b.to_dict()

    def test_penalty_must_name_covariates(self):
        from wgansim.penalty import PenaltySpec

        data = _causal_ds(seed=27)
        pen = PenaltySpec(weight=1.0, x_column="x", y_column="y")
        with pytest.raises(TrainingError, match="covariates"):
            train_models(data, TINY, seed=28, penalty=pen)

    def test_missing_roles_rejected(self):
        ds = Dataset([ColumnSchema("a", "continuous")], np.zeros((20, 1)))
        with pytest.raises(TrainingError, match="treatment and outcome"):
            train_models(ds, TINY, seed=29)


class TestRobustness:
    KW = dict(population_size=300, replications=4, sample_size=60,
              options=EstimatorOptions(estimators=("diff",)))

    def test_subsample_aggregates(self):
        data = _causal_ds(seed=30)
        rep = robustness_subsample(data, TINY, M=2, fraction=0.8, seed=31, **self.KW)
        assert rep.runs == 2 and rep.used == 2
        cell = rep.table["diff"]["rmse"]
        assert cell["sd"] >= 0.0
        assert np.isfinite(cell["mean"])

    def test_subsample_single_run_degenerate(self):
        data = _causal_ds(seed=32)
        rep = robustness_subsample(data, TINY, M=1, fraction=0.9, seed=33, **self.KW)
        assert "degenerate_sd" in rep.flags
        assert rep.table["diff"]["bias"]["sd"] == 0.0

    def test_subsample_full_fraction_differs_only_by_seed(self):
        data = _causal_ds(seed=34)
        rep = robustness_subsample(data, TINY, M=2, fraction=1.0, seed=35, **self.KW)
        # both runs saw identical data; spread comes from seed streams alone
        assert rep.used == 2

    def test_architecture_side_by_side(self):
        data = _causal_ds(seed=36)
        rep = robustness_architecture(
            data, TINY, architectures=("main", "alt1"), seed=37,
            population_size=200, replications=4, sample_size=60,
            options=EstimatorOptions(estimators=("diff",)),
        )
        assert rep.architectures == ("main", "alt1")
        assert set(rep.table["diff"]) == {"main", "alt1"}
        assert np.isfinite(rep.table["diff"]["main"]["rmse"])

    def test_architecture_single_column(self):
        data = _causal_ds(seed=38)
        rep = robustness_architecture(
            data, TINY, architectures=("main",), seed=39,
            population_size=200, replications=4, sample_size=60,
            options=EstimatorOptions(estimators=("diff",)),
        )
        assert rep.architectures == ("main",)

    def test_training_size_full_fraction_matches_direct_run(self):
        data = _causal_ds(seed=40)
        rep = robustness_training_size(
            data, TINY, fractions=(1.0,), seed=41,
            population_size=300, replications=4,
            options=EstimatorOptions(estimators=("diff",)),
        )
        direct = run_pipeline(
            data, TINY, seed=derive_seed(41, "size", 0),
            population_size=300, replications=4, sample_size=data.n,
            options=EstimatorOptions(estimators=("diff",)),
        )
        got = rep.table["diff"]["1.0"]
        assert got["rmse"] == direct["diff"].rmse
        assert got["bias"] == direct["diff"].bias

    def test_training_size_tiny_fraction_structured_error(self):
        data = _causal_ds(seed=42)
        with pytest.raises(TrainingError, match="fraction 0.01"):
            robustness_training_size(
                data, TINY, fractions=(0.01,), seed=43,
                population_size=200, replications=4,
                options=EstimatorOptions(estimators=("diff",)),
            )

    def test_fraction_validation(self):
        data = _causal_ds(seed=44)
        with pytest.raises(ValueError, match="fraction"):
            robustness_subsample(data, TINY, M=2, fraction=1.5, seed=45, **self.KW)
        with pytest.raises(ValueError, match="fractions"):
            robustness_training_size(data, TINY, fractions=(0.0,), seed=46)
