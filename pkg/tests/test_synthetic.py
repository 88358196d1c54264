import numpy as np
import pytest
from scipy.stats import chi2

from fairmaml.cache import CacheError, dump_tasks, load_tasks
from fairmaml.synthetic import (
    PHI_CHOICES,
    SyntheticTaskSpec,
    cache_tasks,
    draw_spec,
    line_labels,
    protected_probability,
    rotate,
    rotation_angle,
    sample_attributes,
    sample_finetune_task,
    sample_mixture,
    sample_train_task,
)


def _gauss_pdf(x, mean, cov):
    diff = x - mean
    inv = np.linalg.inv(cov)
    return np.exp(-0.5 * diff @ inv @ diff) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticTaskSpec(6.0, 2.0, 0)
        with pytest.raises(ValueError):
            SyntheticTaskSpec(0.0, 3.0, 0)

    def test_draws_stay_in_range(self):
        rng = np.random.default_rng(0)
        specs = [draw_spec(rng) for _ in range(500)]
        assert all(-5 <= s.slope <= 5 for s in specs)
        assert {s.phi for s in specs} == set(PHI_CHOICES)


class TestLabels:
    def test_above_below_rule(self):
        np.testing.assert_array_equal(line_labels(np.array([[0.0, 1.0], [0.0, -1.0]]), 0.0), [1, 0])

    def test_on_line_is_negative(self):
        assert line_labels(np.array([[1.0, 2.0]]), 2.0)[0] == 0

    def test_train_labels_follow_line(self):
        rng = np.random.default_rng(5)
        for i in range(20):
            spec = draw_spec(rng)
            task = sample_train_task(spec, 300, task_id=i)
            X, Y = task.dataset.X, task.dataset.Y
            np.testing.assert_array_equal(Y, (X[:, 1] > spec.slope * X[:, 0]).astype(int))


class TestRotation:
    def test_length_preserving(self):
        rng = np.random.default_rng(1)
        X, _ = sample_mixture(rng, 1000)
        for phi in PHI_CHOICES:
            for interp in ("literal", "pi-over-phi"):
                Xr = rotate(X, rotation_angle(phi, interp))
                np.testing.assert_allclose(np.linalg.norm(Xr, axis=1), np.linalg.norm(X, axis=1), rtol=0, atol=1e-12)

    def test_interpretations(self):
        assert rotation_angle(4.0) == 4.0
        assert rotation_angle(4.0, "pi-over-phi") == pytest.approx(np.pi / 4)
        with pytest.raises(ValueError):
            rotation_angle(4.0, "degrees")

    def test_protected_probability_matches_density_ratio(self):
        rng = np.random.default_rng(2)
        X = rng.normal(scale=3, size=(50, 2))
        for phi in (2.0, 16.0):
            got = protected_probability(X, phi)
            c, s = np.cos(phi), np.sin(phi)
            for x, p in zip(X, got):
                xr = np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])
                d1 = _gauss_pdf(xr, np.array([2.0, 2.0]), np.array([[5.0, 1.0], [1.0, 5.0]]))
                d2 = _gauss_pdf(xr, np.array([-2.0, -2.0]), np.array([[10.0, 1.0], [1.0, 3.0]]))
                assert p == pytest.approx(d1 / (d1 + d2), rel=1e-10)


def _attribute_label_correlation(phi, interpretation, seed, n=100_000):
    rng = np.random.default_rng(seed)
    X, _ = sample_mixture(rng, n)
    Y = line_labels(X, -1.0)
    A = sample_attributes(rng, X, phi, interpretation)
    return abs(np.corrcoef(A, Y)[0, 1])


class TestAttributeStatistics:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_small_rotation_correlates_more(self, seed):
        # pi/16 rotates a little, pi/2 a lot
        small = _attribute_label_correlation(16.0, "pi-over-phi", seed)
        large = _attribute_label_correlation(2.0, "pi-over-phi", seed)
        assert small > large

    def test_bernoulli_frequencies_chi_square(self):
        rng = np.random.default_rng(11)
        n = 10_000
        X, _ = sample_mixture(rng, n)
        p0 = protected_probability(X, 4.0)
        A = sample_attributes(rng, X, 4.0, "literal")
        bins = np.minimum((p0 * 10).astype(int), 9)
        stat, dof = 0.0, 0
        for b in range(10):
            sel = bins == b
            expected0 = p0[sel].sum()
            expected1 = sel.sum() - expected0
            if expected0 < 5 or expected1 < 5:
                continue
            observed0 = np.sum(A[sel] == 0)
            stat += (observed0 - expected0) ** 2 / expected0 + (sel.sum() - observed0 - expected1) ** 2 / expected1
            dof += 1
        assert dof >= 5
        assert stat < chi2.ppf(0.99, dof)


class TestFinetuneTask:
    def test_biased_adaptation_set(self):
        ft, ev = sample_finetune_task(3)
        assert len(ft) == 5
        assert np.all(ft.Y == 1) and np.all(ft.A == 0)
        assert len(ev) == 1000

    def test_eval_balance(self):
        _, ev = sample_finetune_task(4, n_eval=1000)
        se = np.sqrt(0.25 / 1000)
        assert abs(ev.Y.mean() - 0.5) < 3 * se

    def test_deterministic(self):
        a = sample_finetune_task(9)
        b = sample_finetune_task(9)
        for x, y in zip(a, b):
            assert x.X.tobytes() == y.X.tobytes()
            np.testing.assert_array_equal(x.Y, y.Y)
            np.testing.assert_array_equal(x.A, y.A)


class TestCache:
    def test_count_and_determinism(self):
        a = cache_tasks(0, count=100, n_per_task=20)
        b = cache_tasks(0, count=100, n_per_task=20)
        assert len(a) == 100
        assert all(x.dataset.X.tobytes() == y.dataset.X.tobytes() for x, y in zip(a, b))

    def test_round_trip_bit_exact(self, tmp_path):
        tasks = cache_tasks(42, count=7, n_per_task=30, gamma=2.5)
        path = tmp_path / "tasks.cache"
        dump_tasks(tasks, path)
        back = load_tasks(path)
        assert len(back) == 7
        for t, u in zip(tasks, back):
            assert t.dataset.X.tobytes() == u.dataset.X.tobytes()
            np.testing.assert_array_equal(t.dataset.Y, u.dataset.Y)
            np.testing.assert_array_equal(t.dataset.A, u.dataset.A)
            assert (t.task_id, t.regularizer, t.gamma, t.meta) == (u.task_id, u.regularizer, u.gamma, u.meta)
            assert t.dataset.tag == u.dataset.tag
        dump_tasks(back, tmp_path / "again.cache")
        assert (tmp_path / "again.cache").read_bytes() == path.read_bytes()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.cache"
        path.write_text("")
        with pytest.raises(CacheError):
            load_tasks(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.cache"
        dump_tasks(cache_tasks(1, count=2, n_per_task=5), path)
        path.write_text("\n".join(path.read_text().splitlines()[:-2]))
        with pytest.raises(CacheError):
            load_tasks(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_tasks(tmp_path / "nope.cache")
