import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invennet import niqe
from invennet.errors import ContractError, FormatError, NumericError
from invennet.toyset import render_scene


@pytest.fixture(scope="module")
def scene():
    return render_scene(np.random.default_rng(100), 192, 192)


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(101)
    return niqe.fit_model([render_scene(rng, 192, 192) for _ in range(12)], patch_size=96)


def gaussian_elimination(matrix, rhs):
    """Partial-pivoting elimination in plain Python floats."""
    n = len(rhs)
    a = [[float(matrix[i][j]) for j in range(n)] + [float(rhs[i])] for i in range(n)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[pivot] = a[pivot], a[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            for c in range(col, n + 1):
                a[r][c] -= f * a[col][c]
    x = [0.0] * n
    for r in reversed(range(n)):
        x[r] = (a[r][n] - sum(a[r][c] * x[c] for c in range(r + 1, n))) / a[r][r]
    return np.array(x)


class TestMscn:
    def test_constant_image_gives_zero(self):
        np.testing.assert_array_equal(niqe.mscn(np.full((20, 20), 0.4)), 0.0)

    def test_mean_near_zero(self, scene):
        assert abs(niqe.mscn(niqe.gray(scene)).mean()) < 0.05

    def test_linear_rescale_moves_little(self, scene):
        g = niqe.gray(scene)
        base = niqe.mscn(g)
        shifted = niqe.mscn(0.98 * g + 0.01)
        mu, sigma = niqe.local_statistics(g)
        # |c(I - mu)/(c sigma + 1) - (I - mu)/(sigma + 1)| <= |1 - c| |I - mu| / (c sigma + 1)
        bound = (0.02 * np.abs(g - mu) / (0.98 * sigma + 1)).max()
        assert np.abs(shifted - base).max() <= bound + 1e-12
        assert np.abs(shifted - base).max() < 1e-2

    def test_window_matches_loop_oracle(self):
        g = np.random.default_rng(0).random((9, 11))
        w = niqe.gaussian_window()
        assert w.sum() == pytest.approx(1.0)
        mu, sigma = niqe.local_statistics(g, w)

        def mirror(i, n):
            while i < 0 or i >= n:
                i = -i if i < 0 else 2 * (n - 1) - i
            return i

        i, j = 0, 4
        vals = np.array([[g[mirror(i + u, 9), mirror(j + v, 11)] for v in range(-3, 4)] for u in range(-3, 4)])
        expected_mu = (vals * w).sum()
        expected_var = (vals * vals * w).sum() - expected_mu ** 2
        assert mu[i, j] == pytest.approx(expected_mu, abs=1e-12)
        assert sigma[i, j] == pytest.approx(np.sqrt(expected_var), abs=1e-9)

    def test_rejects_colour_input(self):
        with pytest.raises(ContractError):
            niqe.mscn(np.zeros((3, 8, 8)))


class TestAggd:
    def test_gaussian(self):
        fit = niqe.aggd_fit(np.random.default_rng(1).normal(size=100_000))
        assert 1.8 <= fit.shape <= 2.2
        assert fit.left_scale == pytest.approx(fit.right_scale, rel=0.1)

    def test_laplace(self):
        fit = niqe.aggd_fit(np.random.default_rng(2).laplace(size=100_000))
        assert 0.9 <= fit.shape <= 1.1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_symmetric_samples_give_equal_scales(self, seed):
        half = np.random.default_rng(seed).standard_t(4, size=200)
        fit = niqe.aggd_fit(np.concatenate([half, -half]))
        assert fit.left_scale == fit.right_scale
        assert fit.mean_param == 0.0

    def test_too_few_samples(self):
        with pytest.raises(ContractError):
            niqe.aggd_fit(np.ones(99))

    def test_all_zero_is_degenerate(self):
        with pytest.raises(NumericError):
            niqe.aggd_fit(np.zeros(500))


class TestFeatures:
    def test_paired_product_loop(self):
        c = np.random.default_rng(3).normal(size=(4, 5))
        got = niqe.paired_products(c, (1, -1))
        for i in range(4):
            for j in range(5):
                assert got[i, j] == pytest.approx(c[i, j] * c[(i - 1) % 4, (j + 1) % 5])

    def test_patch_grid_and_width(self, scene):
        feats, sharp = niqe.patch_features(scene, 96)
        assert feats.shape == (4, 36)
        assert sharp.shape == (4,)
        assert np.all(np.isfinite(feats))

    def test_downsample_block_mean(self):
        g = np.arange(20.0).reshape(4, 5)
        np.testing.assert_array_equal(niqe.downsample2(g), [[3.0, 5.0], [13.0, 15.0]])

    def test_image_smaller_than_patch(self):
        with pytest.raises(ContractError):
            niqe.patch_features(np.zeros((3, 40, 40)), 96)


class TestScore:
    def test_zero_at_the_model_mean(self, model):
        assert niqe.niqe_distance(model.mu, model.sigma, model) == 0.0

    def test_solve_matches_elimination_oracle(self, model):
        rng = np.random.default_rng(4)
        pooled = model.sigma + 1e-6 * np.eye(36)
        rhs = rng.normal(size=36)
        got = niqe.solve_spd(pooled, rhs)
        want = gaussian_elimination(pooled, rhs)
        assert np.abs(got - want).max() / np.abs(want).max() < 1e-6

    def test_noise_raises_score(self, model, scene):
        rng = np.random.default_rng(5)
        dirty = np.clip(scene + rng.uniform(-0.2, 0.2, scene.shape), 0, 1)
        assert niqe.niqe_score(scene, model) < niqe.niqe_score(dirty, model)

    def test_horizontal_flip(self, model, scene):
        a = niqe.niqe_score(scene, model)
        b = niqe.niqe_score(scene[:, :, ::-1], model)
        assert abs(a - b) < 0.05

    def test_mirrored_corpus_makes_flips_exact(self, model, scene):
        # patches tile the 192-pixel width exactly, so a flip only permutes features
        a = niqe.niqe_score(scene, model)
        b = niqe.niqe_score(scene[:, :, ::-1], model)
        assert a == pytest.approx(b, rel=1e-6)

    def test_scores_are_non_negative(self, model):
        rng = np.random.default_rng(6)
        for _ in range(3):
            assert niqe.niqe_score(rng.random((3, 96, 96)), model) >= 0.0

    def test_singular_covariance(self, model):
        broken = niqe.NiqeModel(model.mu, -np.eye(36), model.meta)
        with pytest.raises(NumericError):
            niqe.niqe_distance(model.mu + 1, np.zeros((36, 36)), broken)


class TestModel:
    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(7)
        corpus = [render_scene(rng, 96, 96) for _ in range(10)]
        a, b = niqe.fit_model(corpus, 48), niqe.fit_model(corpus, 48)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.sigma, b.sigma)
        np.testing.assert_allclose(a.sigma, a.sigma.T)
        assert a.meta["corpus_hash"] == niqe.corpus_hash(corpus)

    def test_needs_ten_images(self):
        with pytest.raises(ContractError):
            niqe.fit_model([np.zeros((3, 96, 96))] * 9)

    def test_save_load(self, model, tmp_path):
        model.save(tmp_path / "m.iven")
        loaded = niqe.NiqeModel.load(tmp_path / "m.iven")
        np.testing.assert_array_equal(loaded.mu, model.mu.astype(np.float32))
        np.testing.assert_array_equal(loaded.sigma, model.sigma.astype(np.float32))
        assert loaded.patch_size == 96
        assert loaded.meta["corpus_hash"] == model.meta["corpus_hash"]

    def test_load_rejects_other_containers(self, tmp_path):
        from invennet import container
        container.save(tmp_path / "x.iven", {"a": np.zeros(2)}, {"kind": "other"})
        with pytest.raises(FormatError):
            niqe.NiqeModel.load(tmp_path / "x.iven")
