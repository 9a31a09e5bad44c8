"""
multigrid.py のユニットテスト
"""

import math

import numpy as np
import pytest

from saddlegrid.errors import ConfigError, FMGConvergenceError
from saddlegrid.multigrid import (
    CycleConfig,
    CycleType,
    Regime,
    SaddleMultigrid,
    build_damping,
    full_multigrid,
    lanczos_extremes,
    smooth_post,
    smooth_pre,
    vcycle,
    wcycle,
)
from saddlegrid.preconditioner import ReactionDiffusionHierarchy
from saddlegrid.reference import DesiredState, balanced_rhs
from saddlegrid.saddle import BlockVector, MeshNorms, SaddleBlockMatrix
from saddlegrid.spectral import dense_operator_norm


class TestCycleConfig:
    """CycleConfig のテスト"""

    def test_defaults(self):
        config = CycleConfig(beta=1e-2)
        assert config.m1 == config.m2 == 1
        assert config.cycle is CycleType.W
        assert config.symmetric

    def test_swapped(self):
        config = CycleConfig(beta=1e-2, m1=1, m2=3).swapped()
        assert (config.m1, config.m2) == (3, 1)
        assert not config.symmetric

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beta": 0.0},
            {"beta": -1.0},
            {"beta": 1e-2, "m1": 0, "m2": 0},
            {"beta": 1e-2, "m1": -1},
            {"beta": 1e-2, "c_dagger": 0.0},
            {"beta": 1e-2, "lanczos_steps": 0},
            {"beta": 1e-2, "fmg_cycle": CycleType.FMG},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            CycleConfig(**kwargs)


class TestLanczos:
    """lanczos_extremes() のテスト"""

    def test_diagonal_operator(self, rng):
        d = np.linspace(0.5, 7.0, 50)
        lo, hi = lanczos_extremes(lambda x: d * x, 50, 50, rng)
        assert lo == pytest.approx(0.5, rel=1e-8)
        assert hi == pytest.approx(7.0, rel=1e-8)

    def test_breakdown_restart(self, rng):
        """固有値が 2 つしかない作用素でも破綻後に再開して両端を得る"""
        d = np.array([1.0] * 10 + [4.0] * 10)
        lo, hi = lanczos_extremes(lambda x: d * x, 20, 20, rng)
        assert lo == pytest.approx(1.0, rel=1e-10)
        assert hi == pytest.approx(4.0, rel=1e-10)

    def test_empty(self, rng):
        assert lanczos_extremes(lambda x: x, 0, 10, rng) == (0.0, 0.0)


@pytest.fixture(scope="module")
def damping_tables(square_levels_4):
    """β = 1e-2, 1e-4, 1e-6 の減衰表（レベル 0〜4）"""
    tables = {}
    for beta in (1e-2, 1e-4, 1e-6):
        config = CycleConfig(beta=beta, lanczos_steps=60, seed=8)
        saddles = [SaddleBlockMatrix(beta, ops) for ops in square_levels_4]
        inner = ReactionDiffusionHierarchy(square_levels_4, beta)
        tables[beta] = build_damping(square_levels_4, saddles, inner, config)
    return tables


def _scaled_max(entry) -> float:
    return entry.est_max / (1.0 + entry.condition)


class TestSpectralBounds:
    """𝔅C⁻¹𝔅 の極値固有値（レベル 1〜4、β = 1e-2, 1e-4, 1e-6）"""

    def test_lower_bound(self, damping_tables):
        for table in damping_tables.values():
            for entry in table.entries[1:]:
                assert entry.est_min >= 0.1

    def test_uniform_upper_bound(self, damping_tables):
        """λ_max/(1+√βh⁻²) は β とレベルによらず 10 以下"""
        for table in damping_tables.values():
            for entry in table.entries[1:]:
                assert _scaled_max(entry) <= 10.0

    def test_bracket_within_ill_conditioned_regime(self, damping_tables):
        """√βh⁻² ≥ 1 のレベルだけを集めると比は 3 倍以内に収まる"""
        ratios = [
            _scaled_max(entry)
            for table in damping_tables.values()
            for entry in table.entries[1:]
            if entry.regime is Regime.ILL_CONDITIONED
        ]
        assert len(ratios) >= 5
        assert max(ratios) / min(ratios) <= 3.0

    def test_cross_regime_spread(self, damping_tables):
        """質量項が支配的なレベルも含めた全体の比は 3 倍を超え、15 倍以内"""
        ratios = [
            _scaled_max(entry) for table in damping_tables.values() for entry in table.entries[1:]
        ]
        spread = max(ratios) / min(ratios)
        assert 3.0 < spread <= 15.0


class TestBuildDamping:
    """build_damping() のテスト"""

    def test_regimes(self, square_multigrid, small_beta_multigrid):
        """√β h⁻² < 1 なら固有値推定から、そうでなければ c† から決める"""
        for mg in (square_multigrid, small_beta_multigrid):
            for entry in mg.damping.entries:
                if entry.condition < 1.0:
                    assert entry.regime is Regime.WELL_CONDITIONED
                    assert entry.lam == pytest.approx(2.0 / (entry.est_min + entry.est_max))
                else:
                    assert entry.regime is Regime.ILL_CONDITIONED
                    expected = 1.0 / (mg.damping.c_dagger * (1.0 + entry.condition))
                    assert entry.lam == pytest.approx(expected)
                    assert entry.lam * entry.est_max <= 1.0

    def test_condition_numbers(self, small_beta_multigrid):
        # √β h⁻² = 1e-3 · 4^{k+1}（k ≤ 3 ではすべて 1 未満）
        conditions = [e.condition for e in small_beta_multigrid.damping.entries]
        np.testing.assert_allclose(conditions, [1e-3 * 4 ** (k + 1) for k in range(4)])

    def test_explicit_c_dagger(self, square_levels):
        config = CycleConfig(beta=1e-6, c_dagger=2.5, lanczos_steps=20)
        saddles = [SaddleBlockMatrix(1e-6, ops) for ops in square_levels]
        inner = ReactionDiffusionHierarchy(square_levels, 1e-6)
        table = build_damping(square_levels, saddles, inner, config)
        assert table.c_dagger == 2.5
        assert len(table) == len(square_levels)


@pytest.fixture(scope="module")
def exact_inner_multigrid(square_levels):
    """β = 1e-2、内部前処理を直接法に置き換えた W(1,1) サイクル"""
    inner = ReactionDiffusionHierarchy(square_levels, 1e-2, exact=True)
    config = CycleConfig(beta=1e-2, lanczos_steps=60, seed=3)
    return SaddleMultigrid(square_levels, config, inner)


def _dense_smoothers(mg: SaddleMultigrid, level: int) -> tuple[np.ndarray, np.ndarray]:
    """前平滑化 S と後平滑化 R の誤差伝播行列"""
    eye = np.eye(2 * mg.n(level))
    zero = np.zeros_like(eye)
    return mg.smooth_pre(level, eye, zero), mg.smooth_post(level, eye, zero)


def _dense_coarse_complement(mg: SaddleMultigrid, level: int) -> np.ndarray:
    """I − I P_Ritz"""
    eye = np.eye(2 * mg.n(level))
    return eye - mg.prolong(level, mg.ritz_projection(level, eye))


class TestSmoothers:
    """smooth_pre() / smooth_post() のテスト"""

    @pytest.mark.parametrize("fixture", ["square_multigrid", "small_beta_multigrid"])
    def test_adjoint_pair(self, request, rng, fixture):
        """ℬ(S u, v) = ℬ(u, R v)"""
        mg = request.getfixturevalue(fixture)
        level = 3
        saddle = mg.saddles[level]
        n = mg.n(level)
        zero = BlockVector.zeros(n, level)
        lam = mg.damping.lam(level)
        for _ in range(5):
            u = BlockVector.from_stacked(rng.standard_normal(2 * n), level)
            v = BlockVector.from_stacked(rng.standard_normal(2 * n), level)
            su = smooth_pre(mg, u, zero, level, lam)
            rv = smooth_post(mg, v, zero, level, lam)
            lhs = saddle.form(su.stacked(), v.stacked())
            rhs = saddle.form(u.stacked(), rv.stacked())
            scale = np.linalg.norm(saddle.K @ su.stacked()) * np.linalg.norm(v.stacked())
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12 * scale)

    def test_post_smoother_is_non_expansive(self, exact_inner_multigrid, rng):
        """√βh⁻² ≥ 1 のレベルで |||R u|||_{1,k} ≤ |||u|||_{1,k}（内部前処理は直接法）"""
        mg = exact_inner_multigrid
        for level in range(1, mg.num_levels):
            assert mg.damping.entries[level].regime is Regime.ILL_CONDITIONED
            norms = MeshNorms(mg.saddles[level])
            U = rng.standard_normal((2 * mg.n(level), 10))
            RU = mg.smooth_post(level, U, np.zeros_like(U))
            for u, ru in zip(U.T, RU.T):
                assert norms.norm_1k(ru) <= norms.norm_1k(u) * (1 + 1e-10)

    def test_fixed_point(self, square_multigrid, rng):
        """厳密解は平滑化の不動点"""
        mg = square_multigrid
        level = 2
        f = rng.standard_normal(2 * mg.n(level))
        u = mg.exact_solve(level, f)
        np.testing.assert_allclose(mg.smooth_pre(level, u, f), u, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(mg.smooth_post(level, u, f), u, rtol=1e-9, atol=1e-12)


class TestCoarseGrid:
    """Ritz 射影と粗格子補正のテスト"""

    def test_ritz_projection_of_injection(self, square_multigrid, rng):
        """P_Ritz ∘ 埋め込み = 恒等写像"""
        mg = square_multigrid
        for level in (1, 2):
            e = rng.standard_normal(2 * mg.n(level - 1))
            np.testing.assert_allclose(
                mg.ritz_projection(level, mg.prolong(level, e)), e, rtol=1e-9, atol=1e-11
            )

    def test_galerkin_orthogonality(self, small_beta_multigrid, rng):
        """ℬ((I − I P_Ritz) u, I v) = 0"""
        mg = small_beta_multigrid
        level = 3
        saddle = mg.saddles[level]
        u = rng.standard_normal(2 * mg.n(level))
        v = rng.standard_normal(2 * mg.n(level - 1))
        d = u - mg.prolong(level, mg.ritz_projection(level, u))
        value = saddle.form(d, mg.prolong(level, v))
        scale = np.linalg.norm(saddle.K @ u) * np.linalg.norm(mg.prolong(level, v))
        assert abs(value) <= 1e-11 * scale

    def test_restriction_adjoint(self, square_multigrid, rng):
        """[R r, e]_{k−1} = [r, I e]_k"""
        mg = square_multigrid
        level = 3
        r = rng.standard_normal(2 * mg.n(level))
        e = rng.standard_normal(2 * mg.n(level - 1))
        lhs = mg.saddles[level - 1].bracket(mg.restrict(level, r), e)
        rhs = mg.saddles[level].bracket(r, mg.prolong(level, e))
        assert lhs == pytest.approx(rhs, rel=1e-13)

    def test_ritz_level_range(self, square_multigrid):
        with pytest.raises(ValueError):
            square_multigrid.ritz_projection(0, np.zeros(2))


class TestErrorPropagation:
    """平滑化と粗格子補正を密行列にして組み合わせたテスト（レベル 3）"""

    def test_two_grid_error_operator_factorizes(self, square_multigrid):
        """E_TG = R^{m2} (I − I P_Ritz) S^{m1}（m1 = 2, m2 = 1）"""
        mg = square_multigrid.with_config(
            CycleConfig(beta=1e-2, m1=2, m2=1, cycle=CycleType.TWO_GRID, lanczos_steps=40, seed=3)
        )
        level = 3
        eye = np.eye(2 * mg.n(level))
        E = mg.two_grid(level, np.zeros_like(eye), eye)
        S, R = _dense_smoothers(mg, level)
        Q = _dense_coarse_complement(mg, level)
        expected = R @ Q @ S @ S
        np.testing.assert_allclose(E, expected, atol=1e-10 * np.abs(expected).max())

    @pytest.mark.parametrize("fixture", ["square_multigrid", "small_beta_multigrid"])
    @pytest.mark.parametrize("m", [4, 8])
    def test_adjoint_pair_norms(self, request, fixture, m):
        """|||R^m(I − IP)||| と |||(I − IP)S^m||| はともに 1 未満で、比は √2 以内"""
        mg = request.getfixturevalue(fixture)
        level = 3
        S, R = _dense_smoothers(mg, level)
        Q = _dense_coarse_complement(mg, level)
        metric = MeshNorms(mg.saddles[level]).dense_metric()
        post = dense_operator_norm(np.linalg.matrix_power(R, m) @ Q, metric)
        pre = dense_operator_norm(Q @ np.linalg.matrix_power(S, m), metric)
        assert 0.0 < post < 1.0
        assert 0.0 < pre < 1.0
        assert max(post, pre) / min(post, pre) <= math.sqrt(2.0) * (1 + 1e-6)


class TestCycles:
    """wcycle() / vcycle() / two_grid のテスト"""

    def test_level_zero_is_exact(self, square_multigrid, rng):
        mg = square_multigrid
        u0 = rng.standard_normal(2 * mg.n(0))
        assert not mg.cycle(0, np.zeros_like(u0), u0).any()

    @pytest.mark.parametrize("kind", [CycleType.W, CycleType.V, CycleType.TWO_GRID])
    def test_solution_is_fixed_point(self, square_multigrid, rng, kind):
        mg = square_multigrid
        level = 3
        f = rng.standard_normal(2 * mg.n(level))
        u = mg.exact_solve(level, f)
        np.testing.assert_allclose(mg.cycle(level, f, u, kind), u, rtol=1e-8, atol=1e-10)

    @pytest.mark.parametrize("kind", [CycleType.W, CycleType.V])
    def test_linear_error_propagation(self, small_beta_multigrid, rng, kind):
        """E (a u + b v) = a E u + b E v"""
        mg = small_beta_multigrid
        level = 3
        n2 = 2 * mg.n(level)
        u, v = rng.standard_normal(n2), rng.standard_normal(n2)
        zero = np.zeros(n2)
        lhs = mg.cycle(level, zero, 2.0 * u - 0.5 * v, kind)
        rhs = 2.0 * mg.cycle(level, zero, u, kind) - 0.5 * mg.cycle(level, zero, v, kind)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_multi_column_matches_single(self, square_multigrid, rng):
        mg = square_multigrid
        level = 2
        U = rng.standard_normal((2 * mg.n(level), 3))
        F = np.zeros_like(U)
        out = mg.cycle(level, F, U)
        for j in range(3):
            np.testing.assert_allclose(out[:, j], mg.cycle(level, F[:, j], U[:, j]), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("fixture", ["square_multigrid", "small_beta_multigrid"])
    def test_wcycle_reduces_residual(self, request, rng, fixture):
        mg = request.getfixturevalue(fixture)
        level = 3
        n = mg.n(level)
        f = BlockVector.from_stacked(rng.standard_normal(2 * n), level)
        u = BlockVector.zeros(n, level)
        residuals = [mg.relative_residual(level, f.stacked(), u.stacked())]
        for _ in range(10):
            u = wcycle(mg, level, f, u)
            residuals.append(mg.relative_residual(level, f.stacked(), u.stacked()))
        assert residuals[-1] < 0.1 * residuals[0]

    def test_vcycle_wrapper(self, square_multigrid, rng):
        mg = square_multigrid
        level = 2
        n = mg.n(level)
        f = BlockVector.from_stacked(rng.standard_normal(2 * n), level)
        u0 = BlockVector.zeros(n, level)
        out = vcycle(mg, level, f, u0)
        np.testing.assert_allclose(out.stacked(), mg.cycle(level, f.stacked(), u0.stacked(), CycleType.V))

    def test_with_config_rejects_other_beta(self, square_multigrid):
        with pytest.raises(ValueError):
            square_multigrid.with_config(CycleConfig(beta=1e-4))


class TestFullMultigrid:
    """full_multigrid() のテスト"""

    @pytest.fixture(scope="class")
    def fmg_setup(self, square_levels):
        beta = 1e-4
        config = CycleConfig(beta=beta, m1=2, m2=2, cycle=CycleType.FMG, lanczos_steps=40)
        mg = SaddleMultigrid(square_levels, config)
        rhs = [
            BlockVector.from_stacked(balanced_rhs(ops.mesh, DesiredState.ONE, beta), ops.level)
            for ops in square_levels
        ]
        return mg, rhs

    def test_converges_on_every_level(self, fmg_setup):
        mg, rhs = fmg_setup
        result = full_multigrid(mg, rhs)
        assert len(result.solutions) == mg.num_levels
        assert result.iterations[0] == 0
        for history in result.residual_histories:
            assert history[-1] <= mg.config.fmg_tolerance
        assert all(its < 30 for its in result.iterations)

    def test_matches_direct_solve(self, fmg_setup):
        """最細レベルの FMG 解は直接法の解と H¹_β 対ノルムで 1e-6 以内"""
        mg, rhs = fmg_setup
        result = full_multigrid(mg, rhs)
        level = mg.num_levels - 1
        direct = mg.exact_solve(level, rhs[level].stacked())
        saddle = mg.saddles[level]
        error = saddle.pair_norm(result.finest().stacked() - direct)
        assert error <= 1e-6 * saddle.pair_norm(direct)

    def test_zero_data(self, fmg_setup):
        """右辺 0 なら全レベルで解 0、反復 0 回"""
        mg, rhs = fmg_setup
        zeros = [BlockVector.zeros(r.n, r.level) for r in rhs]
        result = full_multigrid(mg, zeros)
        assert result.iterations == [0] * mg.num_levels
        assert all(not u.any() for u in result.solutions)

    def test_iteration_cap(self, square_levels, fmg_setup):
        _, rhs = fmg_setup
        config = CycleConfig(
            beta=1e-4, m1=1, m2=1, fmg_tolerance=1e-15, fmg_max_iterations=1, lanczos_steps=20
        )
        mg = SaddleMultigrid(square_levels, config)
        with pytest.raises(FMGConvergenceError) as excinfo:
            full_multigrid(mg, rhs)
        assert excinfo.value.level == 1
        assert len(excinfo.value.residual_history) == 2

    def test_wrong_number_of_levels(self, fmg_setup):
        mg, rhs = fmg_setup
        with pytest.raises(ValueError):
            full_multigrid(mg, rhs[:-1])
