import numpy as np
import pytest
from helpers import grid_minimize

from tensorenr.core import cp_reconstruct, khatri_rao, unfold
from tensorenr.regularizers import (
    RegularizerSpec,
    reg_value,
    soft_threshold_elem,
)
from tensorenr.trpca import (
    TrpcaConfig,
    _admm_sweep,
    _als_sweep,
    _asym_sweep,
    sparsity_summary,
    trpca_admm_solve,
    trpca_als_solve,
    trpca_asym_solve,
    trpca_solve,
    trpca_x_update,
)

SYM_E1 = RegularizerSpec("sym", 3, p=1.0 / 3.0)
SYM_E2 = RegularizerSpec("sym", 3, p=2.0 / 3.0)


def random_instance(shape, k, seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(shape)
    factors = [rng.standard_normal((n, k)) for n in shape]
    sparse = rng.standard_normal(shape) * (rng.random(shape) < 0.2)
    aux = [f + 0.1 * rng.standard_normal(f.shape) for f in factors]
    duals = [0.1 * rng.standard_normal(f.shape) for f in factors]
    return data, factors, sparse, aux, duals


def clean_rank_one(shape, seed):
    rng = np.random.default_rng(seed)
    f = [rng.standard_normal((n, 1)) for n in shape]
    return cp_reconstruct(f)


class TestXUpdate:
    def test_large_mu_pins_to_aux(self):
        data, factors, sparse, aux, duals = random_instance((4, 5, 6), 3, 0)
        data, sparse = 0.5 * data, 0.5 * sparse
        factors = [0.5 * f for f in factors]
        aux = [0.5 * y for y in aux]
        duals = [0.5 * z for z in duals]

        def deviation(mu):
            x = trpca_x_update(data, sparse, factors, aux[0], duals[0], 0, mu)
            return np.linalg.norm(x - aux[0])

        assert deviation(1e8) <= 1e-6
        # the gap decays as 1/mu
        assert deviation(2e8) <= 0.75 * deviation(1e8)

    def test_scalar_mode_hand_solve(self):
        rng = np.random.default_rng(1)
        factors = [rng.standard_normal((n, 1)) for n in (1, 2, 2)]
        data = rng.standard_normal((1, 2, 2))
        sparse = np.zeros((1, 2, 2))
        y = np.array([[0.4]])
        z = np.array([[-0.2]])
        mu = 3.0
        kr = khatri_rao(factors, skip=0)
        num = (unfold(data, 0) @ kr).item() + mu * 0.4 + (-0.2)
        den = (kr.T @ kr).item() + mu
        x = trpca_x_update(data, sparse, factors, y, z, 0, mu)
        assert x[0, 0] == pytest.approx(num / den, rel=1e-12)

    def test_fixed_point_at_zero_residual(self):
        rng = np.random.default_rng(2)
        factors = [rng.standard_normal((n, 2)) for n in (3, 4, 5)]
        data = cp_reconstruct(factors)
        sparse = np.zeros(data.shape)
        for j in range(3):
            x = trpca_x_update(
                data, sparse, factors, factors[j], np.zeros_like(factors[j]), j, 10.0
            )
            assert np.allclose(x, factors[j], rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_block_stationarity(self, mode):
        # the update must zero the gradient of the augmented objective
        # 0.5*||(D-E)_(j) - X KR'||^2 + <Y - X, Z> + 0.5*mu*||Y - X||^2
        data, factors, sparse, aux, duals = random_instance((4, 5, 6), 3, 3)
        mu = 7.0
        x = trpca_x_update(data, sparse, factors, aux[mode], duals[mode], mode, mu)
        kr = khatri_rao(factors, skip=mode)
        grad = (
            -(unfold(data - sparse, mode) - x @ kr.T) @ kr
            - duals[mode]
            - mu * (aux[mode] - x)
        )
        assert np.linalg.norm(grad) < 1e-8

    def test_bad_mu(self):
        data, factors, sparse, aux, duals = random_instance((3, 3, 3), 2, 4)
        with pytest.raises(ValueError):
            trpca_x_update(data, sparse, factors, aux[0], duals[0], 0, mu=0.0)


def test_sparse_update_matches_grid_oracle():
    # the elementwise threshold is the exact minimizer of each entry's
    # 0.5*(e - v)^2 + lam*|e| problem
    rng = np.random.default_rng(5)
    vs = rng.standard_normal(100) * 2.0
    lam = 0.37
    out = soft_threshold_elem(vs, lam)
    for v, got in zip(vs, out):
        star = grid_minimize(
            lambda e: 0.5 * (e - v) ** 2 + lam * np.abs(e),
            min(0.0, v) - 0.1,
            max(0.0, v) + 0.1,
        )
        assert abs(got - star) < 1e-6


class TestAdmmSolve:
    def test_clean_input_exact_fit(self):
        # with lam_x=0 the splitting reduces to mu-damped alternating least
        # squares; mu=1 keeps the spurious second component's decay fast
        data = clean_rank_one((10, 10, 10), 6)
        cfg = TrpcaConfig(k_init=2, lam_x=0.0, lam_e=1e6, spec=SYM_E1, mu=1.0, t_max=200)
        rep, sparse = trpca_admm_solve(data, cfg)
        assert not sparse.any()
        err = np.linalg.norm(rep.recovered - data) / np.linalg.norm(data)
        assert err < 1e-4

    def test_first_dual_step_bit_exact(self):
        data, factors, sparse, aux, _ = random_instance((4, 4, 4), 2, 7)
        duals = [np.zeros_like(f) for f in factors]
        mu = 10.0
        _admm_sweep(data, sparse, factors, aux, duals, 0.3, 0.2, mu)
        for j in range(3):
            assert np.array_equal(duals[j], mu * (aux[j] - factors[j]))

    def test_primal_residual_shrinks(self):
        rng = np.random.default_rng(8)
        f = [rng.standard_normal((8, 2)) for _ in range(3)]
        data = cp_reconstruct(f)
        factors = [rng.standard_normal((8, 2)) for _ in range(3)]
        factors = [m / np.linalg.norm(m, axis=0) for m in factors]
        aux = [m.copy() for m in factors]
        duals = [np.zeros_like(m) for m in factors]
        sparse = np.zeros(data.shape)
        for _ in range(300):
            sparse = _admm_sweep(data, sparse, factors, aux, duals, 0.05, 0.5, 10.0)
        primal = max(np.linalg.norm(aux[j] - factors[j]) for j in range(3))
        assert primal < 1e-4

    def test_sparse_corruption_separated(self):
        rng = np.random.default_rng(9)
        low = clean_rank_one((12, 12, 12), 9)
        support = rng.random(low.shape) < 0.1
        corruption = 3.0 * np.std(low) * rng.standard_normal(low.shape) * support
        data = low + corruption
        cfg = TrpcaConfig(k_init=4, lam_x=0.1, lam_e=0.15, spec=SYM_E1, t_max=150)
        rep, sparse = trpca_admm_solve(data, cfg)
        err = np.linalg.norm(rep.recovered - low) / np.linalg.norm(low)
        cfg0 = TrpcaConfig(k_init=4, lam_x=0.1, lam_e=0.0, spec=SYM_E1, t_max=150)
        rep0, _ = trpca_admm_solve(data, cfg0)
        err0 = np.linalg.norm(rep0.recovered - low) / np.linalg.norm(low)
        assert err < err0

    def test_prunes_columns_under_heavy_penalty(self):
        data = clean_rank_one((8, 8, 8), 10)
        cfg = TrpcaConfig(k_init=5, lam_x=50.0, lam_e=0.3, spec=SYM_E1, t_max=60)
        rep, _ = trpca_admm_solve(data, cfg)
        assert rep.final_rank < 5
        assert len({m.shape[1] for m in rep.factors}) == 1

    def test_rejects_wrong_spec(self):
        cfg = TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, spec=SYM_E2)
        with pytest.raises(ValueError):
            trpca_admm_solve(np.zeros((3, 3, 3)), cfg)

    def test_does_not_mutate_input(self):
        data = clean_rank_one((6, 6, 6), 11)
        held = data.copy()
        cfg = TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.2, spec=SYM_E1, t_max=20)
        rep, sparse = trpca_admm_solve(data, cfg)
        assert np.array_equal(data, held)
        assert np.allclose(rep.recovered + sparse + (data - rep.recovered - sparse), data)

    def test_deterministic(self):
        data = clean_rank_one((6, 6, 6), 12) + 0.05 * np.random.default_rng(12).standard_normal((6, 6, 6))
        cfg = TrpcaConfig(k_init=3, lam_x=0.2, lam_e=0.3, spec=SYM_E1, t_max=40)
        a, ea = trpca_admm_solve(data, cfg)
        b, eb = trpca_admm_solve(data, cfg)
        assert np.array_equal(a.recovered, b.recovered)
        assert np.array_equal(ea, eb)
        assert a.objective_trace == b.objective_trace


class TestAsymSolve:
    def test_unregularized_exact_fit(self):
        data = clean_rank_one((10, 10, 10), 13)
        cfg = TrpcaConfig(k_init=2, lam_x=0.0, lam_e=1e6, q=0.5, solver="asym", t_max=200)
        rep, sparse = trpca_asym_solve(data, cfg)
        assert not sparse.any()
        err = np.linalg.norm(rep.recovered - data) / np.linalg.norm(data)
        assert err < 1e-4

    def test_huge_ridge_flattens_late_modes(self):
        data, factors, sparse, aux, duals = random_instance((4, 4, 4), 2, 14)
        _, _, _ = _asym_sweep(
            data, np.zeros(data.shape), factors, aux[0], duals[0], 0.5, 1e12, 0.1, 10.0
        )
        assert np.linalg.norm(factors[1]) < 1e-9
        assert np.linalg.norm(factors[2]) < 1e-9

    def test_penalty_tracks_regularizer_family(self):
        # the solver's mode-0 power-q plus ridge structure is, up to the
        # constant p2, exactly the asym_b regularizer value
        rng = np.random.default_rng(15)
        q = 0.5
        spec = RegularizerSpec("asym_b", 3, q=q)
        f = [rng.standard_normal((n, 3)) for n in (3, 4, 5)]
        norms0 = np.linalg.norm(f[0], axis=0)
        manual = float(np.sum(norms0**q)) / q + 0.5 * sum(
            float(np.sum(np.linalg.norm(m, axis=0) ** 2)) for m in f[1:]
        )
        assert reg_value(f, spec) == pytest.approx(spec.effective_p * manual, rel=1e-12)

    def test_rejects_bad_q(self):
        for q in (0.0, 1.0, 2.0, -0.5):
            cfg = TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, q=q, solver="asym")
            with pytest.raises(ValueError):
                trpca_asym_solve(np.zeros((3, 3, 3)), cfg)

    def test_q_taken_from_spec(self):
        data = clean_rank_one((6, 6, 6), 16)
        spec = RegularizerSpec("asym_b", 3, q=0.5)
        cfg = TrpcaConfig(k_init=2, lam_x=0.01, lam_e=1.0, spec=spec, solver="asym", t_max=30)
        rep, _ = trpca_asym_solve(data, cfg)
        assert rep.objective_trace

    def test_deterministic(self):
        data = clean_rank_one((6, 6, 6), 17)
        cfg = TrpcaConfig(k_init=2, lam_x=0.05, lam_e=0.5, q=0.5, solver="asym", t_max=30)
        a, ea = trpca_asym_solve(data, cfg)
        b, eb = trpca_asym_solve(data, cfg)
        assert np.array_equal(a.recovered, b.recovered)
        assert np.array_equal(ea, eb)


class TestAlsSolve:
    def test_block_updates_are_stationary(self):
        # re-derive each ridge update and plug it into the block gradient
        data, factors, sparse, _, _ = random_instance((4, 5, 6), 3, 18)
        lam_x = 0.4
        d = 3
        for j in range(d):
            kr = khatri_rao(factors, skip=j)
            gram = kr.T @ kr + (2.0 * lam_x / d) * np.eye(3)
            x = np.linalg.solve(gram.T, (unfold(data - sparse, j) @ kr).T).T
            grad = -(unfold(data - sparse, j) - x @ kr.T) @ kr + (2.0 * lam_x / d) * x
            assert np.linalg.norm(grad) < 1e-8
            factors[j] = x

    def test_unregularized_exact_fit(self):
        data = clean_rank_one((10, 10, 10), 19)
        cfg = TrpcaConfig(k_init=2, lam_x=0.0, lam_e=1e6, spec=SYM_E2, solver="als", t_max=200)
        rep, sparse = trpca_als_solve(data, cfg)
        assert not sparse.any()
        err = np.linalg.norm(rep.recovered - data) / np.linalg.norm(data)
        assert err < 1e-4

    def test_objective_monotone_on_random_instances(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            data = rng.standard_normal((4, 5, 6))
            cfg = TrpcaConfig(
                k_init=3,
                lam_x=float(rng.uniform(0.0, 1.0)),
                lam_e=float(rng.uniform(0.05, 0.8)),
                spec=SYM_E2,
                solver="als",
                t_max=15,
                rng_seed=seed,
            )
            rep, _ = trpca_als_solve(data, cfg)
            assert np.all(np.diff(rep.objective_trace) <= 1e-10)

    def test_rejects_wrong_spec(self):
        cfg = TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, spec=SYM_E1, solver="als")
        with pytest.raises(ValueError):
            trpca_als_solve(np.zeros((3, 3, 3)), cfg)


class TestDispatchAndConfig:
    def test_dispatch_routes(self):
        data = clean_rank_one((5, 5, 5), 20)
        for solver, kwargs in (
            ("admm", {"spec": SYM_E1}),
            ("asym", {"q": 0.5}),
            ("als", {"spec": SYM_E2}),
        ):
            cfg = TrpcaConfig(
                k_init=2, lam_x=0.05, lam_e=0.5, solver=solver, t_max=10, **kwargs
            )
            rep, sparse = trpca_solve(data, cfg)
            assert rep.recovered.shape == data.shape
            assert sparse.shape == data.shape

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrpcaConfig(k_init=0, lam_x=0.1, lam_e=0.1)
        with pytest.raises(ValueError):
            TrpcaConfig(k_init=2, lam_x=-0.1, lam_e=0.1)
        with pytest.raises(ValueError):
            TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, mu=0.0)
        with pytest.raises(ValueError):
            TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, solver="sgd")

    def test_non_finite_data_rejected(self):
        cfg = TrpcaConfig(k_init=2, lam_x=0.1, lam_e=0.1, spec=SYM_E1)
        bad = np.zeros((3, 3, 3))
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            trpca_admm_solve(bad, cfg)


def test_sparsity_summary():
    e = np.zeros((2, 2, 2))
    e[0, 0, 0] = 1.0
    e[1, 1, 1] = -0.5
    e[0, 1, 0] = 1e-15
    nnz, frac = sparsity_summary(e)
    assert nnz == 2
    assert frac == pytest.approx(0.25)


def test_als_sweep_matches_solver_first_iteration():
    data = clean_rank_one((5, 5, 5), 21)
    cfg = TrpcaConfig(k_init=2, lam_x=0.3, lam_e=0.4, spec=SYM_E2, solver="als", t_max=1)
    rep, sparse = trpca_als_solve(data, cfg)
    from tensorenr.lrtc import init_factors

    factors = init_factors(data.shape, 2, 0)
    manual = _als_sweep(data, np.zeros(data.shape), factors, 0.3, 0.4)
    assert np.array_equal(sparse, manual)
    assert np.array_equal(rep.factors[0], factors[0])
