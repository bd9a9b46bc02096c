import math

import numpy as np
import pytest

from qsme.analysis import diffusive_outcomes, lindblad_step
from qsme.diffusive import (
    DiffusiveModel,
    apply_diffusive_update,
    apply_split_update,
    build_split_operators,
    build_step_operators,
    diffusive_step,
    diffusive_step_split,
    qubit_zmeas_model,
    run_diffusive,
    run_diffusive_ensemble,
    _output_drift,
    _sample_exact,
    _exact_density_coeffs,
)
from qsme.errors import ValidationError
from qsme.linalg import dagger, herm_expm
from qsme.rng import trajectory_rng, trajectory_rngs
from qsme.systems import bloch_density, pauli, pure_density

from conftest import random_density, random_hermitian, random_operator


class TestModel:
    def test_efficiency_range(self):
        with pytest.raises(ValidationError, match="efficiency"):
            DiffusiveModel(h0=np.zeros((2, 2)), channels=[(pauli("z"), 1.5)])

    def test_hermitian_h(self):
        with pytest.raises(ValidationError, match="Hermitian"):
            DiffusiveModel(h0=pauli("minus"), channels=[])

    def test_zmeas_drift_coefficient(self):
        # dy drift: sqrt(eta) Tr((L + L†) rho) dt = 2 sqrt(eta gamma) z dt
        model = qubit_zmeas_model(eta=0.5, gamma=1.0)
        ops = build_step_operators(model, 0.0, 1e-3)
        rho = bloch_density(0.0, 0.0, 0.4)
        drift = _output_drift(ops, rho[None])[0, 0]
        assert abs(drift - math.sqrt(0.5) * 2 * 0.4 * 1e-3) < 1e-15

    def test_zmeas_gamma_validation(self):
        with pytest.raises(ValidationError):
            qubit_zmeas_model(0.5, gamma=0.0)


class TestStepOperators:
    def test_trivial_model(self):
        model = DiffusiveModel(
            h0=np.zeros((2, 2)), channels=[(np.zeros((2, 2)), 1.0)]
        )
        ops = build_step_operators(model, 0.0, 0.01)
        assert np.allclose(ops.m0_tilde, np.eye(2))
        assert np.allclose(ops.l_tilde, 0.0)

    def test_completeness_zmeas(self):
        model = qubit_zmeas_model(1.0, 1.0)
        ops = build_step_operators(model, 0.0, 0.01)
        assert ops.completeness_residual() <= 1e-13

    def test_completeness_random_models(self, rng):
        for _ in range(30):
            dim = int(rng.integers(2, 5))
            model = DiffusiveModel(
                h0=random_hermitian(rng, dim),
                channels=[
                    (random_operator(rng, dim), float(rng.uniform(0, 1)))
                    for _ in range(int(rng.integers(1, 3)))
                ],
            )
            dt = float(10 ** rng.uniform(-4, -1))
            ops = build_step_operators(model, 0.0, dt)
            assert ops.completeness_residual() <= 1e-12

    def test_normalization_close_to_identity_correction(self):
        # M~0 differs from M0 at O(dt^2)
        dt = 1e-3
        model = DiffusiveModel(h0=pauli("x"), channels=[(pauli("z"), 1.0)])
        ops = build_step_operators(model, 0.0, dt)
        m0 = np.eye(2) - (1j * pauli("x") + 0.5 * np.eye(2)) * dt
        assert np.linalg.norm(ops.m0_tilde - m0) <= 1e-5

    def test_normalization_spectrum_at_least_one(self, rng):
        # S = M0†M0 + dt sum L†L = I + dt^2 K†K with K = iH + sum L†L/2,
        # so its spectrum never drops below 1 and the floor guard is defensive.
        for _ in range(20):
            dim = int(rng.integers(2, 5))
            h = random_hermitian(rng, dim, scale=3.0)
            ls = [random_operator(rng, dim, scale=2.0)]
            dt = float(10 ** rng.uniform(-4, 0.5))
            ldl = sum(l.conj().T @ l for l in ls)
            m0 = np.eye(dim) - (1j * h + 0.5 * ldl) * dt
            s = m0.conj().T @ m0 + dt * ldl
            assert np.linalg.eigvalsh(s).min() >= 1.0 - 1e-12

    def test_dt_positive(self):
        with pytest.raises(ValidationError):
            build_step_operators(qubit_zmeas_model(1.0), 0.0, 0.0)


class TestStep:
    def test_pointer_state_fixed_point(self):
        model = qubit_zmeas_model(1.0, 1.0)
        dt = 1e-2
        ops = build_step_operators(model, 0.0, dt)
        rho = pure_density([1.0, 0.0])  # |g>, eigenstate of sigma_z
        drift = _output_drift(ops, rho[None])[0, 0]
        assert abs(drift - (-2 * dt)) < 1e-15
        for dy in (-0.3, 0.0, 0.5):
            out = apply_diffusive_update(ops, rho, np.array([dy]))
            assert np.allclose(out, rho, atol=1e-14)

    def test_bloch_update_value(self):
        # direct evaluation of the Kraus update at dy = 0.1:
        # z' = 2 dy (1 - dt/2) / ((1 - dt/2)^2 + dt)
        dt, dy = 0.01, 0.1
        model = qubit_zmeas_model(1.0, 1.0)
        ops = build_step_operators(model, 0.0, dt)
        out = apply_diffusive_update(ops, 0.5 * np.eye(2, dtype=complex), np.array([dy]))
        z = (out[1, 1] - out[0, 0]).real
        expected = 2 * dy * (1 - dt / 2) / ((1 - dt / 2) ** 2 + dt)
        assert abs(z - expected) < 1e-14
        assert abs(expected - 0.198995) < 1e-6

    def test_unread_channel_is_deterministic(self):
        model = qubit_zmeas_model(0.0, 1.0)
        dt = 1e-3
        ops = build_step_operators(model, 0.0, dt)
        rho = bloch_density(0.7, 0.0, 0.1)
        _, out1 = diffusive_step(ops, model, rho, trajectory_rng(0, 0))
        _, out2 = diffusive_step(ops, model, rho, trajectory_rng(99, 5))
        assert np.array_equal(out1, out2)
        assert np.allclose(out1, lindblad_step(model, rho, dt), atol=1e-15)

    def test_positivity_and_trace_random_steps(self, rng):
        for _ in range(40):
            dim = int(rng.integers(2, 4))
            model = DiffusiveModel(
                h0=random_hermitian(rng, dim),
                channels=[(random_operator(rng, dim), float(rng.uniform(0, 1)))],
            )
            dt = float(10 ** rng.uniform(-4, -1))
            ops = build_step_operators(model, 0.0, dt)
            rho = random_density(rng, dim)
            for _ in range(25):
                dy = _output_drift(ops, rho[None])[0] + math.sqrt(dt) * rng.normal(
                    size=model.n_channels
                )
                rho = apply_diffusive_update(ops, rho, dy)
                assert np.einsum("ii->", rho).real == 1.0
                assert np.linalg.eigvalsh(rho).min() >= -1e-12

    def test_unknown_mode(self):
        model = qubit_zmeas_model(1.0)
        ops = build_step_operators(model, 0.0, 1e-3)
        with pytest.raises(ValidationError, match="mode"):
            diffusive_step(ops, model, bloch_density(1, 0, 0), trajectory_rng(0, 0), mode="x")


class TestExactSampling:
    def test_density_normalization(self, rng):
        model = DiffusiveModel(
            h0=0.3 * pauli("x"),
            channels=[(pauli("z"), 0.7), (0.5 * pauli("minus"), 0.4)],
        )
        ops = build_step_operators(model, 0.0, 1e-2)
        for _ in range(5):
            rho = random_density(rng, 2)
            c0, b, a = _exact_density_coeffs(ops, rho)
            assert abs(c0 + np.trace(a) - 1.0) < 1e-12

    def test_sampler_moments_match_density(self):
        model = DiffusiveModel(h0=0.3 * pauli("x"), channels=[(pauli("z"), 0.7)])
        ops = build_step_operators(model, 0.0, 5e-2)
        rho = bloch_density(0.3, -0.5, 0.4)
        c0, b, a = _exact_density_coeffs(ops, rho)
        gen = trajectory_rng(17, 0)
        samples = np.array([_sample_exact(ops, rho, gen) for _ in range(20000)])
        # E[s] = b, E[s^2] = c0 + 3a (1-channel quadratic-weighted Gaussian moments)
        mean_pred = b[0]
        second_pred = c0 + 3 * a[0, 0]
        assert abs(samples.mean() - mean_pred) < 5 * samples.std() / math.sqrt(len(samples))
        assert abs((samples**2).mean() - second_pred) < 5 * (samples**2).std() / math.sqrt(len(samples))

    def test_exact_mode_step_runs(self):
        model = qubit_zmeas_model(0.8, 1.0)
        ops = build_step_operators(model, 0.0, 1e-3)
        rho = bloch_density(0.5, 0.2, 0.1)
        dy, out = diffusive_step(ops, model, rho, trajectory_rng(2, 3), mode="exact")
        assert dy.shape == (1,)
        assert np.einsum("ii->", out).real == 1.0


class TestMartingaleQuadrature:
    def test_conditional_expectation_reproduces_unread_step(self, rng):
        for _ in range(5):
            model = DiffusiveModel(
                h0=random_hermitian(rng, 2),
                channels=[
                    (random_operator(rng, 2), float(rng.uniform(0, 1))),
                    (random_operator(rng, 2, scale=0.5), float(rng.uniform(0, 1))),
                ],
            )
            ops = build_step_operators(model, 0.0, 1e-2)
            rho = random_density(rng, 2)
            outs = diffusive_outcomes(ops, rho, order=15)
            erho = sum(w * r for w, r in outs)
            ref = lindblad_step(model, rho, 1e-2)
            assert np.abs(erho - ref).max() <= 1e-8
            assert abs(sum(w for w, _ in outs) - 1.0) <= 1e-12


class TestSplitScheme:
    def test_h_zero_matches_plain_update(self, rng):
        model = qubit_zmeas_model(1.0, 1.0)
        dt = 1e-3
        sops = build_split_operators(model, 0.0, dt)
        rho = random_density(rng, 2)
        dy = np.array([0.02])
        split_out = apply_split_update(sops, rho, dy)
        plain_out = apply_diffusive_update(sops.inner, rho, dy)
        assert np.allclose(split_out, plain_out, atol=1e-14)

    def test_pure_unitary_when_no_channels(self):
        h = 0.7 * pauli("x")
        model = DiffusiveModel(h0=h, channels=[])
        dt = 1e-2
        rho = bloch_density(0.0, 0.0, 1.0)
        _, out = diffusive_step_split(model, rho, dt, trajectory_rng(0, 0))
        u = herm_expm(h, -1j * dt)
        assert np.allclose(out, u @ rho @ dagger(u), atol=1e-12)

    def test_split_vs_unsplit_second_order_difference(self):
        # shared record: per-step difference shrinks ~4x when dt halves
        model = DiffusiveModel(h0=pauli("x"), channels=[(pauli("z"), 1.0)])
        rho = bloch_density(0.3, 0.2, 0.4)

        def one_step_diff(dt):
            ops = build_step_operators(model, 0.0, dt)
            sops = build_split_operators(model, 0.0, dt)
            dy = np.array([0.01 * math.sqrt(dt / 1e-3)])
            a = apply_diffusive_update(ops, rho, dy)
            b = apply_split_update(sops, rho, dy)
            return float(np.abs(a - b).max())

        d1, d2 = one_step_diff(1e-3), one_step_diff(5e-4)
        assert d1 / d2 == pytest.approx(4.0, rel=0.5)


class TestRunners:
    def test_record_shapes_and_times(self):
        model = qubit_zmeas_model(1.0)
        rec = run_diffusive(
            model, bloch_density(1, 0, 0), 1e-3, 0.02, trajectory_rng(0, 0),
            observables={"z": lambda r: np.einsum("ij,bji->b", pauli("z"), r).real},
            stride=2,
        )
        assert rec.times.shape == (11,)
        assert rec.dy.shape == (10, 1)
        assert rec.observables["z"].shape == (11,)
        assert rec.times[1] == pytest.approx(2e-3)

    def test_lane_independence_from_batch(self):
        model = qubit_zmeas_model(0.7)
        rho0 = bloch_density(1, 0, 0)
        full = run_diffusive_ensemble(
            model, rho0, 1e-3, 30, trajectory_rngs(5, range(6))
        )
        solo = run_diffusive_ensemble(model, rho0, 1e-3, 30, trajectory_rngs(5, [4]))
        assert np.array_equal(full.dy[4], solo.dy[0])
        assert np.array_equal(full.final_rho[4], solo.final_rho[0])

    def test_stride_windows_sum_increments(self):
        model = qubit_zmeas_model(1.0)
        rho0 = bloch_density(1, 0, 0)
        fine = run_diffusive_ensemble(model, rho0, 1e-3, 20, trajectory_rngs(3, [0]))
        coarse = run_diffusive_ensemble(
            model, rho0, 1e-3, 20, trajectory_rngs(3, [0]), stride=5
        )
        fine_windows = fine.dy[0].reshape(4, 5, 1).sum(axis=1)
        assert np.allclose(coarse.dy[0], fine_windows, atol=1e-15)
        # identical states at matching times regardless of stride
        assert np.array_equal(fine.final_rho, coarse.final_rho)

    def test_control_schedule_changes_hamiltonian(self):
        model = DiffusiveModel(
            h0=np.zeros((2, 2)),
            channels=[(0.3 * pauli("z"), 0.0)],
            h1=pauli("x"),
            control=lambda t: 0.0 if t < 0.01 else 1.0,
        )
        rec = run_diffusive(
            model, bloch_density(0, 0, 1), 1e-3, 0.02, trajectory_rng(0, 0),
            observables={"z": lambda r: np.einsum("ij,bji->b", pauli("z"), r).real},
        )
        z = rec.observables["z"]
        assert abs(z[10] - 1.0) < 1e-6      # no drive yet
        assert z[-1] < 1.0 - 1e-4           # Rabi drive tips the state

    def test_unconditional_ensemble_mean_matches_reference(self):
        # eta = 0: deterministic; coherence decays as exp(-2 gamma t)
        model = qubit_zmeas_model(0.0, 1.0)
        rec = run_diffusive(
            model, bloch_density(1, 0, 0), 1e-4, 1.0, trajectory_rng(0, 0),
            observables={"x": lambda r: np.einsum("ij,bji->b", pauli("x"), r).real},
            stride=100,
        )
        assert abs(rec.observables["x"][-1] - math.exp(-2.0)) < 1e-3
