import math

import numpy as np
import pytest
from scipy import stats

from qsme.analysis import decoherence_model, lindblad_step, trace_distance
from qsme.diffusive import DiffusiveModel, build_step_operators, diffusive_step
from qsme.errors import NumericalGuardError, ValidationError
from qsme.jump import (
    JumpModel,
    MixedModel,
    jump_step,
    mixed_step,
    qubit_decay_model,
    resonant_discrete_to_jump_check,
    run_jump,
    run_jump_ensemble,
    run_mixed,
    run_mixed_ensemble,
    total_variation,
)
from qsme.rng import trajectory_rng, trajectory_rngs
from qsme.systems import bloch_density, pauli, pure_density

from conftest import random_density

EXCITED = pure_density([0.0, 1.0])
GROUND = pure_density([1.0, 0.0])


class TestJumpModel:
    def test_efficiency_column_bound(self):
        with pytest.raises(ValidationError, match="column sums"):
            JumpModel(
                h=np.zeros((2, 2)),
                jumps=[pauli("minus")],
                shot_rates=[0.0, 0.0],
                efficiency=np.array([[0.7], [0.6]]),
            )

    def test_negative_rate(self):
        with pytest.raises(ValidationError, match="non-negative"):
            JumpModel(h=np.zeros((2, 2)), jumps=[pauli("minus")], shot_rates=[-0.1])

    def test_detector_jump_correspondence(self):
        with pytest.raises(ValidationError, match="one-to-one"):
            JumpModel(h=np.zeros((2, 2)), jumps=[pauli("minus")], shot_rates=[0.1, 0.1])

    def test_dark_count_only_model(self):
        m = JumpModel(
            h=np.zeros((2, 2)), jumps=[], shot_rates=[0.5],
            efficiency=np.zeros((1, 0)),
        )
        assert m.n_detectors == 1
        assert m.n_jumps == 0


class TestJumpStep:
    def test_decay_click_probability_and_posterior(self):
        model = qubit_decay_model()
        dt = 1e-3
        clicked = 0
        gen = trajectory_rng(40, 0)
        for _ in range(8000):
            dn, out = jump_step(model, EXCITED, dt, gen)
            if dn[0]:
                clicked += 1
                assert np.allclose(out, GROUND, atol=1e-14)
        # click probability is dt exactly on |e>
        assert abs(clicked / 8000 - dt) < 4 * math.sqrt(dt / 8000)

    def test_dark_count_on_ground_state(self):
        model = qubit_decay_model(shot_rate=0.7)
        dt = 1e-2
        gen = trajectory_rng(41, 0)
        clicks = 0
        for _ in range(4000):
            dn, out = jump_step(model, GROUND, dt, gen)
            if dn[0]:
                clicks += 1
                assert np.allclose(out, GROUND, atol=1e-14)  # V rho V† = 0
        p = 0.7 * dt
        assert abs(clicks / 4000 - p) < 4 * math.sqrt(p / 4000)

    def test_noclick_keeps_excited_eigenstate(self):
        model = qubit_decay_model()
        gen = trajectory_rng(42, 0)
        dn, out = jump_step(model, EXCITED, 1e-4, gen)
        assert dn[0] == 0
        assert np.allclose(out, EXCITED, atol=1e-14)

    def test_dt_precondition(self):
        model = qubit_decay_model(rate=1.0)
        with pytest.raises(NumericalGuardError, match="click probability"):
            jump_step(model, EXCITED, 0.5, trajectory_rng(0, 0))


class TestBranchStructure:
    def _defect(self, model, rho, dt):
        from qsme.jump import _click_posterior, _jump_ops, _noclick_numerator

        ops = _jump_ops(model.h, model, dt)
        dark = 1.0 - float(np.sum(model.shot_rates)) * dt
        p = dark * float(np.trace(_noclick_numerator(ops, rho[None])[0]).real)
        for mu in range(model.n_detectors):
            p += float(np.trace(_click_posterior(ops, rho[None], mu)[0]).real) * dt
        return abs(p - 1.0)

    def test_partition_second_order(self, rng):
        model = qubit_decay_model(shot_rate=0.3, efficiency=0.8)
        rho = random_density(rng, 2)
        d1 = self._defect(model, rho, 1e-3)
        d2 = self._defect(model, rho, 5e-4)
        assert d1 <= 100 * (1e-3) ** 2
        assert d1 / d2 == pytest.approx(4.0, rel=0.3)

    def test_branch_average_matches_generator(self, rng):
        # outcome-averaged step reproduces the deterministic ensemble map to O(dt^2)
        from qsme.jump import _click_posterior, _jump_ops, _noclick_numerator, _click_probs
        from qsme.systems import renormalize_density

        model = qubit_decay_model(shot_rate=0.2, efficiency=0.6)
        lind = decoherence_model(model.h, list(model.jumps))
        rho = random_density(rng, 2)

        def branch_average(dt):
            ops = _jump_ops(model.h, model, dt)
            probs = _click_probs(ops, rho[None])[0]
            avg = (1 - probs.sum()) * renormalize_density(_noclick_numerator(ops, rho[None])[0])
            for mu in range(model.n_detectors):
                avg = avg + probs[mu] * renormalize_density(
                    _click_posterior(ops, rho[None], mu)[0]
                )
            return trace_distance(avg, lindblad_step(lind, rho, dt))

        d1, d2 = branch_average(1e-3), branch_average(5e-4)
        assert d1 <= 100 * (1e-3) ** 2
        assert d1 / d2 == pytest.approx(4.0, rel=0.4)


class TestWaitingTimes:
    def test_exponential_waiting_time(self):
        model = qubit_decay_model()
        dt = 1e-3
        nsteps = 6000
        res = run_jump_ensemble(
            model, EXCITED, dt, nsteps, trajectory_rngs(50, range(2000)),
            record_dn=False, record_traces=False,
        )
        first = res.first_click_step[:, 0]
        waits = first[first > 0] * dt
        assert len(waits) > 1950
        ks = stats.kstest(waits, "expon")
        assert ks.pvalue > 0.01
        assert abs(waits.mean() - 1.0) < 0.1

    def test_dark_counts_poisson(self):
        model = JumpModel(
            h=np.zeros((2, 2)), jumps=[], shot_rates=[0.5],
            efficiency=np.zeros((1, 0)),
        )
        res = run_jump_ensemble(
            model, GROUND, 1e-3, 2000, trajectory_rngs(51, range(3000)),
            record_dn=False, record_traces=False,
        )
        counts = res.click_counts[:, 0]
        ratio = counts.var(ddof=1) / counts.mean()
        assert abs(ratio - 1.0) < 3 * math.sqrt(2 / (len(counts) - 1)) + 1e-3

    def test_efficiency_thinning(self):
        rates = []
        for i, eff in enumerate((0.5, 1.0)):
            model = qubit_decay_model(efficiency=eff)
            res = run_jump_ensemble(
                model, EXCITED, 1e-3, 2000, trajectory_rngs(52 + i, range(3000)),
                record_dn=False, record_traces=False,
            )
            rates.append(res.click_counts[:, 0].mean() / eff)
        assert rates[0] == pytest.approx(rates[1], rel=0.1)


class TestMixedStep:
    def _mixed(self, gamma=1.0, eta=0.7, shot=0.1, eff=0.8):
        return MixedModel(
            diffusive=DiffusiveModel(
                h0=np.zeros((2, 2)),
                channels=[(math.sqrt(gamma) * pauli("z"), eta)],
            ),
            jump=qubit_decay_model(shot_rate=shot, efficiency=eff),
        )

    def test_reduces_to_diffusive_without_jumps(self, rng):
        diff = DiffusiveModel(h0=0.4 * pauli("x"), channels=[(pauli("z"), 0.6)])
        model = MixedModel(
            diffusive=diff,
            jump=JumpModel(h=np.zeros((2, 2)), jumps=[], shot_rates=[],
                           efficiency=np.zeros((0, 0))),
        )
        rho = random_density(rng, 2)
        dy_m, dn, out_m = mixed_step(model, rho, 1e-3, trajectory_rng(8, 1))
        ops = build_step_operators(diff, 0.0, 1e-3)
        dy_d, out_d = diffusive_step(ops, diff, rho, trajectory_rng(8, 1))
        assert dn.shape == (0,)
        assert np.array_equal(dy_m, dy_d)
        assert np.abs(out_m - out_d).max() <= 1e-14

    def test_reduces_to_jump_without_diffusive(self, rng):
        jm = qubit_decay_model(shot_rate=0.2, efficiency=0.9)
        model = MixedModel(
            diffusive=DiffusiveModel(h0=0.3 * pauli("x"), channels=[]),
            jump=jm,
        )
        rho = random_density(rng, 2)
        dy, dn_m, out_m = mixed_step(model, rho, 1e-3, trajectory_rng(9, 1))
        jm_with_h = JumpModel(
            h=0.3 * pauli("x"), jumps=jm.jumps,
            shot_rates=jm.shot_rates, efficiency=jm.efficiency,
        )
        dn_j, out_j = jump_step(jm_with_h, rho, 1e-3, trajectory_rng(9, 1))
        assert dy.shape == (0,)
        assert np.array_equal(dn_m, dn_j)
        assert np.abs(out_m - out_j).max() <= 1e-14

    def test_jump_hamiltonian_must_be_zero(self):
        with pytest.raises(ValidationError, match="Hamiltonian"):
            MixedModel(
                diffusive=DiffusiveModel(h0=np.zeros((2, 2)), channels=[]),
                jump=JumpModel(h=pauli("x"), jumps=[pauli("minus")], shot_rates=[0.0]),
            )

    def test_full_step_contracts(self, rng):
        model = self._mixed()
        rho = random_density(rng, 2)
        gen = trajectory_rng(10, 2)
        for _ in range(200):
            dy, dn, rho = mixed_step(model, rho, 1e-3, gen)
            assert np.einsum("ii->", rho).real == 1.0
            assert np.linalg.eigvalsh(rho).min() >= -1e-12

    def test_mixed_ensemble_matches_two_channel_reference(self):
        # ensemble average vs deterministic two-channel reference (mini version)
        model = self._mixed(gamma=0.5, eta=0.7, shot=0.0, eff=1.0)
        rho0 = bloch_density(1, 0, 0)
        res = run_mixed_ensemble(
            model, rho0, 1e-3, 1000, trajectory_rngs(60, range(2000)),
            record_dn=False, record_dy=False, record_traces=False,
            record_rho_sum=True, stride=1000,
        )
        mean_rho = res.rho_sum[-1] / res.ntraj
        lind = decoherence_model(
            np.zeros((2, 2)), [math.sqrt(0.5) * pauli("z"), pauli("minus")]
        )
        times_ref_rho = rho0
        for k in range(1000):
            times_ref_rho = lindblad_step(lind, times_ref_rho, 1e-3)
        assert trace_distance(mean_rho, times_ref_rho) < 0.08


class TestRunners:
    def test_run_jump_record(self):
        rec = run_jump(
            qubit_decay_model(), EXCITED, 1e-3, 0.05, trajectory_rng(70, 0),
            observables={"pe": lambda r: np.einsum("bii->bi", r).real[:, 1]},
        )
        assert rec.dn.shape == (50, 1)
        assert rec.observables["pe"].shape == (51,)

    def test_run_mixed_record(self):
        model = TestMixedStep()._mixed()
        rec = run_mixed(model, bloch_density(1, 0, 0), 1e-3, 0.05, trajectory_rng(71, 0))
        assert rec.dy.shape == (50, 1)
        assert rec.dn.shape == (50, 1)

    def test_click_counts_consistent_with_dn(self):
        res = run_jump_ensemble(
            qubit_decay_model(shot_rate=0.5), EXCITED, 1e-3, 400,
            trajectory_rngs(72, range(50)),
        )
        assert np.array_equal(res.dn.sum(axis=1)[:, 0], res.click_counts[:, 0])

    def test_lane_independence(self):
        model = qubit_decay_model(shot_rate=0.3)
        full = run_jump_ensemble(
            model, EXCITED, 1e-3, 200, trajectory_rngs(73, range(5))
        )
        solo = run_jump_ensemble(model, EXCITED, 1e-3, 200, trajectory_rngs(73, [2]))
        assert np.array_equal(full.dn[2], solo.dn[0])


class TestDiscreteToJump:
    def test_theta_zero_no_clicks(self):
        rep = resonant_discrete_to_jump_check(0.0, 100, ntraj=50)
        assert rep.counts_discrete.max() == 0
        assert rep.counts_jump.max() == 0
        assert rep.tv_distance == 0.0

    def test_matched_click_statistics(self):
        theta = math.asin(math.sqrt(4e-3))
        rep = resonant_discrete_to_jump_check(theta, 250, ntraj=4000, seed=301)
        assert rep.dt == pytest.approx(4e-3)
        assert rep.t_total == pytest.approx(1.0)
        assert rep.tv_distance < 0.05
        assert rep.mean_discrete == pytest.approx(1 - math.exp(-1), abs=0.05)
        assert rep.mean_jump == pytest.approx(1 - math.exp(-1), abs=0.05)

    def test_efficiency_halves_both(self):
        theta = math.asin(math.sqrt(4e-3))
        full = resonant_discrete_to_jump_check(theta, 250, ntraj=4000, seed=302)
        half = resonant_discrete_to_jump_check(
            theta, 250, ntraj=4000, seed=302, efficiency=0.5
        )
        assert half.mean_discrete == pytest.approx(0.5 * full.mean_discrete, rel=0.15)
        assert half.mean_jump == pytest.approx(0.5 * full.mean_jump, rel=0.15)


def test_total_variation_simple():
    a = np.array([0, 0, 1, 1])
    b = np.array([0, 0, 0, 0])
    assert total_variation(a, b) == 0.5
    assert total_variation(a, a) == 0.0


class TestCrosstalk:
    """Detectors cross-wired to jump operators through a non-square
    non-negative efficiency matrix with column sums <= 1."""

    def _model(self):
        eff = np.array([[0.6, 0.2], [0.1, 0.5]])  # column sums 0.7, 0.7
        return JumpModel(
            h=np.zeros((2, 2)),
            jumps=[pauli("minus"), 0.5 * pauli("z")],
            shot_rates=[0.05, 0.0],
            efficiency=eff,
        )

    def test_click_probabilities_direct_formula(self, rng):
        from qsme.jump import _click_probs, _jump_ops

        model = self._model()
        dt = 1e-3
        ops = _jump_ops(model.h, model, dt)
        rho = random_density(rng, 2)
        tr_v = np.array([
            float(np.trace(v @ rho @ v.conj().T).real) for v in model.jumps
        ])
        expected = (model.shot_rates + model.efficiency @ tr_v) * dt
        assert np.allclose(_click_probs(ops, rho[None])[0], expected, atol=1e-15)

    def test_click_posterior_direct_formula(self, rng):
        from qsme.jump import _click_posterior, _jump_ops
        from qsme.systems import renormalize_density

        model = self._model()
        ops = _jump_ops(model.h, model, 1e-3)
        rho = random_density(rng, 2)
        for mu in range(2):
            num = model.shot_rates[mu] * rho
            for j, v in enumerate(model.jumps):
                num = num + model.efficiency[mu, j] * (v @ rho @ v.conj().T)
            expected = num / np.trace(num).real
            got = renormalize_density(_click_posterior(ops, rho[None], mu)[0])
            assert np.allclose(got, expected, atol=1e-14)

    def test_branch_average_matches_generator(self, rng):
        model = self._model()
        lind = decoherence_model(model.h, list(model.jumps))
        rho = random_density(rng, 2)
        from qsme.jump import _click_posterior, _click_probs, _jump_ops, _noclick_numerator
        from qsme.systems import renormalize_density

        def distance(dt):
            ops = _jump_ops(model.h, model, dt)
            probs = _click_probs(ops, rho[None])[0]
            avg = (1 - probs.sum()) * renormalize_density(
                _noclick_numerator(ops, rho[None])[0]
            )
            for mu in range(model.n_detectors):
                avg = avg + probs[mu] * renormalize_density(
                    _click_posterior(ops, rho[None], mu)[0]
                )
            return trace_distance(avg, lindblad_step(lind, rho, dt))

        assert distance(1e-3) <= 100 * (1e-3) ** 2

    def test_runs_and_counts_both_detectors(self):
        model = self._model()
        res = run_jump_ensemble(
            model, EXCITED, 1e-3, 1000, trajectory_rngs(81, range(500)),
            record_dn=False, record_traces=False,
        )
        assert res.click_counts.shape == (500, 2)
        assert res.click_counts[:, 0].sum() > 0
        assert res.click_counts[:, 1].sum() > 0
