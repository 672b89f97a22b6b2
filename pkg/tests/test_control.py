"""Cascade controller: allocation, inner-loop algebra, outer loop, runner."""

import dataclasses
import math

import numpy as np
import pytest

from quadsr.control import (
    Controller,
    ControlFlag,
    OuterLoop,
    OuterLoopSettings,
    RATE_ARMS,
    SecondOrderFilter,
    allocate,
    backstepping_virtual,
    gamma_affine,
    inner_dynamics,
    run_tracking,
    simulate_inner_loop,
    solve_virtual_controls,
    tracking_errors,
)
from quadsr.plant import PlantModel
from quadsr.types import (
    GainSet,
    PlantParams,
    RefChannel,
    Reference,
    RotorCommand,
    State,
    VirtualControl,
    wrap_angle,
)


def forward_mix(u):
    """Squared-speed combinations the allocator must invert."""
    s = [v * v for v in u]
    f1 = s[0] + s[1] + s[2] + s[3]
    f2 = s[1] + s[2] - s[0] - s[3]
    f3 = s[0] + s[2] - s[1] - s[3]
    f4 = s[0] + s[1] - s[2] - s[3]
    return VirtualControl(f1, f2, f3, f4)


def hover_ref():
    z = RefChannel.constant(0.0)
    return Reference(x=RefChannel.constant(0.0), y=RefChannel.constant(0.0),
                     z=z, psi=RefChannel.constant(0.0))


def random_inner_states(seed, n):
    rng = np.random.default_rng(seed)
    out = np.empty((n, 8))
    out[:, 0] = rng.uniform(-5.0, 0.0, n)       # z
    out[:, 1] = rng.uniform(-1.2, 1.2, n)       # phi
    out[:, 2] = rng.uniform(-1.2, 1.2, n)       # theta
    out[:, 3] = rng.uniform(-math.pi, math.pi, n)
    out[:, 4:8] = rng.uniform(-3.0, 3.0, (n, 4))
    return out


class TestAllocation:
    def test_exact_inversion_feasible(self):
        u = (400.0, 500.0, 600.0, 550.0)
        cmd, flags = allocate(forward_mix(u))
        assert flags == ControlFlag.NONE
        np.testing.assert_allclose(cmd.as_array(), u, rtol=1e-14)

    def test_torque_scaling_oracle(self):
        # f1=100 with roll demand 500: the negative-square constraint
        # forces scale 0.2, leaving u = (0, sqrt(50), sqrt(50), 0).
        cmd, flags = allocate(VirtualControl(100.0, 500.0, 0.0, 0.0))
        assert flags == ControlFlag.TORQUE_SCALE
        np.testing.assert_allclose(
            cmd.as_array(), [0.0, math.sqrt(50.0), math.sqrt(50.0), 0.0],
            atol=1e-12)

    def test_negative_thrust_clamped(self):
        cmd, flags = allocate(VirtualControl(-50.0, 0.0, 0.0, 0.0))
        assert ControlFlag.NEG_SQUARED_CLAMP in flags
        np.testing.assert_array_equal(cmd.as_array(), np.zeros(4))

    def test_over_cap_thrust_clamped(self):
        cmd, flags = allocate(VirtualControl(5.0e6, 0.0, 0.0, 0.0))
        assert ControlFlag.ROTOR_SPEED_CLAMP in flags
        np.testing.assert_allclose(cmd.as_array(), np.full(4, 1000.0),
                                   rtol=1e-14)

    def test_scaling_preserves_torque_direction(self):
        # Infeasible torque triple: the realized torques must stay
        # proportional to the demanded ones, with thrust untouched.
        demanded = VirtualControl(1.0e5, 3.0e5, -1.5e5, 0.5e5)
        cmd, flags = allocate(demanded)
        assert ControlFlag.TORQUE_SCALE in flags
        realized = forward_mix(cmd.as_array())
        assert realized.f1 == pytest.approx(demanded.f1, rel=1e-12)
        scale = realized.f2 / demanded.f2
        assert 0.0 < scale < 1.0
        assert realized.f3 == pytest.approx(scale * demanded.f3, rel=1e-9)
        assert realized.f4 == pytest.approx(scale * demanded.f4, rel=1e-9)

    def test_rate_arm_constants(self):
        np.testing.assert_array_equal(RATE_ARMS,
                                      [8.33e-5, 8.03e-5, 4.86e-6])


class TestInnerAlgebra:
    def test_gamma_affine_matches_dynamics(self):
        # (A, b) must be exactly the affine map realized by inner_dynamics.
        for s in random_inner_states(21, 25):
            A, b = gamma_affine(s)
            base = inner_dynamics(s, VirtualControl(0.0, 0.0, 0.0, 0.0))
            np.testing.assert_allclose(base[5:8], b, rtol=1e-12, atol=1e-12)
            for j, f in enumerate([
                VirtualControl(0.0, 1.0, 0.0, 0.0),
                VirtualControl(0.0, 0.0, 1.0, 0.0),
                VirtualControl(0.0, 0.0, 0.0, 1.0),
            ]):
                col = inner_dynamics(s, f)[5:8] - base[5:8]
                np.testing.assert_allclose(col, A[:, j], rtol=1e-9,
                                           atol=1e-12)

    def test_inner_dynamics_rate_passthrough(self):
        s = np.array([-1.0, 0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7])
        d = inner_dynamics(s, VirtualControl(0.0, 0.0, 0.0, 0.0))
        np.testing.assert_array_equal(d[0:4], s[4:8])

    def test_solve_inverts_dynamics(self):
        rng = np.random.default_rng(3)
        for s in random_inner_states(22, 100):
            gamma = rng.uniform(-50.0, 50.0, 4)
            f = solve_virtual_controls(gamma, s)
            got = inner_dynamics(s, f)[4:8]
            np.testing.assert_allclose(got, gamma, rtol=1e-10, atol=1e-10)

    def test_f1_at_rest_oracle(self):
        # Zero heave acceleration demand at rest: f1 = 9.44 / 6.9e-6.
        f = solve_virtual_controls(np.zeros(4), np.zeros(8))
        assert f.f1 == pytest.approx(9.44 / 6.9e-6, rel=1e-14)
        assert f.f2 == pytest.approx(0.0, abs=1e-12)
        assert f.f3 == pytest.approx(0.0, abs=1e-12)
        assert f.f4 == pytest.approx(0.0, abs=1e-12)

    def test_backstepping_hand_oracle(self):
        # e=1, all rates and targets zero:
        # out = e + c5*(c1*e) = 1 + 3*2 = 7 on the heave channel.
        gains = dataclasses.replace(GainSet.tracking_defaults(),
                                    c1=2.0, c5=3.0)
        out = backstepping_virtual(np.zeros(8), (1.0, 0.0, 0.0, 0.0),
                                   (0.0,) * 4, (0.0,) * 4, gains)
        assert out[0] == pytest.approx(7.0, rel=1e-15)

    def test_tracking_errors_oracle(self):
        gains = GainSet.tracking_defaults()
        s = np.array([0.5, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0])
        e, delta = tracking_errors(s, (1.0, 0.0, 0.0, 0.0),
                                   (0.3, 0.0, 0.0, 0.0), gains)
        assert e[0] == pytest.approx(0.5)
        # delta = sd_dot + c1*e - rate = 0.3 + 11.52*0.5 - 0.2
        assert delta[0] == pytest.approx(0.3 + 11.52 * 0.5 - 0.2)

    def test_inner_state_length_validation(self):
        with pytest.raises(ValueError):
            inner_dynamics(np.zeros(7), VirtualControl(0, 0, 0, 0))


class TestInnerLoopSim:
    def test_lyapunov_decreasing_and_convergent(self):
        gains = GainSet.tracking_defaults()
        refs = (RefChannel.constant(-1.0), RefChannel.constant(0.2),
                RefChannel.constant(-0.15), RefChannel.constant(0.5))
        run = simulate_inner_loop(gains, refs, np.zeros(8), t_end=3.0,
                                  dt=1e-3)
        w0 = run.W[0].max()
        assert w0 > 0.1
        # The design makes W strictly non-increasing per channel.
        assert np.all(np.diff(run.W, axis=0) <= 1e-9 * w0)
        assert run.W[-1].max() < 1e-8
        # Predicted decay rates are non-positive throughout.
        assert np.all(run.wdot_pred <= 0.0)

    def test_record_shapes(self):
        gains = GainSet.tracking_defaults()
        refs = tuple(RefChannel.constant(0.0) for _ in range(4))
        run = simulate_inner_loop(gains, refs, np.zeros(8), t_end=0.1,
                                  dt=1e-3)
        assert run.times.shape == (101,)
        assert run.s.shape == (101, 8)
        assert run.W.shape == (101, 4)
        assert run.times[-1] == pytest.approx(0.1)


class TestSecondOrderFilter:
    def test_step_convergence(self):
        f = SecondOrderFilter(omega=12.0, zeta=1.0)
        pos = vel = acc = 0.0
        for _ in range(400):
            pos, vel, acc = f.step(1.0, 5e-3)
        assert pos == pytest.approx(1.0, abs=1e-4)
        assert abs(vel) < 1e-3

    def test_acc_identity(self):
        f = SecondOrderFilter(omega=8.0, zeta=0.9)
        pos, vel, acc = f.step(0.7, 0.01)
        want = 8.0 * 8.0 * (0.7 - pos) - 2.0 * 0.9 * 8.0 * vel
        assert acc == pytest.approx(want, rel=1e-15)


class TestOuterLoop:
    def test_first_step_rate_limited(self):
        # From rest with a 1 m lateral error the raw tilt target exceeds
        # the per-step slew, so the loop reports the limit flag and moves
        # exactly one step.
        gains = GainSet.tracking_defaults()
        settings = OuterLoopSettings()
        loop = OuterLoop(gains, settings, dt=5e-3)
        ref = Reference(x=RefChannel.constant(0.0),
                        y=RefChannel.constant(1.0),
                        z=RefChannel.constant(0.0),
                        psi=RefChannel.constant(0.0))
        u_hover = math.sqrt(9.44 / 6.9e-6 / 4.0)
        phi_d, theta_d, flags = loop.compute(State.zero(), ref,
                                             RotorCommand.uniform(u_hover), 0.0)
        usq = u_hover * u_hover
        den_y = 7.87e-6 * usq + 7.78e-6 * 3.0 * usq
        raw = math.asin((gains.kiy * 1.0 + 0.0441) / den_y)
        assert raw > settings.rate_limit * 5e-3
        assert ControlFlag.RATE_LIMIT in flags
        assert phi_d == pytest.approx(settings.rate_limit * 5e-3, rel=1e-12)
        assert theta_d == pytest.approx(0.0, abs=1e-15)

    def test_tilt_clamp_flag(self):
        gains = dataclasses.replace(GainSet.tracking_defaults(), kiy=500.0)
        settings = OuterLoopSettings(rate_limit=1e6)  # isolate the clamp
        loop = OuterLoop(gains, settings, dt=5e-3)
        ref = Reference(x=RefChannel.constant(0.0),
                        y=RefChannel.constant(1.0),
                        z=RefChannel.constant(0.0),
                        psi=RefChannel.constant(0.0))
        u_hover = math.sqrt(9.44 / 6.9e-6 / 4.0)
        phi_d, _, flags = loop.compute(State.zero(), ref,
                                       RotorCommand.uniform(u_hover), 0.0)
        assert ControlFlag.ARCSIN_SAT in flags
        assert ControlFlag.TILT_CLAMP in flags
        assert phi_d == pytest.approx(settings.tilt_clamp)

    def test_thrust_denominator_hold(self):
        gains = GainSet.tracking_defaults()
        loop = OuterLoop(gains, OuterLoopSettings(), dt=5e-3)
        loop.phi_d = 0.123
        ref = hover_ref()
        _ = loop.compute(State.zero(), ref, RotorCommand.uniform(0.0), 0.0)
        phi_d, _, flags = (loop.phi_d, loop.theta_d, None)
        # With zero rotor speed both inversions are held at the previous
        # targets.
        phi2, theta2, flags = loop.compute(State.zero(), ref,
                                           RotorCommand.uniform(0.0), 0.0)
        assert ControlFlag.THRUST_DENOM_HOLD in flags
        assert ControlFlag.TILT_DENOM_HOLD in flags


class TestController:
    def test_step_consistency(self):
        ctl = Controller()
        u, diag = ctl.step(State.zero(), hover_ref(), 0.0)
        arr = u.as_array()
        assert np.all((arr >= 0.0) & (arr <= 1000.0))
        np.testing.assert_allclose(diag.V, 0.5 * diag.e**2, rtol=1e-15)
        np.testing.assert_allclose(
            diag.W, 0.5 * (diag.e**2 + diag.delta**2), rtol=1e-15)
        gains = ctl.gains
        c_err = np.array([gains.c(i + 1) for i in range(4)])
        c_rate = np.array([gains.c(i + 5) for i in range(4)])
        np.testing.assert_allclose(
            diag.wdot_pred, -c_err * diag.e**2 - c_rate * diag.delta**2,
            rtol=1e-15)
        assert u is ctl.u_prev

    def test_yaw_wraps_to_nearest_branch(self):
        ctl = Controller()
        s = State(0, 0, 0, 0, 0, 0, 0, 0, 3.0, 0, 0, 0)
        ref = Reference(x=RefChannel.constant(0.0),
                        y=RefChannel.constant(0.0),
                        z=RefChannel.constant(0.0),
                        psi=RefChannel.constant(-3.0))
        _, diag = ctl.step(s, ref, 0.0)
        # Short way round: the commanded error is wrap(-3 - 3) = 2*pi - 6.
        assert diag.e[3] == pytest.approx(wrap_angle(-6.0), rel=1e-12)
        assert abs(diag.e[3]) <= math.pi


class TestRunTracking:
    def test_shapes_and_grid(self):
        plant = PlantModel(PlantParams())
        run = run_tracking(plant, Controller(dt=5e-3), hover_ref(),
                           t_end=0.1, dt_plant=1e-3)
        assert run.times.shape == (21,)
        assert run.states.shape == (21, 12)
        assert run.refs.shape == (21, 4)
        assert len(run.diags) == 20
        assert run.times[-1] == pytest.approx(0.1)
        # Hover regulation keeps the vehicle near the origin.
        assert np.all(np.abs(run.states[:, 2]) < 0.05)

    def test_period_mismatch_rejected(self):
        plant = PlantModel(PlantParams())
        with pytest.raises(ValueError):
            run_tracking(plant, Controller(dt=5e-3), hover_ref(),
                         t_end=0.1, dt_plant=3e-3)

    def test_abort_carries_partial_record(self):
        # A system whose pitch ramps straight through the singularity
        # must abort with the record accumulated so far attached.
        class Diverging:
            def derivative_array(self, y, u):
                d = np.zeros(12)
                d[7] = 100.0
                return d

        from quadsr.plant import IntegrationError

        with pytest.raises(IntegrationError) as exc_info:
            run_tracking(Diverging(), Controller(dt=5e-3), hover_ref(),
                         t_end=1.0, dt_plant=1e-3)
        err = exc_info.value
        assert err.t < 0.05
        partial = err.partial
        assert len(partial.times) >= 1
        assert partial.states.shape == (len(partial.times), 12)
        assert partial.refs.shape == (len(partial.times), 4)
        assert len(partial.diags) == len(partial.times)
