"""Driving-term generators that make a parameter ramp transitionless.

A generator xi(z; lam) added to the bare Hamiltonian as lam_dot * xi keeps
every trajectory on its initial invariant shell at any ramp speed.  On a
shell it is fixed (up to a constant) by two conditions: its Poisson bracket
with the invariant equals the parameter gradient of the invariant, and its
orbit average vanishes (the gauge choice used throughout).

Analytic forms: the box has xi = q p / lam, and the even power-law well
xi = [b/(b+2)] q p / lam.  For anything else, build_xi_numeric constructs
the generator on one shell by integrating the centered gradient
dH0/dlam - <dH0/dlam> along the orbit, which closes into a periodic profile
precisely because the average was subtracted.

NumericShellGenerator makes the tables usable inside the driving engine: it
maintains a pair of tables bracketing the current shell and interpolates
between them at matched angle fraction, reconstructing phase-space
gradients from the along-orbit derivative plus the cross-shell difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import DomainError, NumericalError
from .systems import SystemModel, as_qp
from .shells import (
    d_volume_dE,
    d_volume_dlam,
    microcanonical_average,
    orbit_period,
    shell_average_grad_lambda,
    turning_points,
)


def xi_box(z, lam: float) -> float:
    """Box generator q p / lam; the point must lie between the walls."""
    q, p = as_qp(z)
    if not (0.0 <= q <= lam):
        raise DomainError(f"box generator needs 0 <= q <= {lam}, got q={q}")
    return q * p / lam


def xi_power_law(z, lam: float, b: int) -> float:
    """Power-law generator [b/(b+2)] q p / lam."""
    if b < 2 or b % 2 != 0:
        raise DomainError(f"exponent must be a positive even integer, got {b}")
    q, p = as_qp(z)
    return (b / (b + 2.0)) * q * p / lam


@dataclass(frozen=True)
class AnalyticGenerator:
    """A generator with closed-form value and phase-space gradient."""

    value_fn: Callable
    grad_fn: Callable  # (z, lam) -> (dxi/dq, dxi/dp)
    name: str = "analytic"
    tag: str = "analytic"

    def evaluate(self, z, lam: float) -> float:
        return float(self.value_fn(z, lam))

    def evaluate_grad_z(self, z, lam: float) -> tuple[float, float]:
        gq, gp = self.grad_fn(z, lam)
        return float(gq), float(gp)


def dilation_generator(mu: float, name: str) -> AnalyticGenerator:
    """xi = mu q p / lam: the scaling flow q -> q (1 + mu dlam/lam),
    p -> p (1 - mu dlam/lam)."""

    def value(z, lam):
        q, p = as_qp(z)
        return mu * q * p / lam

    def grad(z, lam):
        q, p = as_qp(z)
        return mu * p / lam, mu * q / lam

    return AnalyticGenerator(value, grad, name=name)


def box_generator() -> AnalyticGenerator:
    return dilation_generator(1.0, name="box_dilation")


def power_law_generator(b: int) -> AnalyticGenerator:
    if b < 2 or b % 2 != 0:
        raise DomainError(f"exponent must be a positive even integer, got {b}")
    return dilation_generator(b / (b + 2.0), name=f"power_law_dilation_b{b}")


def analytic_generator_for(system: SystemModel) -> AnalyticGenerator:
    if system.kind == "box":
        return box_generator()
    if system.kind == "power_law":
        return power_law_generator(system.b)
    raise DomainError("generic_1d has no analytic generator; use build_xi_numeric")


# ---------------------------------------------------------------------------
# numeric single-shell tables


@dataclass
class ShellGeneratorTable:
    """Generator profile sampled along one orbit of the shell (E, lam).

    times are uniform on [0, period] starting from the right turning point;
    the stored profile has zero orbit-time average and matching endpoints.
    closure_residual records |xi(period) - xi(0)| before periodization,
    normalized by the profile scale.
    """

    system: SystemModel
    E: float
    lam: float
    period: float
    times: np.ndarray
    qs: np.ndarray
    ps: np.ndarray
    xis: np.ndarray
    grad_lambda_avg: float
    closure_residual: float

    tag = "numeric"

    def __post_init__(self):
        self._xi_spline = CubicSpline(self.times, self.xis, bc_type="periodic")
        self._q_spline = CubicSpline(self.times, self.qs, bc_type="periodic")
        self._p_spline = CubicSpline(self.times, self.ps, bc_type="periodic")
        # along-orbit derivative by fourth-order central differences on the
        # uniform samples, then re-interpolated periodically
        core = self.xis[:-1]
        h = self.times[1] - self.times[0]
        d = (
            -np.roll(core, -2) + 8 * np.roll(core, -1) - 8 * np.roll(core, 1) + np.roll(core, 2)
        ) / (12.0 * h)
        self._dxi_spline = CubicSpline(self.times, np.append(d, d[0]), bc_type="periodic")
        # chart boundaries for phase inversion: momentum extremes split each
        # half-orbit into quarters where both q(t) and p(t) are monotone
        self._mid = len(self.times) // 2
        self._i_pmin = int(np.argmin(self.ps))
        self._i_pmax = int(np.argmax(self.ps))
        self._q_center = float(self.qs[self._i_pmin])
        self._p_scale = float(np.max(np.abs(self.ps)))

    @property
    def q_minus(self) -> float:
        return float(self.qs[self._mid])

    @property
    def q_plus(self) -> float:
        return float(self.qs[0])

    def _invert(self, spline, samples, i0, i1, target) -> float:
        """Root of spline(t) = target on [times[i0], times[i1]], where the
        samples run monotonically over that index range."""
        seg = samples[i0 : i1 + 1]
        ts = self.times[i0 : i1 + 1]
        lo, hi = (seg[0], seg[-1]) if seg[0] <= seg[-1] else (seg[-1], seg[0])
        v = min(max(target, lo), hi)
        if seg[0] <= seg[-1]:
            j = int(np.searchsorted(seg, v))
        else:
            j = int(np.searchsorted(-seg, -v))
        j = min(max(j, 1), len(seg) - 1)
        ta, tb = float(ts[j - 1]), float(ts[j])
        fa, fb = float(spline(ta)) - v, float(spline(tb)) - v
        if fa == 0.0:
            return ta
        if fb == 0.0:
            return tb
        if fa * fb > 0.0:
            return ta if abs(fa) < abs(fb) else tb
        return float(brentq(lambda t: float(spline(t)) - v, ta, tb, xtol=1e-13 * self.period))

    def phase_time(self, z) -> float:
        """Orbit time of the shell point at the same angle as z.

        Away from the turning points the position fixes the phase (given the
        momentum branch); near them the position inversion degenerates and
        the momentum, which varies linearly through a turning point, is
        inverted instead.  This keeps the lookup well conditioned for points
        slightly off the table's shell.
        """
        q, p = as_qp(z)
        n = len(self.times) - 1
        if p == 0.0:
            half = 0.5 * (self.q_minus + self.q_plus)
            return 0.0 if q >= half else 0.5 * self.period
        if abs(p) >= 0.4 * self._p_scale:
            if p < 0.0:
                return self._invert(self._q_spline, self.qs, 0, self._mid, q)
            return self._invert(self._q_spline, self.qs, self._mid, n, q)
        if p < 0.0:
            if q >= self._q_center:
                return self._invert(self._p_spline, self.ps, 0, self._i_pmin, p)
            return self._invert(self._p_spline, self.ps, self._i_pmin, self._mid, p)
        if q < self._q_center:
            return self._invert(self._p_spline, self.ps, self._mid, self._i_pmax, p)
        return self._invert(self._p_spline, self.ps, self._i_pmax, n, p)

    def state_at_time(self, t: float) -> tuple[float, float]:
        t = t % self.period
        return float(self._q_spline(t)), float(self._p_spline(t))

    def value_at_time(self, t: float) -> float:
        return float(self._xi_spline(t % self.period))

    def derivative_at_time(self, t: float) -> float:
        return float(self._dxi_spline(t % self.period))

    def evaluate(self, z, lam: Optional[float] = None) -> float:
        """Generator value at a phase point on (or near) the table's shell."""
        if lam is not None and abs(lam - self.lam) > 1e-9 * abs(self.lam):
            raise DomainError(f"table built at lam={self.lam}, asked for lam={lam}")
        return self.value_at_time(self.phase_time(z))

    def time_average(self) -> float:
        return float(self._xi_spline.integrate(0.0, self.period)) / self.period

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,q,p,xi\n")
            for t, q, p, x in zip(self.times, self.qs, self.ps, self.xis):
                fh.write(f"{float(t)!r},{float(q)!r},{float(p)!r},{float(x)!r}\n")


def build_xi_numeric(
    system: SystemModel, E: float, lam: float, n_samples: int = 256
) -> ShellGeneratorTable:
    """Construct the shell generator by orbit integration.

    Integrates d(xi)/dt = dH0/dlam - <dH0/dlam> along one period from the
    right turning point, checks the profile closes (it must, since the
    source term averages to zero), and subtracts the orbit-time mean so the
    gauge <xi> = 0 holds.
    """
    if system.kind == "box":
        raise DomainError("the box generator is analytic; build_xi_numeric needs a smooth well")
    if n_samples < 64 or n_samples % 2 != 0:
        raise DomainError(f"n_samples must be even and >= 64, got {n_samples}")
    lam = system.check_param(lam)
    g = shell_average_grad_lambda(system, E, lam)
    tau = orbit_period(system, E, lam)
    qm, qp = turning_points(system, E, lam)
    m = system.mass

    def rhs(t, y):
        q, p = y[0], y[1]
        dlam_h = system.grad_lambda((q, p), lam)
        return [p / m, -system.grad_q(q, lam), dlam_h - g, y[2]]

    # state: q, p, xi, integral of xi (for the gauge shift)
    ts = np.linspace(0.0, tau, n_samples + 1)
    sol = solve_ivp(
        rhs, (0.0, tau), [qp, 0.0, 0.0, 0.0], method="DOP853",
        rtol=1e-12, atol=1e-12, t_eval=ts,
    )
    if not sol.success:
        raise NumericalError(f"orbit integration failed: {sol.message}")
    qs, ps, xis, xi_int = sol.y

    scale = float(np.max(np.abs(xis))) + 1e-300
    closure = abs(xis[-1] - xis[0]) / scale
    if closure > 1e-6:
        raise NumericalError(
            f"generator profile failed to close: residual {closure:.3e} of scale"
        )
    if abs(qs[-1] - qp) > 1e-8 * max(abs(qp - qm), 1.0) or abs(ps[-1]) > 1e-8 * math.sqrt(
        2 * m * E
    ):
        raise NumericalError("orbit failed to return to the starting turning point")

    xis = xis - xi_int[-1] / tau
    qs, ps, xis = qs.copy(), ps.copy(), xis.copy()
    qs[-1], ps[-1], xis[-1] = qs[0], ps[0], xis[0]
    return ShellGeneratorTable(
        system=system,
        E=float(E),
        lam=lam,
        period=float(tau),
        times=ts,
        qs=qs,
        ps=ps,
        xis=xis,
        grad_lambda_avg=float(g),
        closure_residual=float(closure),
    )


# ---------------------------------------------------------------------------
# table pairs usable inside the driving engine


class NumericShellGenerator:
    """Table-backed generator for driving generic potentials.

    Keeps two tables bracketing the current shell energy and rebuilds the
    pair whenever the queried energy or parameter moves more than
    rebuild_tol (relative) from the values it was built at.  Evaluation
    finds the angle fraction of the query point on each table, interpolates
    the angle and the profile linearly in energy, and reconstructs the
    phase-space gradient from the along-orbit derivative plus the
    cross-shell difference at fixed angle:

        grad xi = beta * zdot + alpha * grad H0,
        beta  = (d xi / dt) / |zdot|^2,
        alpha = dXi/dE - beta * (zdot . dz/dE),

    where dXi/dE and dz/dE are matched-angle differences between the two
    tables.  The split is exact because zdot and grad H0 are orthogonal.
    """

    tag = "numeric"

    def __init__(
        self,
        system: SystemModel,
        n_samples: int = 256,
        rebuild_tol: float = 1e-3,
        pair_halfwidth: float = 5e-3,
    ):
        if system.kind == "box":
            raise DomainError("numeric tables are for smooth wells, not the box")
        self.system = system
        self.n_samples = n_samples
        self.rebuild_tol = rebuild_tol
        self.pair_halfwidth = pair_halfwidth
        self._built_lam = None
        self._E_center = None
        self._lo = None
        self._hi = None
        self.rebuild_count = 0

    def _ensure(self, z, lam):
        E = self.system.energy(z, lam)
        if E <= 0:
            raise DomainError(f"point energy {E} leaves no shell to build on")
        if (
            self._built_lam is not None
            and abs(lam - self._built_lam) <= self.rebuild_tol * self._built_lam
            and abs(E - self._E_center) <= self.rebuild_tol * self._E_center
        ):
            return
        hw = self.pair_halfwidth
        self._lo = build_xi_numeric(self.system, E * (1 - hw), lam, self.n_samples)
        self._hi = build_xi_numeric(self.system, E * (1 + hw), lam, self.n_samples)
        self._built_lam = lam
        self._E_center = E
        self.rebuild_count += 1

    def _angle_blend(self, z):
        """Angle fraction of z interpolated between the two tables, with the
        energy interpolation weight."""
        lo, hi = self._lo, self._hi
        E = self.system.energy(z, self._built_lam)
        frac = (E - lo.E) / (hi.E - lo.E)
        w_lo = lo.phase_time(z) / lo.period
        w_hi = hi.phase_time(z) / hi.period
        w = (1.0 - frac) * w_lo + frac * w_hi
        return w, frac

    def evaluate(self, z, lam: float) -> float:
        self._ensure(z, lam)
        lo, hi = self._lo, self._hi
        w, frac = self._angle_blend(z)
        x_lo = lo.value_at_time(w * lo.period)
        x_hi = hi.value_at_time(w * hi.period)
        return (1.0 - frac) * x_lo + frac * x_hi

    def evaluate_grad_z(self, z, lam: float) -> tuple[float, float]:
        self._ensure(z, lam)
        lo, hi = self._lo, self._hi
        w, frac = self._angle_blend(z)
        q, p = as_qp(z)
        m = self.system.mass
        lamb = self._built_lam
        dE = hi.E - lo.E

        x_lo = lo.value_at_time(w * lo.period)
        x_hi = hi.value_at_time(w * hi.period)
        xdot = (1.0 - frac) * lo.derivative_at_time(w * lo.period) + frac * hi.derivative_at_time(
            w * hi.period
        )
        q_lo, p_lo = lo.state_at_time(w * lo.period)
        q_hi, p_hi = hi.state_at_time(w * hi.period)

        vq = self.system.grad_q(q, lamb)
        flow = (p / m, -vq)
        speed2 = flow[0] ** 2 + flow[1] ** 2
        beta = xdot / speed2
        dz_dE = ((q_hi - q_lo) / dE, (p_hi - p_lo) / dE)
        alpha = (x_hi - x_lo) / dE - beta * (flow[0] * dz_dE[0] + flow[1] * dz_dE[1])
        grad_h = (vq, p / m)
        return (
            beta * flow[0] + alpha * grad_h[0],
            beta * flow[1] + alpha * grad_h[1],
        )


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class GeneratorCheck:
    """Residual report from verify_generator."""

    shells: list
    bracket_residual: float
    average_residual: float


def _shell_sample_points(system, E, lam, n_points):
    """n_points phase points spread uniformly in orbit time over the shell."""
    m = system.mass
    if system.kind == "box":
        absp = math.sqrt(2 * m * E)
        half = n_points // 2
        qs = (np.arange(half) + 0.5) / half * lam
        pts = [(q, absp) for q in qs] + [(q, -absp) for q in qs]
        return pts
    tau = orbit_period(system, E, lam)
    _, qp = turning_points(system, E, lam)
    ts = (np.arange(n_points) + 0.5) / n_points * tau

    def rhs(t, y):
        return [y[1] / m, -system.grad_q(y[0], lam)]

    sol = solve_ivp(rhs, (0.0, tau), [qp, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-12, t_eval=ts)
    if not sol.success:
        raise NumericalError(f"orbit sampling failed: {sol.message}")
    return list(zip(sol.y[0], sol.y[1]))


def verify_generator(
    system: SystemModel, generator, lam: float, E_list, n_points: int = 128
) -> GeneratorCheck:
    """Check the two shell conditions on each listed shell.

    Reports, per shell, the worst normalized defect of
    {xi, omega} = d(omega)/dlam over sampled points, and the normalized
    orbit average |<xi>|.  Generators with analytic gradients evaluate the
    bracket directly; tables use their along-orbit derivative (the bracket
    against the invariant only sees the tangential part of the gradient).
    """
    if n_points < 100:
        raise DomainError(f"need at least 100 points per shell, got {n_points}")
    lam = system.check_param(lam)
    is_table = isinstance(generator, ShellGeneratorTable)
    shells = []
    for E in E_list:
        if is_table and not math.isclose(E, generator.E, rel_tol=1e-9):
            raise DomainError(
                f"table was built on shell E={generator.E}; cannot verify E={E}"
            )
        pts = _shell_sample_points(system, E, lam, n_points)
        dOdE = d_volume_dE(system, E, lam)
        dOdlam = d_volume_dlam(system, E, lam)
        bracket_errs = []
        grad_scales = []
        xi_vals = []
        for (q, p) in pts:
            grad_omega_lam = dOdlam + dOdE * system.grad_lambda((q, p), lam)
            if is_table:
                bracket = dOdE * generator.derivative_at_time(generator.phase_time((q, p)))
                xi_vals.append(generator.value_at_time(generator.phase_time((q, p))))
            else:
                gq, gp = generator.evaluate_grad_z((q, p), lam)
                hq, hp = system.grad_z((q, p), lam)
                bracket = dOdE * (gq * hp - gp * hq)
                xi_vals.append(generator.evaluate((q, p), lam))
            bracket_errs.append(abs(bracket - grad_omega_lam))
            grad_scales.append(abs(grad_omega_lam))
        scale = max(max(grad_scales), 1e-300)
        bracket_residual = max(bracket_errs) / scale
        if is_table:
            avg = generator.time_average()
        else:
            avg = microcanonical_average(
                system, lambda z: generator.evaluate(z, lam), E, lam
            )
        xi_scale = max(max(abs(v) for v in xi_vals), 1e-300)
        shells.append(
            {
                "E": float(E),
                "bracket_residual": float(bracket_residual),
                "average_residual": float(abs(avg) / xi_scale),
            }
        )
    return GeneratorCheck(
        shells=shells,
        bracket_residual=max(s["bracket_residual"] for s in shells),
        average_residual=max(s["average_residual"] for s in shells),
    )


@dataclass(frozen=True)
class MapCheck:
    """Residual report from parametric_map_check."""

    dlam: float
    residual: float
    residual_half: float
    ratio: float


def parametric_map_check(
    system: SystemModel, generator, E: float, lam: float, dlam: float, n_points: int = 128
) -> MapCheck:
    """Displace shell points by the generator flow and re-measure the
    invariant at the shifted parameter.  The defect must shrink
    quadratically in dlam (the map is exact to first order)."""
    from .shells import adiabatic_invariant

    if not hasattr(generator, "evaluate_grad_z"):
        raise DomainError("map check needs a generator with phase-space gradients")

    def residual_at(d):
        if d == 0.0:
            return 0.0
        worst = 0.0
        for (q, p) in _shell_sample_points(system, E, lam, n_points):
            gq, gp = generator.evaluate_grad_z((q, p), lam)
            z2 = (q + d * gp, p - d * gq)
            w0 = adiabatic_invariant(system, (q, p), lam)
            w2 = adiabatic_invariant(system, z2, lam + d)
            worst = max(worst, abs(w2 - w0) / w0)
        return worst

    r = residual_at(dlam)
    rh = residual_at(0.5 * dlam)
    ratio = r / rh if rh > 0 else float("inf")
    return MapCheck(dlam=float(dlam), residual=r, residual_half=rh, ratio=ratio)
