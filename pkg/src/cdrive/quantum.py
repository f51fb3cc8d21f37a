"""Wavefunction side of the driving scheme.

Operators live on a uniform Dirichlet grid (grid path, smooth wells) or in
the instantaneous sine eigenbasis of the box (basis path, where the
eigenstates are closed-form).  The driven Hamiltonian is always
H(t) = H0(lam(t)) + lam_dot(t) * xi(lam(t)).

The box is excluded from grid propagation on purpose: a moving Dirichlet
wall on a fixed grid is ill-posed without coordinate remapping, and the box
already has an exact solution the basis path reproduces.  hbar = 1 by
default; every operation takes it as a keyword.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh, eigh_tridiagonal, expm, solve_banded

from .errors import DomainError, NumericalError
from .schedules import Schedule
from .systems import SystemModel

__all__ = [
    "GridSpec",
    "QuantumState",
    "HermitianOperator",
    "EigenSystem",
    "box_grid",
    "well_grid",
    "discretize_h0",
    "eigensystem",
    "grad_h0_matrix",
    "xi_spectral",
    "xi_dilation",
    "infinitesimal_stretch",
    "finite_stretch",
    "GridTrajectory",
    "propagate_grid",
    "BasisTrajectory",
    "propagate_basis",
    "box_phase",
    "exact_box_state",
    "berry_connection",
    "fidelity",
]


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of interior points with Dirichlet walls at both ends.

    The wall points q_min and q_max are not stored; with n_points interior
    points the spacing is h = (q_max - q_min) / (n_points + 1).
    """

    q_min: float
    q_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 64:
            raise DomainError(f"need at least 64 grid points, got {self.n_points}")
        if not (math.isfinite(self.q_min) and math.isfinite(self.q_max)):
            raise DomainError("grid endpoints must be finite")
        if not self.q_max > self.q_min:
            raise DomainError(f"empty grid domain [{self.q_min}, {self.q_max}]")

    @property
    def h(self) -> float:
        return (self.q_max - self.q_min) / (self.n_points + 1)

    @property
    def qs(self) -> np.ndarray:
        return self.q_min + self.h * np.arange(1, self.n_points + 1)


def box_grid(lam: float, n_points: int = 512) -> GridSpec:
    """Grid spanning the box interior [0, L]."""
    if not (math.isfinite(lam) and lam > 0):
        raise DomainError(f"box length must be positive, got {lam}")
    return GridSpec(0.0, float(lam), n_points)


def well_grid(system: SystemModel, lam: float, e_max: float, n_points: int = 512) -> GridSpec:
    """Symmetric grid wide enough for power-law dynamics up to energy e_max.

    The half-width is twice the classical turning point at e_max, so states
    in the band of interest decay well before the artificial walls.
    """
    if system.kind != "power_law":
        raise DomainError("well_grid is for power-law systems")
    lam = system.check_param(lam)
    if e_max <= 0:
        raise DomainError(f"e_max must be positive, got {e_max}")
    half = 2.0 * lam * (e_max / system.epsilon) ** (1.0 / system.b)
    return GridSpec(-half, half, n_points)


@dataclass(frozen=True)
class QuantumState:
    """A normalized state, either grid samples or eigenbasis coefficients.

    Grid norm is h * sum |psi_j|^2; eigenbasis norm is sum |c_n|^2.
    """

    representation: str
    amplitudes: np.ndarray
    grid: Optional[GridSpec] = None
    lam_ref: Optional[float] = None

    def __post_init__(self):
        if self.representation not in ("grid", "eigenbasis"):
            raise DomainError(f"unknown representation {self.representation!r}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.size == 0:
            raise DomainError("amplitudes must be a nonempty vector")
        object.__setattr__(self, "amplitudes", amps)
        if self.representation == "grid":
            if self.grid is None:
                raise DomainError("grid representation needs a GridSpec")
            if amps.size != self.grid.n_points:
                raise DomainError(
                    f"{amps.size} amplitudes on a {self.grid.n_points}-point grid"
                )

    def norm(self) -> float:
        w = self.grid.h if self.representation == "grid" else 1.0
        return math.sqrt(w * float(np.sum(np.abs(self.amplitudes) ** 2)))

    def check_normalized(self, tol: float = 1e-10) -> None:
        err = abs(self.norm() - 1.0)
        if err > tol:
            raise NumericalError(f"state norm off by {err:.3e}")


@dataclass(frozen=True)
class HermitianOperator:
    """Dense operator with a verified hermiticity defect < 1e-12 of scale."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"operator matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        scale = float(np.max(np.abs(m)))
        if self.hermiticity_defect > 1e-12 * max(scale, 1e-300):
            raise NumericalError(
                f"hermiticity defect {self.hermiticity_defect:.3e} exceeds "
                f"1e-12 of scale {scale:.3e}"
            )

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))


@dataclass(frozen=True)
class EigenSystem:
    """Ascending spectrum of a discretized H0 with h-weighted eigenvectors.

    states[:, n] is the n-th eigenvector (0-based, index 0 = ground state),
    normalized so h * sum |v_j|^2 = 1, sign fixed so its first component
    above 1e-8 in magnitude is positive.
    """

    lam: float
    energies: np.ndarray
    states: np.ndarray
    grid: GridSpec

    @property
    def n_levels(self) -> int:
        return self.energies.size

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        """Eigenbasis coefficients c_n = <n|psi> of grid samples."""
        return self.grid.h * (self.states.conj().T @ np.asarray(psi, dtype=complex))


# ---------------------------------------------------------------------------
# operator construction


def _potential_diagonal(system: SystemModel, lam: float, grid: GridSpec) -> np.ndarray:
    if system.kind == "box":
        return np.zeros(grid.n_points)
    vs = np.array([system.potential_energy(q, lam) for q in grid.qs], dtype=float)
    if not np.all(np.isfinite(vs)):
        raise DomainError("potential is not finite on the grid")
    return vs


def _check_box_grid(lam: float, grid: GridSpec) -> None:
    if abs(grid.q_min) > 1e-12 or abs(grid.q_max - lam) > 1e-12 * max(1.0, lam):
        raise DomainError(
            f"box grid must span [0, {lam}], got [{grid.q_min}, {grid.q_max}]"
        )


def discretize_h0(
    system: SystemModel, lam: float, grid: GridSpec, hbar: float = 1.0
) -> HermitianOperator:
    """Second-order finite-difference H0 = -hbar^2/2m d^2/dq^2 + V on the grid.

    The box uses the grid itself as the domain [0, L]; both wall points are
    Dirichlet zeros, so the matrix covers interior points only.
    """
    lam = system.check_param(lam)
    if system.kind == "box":
        _check_box_grid(lam, grid)
    k = hbar * hbar / (2.0 * system.mass * grid.h * grid.h)
    n = grid.n_points
    m = np.zeros((n, n))
    idx = np.arange(n)
    m[idx, idx] = 2.0 * k + _potential_diagonal(system, lam, grid)
    m[idx[:-1], idx[:-1] + 1] = -k
    m[idx[:-1] + 1, idx[:-1]] = -k
    return HermitianOperator(m)


def _fix_signs(states: np.ndarray) -> np.ndarray:
    # first component exceeding 1e-8 in magnitude is made real positive
    out = states.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        big = np.flatnonzero(np.abs(v) > 1e-8)
        lead = v[big[0]] if big.size else v[np.argmax(np.abs(v))]
        out[:, col] = v * (abs(lead) / lead if lead != 0 else 1.0)
    return out


def eigensystem(
    h0: HermitianOperator, grid: GridSpec, lam: float, n_levels: Optional[int] = None
) -> EigenSystem:
    """Dense eigendecomposition with the package sign convention.

    n_levels keeps only the lowest levels; the residual, orthonormality and
    nondegeneracy invariants apply to the retained block.  Wide grids for
    smooth wells need the truncation: the top of the finite-difference band
    carries checkerboard modes pinned to the two artificial walls, split
    only by tunneling, and a gap below 1e-8 of the spread leaves the
    spectral generator undefined.
    """
    m = h0.matrix
    if np.max(np.abs(m.imag)) == 0.0:
        m = m.real
    energies, vecs = eigh(m)
    if n_levels is not None:
        if not 1 <= n_levels <= energies.size:
            raise DomainError(f"cannot keep {n_levels} of {energies.size} levels")
        energies = energies[:n_levels]
        vecs = vecs[:, :n_levels]
    scale = float(np.max(np.abs(energies)))
    residual = float(np.max(np.abs(m @ vecs - vecs * energies)))
    if residual > 1e-10 * max(scale, 1e-300):
        raise NumericalError(f"eigendecomposition residual {residual:.3e}")
    ortho = float(np.max(np.abs(vecs.T.conj() @ vecs - np.eye(vecs.shape[1]))))
    if ortho > 1e-12:
        raise NumericalError(f"orthonormality defect {ortho:.3e}")
    spread = float(energies[-1] - energies[0])
    min_gap = float(np.min(np.diff(energies))) if energies.size > 1 else spread
    if energies.size > 1 and min_gap <= 1e-8 * spread:
        raise NumericalError(
            f"near-degenerate spectrum: min gap {min_gap:.3e} vs spread {spread:.3e}"
        )
    vecs = _fix_signs(np.asarray(vecs)) / math.sqrt(grid.h)
    return EigenSystem(float(lam), energies, vecs, grid)


def grad_h0_matrix(
    system: SystemModel,
    lam: float,
    grid: GridSpec,
    hbar: float = 1.0,
    delta_rel: float = 1e-5,
) -> np.ndarray:
    """Grid matrix of dH0/dlam.

    Smooth wells have a pointwise diagonal dV/dlam.  The box potential has
    no classical gradient, so the derivative starts from the central finite
    difference of H0 built on [0, L - d] and [0, L + d] grids with matched
    point indices.  Index matching works in the frame that stretches with
    the wall, where the eigenvectors do not move, so the difference alone
    captures only the scalar -2H/L piece; undoing the frame change adds the
    commutator -[(QD+DQ)/2, H]/L, which carries all the off-diagonal
    structure the generator is built from.
    """
    lam = system.check_param(lam)
    if system.kind != "box":
        return np.diag(
            np.array([system.grad_lambda((q, 0.0), lam) for q in grid.qs], dtype=float)
        )
    _check_box_grid(lam, grid)
    d = delta_rel * lam
    plus = discretize_h0(system, lam + d, box_grid(lam + d, grid.n_points), hbar)
    minus = discretize_h0(system, lam - d, box_grid(lam - d, grid.n_points), hbar)
    fd = (plus.matrix.real - minus.matrix.real) / (2.0 * d)
    h0 = discretize_h0(system, lam, grid, hbar).matrix.real
    a = _stretch_half_bracket(grid)
    return fd - (a @ h0 - h0 @ a) / lam


def xi_spectral(
    system: SystemModel,
    lam: float,
    grid: GridSpec,
    n_levels: int,
    hbar: float = 1.0,
    delta_rel: float = 1e-5,
) -> HermitianOperator:
    """Generator in the truncated eigenbasis from the eigenstate-rotation sum.

    Off-diagonal xi_mn = i hbar (dH0/dlam)_mn / (E_n - E_m), zero on the
    diagonal.  Demands a nondegenerate retained block.
    """
    if n_levels < 2:
        raise DomainError(f"need at least 2 levels, got {n_levels}")
    if n_levels > grid.n_points:
        raise DomainError(f"{n_levels} levels on a {grid.n_points}-point grid")
    es = eigensystem(discretize_h0(system, lam, grid, hbar), grid, lam, n_levels)
    energies = es.energies
    vecs = es.states
    spread = float(energies[-1] - energies[0])
    gaps = energies[None, :] - energies[:, None]
    off = ~np.eye(n_levels, dtype=bool)
    if np.min(np.abs(gaps[off])) < 1e-8 * spread:
        raise NumericalError("level spacing too small for the spectral generator")
    g = grad_h0_matrix(system, lam, grid, hbar, delta_rel)
    block = grid.h * (vecs.T @ g @ vecs)
    xi = np.zeros((n_levels, n_levels), dtype=complex)
    xi[off] = 1j * hbar * block[off] / gaps[off]
    return HermitianOperator(xi)


def _dilation_offdiag(lam: float, mu: float, grid: GridSpec, hbar: float) -> np.ndarray:
    # superdiagonal of mu/(2L) * (hbar/i) (QD + DQ); the subdiagonal is -conj
    qs = grid.qs
    return mu * hbar * (qs[:-1] + qs[1:]) / (4.0 * lam * grid.h)


def xi_dilation(lam: float, mu: float, grid: GridSpec, hbar: float = 1.0) -> HermitianOperator:
    """Dilation-form generator mu/(2L) * (hbar/i) (QD + DQ) on the grid.

    D is the antisymmetric central difference, so the matrix is tridiagonal
    with zero diagonal and exactly Hermitian by construction.  mu = 1 is the
    box; mu = b/(b+2) the power-law well; mu = 0 the zero operator.
    """
    if not 0.0 <= mu <= 1.0:
        raise DomainError(f"dilation coefficient must lie in [0, 1], got {mu}")
    if not (math.isfinite(lam) and lam > 0):
        raise DomainError(f"lam must be positive, got {lam}")
    w = _dilation_offdiag(lam, mu, grid, hbar)
    n = grid.n_points
    m = np.zeros((n, n), dtype=complex)
    idx = np.arange(n - 1)
    m[idx, idx + 1] = -1j * w
    m[idx + 1, idx] = 1j * w
    return HermitianOperator(m)


def _stretch_half_bracket(grid: GridSpec) -> np.ndarray:
    # (QD + DQ) / 2 as a dense real antisymmetric matrix
    qs = grid.qs
    w = (qs[:-1] + qs[1:]) / (4.0 * grid.h)
    n = grid.n_points
    a = np.zeros((n, n))
    idx = np.arange(n - 1)
    a[idx, idx + 1] = w
    a[idx + 1, idx] = -w
    return a


def infinitesimal_stretch(state: QuantumState, lam: float, d_lam: float, mu: float = 1.0) -> QuantumState:
    """First-order dilation map (1 + d_lam xi / i hbar) psi.

    hbar cancels between xi and the 1/i hbar prefactor, leaving the purely
    geometric map psi - (mu d_lam / L) * (QD + DQ)/2 psi.
    """
    if state.representation != "grid":
        raise DomainError("stretch maps act on grid states")
    a = _stretch_half_bracket(state.grid)
    amps = state.amplitudes - (mu * d_lam / lam) * (a @ state.amplitudes)
    return QuantumState("grid", amps, state.grid)


def finite_stretch(state: QuantumState, s: float, mu: float = 1.0) -> QuantumState:
    """Finite dilation exp(ln(s) mu (QD + DQ)/2 / ...) mapping L -> s L.

    Exponentiates the antisymmetric bracket (orthogonal map, norm exact),
    which in the continuum sends psi(q) to s^(-1/2) psi(q/s).
    """
    if state.representation != "grid":
        raise DomainError("stretch maps act on grid states")
    if s <= 0:
        raise DomainError(f"stretch factor must be positive, got {s}")
    a = _stretch_half_bracket(state.grid)
    amps = expm(-mu * math.log(s) * a) @ state.amplitudes
    return QuantumState("grid", amps, state.grid)


# ---------------------------------------------------------------------------
# grid propagation (Cayley stepper)


@dataclass(frozen=True)
class GridTrajectory:
    """Recorded grid propagation: per-sample norm, fidelity, phase, populations.

    phases are unwrapped overlap phases of the tracked instantaneous
    eigenstate; populations holds the leading |<m|psi>|^2 columns.
    """

    times: np.ndarray
    norms: np.ndarray
    fidelities: np.ndarray
    phases: np.ndarray
    populations: np.ndarray
    track_level: int
    final_state: QuantumState

    @property
    def min_fidelity(self) -> float:
        return float(np.min(self.fidelities))

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelities[-1])

    def to_csv(self, path) -> None:
        k = self.populations.shape[1]
        header = "t,fidelity,norm,phase," + ",".join(f"pop{m}" for m in range(k))
        rows = [header]
        for i, t in enumerate(self.times):
            pops = ",".join(f"{float(v)!r}" for v in self.populations[i])
            rows.append(
                f"{float(t)!r},{float(self.fidelities[i])!r},"
                f"{float(self.norms[i])!r},{float(self.phases[i])!r},{pops}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def _lowest_states(diag: np.ndarray, off: np.ndarray, h: float, k: int):
    """Lowest k eigenpairs of a real symmetric tridiagonal H0."""
    energies, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    return energies, _fix_signs(vecs) / math.sqrt(h)


def propagate_grid(
    system: SystemModel,
    schedule: Schedule,
    psi0: QuantumState,
    dt: float,
    with_cd: bool = True,
    track_level: int = 0,
    n_leading: int = 4,
    record_every: int = 10,
    hbar: float = 1.0,
) -> GridTrajectory:
    """Propagate grid samples under H(t) with the midpoint Cayley step.

    psi(t+dt) = [1 + (i dt/2hbar) H(t+dt/2)]^-1 [1 - (i dt/2hbar) H(t+dt/2)] psi(t),
    unconditionally unitary; a per-step norm drift above 1e-10 raises.
    The box is rejected: its moving wall cannot live on a fixed grid, and
    propagate_basis covers it exactly.
    """
    if system.kind == "box":
        raise DomainError("grid propagation excludes the box; use propagate_basis")
    if psi0.representation != "grid":
        raise DomainError("propagate_grid needs a grid-representation state")
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    psi0.check_normalized()
    grid = psi0.grid
    n = grid.n_points
    h = grid.h
    kin = hbar * hbar / (2.0 * system.mass * h * h)
    mu = system.mu if with_cd else 0.0

    n_steps = max(1, math.ceil(schedule.duration / dt - 1e-12))
    step = schedule.duration / n_steps
    kappa = step / (2.0 * hbar)

    psi = psi0.amplitudes.copy()
    times, norms, fids, phases, pops = [], [], [], [], []

    def record(t, psi):
        lam_t = float(schedule.value(t))
        diag0 = 2.0 * kin + _potential_diagonal(system, lam_t, grid)
        off0 = np.full(n - 1, -kin)
        k = max(n_leading, track_level + 1)
        _, vecs = _lowest_states(diag0, off0, h, k)
        coeff = h * (vecs.T @ psi)
        times.append(t)
        norms.append(math.sqrt(h * float(np.sum(np.abs(psi) ** 2))))
        fids.append(float(np.abs(coeff[track_level]) ** 2))
        phases.append(float(np.angle(coeff[track_level])))
        pops.append(np.abs(coeff[:n_leading]) ** 2)

    record(0.0, psi)
    ab = np.zeros((3, n), dtype=complex)
    for i in range(n_steps):
        t_mid = (i + 0.5) * step
        lam = float(schedule.value(t_mid))
        rate = float(schedule.rate(t_mid))
        diag = 2.0 * kin + _potential_diagonal(system, lam, grid)
        upper = np.full(n - 1, -kin, dtype=complex)
        lower = np.full(n - 1, -kin, dtype=complex)
        if mu != 0.0 and rate != 0.0:
            w = rate * _dilation_offdiag(lam, mu, grid, hbar)
            upper -= 1j * w
            lower += 1j * w
        # rhs = (1 - i kappa H) psi
        rhs = (1.0 - 1j * kappa * diag) * psi
        rhs[:-1] -= 1j * kappa * upper * psi[1:]
        rhs[1:] -= 1j * kappa * lower * psi[:-1]
        # solve (1 + i kappa H) psi_next = rhs
        ab[0, 1:] = 1j * kappa * upper
        ab[1, :] = 1.0 + 1j * kappa * diag
        ab[2, :-1] = 1j * kappa * lower
        psi_next = solve_banded((1, 1), ab, rhs)
        norm = math.sqrt(h * float(np.sum(np.abs(psi_next) ** 2)))
        if abs(norm - 1.0) > 1e-10:
            raise NumericalError(f"norm drift {abs(norm - 1.0):.3e} at step {i}")
        psi = psi_next
        if (i + 1) % record_every == 0 or i + 1 == n_steps:
            record((i + 1) * step, psi)

    return GridTrajectory(
        times=np.array(times),
        norms=np.array(norms),
        fidelities=np.array(fids),
        phases=np.unwrap(np.array(phases)),
        populations=np.array(pops),
        track_level=track_level,
        final_state=QuantumState("grid", psi, grid),
    )


# ---------------------------------------------------------------------------
# box eigenbasis propagation

_GL_NODES = np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
)
_GL_WEIGHTS = np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


def _gauss4(f, a: float, b: float) -> float:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return half * float(np.sum(_GL_WEIGHTS * f(mid + half * _GL_NODES)))


def _box_overlaps(ns: np.ndarray, la: float, lb: float) -> np.ndarray:
    """Exact overlap integrals <n(la)|m(lb)> of box sine eigenstates.

    Integration runs over [0, min(la, lb)] where both states are defined;
    the sinc form keeps the n = m near-diagonal stable.
    """
    a = math.pi * ns[:, None] / la
    b = math.pi * ns[None, :] / lb
    cut = min(la, lb)
    diff = (a - b) * cut / math.pi
    summ = (a + b) * cut / math.pi
    ints = 0.5 * cut * (np.sinc(diff) - np.sinc(summ))
    return 2.0 / math.sqrt(la * lb) * ints


def _box_coupling(n_levels: int, lam: float, delta_rel: float = 1e-6) -> np.ndarray:
    """<n|d/dL m> by central differencing of the exact overlaps.

    Antisymmetrized: for a real orthonormal family the matrix is exactly
    antisymmetric, and the symmetric part is pure differencing noise.
    """
    ns = np.arange(1, n_levels + 1, dtype=float)
    d = delta_rel * lam
    raw = (_box_overlaps(ns, lam, lam + d) - _box_overlaps(ns, lam, lam - d)) / (2.0 * d)
    return 0.5 * (raw - raw.T)


@dataclass(frozen=True)
class BasisTrajectory:
    """Eigenbasis coefficient history for the driven box.

    coeffs[i, n] is c_n at times[i] (n = 0 is the ground state, sine quantum
    number 1).  leakage_warning flags a final retained norm below 0.999.
    """

    times: np.ndarray
    coeffs: np.ndarray
    norms: np.ndarray
    n_levels: int
    with_cd: bool
    leakage_warning: bool

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def phase(self, n: int = 0) -> np.ndarray:
        """Unwrapped phase history of coefficient n."""
        return np.unwrap(np.angle(self.coeffs[:, n]))

    def to_csv(self, path, track_level: int = 0, n_leading: int = 4) -> None:
        k = min(n_leading, self.n_levels)
        header = "t,fidelity,norm,phase," + ",".join(f"pop{m}" for m in range(k))
        phases = self.phase(track_level)
        rows = [header]
        for i, t in enumerate(self.times):
            pops = ",".join(f"{float(v)!r}" for v in self.populations[i, :k])
            rows.append(
                f"{float(t)!r},{float(self.populations[i, track_level])!r},"
                f"{float(self.norms[i])!r},{float(phases[i])!r},{pops}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def propagate_basis(
    schedule: Schedule,
    c0: np.ndarray,
    n_levels: int = 64,
    dt: float = 1e-4,
    with_cd: bool = True,
    mass: float = 1.0,
    hbar: float = 1.0,
    record_every: int = 50,
) -> BasisTrajectory:
    """Evolve box eigenbasis coefficients i hbar dc/dt = (H0 + L_dot (xi - i hbar D)) c.

    D_nm = <n|d/dL m> comes from differenced exact sine overlaps; with_cd
    builds xi_nm = i hbar D_nm off the diagonal, which cancels the coupling
    identically and leaves pure dynamical phases.  Integration uses the
    rotating frame c_n = a_n exp(-i theta_n) with theta_n the accumulated
    dynamical phase, so only the residual coupling is stepped with RK4 and
    the stiff diagonal never limits dt.
    """
    c0 = np.asarray(c0, dtype=complex)
    if c0.ndim != 1 or c0.size != n_levels:
        raise DomainError(f"c0 must hold {n_levels} coefficients, got shape {c0.shape}")
    if abs(float(np.sum(np.abs(c0) ** 2)) - 1.0) > 1e-10:
        raise DomainError("initial coefficients are not normalized")
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if n_levels < 1:
        raise DomainError("need at least one level")

    lam0 = float(schedule.value(0.0))
    dmat = _box_coupling(n_levels, lam0)
    if with_cd:
        xi = 1j * hbar * dmat.copy()
        np.fill_diagonal(xi, 0.0)
        coupling = xi - 1j * hbar * dmat  # exact zero off-diagonal by construction
    else:
        coupling = -1j * hbar * dmat
    lam_of_coupling = lam0

    ns2 = np.arange(1, n_levels + 1, dtype=float) ** 2
    # theta_n(t) = n^2 pi^2 hbar / (2 m) * integral of L^-2; track the integral
    phase_k = math.pi * math.pi * hbar / (2.0 * mass)

    def inv_l2(t):
        return np.asarray(schedule.value(t), dtype=float) ** -2.0

    n_steps = max(1, math.ceil(schedule.duration / dt - 1e-12))
    step = schedule.duration / n_steps

    def rhs(t, a, integ, lam, rate):
        nonlocal coupling, lam_of_coupling
        if lam != lam_of_coupling:
            base = _box_coupling(n_levels, lam)
            if with_cd:
                xi = 1j * hbar * base.copy()
                np.fill_diagonal(xi, 0.0)
                coupling = xi - 1j * hbar * base
            else:
                coupling = -1j * hbar * base
            lam_of_coupling = lam
        u = np.exp(1j * phase_k * integ * ns2)
        return (-1j / hbar) * rate * (u * (coupling @ (np.conj(u) * a)))

    a = c0.copy()
    integ = 0.0
    times = [0.0]
    coeff_rows = [c0.copy()]
    norm_rows = [float(np.sqrt(np.sum(np.abs(c0) ** 2)))]

    for i in range(n_steps):
        t = i * step
        i_half = integ + _gauss4(inv_l2, t, t + 0.5 * step)
        i_full = i_half + _gauss4(inv_l2, t + 0.5 * step, t + step)
        lam_m = float(schedule.value(t + 0.5 * step))
        rate_m = float(schedule.rate(t + 0.5 * step))
        k1 = rhs(t, a, integ, float(schedule.value(t)), float(schedule.rate(t)))
        k2 = rhs(t + 0.5 * step, a + 0.5 * step * k1, i_half, lam_m, rate_m)
        k3 = rhs(t + 0.5 * step, a + 0.5 * step * k2, i_half, lam_m, rate_m)
        k4 = rhs(
            t + step, a + step * k3, i_full,
            float(schedule.value(t + step)), float(schedule.rate(t + step)),
        )
        a = a + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        integ = i_full
        # RK4 is not exactly unitary; drift shows up in the norms column and,
        # past 0.1%, in the leakage flag rather than as a hard error
        norm = float(np.sqrt(np.sum(np.abs(a) ** 2)))
        if (i + 1) % record_every == 0 or i + 1 == n_steps:
            phase = np.exp(-1j * phase_k * integ * ns2)
            times.append((i + 1) * step)
            coeff_rows.append(a * phase)
            norm_rows.append(norm)

    coeffs = np.array(coeff_rows)
    retained = float(np.sum(np.abs(coeffs[-1]) ** 2))
    return BasisTrajectory(
        times=np.array(times),
        coeffs=coeffs,
        norms=np.array(norm_rows),
        n_levels=n_levels,
        with_cd=with_cd,
        leakage_warning=retained < 0.999,
    )


# ---------------------------------------------------------------------------
# exact box oracle


def box_phase(
    n: int, schedule: Schedule, t: float, mass: float = 1.0, hbar: float = 1.0
) -> float:
    """Accumulated phase -(1/hbar) * integral of n^2 pi^2 hbar^2 / (2 m L^2)."""
    if n < 1:
        raise DomainError(f"sine quantum number must be >= 1, got {n}")
    val, err = quad(
        lambda s: float(schedule.value(s)) ** -2.0,
        0.0, t, epsabs=1e-12, epsrel=1e-12, limit=200,
    )
    if err > 1e-10 * max(abs(val), 1.0):
        raise NumericalError(f"phase quadrature error estimate {err:.3e}")
    return -n * n * math.pi * math.pi * hbar / (2.0 * mass) * val


def exact_box_state(
    n: int,
    schedule: Schedule,
    t: float,
    grid: GridSpec,
    mass: float = 1.0,
    hbar: float = 1.0,
) -> QuantumState:
    """Closed-form driven box state sampled on the grid.

    sqrt(2/L) sin(n pi q / L) times the dynamical phase; zero beyond the
    instantaneous wall when the grid extends past it.
    """
    if not 0.0 <= t <= schedule.duration * (1.0 + 1e-12):
        raise DomainError(f"t={t} outside the schedule window")
    lam = float(schedule.value(t))
    qs = grid.qs
    amps = np.where(
        qs <= lam, np.sqrt(2.0 / lam) * np.sin(n * math.pi * np.minimum(qs, lam) / lam), 0.0
    ).astype(complex)
    amps *= np.exp(1j * box_phase(n, schedule, t, mass, hbar))
    return QuantumState("grid", amps, grid)


# ---------------------------------------------------------------------------
# diagnostics


def berry_connection(es_a: EigenSystem, es_b: EigenSystem, n: int) -> float:
    """Connection i<n|d/dlam n> from a finite eigensystem pair.

    A flipped sign convention in the second member (negative overlap) is
    corrected before differencing.  Real eigenbases give zero.
    """
    if es_a.grid != es_b.grid:
        raise DomainError("eigensystem pair must share a grid")
    d_lam = es_b.lam - es_a.lam
    if d_lam == 0.0:
        raise DomainError("eigensystem pair must differ in lam")
    va = es_a.states[:, n]
    vb = es_b.states[:, n]
    h = es_a.grid.h
    if float(np.real(h * np.vdot(va, vb))) < 0.0:
        vb = -vb
    dv = (vb - va) / d_lam
    return float(np.real(1j * h * np.vdot(va, dv)))


def fidelity(psi: QuantumState, es: EigenSystem, n: int) -> float:
    """|<n|psi>|^2 against an eigensystem level."""
    if psi.representation == "eigenbasis":
        return float(np.abs(psi.amplitudes[n]) ** 2)
    if psi.grid != es.grid:
        raise DomainError("state and eigensystem grids differ")
    c = es.grid.h * np.vdot(es.states[:, n], psi.amplitudes)
    return float(np.abs(c) ** 2)
