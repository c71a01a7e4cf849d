"""Complete electrode model solved with piecewise-linear finite elements.

Unknowns are ordered ``[u (nodes), U (electrodes), mu]`` where ``mu`` is the
Lagrange multiplier enforcing ``sum(U) = 0``.  The system is symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, check_field

DEFAULT_CONTACT_IMPEDANCE = 0.01
DEFAULT_CURRENT = 1.0
RESIDUAL_TOL = 1e-10


class ForwardSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Protocol:
    """Current drives and differential measurement pairs.

    ``drives[d] = (source, sink)``; ``measurements[d]`` is an ``(m_d, 2)``
    array of ``(positive, negative)`` electrode pairs.
    """

    n_electrodes: int
    drives: np.ndarray
    measurements: tuple[np.ndarray, ...]
    current: float = DEFAULT_CURRENT

    @property
    def n_drives(self) -> int:
        return len(self.drives)

    @property
    def n_measurements(self) -> int:
        return sum(len(m) for m in self.measurements)

    def current_patterns(self) -> np.ndarray:
        """Injected current per electrode, one row per drive."""
        pat = np.zeros((self.n_drives, self.n_electrodes))
        idx = np.arange(self.n_drives)
        pat[idx, self.drives[:, 0]] += self.current
        pat[idx, self.drives[:, 1]] -= self.current
        return pat

    def measurement_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened ``(drive, positive, negative)`` in drive-major order."""
        drive = np.concatenate([np.full(len(m), d) for d, m in enumerate(self.measurements)])
        pairs = np.concatenate(self.measurements)
        return drive, pairs[:, 0], pairs[:, 1]


def build_adjacent_protocol(n_electrodes: int = 16, current: float = DEFAULT_CURRENT) -> Protocol:
    """Adjacent drive, adjacent measurement; pairs touching a driven electrode are skipped."""
    if n_electrodes < 4:
        raise ValueError(f"need at least 4 electrodes, got {n_electrodes}")
    if current <= 0:
        raise ValueError("current must be positive")
    L = n_electrodes
    drives = np.array([(d, (d + 1) % L) for d in range(L)])
    meas = []
    for src, snk in drives:
        # start after the drive so every block is a rotation of the first
        rows = [((src + k) % L, (src + k + 1) % L) for k in range(L)]
        rows = [r for r in rows if r[0] not in (src, snk) and r[1] not in (src, snk)]
        meas.append(np.array(rows, dtype=np.int64))
    return Protocol(n_electrodes=L, drives=drives, measurements=tuple(meas), current=float(current))


def element_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Areas ``(M,)`` and basis-function gradients ``(M, 3, 2)`` per element."""
    p = mesh.nodes[mesh.elements]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    # grad phi_i = (y_j - y_k, x_k - x_j) / (2A) over cyclic (i, j, k)
    j, k = [1, 2, 0], [2, 0, 1]
    gx = (y[:, j] - y[:, k]) / (2 * area[:, None])
    gy = (x[:, k] - x[:, j]) / (2 * area[:, None])
    return area, np.stack([gx, gy], axis=-1)


def local_stiffness(mesh: Mesh) -> np.ndarray:
    """Unit-conductivity element stiffness matrices, shape ``(M, 3, 3)``."""
    area, grads = element_gradients(mesh)
    return area[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)


def _impedances(mesh: Mesh, contact_impedances) -> np.ndarray:
    z = np.broadcast_to(np.asarray(contact_impedances, dtype=float), (mesh.n_electrodes,))
    if not np.all(z > 0):
        raise ValueError("contact impedances must be positive")
    return z


def assemble_cem_system(mesh: Mesh, sigma, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                        stiffness: np.ndarray | None = None) -> sp.csc_matrix:
    """Gauged CEM matrix of size ``N + L + 1``."""
    sigma = check_field(mesh, sigma)
    z = _impedances(mesh, contact_impedances)
    N, L = mesh.n_nodes, mesh.n_electrodes
    if stiffness is None:
        stiffness = local_stiffness(mesh)

    el = mesh.elements
    rows = [np.repeat(el, 3, axis=1).ravel()]
    cols = [np.tile(el, (1, 3)).ravel()]
    vals = [(sigma[:, None, None] * stiffness).ravel()]

    for ell in range(L):
        edges = mesh.electrode_edges(ell)
        h = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
        i, k = edges[:, 0], edges[:, 1]
        w = h / (6.0 * z[ell])
        rows += [i, k, i, k]
        cols += [i, k, k, i]
        vals += [2 * w, 2 * w, w, w]
        e_col = np.full(len(edges), N + ell)
        half = -h / (2.0 * z[ell])
        rows += [i, k, e_col, e_col]
        cols += [e_col, e_col, i, k]
        vals += [half, half, half, half]
        rows.append([N + ell])
        cols.append([N + ell])
        vals.append([h.sum() / z[ell]])

    gauge = N + L
    el_idx = np.arange(N, N + L)
    rows += [el_idx, np.full(L, gauge)]
    cols += [np.full(L, gauge), el_idx]
    vals += [np.ones(L), np.ones(L)]

    size = N + L + 1
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(size, size))
    return A.tocsc()


@dataclass(frozen=True)
class ForwardSolution:
    u: np.ndarray  # (n_drives, n_nodes)
    U: np.ndarray  # (n_drives, n_electrodes)


def solve_patterns(A: sp.csc_matrix, mesh: Mesh, patterns: np.ndarray) -> np.ndarray:
    """Solve for each electrode current pattern; returns ``(n_patterns, N + L + 1)``."""
    N, L = mesh.n_nodes, mesh.n_electrodes
    rhs = np.zeros((A.shape[0], len(patterns)))
    rhs[N:N + L] = patterns.T
    try:
        lu = spla.splu(A)
        x = lu.solve(rhs)
        # one refinement step keeps the residual small for high-contrast fields
        x += lu.solve(rhs - A @ x)
    except RuntimeError as err:
        raise ForwardSolveError(f"factorisation failed: {err}") from err
    res = np.linalg.norm(A @ x - rhs, axis=0)
    scale = np.maximum(np.linalg.norm(rhs, axis=0), np.finfo(float).tiny)
    worst = float(np.max(res / scale)) if len(patterns) else 0.0
    if not np.isfinite(worst) or worst > RESIDUAL_TOL:
        raise ForwardSolveError(f"relative residual {worst:.3e} exceeds {RESIDUAL_TOL:.0e}")
    return x.T


def measure(protocol: Protocol, U: np.ndarray) -> np.ndarray:
    drive, pos, neg = protocol.measurement_index()
    return U[drive, pos] - U[drive, neg]


def solve_forward(mesh: Mesh, sigma, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                  protocol: Protocol | None = None) -> tuple[ForwardSolution, np.ndarray]:
    """Electrode and interior potentials for every drive, plus the measurement vector."""
    if protocol is None:
        protocol = build_adjacent_protocol(mesh.n_electrodes)
    A = assemble_cem_system(mesh, sigma, contact_impedances)
    x = solve_patterns(A, mesh, protocol.current_patterns())
    N, L = mesh.n_nodes, mesh.n_electrodes
    sol = ForwardSolution(u=x[:, :N], U=x[:, N:N + L])
    return sol, measure(protocol, sol.U)


def forward_voltages(mesh: Mesh, sigma, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                     protocol: Protocol | None = None) -> np.ndarray:
    return solve_forward(mesh, sigma, contact_impedances, protocol)[1]


def add_measurement_noise(v, snr_db: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian noise with ``E[sum(eta^2)] = sum(v^2) / 10^(snr/10)``."""
    v = np.asarray(v, dtype=float)
    if np.isposinf(snr_db):
        return v.copy()
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    power = np.sum(v**2) / v.size
    std = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    return v + std * rng.standard_normal(v.shape)
