"""Adjoint Jacobian and damped Gauss-Newton (Levenberg-Marquardt) inversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem import (DEFAULT_CONTACT_IMPEDANCE, ForwardSolveError, Protocol, assemble_cem_system,
                  build_adjacent_protocol, element_gradients, local_stiffness, measure,
                  solve_patterns)
from .mesh import Mesh, check_field

logger = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-6
SINGULAR_COND = 1e12
MAX_HALVINGS = 10


class SingularSystemError(np.linalg.LinAlgError):
    pass


class ReconstructionError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class ForwardOperator:
    """Forward map ``sigma -> v`` and its Jacobian on a fixed mesh and protocol."""

    def __init__(self, mesh: Mesh, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                 protocol: Protocol | None = None):
        self.mesh = mesh
        self.contact_impedances = contact_impedances
        self.protocol = protocol or build_adjacent_protocol(mesh.n_electrodes)
        self._stiffness = local_stiffness(mesh)
        self._area, self._grads = element_gradients(mesh)
        drive, pos, neg = self.protocol.measurement_index()
        pairs = np.column_stack([pos, neg])
        self._pairs, self._pair_of_row = np.unique(pairs, axis=0, return_inverse=True)
        self._drive_of_row = drive

    def _solve(self, sigma, patterns):
        A = assemble_cem_system(self.mesh, sigma, self.contact_impedances, self._stiffness)
        return solve_patterns(A, self.mesh, patterns)

    def __call__(self, sigma) -> np.ndarray:
        N, L = self.mesh.n_nodes, self.mesh.n_electrodes
        x = self._solve(sigma, self.protocol.current_patterns())
        return measure(self.protocol, x[:, N:N + L])

    def jacobian(self, sigma, return_voltages: bool = False):
        """``J[s, e] = d v_s / d sigma_e`` by the adjoint (reciprocity) formula.

        For measurement ``s`` of drive ``d`` on pair ``(p, n)``::

            J[s, e] = -area_e * grad(u_d) . grad(w_pn)   on element e

        where ``w_pn`` is the field for unit current driven from ``p`` to ``n``.
        """
        sigma = check_field(self.mesh, sigma)
        N, L = self.mesh.n_nodes, self.mesh.n_electrodes
        drive_pat = self.protocol.current_patterns()
        pair_pat = np.zeros((len(self._pairs), L))
        pair_pat[np.arange(len(self._pairs)), self._pairs[:, 0]] = 1.0
        pair_pat[np.arange(len(self._pairs)), self._pairs[:, 1]] = -1.0
        x = self._solve(sigma, np.vstack([drive_pat, pair_pat]))
        u = x[:len(drive_pat), :N]
        w = x[len(drive_pat):, :N]
        el = self.mesh.elements
        # element gradients of the fields: (patterns, M, 2)
        gu = np.einsum("pei,eid->ped", u[:, el], self._grads)
        gw = np.einsum("pei,eid->ped", w[:, el], self._grads)
        J = -self._area * np.einsum("sed,sed->se", gu[self._drive_of_row], gw[self._pair_of_row])
        if return_voltages:
            return J, measure(self.protocol, x[:len(drive_pat), N:N + L])
        return J


def compute_jacobian(mesh: Mesh, sigma, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                     protocol: Protocol | None = None) -> np.ndarray:
    return ForwardOperator(mesh, contact_impedances, protocol).jacobian(sigma)


def gn_direction(J, residual) -> np.ndarray:
    """Undamped step: solve ``J^T J d = -J^T r`` with ``r = F(sigma) - v``.

    Raises :class:`SingularSystemError` when ``J^T J`` is numerically
    singular, which is the normal situation for EIT (fewer measurements than
    elements); use :func:`lm_direction` there.
    """
    J = np.asarray(J, dtype=float)
    r = np.asarray(residual, dtype=float)
    H = J.T @ J
    g = -J.T @ r
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularSystemError(f"J^T J is singular (condition number {cond:.3e})")
    return np.linalg.solve(H, g)


def lm_direction(J, residual, lam: float) -> np.ndarray:
    """Damped step: ``(J^T J + lam * diag(J^T J)) d = -J^T r``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    J = np.asarray(J, dtype=float)
    r = np.asarray(residual, dtype=float)
    H = J.T @ J
    H[np.diag_indices_from(H)] *= 1.0 + lam
    g = -J.T @ r
    try:
        c, low = sla.cho_factor(H, check_finite=True)
    except np.linalg.LinAlgError as err:
        raise SingularSystemError(f"damped normal matrix is not positive definite: {err}") from err
    return sla.cho_solve((c, low), g)


@dataclass
class InverseConfig:
    lam: float = 0.01
    max_iters: int = 20
    misfit_tol: float = 0.0
    initial_sigma: np.ndarray | float = 1.0
    floor: float = POSITIVITY_FLOOR

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.misfit_tol < 0:
            raise ValueError("misfit_tol must be nonnegative")


@dataclass
class Trace:
    misfits: list[float] = field(default_factory=list)
    step_scales: list[float] = field(default_factory=list)

    def rows(self):
        return list(enumerate(self.misfits))


def reconstruct(v, mesh: Mesh, contact_impedances=DEFAULT_CONTACT_IMPEDANCE,
                protocol: Protocol | None = None, config: InverseConfig | None = None,
                operator: ForwardOperator | None = None) -> tuple[np.ndarray, Trace]:
    """Iterate ``sigma <- max(sigma + d_LM, floor)`` from ``config.initial_sigma``.

    ``trace.misfits[k]`` is ``||v - F(sigma_k)|| / ||v||``.  A step that
    increases the misfit is halved (at most ``MAX_HALVINGS`` times); if no
    halving helps, iteration stops at the current iterate.
    """
    config = config or InverseConfig()
    op = operator or ForwardOperator(mesh, contact_impedances, protocol)
    v = np.asarray(v, dtype=float)
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        raise ValueError("measurement vector is identically zero")
    sigma = np.broadcast_to(np.asarray(config.initial_sigma, dtype=float),
                            (mesh.n_elements,)).copy()
    sigma = check_field(mesh, np.maximum(sigma, config.floor))
    trace = Trace()

    try:
        J, f = op.jacobian(sigma, return_voltages=True)
        misfit = np.linalg.norm(v - f) / vnorm
        trace.misfits.append(misfit)
        for k in range(config.max_iters):
            if misfit <= config.misfit_tol:
                break
            d = lm_direction(J, f - v, config.lam)
            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                cand = np.maximum(sigma + scale * d, config.floor)
                f_new = op(cand)
                m_new = np.linalg.norm(v - f_new) / vnorm
                if m_new <= misfit:
                    break
                scale *= 0.5
            else:
                logger.info("iteration %d: no descent after %d halvings, stopping", k, MAX_HALVINGS)
                break
            sigma, misfit = cand, m_new
            trace.misfits.append(misfit)
            trace.step_scales.append(scale)
            if k + 1 < config.max_iters and misfit > config.misfit_tol:
                J, f = op.jacobian(sigma, return_voltages=True)
    except (ForwardSolveError, np.linalg.LinAlgError) as err:
        raise ReconstructionError(f"reconstruction aborted after {len(trace.misfits)} "
                                  f"evaluations: {err}", trace) from err
    return sigma, trace
