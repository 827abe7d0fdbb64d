from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.linalg import inv

from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator
from SkorokhodDual.utils.errors import IterationLimit, Infeasible, Unbounded


@dataclass
class SimplexResult:
    """
    Optimal basic solution of min c^T x, A x = b, x >= 0.
    ``infeasibility`` is the artificial mass left by phase one (accepted below the feasibility tolerance),
    ``artificial_mass`` the artificial mass still basic at the end of phase two,
    ``duals`` the simplex multipliers of the rows at the optimal basis.
    """
    x: np.ndarray
    objective: float
    basis: List[int]
    duals: np.ndarray
    infeasibility: float
    artificial_mass: float
    iterations: int
    bland_pivots: int


class RevisedSimplex:
    """
    Dense revised simplex with an explicit basis inverse updated in product form and refactorized periodically.
    Pricing is Dantzig's rule, switching to Bland's rule after a run of degenerate pivots (anti-cycling) or
    Bland's rule only when ``pricing='bland'``.

    Phase one minimizes the mass of one artificial variable per row. The artificial columns are kept in phase two
    with a large penalty, so that a residual below the feasibility tolerance (mass leaking beyond a truncated horizon)
    does not block the solve.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray, max_iterations: int = 50000,
                 refactor_every: int = 100, pricing: str = "dantzig", degenerate_run: int = 50,
                 feasibility_tolerance: float = 1e-8, tolerance: float = 1e-11):
        """
        :param a: constraint matrix, shape (m, n)
        :type a: np.ndarray
        :param b: right hand side, shape (m,)
        :type b: np.ndarray
        :param c: costs, shape (n,)
        :type c: np.ndarray
        :param max_iterations: pivots allowed over both phases
        :type max_iterations: int
        :param refactor_every: pivots between two inversions of the basis matrix
        :type refactor_every: int
        :param pricing: 'dantzig' or 'bland'
        :type pricing: str
        :param degenerate_run: consecutive degenerate pivots after which Bland's rule is used
        :type degenerate_run: int
        :param feasibility_tolerance: largest artificial mass accepted at the end of phase one
        :type feasibility_tolerance: float
        :param tolerance: pivoting tolerance on reduced costs and directions
        :type tolerance: float
        """
        if pricing not in ("dantzig", "bland"):
            raise ValueError(f"unknown pricing rule {pricing!r}")
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        # rows with a negative right hand side are negated so that the artificial basis is feasible
        self.row_signs = np.where(b < 0, -1., 1.)
        self.m, self.n = a.shape
        self.a = np.hstack((a * self.row_signs[:, None], np.eye(self.m)))
        self.b = b * self.row_signs
        self.c = np.asarray(c, dtype=float)
        self.max_iterations = max_iterations
        self.refactor_every = refactor_every
        self.pricing = pricing
        self.degenerate_run = degenerate_run
        self.feasibility_tolerance = feasibility_tolerance
        self.tolerance = tolerance
        self.logger = LoggerGenerator.get_shared_logger("RevisedSimplex")

        self.basis = list(range(self.n, self.n + self.m))
        self.basis_inverse = np.eye(self.m)
        self.x_basis = self.b.copy()
        self.iterations = 0
        self.bland_pivots = 0

    def _refactor(self):
        self.basis_inverse = inv(self.a[:, self.basis])
        self.x_basis = self.basis_inverse @ self.b

    def _entering(self, reduced: np.ndarray, use_bland: bool) -> Optional[int]:
        candidates = np.flatnonzero(reduced < -self.tolerance)
        if not len(candidates):
            return None
        if use_bland:
            return int(candidates[0])
        return int(candidates[np.argmin(reduced[candidates])])

    def _leaving(self, direction: np.ndarray, use_bland: bool) -> Optional[int]:
        rows = np.flatnonzero(direction > self.tolerance)
        if not len(rows):
            return None
        ratios = self.x_basis[rows] / direction[rows]
        best = ratios.min()
        ties = rows[ratios <= best + self.tolerance]
        if use_bland:
            return int(ties[np.argmin(np.array(self.basis)[ties])])
        return int(ties[np.argmax(direction[ties])])

    def _run_phase(self, costs: np.ndarray, allowed: np.ndarray) -> np.ndarray:
        """
        pivot until no allowed column has a negative reduced cost, return the simplex multipliers
        """
        degenerate = 0
        since_refactor = 0
        while True:
            duals = costs[self.basis] @ self.basis_inverse
            reduced = costs - duals @ self.a
            reduced[~allowed] = 0.
            reduced[self.basis] = 0.
            use_bland = self.pricing == "bland" or degenerate >= self.degenerate_run
            entering = self._entering(reduced, use_bland)
            if entering is None:
                return duals
            if self.iterations >= self.max_iterations:
                self.logger.error(f"iteration limit {self.max_iterations} reached")
                raise IterationLimit(self.iterations)

            direction = self.basis_inverse @ self.a[:, entering]
            row = self._leaving(direction, use_bland)
            if row is None:
                self.logger.error(f"unbounded direction along column {entering}")
                raise Unbounded(entering, self.iterations)
            step = self.x_basis[row] / direction[row]
            degenerate = degenerate + 1 if step <= self.tolerance else 0
            self.bland_pivots += use_bland

            # product form update of the basis inverse
            pivot_row = self.basis_inverse[row] / direction[row]
            self.basis_inverse -= np.outer(direction, pivot_row)
            self.basis_inverse[row] = pivot_row
            self.x_basis -= step * direction
            self.x_basis[row] = step
            self.basis[row] = entering
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= self.refactor_every:
                self._refactor()
                since_refactor = 0
            np.maximum(self.x_basis, 0., out=self.x_basis)

    def _solution(self) -> np.ndarray:
        x = np.zeros(self.n + self.m)
        x[self.basis] = self.x_basis
        return x

    def solve(self) -> SimplexResult:
        """
        Run both phases

        :return: the optimal basic solution
        :rtype: SimplexResult
        """
        allowed = np.ones(self.n + self.m, dtype=bool)
        phase_one_costs = np.concatenate((np.zeros(self.n), np.ones(self.m)))
        duals = self._run_phase(phase_one_costs, allowed)
        self._refactor()
        infeasibility = float(self._solution()[self.n:].sum())
        if infeasibility > self.feasibility_tolerance:
            # y = -duals satisfies A^T y >= 0 and b^T y = -infeasibility < 0 on the sign normalized rows
            certificate = -duals * self.row_signs
            self.logger.error(f"phase one ended with an artificial mass of {infeasibility:.3e}")
            raise Infeasible(infeasibility, certificate)

        penalty = 1e4 * (1. + float(np.abs(self.c).max(initial=0.)))
        phase_two_costs = np.concatenate((self.c, np.full(self.m, penalty)))
        duals = self._run_phase(phase_two_costs, allowed)
        self._refactor()
        x = self._solution()
        artificial_mass = float(x[self.n:].sum())
        self.logger.info(f"simplex solved in {self.iterations} pivots ({self.bland_pivots} with Bland's rule),"
                         f" phase one residual {infeasibility:.3e}, artificial mass {artificial_mass:.3e}")
        return SimplexResult(x=x[:self.n], objective=float(self.c @ x[:self.n]), basis=list(self.basis),
                             duals=duals * self.row_signs, infeasibility=infeasibility,
                             artificial_mass=artificial_mass, iterations=self.iterations,
                             bland_pivots=self.bland_pivots)
