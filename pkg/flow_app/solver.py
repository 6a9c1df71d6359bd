'''
Restarted GMRES with modified Gram-Schmidt, Givens rotations and an
optional right 2x2 block-Jacobi preconditioner.
'''
import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
from django.conf import settings
from scipy.linalg import solve_triangular

from flow_app.exceptions import InvalidConfigException, ShapeMismatchException

logger = logging.getLogger(__name__)

PRECONDITIONERS = ('none', 'jacobi')

# relative size below which a 2x2 diagonal block counts as singular
SINGULAR_BLOCK_TOL = 1e-14


@dataclass
class SolverConfig:
    restart: int = None
    max_iters: int = None
    rel_tol: float = None
    preconditioner: str = None
    deterministic: bool = None
    breakdown_tol: float = None

    def __post_init__(self):
        defaults = {
            'restart': settings.SOLVER_RESTART,
            'max_iters': settings.SOLVER_MAX_ITERS,
            'rel_tol': settings.SOLVER_REL_TOL,
            'preconditioner': settings.SOLVER_PRECONDITIONER,
            'deterministic': settings.SOLVER_DETERMINISTIC,
            'breakdown_tol': settings.SOLVER_BREAKDOWN_TOL,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, value)

        if int(self.restart) != self.restart or self.restart < 1:
            raise InvalidConfigException('The GMRES restart length must be a positive integer, got %s.'
                % self.restart)
        if int(self.max_iters) != self.max_iters or self.max_iters < self.restart:
            raise InvalidConfigException('max_iters (%s) must be an integer of at least the restart '
                'length (%s).' % (self.max_iters, self.restart))
        if not 0 < self.rel_tol < 1:
            raise InvalidConfigException('rel_tol must lie in (0, 1), got %s.' % self.rel_tol)
        if self.preconditioner not in PRECONDITIONERS:
            raise InvalidConfigException('Unknown preconditioner "%s"; expected one of %s.'
                % (self.preconditioner, ', '.join(PRECONDITIONERS)))
        self.restart = int(self.restart)
        self.max_iters = int(self.max_iters)
        self.deterministic = bool(self.deterministic)


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float
    breakdown: bool = False
    # (iteration, true relative residual) at the start and after each cycle
    history: list = field(default_factory=list)

    def as_dict(self):
        d = asdict(self)
        d.pop('history')
        return d


def save_history(path, history):
    np.savetxt(path, np.asarray(history, dtype=float).reshape(-1, 2), delimiter=',',
        fmt=['%d', '%.17g'], header='iteration,relative_residual', comments='')


def block_jacobi(matrix):
    '''
    Inverses of the 2x2 diagonal blocks of one grid point as a block
    sparse matrix. Singular blocks are replaced by the identity.
    '''
    n = matrix.shape[0]
    if n % 2 != 0:
        raise ShapeMismatchException('Block-Jacobi needs an even number of unknowns, got %d.' % n)
    d0 = matrix.diagonal(0)
    upper = np.append(matrix.diagonal(1), 0.0)
    lower = np.append(matrix.diagonal(-1), 0.0)

    a = d0[0::2]
    b = upper[0::2]
    c = lower[0::2]
    d = d0[1::2]
    det = a * d - b * c
    scale = np.maximum(np.abs(a * d) + np.abs(b * c), np.finfo(float).tiny)
    singular = np.abs(det) <= SINGULAR_BLOCK_TOL * scale

    safe = np.where(singular, 1.0, det)
    blocks = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / safe[:, None, None]
    blocks[singular] = np.eye(2)
    if singular.any():
        logger.warning('%d singular diagonal blocks were replaced by the identity' % singular.sum())

    points = n // 2
    return sp.bsr_matrix((blocks, np.arange(points), np.arange(points + 1)), shape=(n, n))


def _dot_fn(deterministic):
    if deterministic:
        # a fixed reduction order, independent of the BLAS threading
        return lambda x, y: float(np.sum(x * y))
    return lambda x, y: float(np.dot(x, y))


def _combine(basis, y, deterministic):
    if deterministic:
        return np.sum(basis * y[:, None], axis=0)
    return basis.T @ y


def gmres_solve(system, cfg=None, x0=None):
    '''
    Solves system.matrix x = system.rhs. Never raises on non-convergence:
    the report says whether the true relative residual met rel_tol and
    whether an Arnoldi breakdown ended the iteration.
    '''
    if cfg is None:
        cfg = SolverConfig()
    started = time.perf_counter()
    M = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = b.shape[0]
    if M.shape != (n, n):
        raise ShapeMismatchException('Matrix of shape %s does not match a right-hand side of size %d.'
            % (M.shape, n))
    dot = _dot_fn(cfg.deterministic)

    def norm(v):
        return np.sqrt(dot(v, v))

    bnorm = norm(b)
    if bnorm == 0.0:
        logger.info('Zero right-hand side; the solution is 0')
        return np.zeros(n), SolveReport(0, 0.0, True, time.perf_counter() - started, False, [(0, 0.0)])

    if cfg.preconditioner == 'jacobi':
        P = block_jacobi(M)
        precondition = lambda v: P @ v
    else:
        precondition = lambda v: v

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - M @ x
    beta = norm(r)
    relative = beta / bnorm
    history = [(0, relative)]
    iterations = 0
    breakdown = False
    m = cfg.restart

    while relative > cfg.rel_tol and iterations < cfg.max_iters and not breakdown:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta

        k_used = 0
        for k in range(m):
            if iterations >= cfg.max_iters:
                break
            w = M @ precondition(V[k])
            for i in range(k + 1):
                H[i, k] = dot(w, V[i])
                w = w - H[i, k] * V[i]
            h_next = norm(w)
            H[k + 1, k] = h_next

            for i in range(k):
                upper = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = upper
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                breakdown = True
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]

            iterations += 1
            k_used = k + 1
            if h_next <= cfg.breakdown_tol * bnorm:
                breakdown = True
                break
            V[k + 1] = w / h_next
            if abs(g[k + 1]) / bnorm <= cfg.rel_tol:
                break

        if k_used > 0:
            y = solve_triangular(H[:k_used, :k_used], g[:k_used])
            x = x + precondition(_combine(V[:k_used], y, cfg.deterministic))
        r = b - M @ x
        beta = norm(r)
        relative = beta / bnorm
        history.append((iterations, relative))
        logger.debug('GMRES cycle ended at iteration %d with relative residual %.3e' % (iterations, relative))

    converged = bool(relative <= cfg.rel_tol)
    wall_time = time.perf_counter() - started
    if breakdown and not converged:
        logger.warning('GMRES broke down after %d iterations at relative residual %.3e'
            % (iterations, relative))
    elif not converged:
        logger.warning('GMRES did not converge in %d iterations (relative residual %.3e)'
            % (iterations, relative))
    else:
        logger.info('GMRES converged in %d iterations to relative residual %.3e (%.2fs)'
            % (iterations, relative, wall_time))
    return x, SolveReport(iterations, float(relative), converged, wall_time, breakdown, history)
