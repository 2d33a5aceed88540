"""
Spectral stability analysis of the differential TD mean dynamics.

The expected update is h(v) = D_mu (r^(n) - eta e e^T v + P^n v - v), whose
linear part is -A v with

    A = D_mu (I - P^n + eta e e^T) = B + eta d_mu e^T,
    B = I - K,  K = (I - D_mu) + D_mu P^n.

A is strictly positive stable when B + v w^T (v = eta d_mu, w = e) meets the
rank-one perturbation conditions c1-c3 plus c4 or c5. The analyzer checks
those conditions numerically, evaluates the eta0 bound and the
doubly-stochastic Lyapunov certificate, and keeps certified stability apart
from stability read off the spectrum.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg

from .exceptions import DomainError, InputError, ShapeError, SingularSystemError
from .mdp import check_stochastic_rows

logger = logging.getLogger(__name__)

STABILITY_TOL = 1e-9
RANK_RTOL = 1e-9
KERNEL_TOL = 1e-8
STOCHASTIC_TOL = 1e-10
MAX_CONDITION = 1e12

CERT_KERNEL = "kernel-annihilation"
CERT_ETA0 = "eta0-bound"
CERT_ENTRYWISE = "rank-one-entrywise"
CERT_DOUBLY = "doubly-stochastic"


class Verdict(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    NOT_APPLICABLE = "not-applicable"

    @classmethod
    def of(cls, flag):
        return cls.HOLDS if flag else cls.FAILS


def _square(M, name):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    return M


def _kernel_input(P_n):
    P_n = _square(P_n, "P_n")
    check_stochastic_rows(P_n, "P_n", tol=STOCHASTIC_TOL)
    return P_n


def _distribution(d, size, name="d_mu"):
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (size,):
        raise ShapeError(f"{name} must have length {size}, got shape {d.shape}")
    if np.any(d <= 0):
        raise InputError(f"{name} must be strictly positive")
    if abs(d.sum() - 1.0) > STOCHASTIC_TOL:
        raise InputError(f"{name} must sum to 1, got {d.sum()!r}")
    return d


@dataclass(frozen=True)
class MatrixTriple:
    K: np.ndarray
    B: np.ndarray
    A: np.ndarray
    d_mu: np.ndarray
    eta: float
    n: Optional[int] = None


def build_matrices(P_n, d_mu, eta, n=None) -> MatrixTriple:
    P_n = _kernel_input(P_n)
    size = P_n.shape[0]
    d_mu = _distribution(d_mu, size)
    if eta < 0:
        raise DomainError(f"eta must be non-negative, got {eta!r}")
    # elementwise so the off-diagonal entries are exactly d_mu(i) * P_n(i, j)
    K = np.diag(1.0 - d_mu) + d_mu[:, np.newaxis] * P_n
    B = np.eye(size) - K
    A = B + eta * np.outer(d_mu, np.ones(size))
    return MatrixTriple(K=K, B=B, A=A, d_mu=d_mu, eta=float(eta), n=n)


def coefficient_matrix(P_n, d_mu, eta):
    """A built directly as D_mu (I - P_n + eta e e^T)."""
    P_n = _kernel_input(P_n)
    size = P_n.shape[0]
    d_mu = _distribution(d_mu, size)
    return np.diag(d_mu) @ (np.eye(size) - P_n + eta * np.ones((size, size)))


def spectrum(M) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted by (real, imag)."""
    M = _square(M, "matrix")
    eigenvalues = scipy.linalg.eigvals(M)
    order = np.lexsort((eigenvalues.imag, eigenvalues.real))
    return eigenvalues[order]


def _unit(z):
    z = z / np.linalg.norm(z)
    return -z if z.sum() < 0 else z


@dataclass
class BierkensVerdicts:
    c1: Verdict
    c2: Verdict
    c3: Verdict
    c4: Verdict
    c5: Verdict
    kernel_left: np.ndarray
    kernel_right: np.ndarray
    rank_B: int
    lambda_max_K: float

    @property
    def base_conditions(self):
        return all(c == Verdict.HOLDS for c in (self.c1, self.c2, self.c3))

    def as_dict(self):
        return {name: getattr(self, name).value for name in ("c1", "c2", "c3", "c4", "c5")}


def check_bierkens(
    triple: MatrixTriple,
    d_pi,
    tol=STABILITY_TOL,
    rank_rtol=RANK_RTOL,
    kernel_tol=KERNEL_TOL,
) -> BierkensVerdicts:
    K, B, d_mu, eta = triple.K, triple.B, triple.d_mu, triple.eta
    size = K.shape[0]
    d_pi = _distribution(d_pi, size, name="d_pi")
    ones = np.ones(size)
    v = eta * d_mu

    lambda_max = float(np.max(np.abs(scipy.linalg.eigvals(K))))
    c1 = bool(np.all(K >= -tol)) and abs(lambda_max - 1.0) <= tol

    U, singular, Vh = scipy.linalg.svd(B)
    if singular[0] > 0:
        rank = int(np.sum(singular > rank_rtol * singular[0]))
    else:
        rank = 0
    kernel_right = _unit(Vh[-1])
    kernel_left = _unit(U[:, -1])
    right_ok = np.max(np.abs(kernel_right - _unit(ones))) <= kernel_tol
    left_ok = np.max(np.abs(kernel_left - _unit(d_pi / d_mu))) <= kernel_tol
    c2 = rank == size - 1 and right_ok and left_ok

    if rank == size - 1:
        c3 = Verdict.of(abs((kernel_left @ v) * (ones @ kernel_right)) > tol)
    else:
        c3 = Verdict.NOT_APPLICABLE

    c4 = np.max(np.abs(ones @ B)) <= tol or np.max(np.abs(B @ v)) <= tol
    c5 = eta > 0 and bool(np.all(d_mu > 0)) and bool(np.all(2.0 * K >= v[:, np.newaxis]))

    return BierkensVerdicts(
        c1=Verdict.of(c1),
        c2=Verdict.of(c2),
        c3=c3,
        c4=Verdict.of(c4),
        c5=Verdict.of(c5),
        kernel_left=kernel_left,
        kernel_right=kernel_right,
        rank_B=rank,
        lambda_max_K=lambda_max,
    )


def eta0_bound(P_n) -> float:
    """2 * min P_n(i, j); 0 when P_n has a zero entry and the bound is vacuous."""
    P_n = _kernel_input(P_n)
    smallest = float(P_n.min())
    return 2.0 * smallest if smallest > 0 else 0.0


def is_doubly_stochastic(P_n, tol=STOCHASTIC_TOL) -> bool:
    P_n = _square(P_n, "P_n")
    return bool(
        np.all(P_n >= 0)
        and np.max(np.abs(P_n.sum(axis=1) - 1.0)) <= tol
        and np.max(np.abs(P_n.sum(axis=0) - 1.0)) <= tol
    )


def lyapunov_matrix(P_n, eta):
    """Symmetric part of A^T M + M A for M = D_mu^{-1}; d_mu cancels out."""
    P_n = _square(P_n, "P_n")
    size = P_n.shape[0]
    coupling = eta * np.ones((size, size))
    return (np.eye(size) - P_n.T + coupling) + (np.eye(size) - P_n + coupling)


def lyapunov_check(P_n, d_mu, eta, tol=STABILITY_TOL) -> bool:
    P_n = _square(P_n, "P_n")
    _distribution(d_mu, P_n.shape[0])
    smallest = scipy.linalg.eigvalsh(lyapunov_matrix(P_n, eta))[0]
    return bool(smallest > tol)


def lipschitz_bound(mu_min, n, eta, num_states) -> float:
    """max{1, (1/mu_min)^n (eta |S| + 2)}."""
    if not 0 < mu_min <= 1:
        raise DomainError(f"mu_min must lie in (0, 1], got {mu_min!r}")
    rho_bar = (1.0 / mu_min) ** n
    return max(1.0, rho_bar * (eta * num_states + 2.0))


def expected_operator(P_n, r_n, d_mu, eta, v) -> np.ndarray:
    P_n = _square(P_n, "P_n")
    size = P_n.shape[0]
    r_n = np.asarray(r_n, dtype=np.float64)
    d_mu = np.asarray(d_mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, vector in (("r_n", r_n), ("d_mu", d_mu), ("v", v)):
        if vector.shape != (size,):
            raise ShapeError(f"{name} must have length {size}, got shape {vector.shape}")
    return d_mu * (r_n - eta * v.sum() + P_n @ v - v)


def fixed_point(P_n, r_n, eta) -> np.ndarray:
    """Solve (I - P_n + eta e e^T) v = r^(n), the zero of the expected operator."""
    P_n = _square(P_n, "P_n")
    size = P_n.shape[0]
    r_n = np.asarray(r_n, dtype=np.float64)
    if r_n.shape != (size,):
        raise ShapeError(f"r_n must have length {size}, got shape {r_n.shape}")
    system = np.eye(size) - P_n + eta * np.ones((size, size))
    condition = np.linalg.cond(system)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSystemError(
            f"equilibrium system is singular at eta={eta!r} (condition number {condition:.3e})",
            eta=eta,
        )
    try:
        return scipy.linalg.solve(system, r_n)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(f"equilibrium system is singular at eta={eta!r}: {exc}", eta=eta) from exc


def positivity_horizon(P, max_n=None) -> Optional[int]:
    """Smallest n with P^n strictly positive, searched up to the Wielandt bound."""
    P = _square(P, "P")
    size = P.shape[0]
    max_n = max_n or (size - 1) ** 2 + 1
    power = P.copy()
    for n in range(1, max_n + 1):
        if np.all(power > 0):
            return n
        power = power @ P
    return None


def eta_sweep(P_n, d_mu, etas) -> List[tuple]:
    """(eta, min real part of spectrum(A)) per eta. Charts the empirical threshold only."""
    return [
        (float(eta), float(spectrum(build_matrices(P_n, d_mu, eta).A).real.min()))
        for eta in etas
    ]


@dataclass
class StabilityReport:
    spectrum: np.ndarray
    min_real_part: float
    strictly_positive_stable: bool
    bierkens: Dict[str, str]
    eta0: Optional[float]
    lyapunov_pd: Optional[bool]
    kernel_left: np.ndarray
    kernel_right: np.ndarray
    eta: float
    n: Optional[int] = None
    doubly_stochastic: bool = False
    certificates: List[str] = field(default_factory=list)

    @property
    def certified_stable(self):
        return bool(self.certificates)

    @property
    def empirically_stable(self):
        return self.strictly_positive_stable

    def to_dict(self):
        return {
            "n": self.n,
            "eta": self.eta,
            "spectrum": [[float(z.real), float(z.imag)] for z in self.spectrum],
            "min_real_part": self.min_real_part,
            "strictly_positive_stable": self.strictly_positive_stable,
            "certified_stable": self.certified_stable,
            "certificates": list(self.certificates),
            "bierkens": dict(self.bierkens),
            "eta0": self.eta0,
            "doubly_stochastic": self.doubly_stochastic,
            "lyapunov_pd": self.lyapunov_pd,
            "kernel_left": self.kernel_left.tolist(),
            "kernel_right": self.kernel_right.tolist(),
        }


def analyze(
    P_n,
    d_mu,
    d_pi,
    eta,
    n=None,
    tol=STABILITY_TOL,
    rank_rtol=RANK_RTOL,
    kernel_tol=KERNEL_TOL,
) -> StabilityReport:
    triple = build_matrices(P_n, d_mu, eta, n=n)
    eigenvalues = spectrum(triple.A)
    min_real = float(eigenvalues.real.min())
    verdicts = check_bierkens(triple, d_pi, tol=tol, rank_rtol=rank_rtol, kernel_tol=kernel_tol)
    eta0 = eta0_bound(P_n)
    doubly = is_doubly_stochastic(P_n)
    lyapunov_pd = lyapunov_check(P_n, d_mu, eta, tol=tol) if doubly else None

    certificates = []
    if verdicts.base_conditions:
        if verdicts.c4 == Verdict.HOLDS:
            certificates.append(CERT_KERNEL)
        if verdicts.c5 == Verdict.HOLDS:
            if 0 < eta <= eta0:
                certificates.append(CERT_ETA0)
            certificates.append(CERT_ENTRYWISE)
    if doubly and lyapunov_pd:
        certificates.append(CERT_DOUBLY)

    stable = min_real > tol
    if certificates and not stable:
        logger.warning(
            "certificates %s issued but min real part is %.3e (eta=%s, n=%s)",
            certificates, min_real, eta, n,
        )
    return StabilityReport(
        spectrum=eigenvalues,
        min_real_part=min_real,
        strictly_positive_stable=stable,
        bierkens=verdicts.as_dict(),
        eta0=eta0,
        lyapunov_pd=lyapunov_pd,
        kernel_left=verdicts.kernel_left,
        kernel_right=verdicts.kernel_right,
        eta=float(eta),
        n=n,
        doubly_stochastic=doubly,
        certificates=certificates,
    )
