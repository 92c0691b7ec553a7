"""Offspring distributions, initial laws, and branching mechanisms.

The reduction transform on a proper offspring law with generating function
``f`` at thinning survival level ``1 - alpha`` is

    f_red(r) = r + [f(alpha + (1-alpha) r) - alpha - (1-alpha) r]
                   / [(1-alpha) (1 - f'(alpha))],

with the edge rate scaled by ``1 - f'(alpha)`` and the progenitor count
binomially thinned.  The inverse transform evaluates the reduced
generating function at ``(r - alpha)/(1 - alpha)``, which reaches the
negative argument ``-alpha/(1-alpha)``; it is therefore only offered for
laws whose power series is certifiably summable there (finite support, or
the one-parameter family with ``f(r) = r + (1-r)**gamma / gamma`` which has
a closed form on all of ``(-inf, 1]``).

Mechanisms are stored as a Lévy-Khintchine triplet (drift, gaussian
coefficient, finite atom list) optionally extended by exact power terms
``coef * lam**gamma``; every formula downstream evaluates in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "OffspringLaw",
    "InitialLaw",
    "AtomicLaw",
    "GwLaw",
    "BranchingMechanism",
    "CertifiedDomainError",
    "binary_critical",
    "stable_offspring",
    "reduce_offspring",
    "thin_initial",
    "reduce_law",
    "invert_law",
    "compose_alphas",
    "offspring_from_psi",
    "mu_from_rho",
    "extension_probe",
]

_MASS_TOL = 1e-12


class CertifiedDomainError(ValueError):
    """Generating-function evaluation outside the certified domain."""


@dataclass(frozen=True)
class OffspringLaw:
    """A probability law on child counts.

    ``pmf[k]`` is the mass at ``k``; ``residual`` is reported tail mass not
    stored in the head (never silently renormalized).  ``stable_gamma``
    declares that the law is the gamma-family member with generating
    function ``r + (1-r)**gamma / gamma``, which supplies exact evaluation
    beyond the stored head.  Proper laws have no mass at one child.
    """

    pmf: tuple[float, ...]
    residual: float = 0.0
    stable_gamma: Optional[float] = None
    allow_unary: bool = False

    def __post_init__(self):
        pmf = tuple(float(x) for x in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if any(x < 0.0 for x in pmf) or self.residual < 0.0:
            raise ValueError("offspring masses must be nonnegative")
        total = math.fsum(pmf) + self.residual
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"offspring masses sum to {total}, not 1")
        if not self.allow_unary and len(pmf) > 1 and pmf[1] != 0.0:
            raise ValueError("proper offspring law requires no mass at one child")

    # -- basic structure ---------------------------------------------------

    @property
    def is_finite(self) -> bool:
        return self.residual == 0.0

    @property
    def is_proper(self) -> bool:
        return len(self.pmf) <= 1 or self.pmf[1] == 0.0

    @property
    def is_nontrivial(self) -> bool:
        head01 = sum(self.pmf[:2])
        return head01 < 1.0 - _MASS_TOL

    def mass(self, k: int) -> float:
        if k < len(self.pmf):
            return self.pmf[k]
        if self.stable_gamma is not None:
            return _stable_mass(self.stable_gamma, k)
        return 0.0

    def mean(self) -> float:
        if self.stable_gamma is not None:
            return 1.0
        return math.fsum(k * p for k, p in enumerate(self.pmf))

    # -- generating function -----------------------------------------------

    def pgf(self, r: float) -> float:
        if self.stable_gamma is not None:
            g = self.stable_gamma
            return r + (1.0 - r) ** g / g
        if r < 0.0 and not self.is_finite:
            raise CertifiedDomainError(
                "negative-argument evaluation requires finite support or a declared tail"
            )
        return math.fsum(p * r**k for k, p in enumerate(self.pmf))

    def pgf_prime(self, r: float) -> float:
        if self.stable_gamma is not None:
            g = self.stable_gamma
            return 1.0 - (1.0 - r) ** (g - 1.0)
        if r < 0.0 and not self.is_finite:
            raise CertifiedDomainError(
                "negative-argument evaluation requires finite support or a declared tail"
            )
        return math.fsum(k * p * r ** (k - 1) for k, p in enumerate(self.pmf) if k >= 1)

    def smallest_fixed_point(self) -> float:
        """Smallest root of pgf(r) = r in [0, 1]; 1 iff the mean is <= 1."""
        if self.mass(0) == 0.0:
            return 0.0
        if self.stable_gamma is not None or self.mean() <= 1.0 + 1e-15:
            return 1.0
        from scipy.optimize import brentq

        f = lambda r: self.pgf(r) - r  # noqa: E731
        # supercritical: f > 0 on [0, q), f < 0 on (q, 1)
        upper = 1.0 - 1e-12
        while f(upper) >= 0.0:
            upper = 0.5 * (1.0 + upper)
            if 1.0 - upper < 1e-15:
                return 1.0
        return float(brentq(f, 0.0, upper, xtol=1e-14, rtol=8.9e-16))

    def is_conservative(self) -> bool:
        """No explosion of the associated count chain in finite time.

        Finite-support and the declared gamma family are conservative; so
        is every law with finite mean (the divergence integral near 1 then
        behaves like ``dr / ((m-1)(1-r))``).
        """
        if self.is_finite or self.stable_gamma is not None:
            return True
        return math.isfinite(self.mean())

    # -- sampling support ----------------------------------------------------

    def sampler_cdf(self) -> np.ndarray:
        cum = np.cumsum(np.asarray(self.pmf, dtype=float))
        return cum

    def sample_index(self, u: float, cum: np.ndarray) -> int:
        """Inverse-cdf draw; walks the analytic tail beyond the head if needed."""
        total = cum[-1] if len(cum) else 0.0
        if u < total:
            return int(np.searchsorted(cum, u, side="right"))
        if self.stable_gamma is None:
            return len(cum) - 1  # residual below mass tolerance: clamp
        g = self.stable_gamma
        k = len(cum)
        acc = float(total)
        w = _stable_mass(g, k)
        while acc + w <= u:
            acc += w
            w *= (k - g) / (k + 1)
            k += 1
            if k > 10_000_000:
                raise RuntimeError("tail walk exceeded iteration budget")
        return k

    def head_array(self, upto: int) -> np.ndarray:
        """pmf[0..upto] with analytic tail entries filled in when declared."""
        out = np.zeros(upto + 1)
        for k in range(upto + 1):
            out[k] = self.mass(k)
        return out


def _stable_mass(gamma: float, k: int) -> float:
    """|binom(gamma, k)| / gamma for k >= 2; head values for k in {0, 1, 2}."""
    if k == 0:
        return 1.0 / gamma
    if k == 1:
        return 0.0
    w = (gamma - 1.0) / 2.0  # k = 2 term: gamma(gamma-1)/2! / gamma
    for j in range(2, k):
        w *= (j - gamma) / (j + 1)
    return w


def binary_critical() -> OffspringLaw:
    return OffspringLaw((0.5, 0.0, 0.5))


def stable_offspring(gamma: float, head: int = 64) -> OffspringLaw:
    """The gamma-family law, pgf ``r + (1-r)**gamma / gamma``, gamma in (1, 2].

    The head is stored explicitly, the (power-law) tail analytically; the
    unstored mass is reported as ``residual``.
    """
    if not 1.0 < gamma <= 2.0:
        raise ValueError("gamma must lie in (1, 2]")
    if gamma == 2.0:
        return OffspringLaw((0.5, 0.0, 0.5))
    masses = [1.0 / gamma, 0.0]
    w = (gamma - 1.0) / 2.0
    for k in range(2, head):
        masses.append(w)
        w *= (k - gamma) / (k + 1)
    residual = 1.0 - math.fsum(masses)
    return OffspringLaw(tuple(masses), residual=residual, stable_gamma=gamma)


# ---------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True)
class InitialLaw:
    """A probability law on the number of progenitors."""

    pmf: tuple[float, ...]
    residual: float = 0.0

    def __post_init__(self):
        pmf = tuple(float(x) for x in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if any(x < 0.0 for x in pmf) or self.residual < 0.0:
            raise ValueError("masses must be nonnegative")
        total = math.fsum(pmf) + self.residual
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {total}, not 1")

    @staticmethod
    def delta(n: int) -> "InitialLaw":
        return InitialLaw((0.0,) * n + (1.0,))

    @staticmethod
    def poisson(mean: float, tail: float = 1e-15) -> "InitialLaw":
        if mean < 0:
            raise ValueError("mean must be nonnegative")
        masses = [math.exp(-mean)]
        k = 0
        while 1.0 - math.fsum(masses) > tail and k < 10_000:
            masses.append(masses[-1] * mean / (k + 1))
            k += 1
        return InitialLaw(tuple(masses), residual=max(0.0, 1.0 - math.fsum(masses)))

    def pgf(self, r: float) -> float:
        return math.fsum(p * r**k for k, p in enumerate(self.pmf))

    def mean(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.pmf))

    def sampler_cdf(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.pmf, dtype=float))


@dataclass(frozen=True)
class AtomicLaw:
    """A finitely-supported probability measure on [0, inf)."""

    atoms: tuple[tuple[float, float], ...]  # (location, weight)

    def __post_init__(self):
        atoms = tuple((float(y), float(w)) for y, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if any(y < 0.0 or w < 0.0 for y, w in atoms):
            raise ValueError("locations and weights must be nonnegative")
        if abs(math.fsum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @staticmethod
    def delta(y: float) -> "AtomicLaw":
        return AtomicLaw(((y, 1.0),))

    @property
    def is_delta_zero(self) -> bool:
        return all(w == 0.0 or y == 0.0 for y, w in self.atoms)

    def mean(self) -> float:
        return math.fsum(y * w for y, w in self.atoms)

    def laplace(self, s: float) -> float:
        return math.fsum(w * math.exp(-s * y) for y, w in self.atoms)


@dataclass(frozen=True)
class GwLaw:
    """Offspring law, exponential lifetime rate, progenitor-count law."""

    xi: OffspringLaw
    c: float
    mu: InitialLaw

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError("lifetime rate must be positive")
        if not self.xi.is_proper:
            raise ValueError("offspring law must be proper")
        if not self.xi.is_nontrivial:
            raise ValueError("offspring law must be non-trivial")
        if not self.xi.is_conservative():
            raise ValueError("offspring law must be conservative")


# ---------------------------------------------------------------------------
# the reduction transform and its inverse


def _check_alpha(xi: OffspringLaw, alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if alpha > 0.0 and xi.pgf(alpha) < alpha - 1e-13:
        raise ValueError(f"alpha={alpha} is not admissible: pgf(alpha) < alpha")


def reduce_offspring(xi: OffspringLaw, alpha: float) -> tuple[OffspringLaw, float]:
    """Reduced offspring law and the rate factor ``1 - pgf'(alpha)``."""
    _check_alpha(xi, alpha)
    if alpha == 0.0:
        return xi, 1.0
    factor = 1.0 - xi.pgf_prime(alpha)
    if xi.stable_gamma is not None:
        # the gamma family is a fixed point of the transform
        return xi, factor
    if not xi.is_finite:
        raise CertifiedDomainError("reduction of a truncated law without a declared tail")
    beta = 1.0 - alpha
    K = len(xi.pmf) - 1
    out = np.zeros(K + 1)
    out[0] = (xi.pgf(alpha) - alpha) / (beta * factor)
    for k in range(2, K + 1):
        s = math.fsum(
            xi.pmf[n] * math.comb(n, k) * alpha ** (n - k) for n in range(k, K + 1)
        )
        out[k] = beta ** (k - 1) * s / factor
    out[np.abs(out) < 1e-15] = 0.0
    # tiny float drift in the total mass is absorbed at zero children
    out[0] += 1.0 - out.sum()
    return OffspringLaw(tuple(out)), factor


def thin_initial(mu: InitialLaw, alpha: float) -> InitialLaw:
    """Binomial thinning: each progenitor survives independently w.p. 1 - alpha."""
    if alpha == 0.0:
        return mu
    beta = 1.0 - alpha
    K = len(mu.pmf) - 1
    out = np.zeros(K + 1)
    for k in range(K + 1):
        out[k] = math.fsum(
            mu.pmf[n] * math.comb(n, k) * beta**k * alpha ** (n - k) for n in range(k, K + 1)
        )
    return InitialLaw(tuple(out), residual=mu.residual)


def reduce_law(law: GwLaw, alpha: float) -> GwLaw:
    """The law of the reduced forest when a tree dies out with probability alpha."""
    xi_red, factor = reduce_offspring(law.xi, alpha)
    return GwLaw(xi_red, law.c * factor, thin_initial(law.mu, alpha))


def invert_law(law: GwLaw, alpha: float) -> GwLaw:
    """Recover the pre-reduction law from the reduced one and alpha."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if alpha == 0.0:
        return law
    xi_star, c_star, mu_star = law.xi, law.c, law.mu
    beta = 1.0 - alpha
    s0 = -alpha / beta
    denom = 1.0 - xi_star.pgf_prime(s0)
    c = c_star * denom
    if xi_star.stable_gamma is not None:
        xi = xi_star
    else:
        if not xi_star.is_finite:
            raise CertifiedDomainError("inversion of a truncated law without a declared tail")
        K = len(xi_star.pmf) - 1
        # phi(r) = r + [beta * phi*(s) - (r - alpha)] / denom,  s = (r - alpha)/beta
        coeffs = np.zeros(K + 1)
        for k, p in enumerate(xi_star.pmf):
            if p == 0.0:
                continue
            scale = p / beta**k
            for j in range(k + 1):
                coeffs[j] += scale * math.comb(k, j) * (-alpha) ** (k - j)
        coeffs *= beta / denom
        coeffs[0] += alpha / denom
        if K >= 1:
            coeffs[1] += 1.0 - 1.0 / denom
        neg = coeffs.min()
        if neg < -1e-9:
            raise ValueError(
                f"inversion produced a negative mass {neg:.3e}: "
                "the law is not extensible at this alpha"
            )
        coeffs[coeffs < 0.0] = 0.0
        coeffs[0] += 1.0 - coeffs.sum()
        xi = OffspringLaw(tuple(coeffs))
    # initial law: pgf_mu(r) = pgf_mu*( (r - alpha)/beta )
    Km = len(mu_star.pmf) - 1
    mcoeffs = np.zeros(Km + 1)
    for k, p in enumerate(mu_star.pmf):
        if p == 0.0:
            continue
        scale = p / beta**k
        for j in range(k + 1):
            mcoeffs[j] += scale * math.comb(k, j) * (-alpha) ** (k - j)
    neg = mcoeffs.min()
    if neg < -1e-9:
        raise ValueError("initial-law inversion produced a negative mass")
    mcoeffs[mcoeffs < 0.0] = 0.0
    mu = InitialLaw(tuple(mcoeffs), residual=max(0.0, 1.0 - float(mcoeffs.sum())))
    return GwLaw(xi, c, mu)


def compose_alphas(alpha: float, beta: float) -> float:
    """Two reductions in a row equal one at 1 - (1-alpha)(1-beta)."""
    return 1.0 - (1.0 - alpha) * (1.0 - beta)


def extension_probe(xi: OffspringLaw, c: float, alphas: Iterable[float]) -> list[dict]:
    """Try to invert the reduction at each alpha; report nonnegativity.

    A failure at some alpha certifies the law is not infinitely extensible;
    success at every probe is necessary but not sufficient.
    """
    out = []
    law = GwLaw(xi, c, InitialLaw.delta(1))
    for a in alphas:
        entry = {"alpha": a, "ok": True, "message": ""}
        try:
            invert_law(law, a)
        except (ValueError, CertifiedDomainError) as exc:
            entry["ok"] = False
            entry["message"] = str(exc)
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# branching mechanisms


@dataclass(frozen=True)
class BranchingMechanism:
    """Laplace exponent of a spectrally positive Lévy process.

    psi(lam) = drift*lam + gaussian*lam**2/2
               + sum w*(exp(-lam*x) - 1 + lam*x*[x<1])      over atoms (x, w)
               + sum coef*lam**gamma                        over power terms.

    Power terms with gamma in (1, 2] stand for their Lévy-density
    counterpart but evaluate exactly, which the flow solver accuracy
    targets require.
    """

    drift: float = 0.0
    gaussian: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()
    powers: tuple[tuple[float, float], ...] = ()  # (coef, gamma)

    def __post_init__(self):
        atoms = tuple((float(x), float(w)) for x, w in self.atoms)
        powers = tuple((float(c), float(g)) for c, g in self.powers)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "powers", powers)
        if self.gaussian < 0.0:
            raise ValueError("gaussian coefficient must be nonnegative")
        if any(x <= 0.0 or w < 0.0 for x, w in atoms):
            raise ValueError("atoms need positive locations and nonnegative weights")
        if any(c < 0.0 or not 1.0 < g <= 2.0 for c, g in powers):
            raise ValueError("power terms need coef >= 0 and gamma in (1, 2]")

    def psi(self, lam):
        out = self.drift * lam + 0.5 * self.gaussian * lam * lam
        for x, w in self.atoms:
            out += w * (np.exp(-lam * x) - 1.0 + (lam * x if x < 1.0 else 0.0))
        for c, g in self.powers:
            out += c * lam**g
        return out

    def psi_prime(self, lam):
        out = self.drift + self.gaussian * lam
        for x, w in self.atoms:
            out += w * x * ((1.0 if x < 1.0 else 0.0) - np.exp(-lam * x))
        for c, g in self.powers:
            out += c * g * lam ** (g - 1.0)
        return out

    def psi_abs_deriv(self, k: int, lam: float) -> float:
        """|psi^(k)(lam)| for k >= 2 (all parts carry the same sign)."""
        if k < 2:
            raise ValueError("use psi_prime for the first derivative")
        out = self.gaussian if k == 2 else 0.0
        for x, w in self.atoms:
            out += w * x**k * math.exp(-lam * x)
        for c, g in self.powers:
            prod = g
            for j in range(1, k):
                prod *= g - j
            out += c * abs(prod) * lam ** (g - k)
        return out

    def psi_prime_at_zero(self) -> float:
        """Right derivative at zero; the power terms contribute nothing."""
        out = self.drift
        for x, w in self.atoms:
            if x >= 1.0:
                out -= w * x
        return out

    def allows_deaths(self) -> bool:
        """psi takes positive values eventually."""
        if self.gaussian > 0.0 or any(c > 0.0 for c, _ in self.powers):
            return True
        slope = self.drift + math.fsum(w * x for x, w in self.atoms if x < 1.0)
        if slope > 0.0:
            return True
        return False  # asymptotically linear with nonpositive slope (or constant)

    def largest_root(self) -> float:
        """Largest root q of psi; zero unless the mechanism is super-critical."""
        if self.psi_prime_at_zero() >= 0.0:
            return 0.0
        from scipy.optimize import brentq

        hi = 1.0
        for _ in range(200):
            if self.psi(hi) > 0.0:
                break
            hi *= 2.0
        else:
            raise ValueError("psi never becomes positive: deaths are not allowed")
        lo = hi
        while self.psi(lo * 0.5) > 0.0:
            lo *= 0.5
            if lo < 1e-300:
                return 0.0
        return float(brentq(self.psi, lo * 0.5, hi, xtol=1e-300, rtol=8.9e-16))

    def is_grey(self) -> bool:
        """Whether 1/psi is integrable at infinity (super-linear growth)."""
        return self.gaussian > 0.0 or any(c > 0.0 for c, _ in self.powers)

    def is_conservative(self) -> bool:
        """dr / psi_minus diverges at zero; true whenever psi'(0+) is finite,
        which every finite triplet here guarantees."""
        return True


def offspring_from_psi(
    mech: BranchingMechanism, lam: float, tail: float = 1e-12, kmax: int = 4096
) -> tuple[OffspringLaw, float]:
    """Offspring law and rate of the level-process family member at lam.

    c = psi'(lam), mass at zero psi(lam)/(lam psi'(lam)) and for k >= 2
    lam**(k-1) |psi^(k)(lam)| / (k! psi'(lam)).  Pure power mechanisms give
    the lam-independent gamma family exactly.
    """
    c = float(mech.psi_prime(lam))
    if not c > 0.0:
        raise ValueError("psi'(lam) must be positive (lam above the largest root)")
    if float(mech.psi(lam)) < 0.0:
        raise ValueError("lam must lie above the largest root of psi")
    if (
        mech.drift == 0.0
        and mech.gaussian == 0.0
        and not mech.atoms
        and len(mech.powers) == 1
    ):
        gamma = mech.powers[0][1]
        return stable_offspring(gamma), c
    masses = [float(mech.psi(lam)) / (lam * c), 0.0]
    k = 2
    term = lam * mech.psi_abs_deriv(2, lam) / (2.0 * c)
    acc = masses[0]
    factorial = 2.0
    while k <= kmax:
        masses.append(term)
        acc += term
        if 1.0 - acc <= tail:
            break
        k += 1
        factorial *= k
        term = lam ** (k - 1) * mech.psi_abs_deriv(k, lam) / (factorial * c)
    residual = max(0.0, 1.0 - math.fsum(masses))
    if residual > tail and not any(c2 > 0.0 for c2, _ in mech.powers):
        raise ValueError("offspring tail did not meet the truncation threshold")
    return OffspringLaw(tuple(masses), residual=residual), c


def mu_from_rho(rho: AtomicLaw, lam: float, tail: float = 1e-12) -> InitialLaw:
    """Mixed-Poisson progenitor count: each mass point y contributes Poisson(lam*y)."""
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    terms = []
    for y, w in rho.atoms:
        m = lam * y
        row = [w * math.exp(-m)]
        k = 0
        while w - math.fsum(row) > tail * w and k < 100_000:
            row.append(row[-1] * m / (k + 1))
            k += 1
        terms.append(row)
    K = max(len(r) for r in terms)
    out = np.zeros(K)
    for row in terms:
        out[: len(row)] += row
    return InitialLaw(tuple(out), residual=max(0.0, 1.0 - float(out.sum())))
