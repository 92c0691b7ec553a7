"""Numerical kernel for continuous-state branching processes.

The central object is the Laplace-exponent flow ``u(a, theta)``, the
solution of ``du/da = -psi(u)`` from ``u(0, theta) = theta``, equivalently
of the integral identity ``int_{u(a,theta)}^{theta} dr / psi(r) = a``.
The solver integrates the ODE with an adaptive Runge-Kutta scheme, returns
the fixed points 0 and q analytically, verifies the integral-identity
residual afterwards, and falls back to root-finding on the identity when
the residual check fails.

Under the finite-extinction condition (1/psi integrable at infinity) the
monotone limit ``v(h) = lim_{theta -> inf} u(h, theta)`` satisfies
``int_{v(h)}^inf dr / psi(r) = h``.  It is computed twice, by root-finding
on the tail integral and by extrapolating the flow from large theta, and
the two values must agree to 1e-8: each method alone has a blind spot
(tail quadrature accuracy versus extrapolation order).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from .laws import AtomicLaw, BranchingMechanism, OffspringLaw

__all__ = ["CsbpKernel", "gw_laplace", "height_cdf", "FlowError"]


class FlowError(RuntimeError):
    """The flow solver could not certify its result."""


@dataclass
class CsbpKernel:
    """Flow, erasure scale and one-dimensional laws for one mechanism."""

    mech: BranchingMechanism
    rtol: float = 1e-10
    _q: Optional[float] = field(default=None, repr=False)
    _v_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 < self.rtol <= 1e-6:
            raise ValueError("tolerance must lie in (0, 1e-6]")
        if not self.mech.allows_deaths():
            raise ValueError("mechanism never takes positive values: no deaths")
        if not self.mech.is_conservative():
            raise ValueError("mechanism is not conservative")

    @property
    def q(self) -> float:
        if self._q is None:
            self._q = self.mech.largest_root()
        return self._q

    # -- the flow ------------------------------------------------------------

    def u(self, a: float, theta: float) -> float:
        """u(a, theta): the flow of -psi started at theta, after time a."""
        if a < 0.0 or theta < 0.0:
            raise ValueError("a and theta must be nonnegative")
        q = self.q
        if a == 0.0 or theta == 0.0 or theta == q:
            return theta
        psi = self.mech.psi
        sol = solve_ivp(
            lambda _t, y: -psi(y),
            (0.0, a),
            np.asarray([theta], dtype=float),
            method="RK45",
            rtol=1e-12,
            atol=1e-14 * max(1.0, theta),
            dense_output=False,
        )
        if not sol.success:
            raise FlowError(f"flow integration failed: {sol.message}")
        val = float(sol.y[0, -1])
        # the flow cannot cross the fixed point q (or 0)
        lo, hi = (q, theta) if theta > q else (theta, q)
        val = min(max(val, lo), hi)
        resid = self._identity_residual(a, theta, val)
        if resid is None or abs(resid) <= max(self.rtol, 1e-9) * (1.0 + a):
            return val
        return self._u_by_identity(a, theta)

    def _identity_residual(self, a: float, theta: float, u_val: float) -> Optional[float]:
        psi = self.mech.psi
        q = self.q
        lo, hi = min(u_val, theta), max(u_val, theta)
        if lo <= q * (1.0 + 1e-12) + 1e-300 and hi > q:
            return None  # integrand blows up at the fixed point: skip the check
        try:
            val, _err = quad(lambda r: 1.0 / psi(r), u_val, theta, limit=200)
        except Exception:
            return None
        return val - a

    def _u_by_identity(self, a: float, theta: float) -> float:
        """Solve int_u^theta dr/psi = a by bracketed root finding."""
        psi = self.mech.psi
        q = self.q

        def integral(u_val: float) -> float:
            val, _err = quad(lambda r: 1.0 / psi(r), u_val, theta, limit=200)
            return val

        if theta > q:
            hi = theta
            lo = theta
            while True:
                lo = max(q + (lo - q) * 0.5, q + 1e-300)
                if integral(lo) >= a:
                    break
                if lo - q < 1e-250:
                    return q  # converged onto the fixed point
            return float(brentq(lambda x: integral(x) - a, lo, hi, xtol=1e-15, rtol=8.9e-16))
        # theta < q: the flow increases toward q
        lo = theta
        hi = theta
        while True:
            hi = q - (q - hi) * 0.5
            if integral(hi) >= a:
                break
            if q - hi < 1e-250:
                return q
        return float(brentq(lambda x: integral(x) - a, lo, hi, xtol=1e-15, rtol=8.9e-16))

    def u_complex(self, a: float, z: complex) -> complex:
        """Analytic continuation of the flow in theta, for transform inversion.

        The mechanism's closed forms extend to the right half-plane with the
        principal branch; initial values here always satisfy Re z >= 0.
        """
        if a == 0.0:
            return complex(z)
        if z == 0:
            return 0.0j
        psi = self.mech.psi
        sol = solve_ivp(
            lambda _t, y: np.asarray([-psi(complex(y[0]))]),
            (0.0, a),
            np.asarray([complex(z)], dtype=complex),
            method="RK45",
            rtol=1e-11,
            atol=1e-13,
        )
        if not sol.success:
            raise FlowError(f"complex flow integration failed: {sol.message}")
        return complex(sol.y[0, -1])

    # -- erasure scale ---------------------------------------------------------

    def tail_integral(self, v_val: float) -> float:
        """int_v^inf dr / psi(r) (requires super-linear growth)."""
        if not self.mech.is_grey():
            raise ValueError("1/psi is not integrable at infinity")
        val, _err = quad(lambda r: 1.0 / self.mech.psi(r), v_val, np.inf, limit=200)
        return val

    def v(self, h: float) -> float:
        """Erasure scale: the theta -> inf limit of u(h, theta)."""
        if h <= 0.0:
            raise ValueError("h must be positive")
        if h in self._v_cache:
            return self._v_cache[h]
        if not self.mech.is_grey():
            raise ValueError("finite-time extinction fails: v is undefined")
        q = self.q
        # primary: root-find on the tail integral
        lo = q + 1.0
        while self.tail_integral(lo) < h:
            lo = q + (lo - q) * 0.5
            if lo - q < 1e-250:
                raise FlowError("tail integral never reaches h near the root")
        hi = lo
        while self.tail_integral(hi) > h:
            hi = q + (hi - q) * 2.0
        v_root = (
            lo
            if lo == hi
            else float(
                brentq(lambda x: self.tail_integral(x) - h, lo, hi, xtol=1e-15, rtol=8.9e-16)
            )
        )
        # cross-check: Aitken extrapolation of the flow from large theta
        thetas = [1e6, 4e6, 16e6]
        us = [self.u(h, t) for t in thetas]
        d1, d2 = us[1] - us[0], us[2] - us[1]
        if d2 == d1:
            v_flow = us[2]
        else:
            v_flow = us[2] - d2 * d2 / (d2 - d1)
        if abs(v_flow - v_root) > 1e-8 * max(1.0, abs(v_root)):
            raise FlowError(
                f"erasure-scale cross-check failed: quadrature {v_root} vs flow {v_flow}"
            )
        return v_root

    # -- simple laws -----------------------------------------------------------

    def grey_and_conservative(self) -> tuple[bool, bool]:
        grey = self.mech.is_grey()
        conservative = self.mech.is_conservative()
        # numeric probes backing the analytic shortcuts
        if grey:
            probe = quad(lambda r: 1.0 / self.mech.psi(r), self.q + 1.0, np.inf, limit=200)[0]
            grey = math.isfinite(probe)
        return grey, conservative

    def extinction_cdf(self, rho: AtomicLaw, a: float) -> float:
        """P(extinct by a) for initial mass law rho."""
        if a <= 0.0:
            raise ValueError("a must be positive")
        return rho.laplace(self.v(a))

    def csbp_mean(self, rho: AtomicLaw, a: float) -> float:
        b = self.mech.psi_prime_at_zero()
        return math.exp(-b * a) * rho.mean()

    def erased_forest_laplace(
        self,
        rho: AtomicLaw,
        lam: Optional[float],
        h: float,
        a: float,
        theta: float,
    ) -> float:
        """E exp(-theta * erased profile at level a) for the lam-forest.

        ``lam=None`` is the dense-forest sentinel: the inner scale is v(h).
        """
        s = self.reduced_parameter(lam, h)
        inner = s * (1.0 - math.exp(-theta))
        arg = self.u(a, inner)
        return math.fsum(w * math.exp(-y * arg) for y, w in rho.atoms)

    def reduced_parameter(self, lam: Optional[float], h: float) -> float:
        """The parameter of the erased forest: u(h, lam), or v(h) at the sentinel."""
        if h == 0.0:
            if lam is None:
                raise ValueError("h = 0 requires a finite lam")
            return lam
        if lam is None:
            return self.v(h)
        if lam <= self.q:
            raise ValueError("lam must exceed the largest root of psi")
        return self.u(h, lam)

    def profile_pmf(
        self,
        rho: AtomicLaw,
        lam: Optional[float],
        h: Optional[float],
        a: float,
        kmax: int,
    ) -> np.ndarray:
        """pmf of the (possibly erased) profile at level a, by pgf inversion.

        The pgf z -> sum_j w_j exp(-y_j u(a, s(1-z))) is evaluated on a
        power-of-two grid on the unit circle and inverted by FFT; ``s`` is
        the forest parameter after erasure (lam itself when h is None).
        """
        s = lam if h is None else self.reduced_parameter(lam, h)
        if s is None:
            raise ValueError("raw profile requires a finite lam")
        m = 64
        while m < 4 * (kmax + 1):
            m *= 2
        vals = np.empty(m, dtype=complex)
        for j in range(m // 2 + 1):
            z = cmath.exp(2j * math.pi * j / m)
            uu = self.u_complex(a, s * (1.0 - z))
            vals[j] = sum(w * cmath.exp(-y * uu) for y, w in rho.atoms)
        for j in range(m // 2 + 1, m):
            vals[j] = np.conj(vals[m - j])
        pmf = np.fft.ifft(vals).real
        pmf = np.clip(pmf[: kmax + 1], 0.0, None)
        return pmf


def gw_laplace(xi: OffspringLaw, c: float, a: float, theta: float) -> float:
    """Laplace transform of the level count of a single genealogical tree.

    Solves dw/da = c (pgf(w) - w) from w(0) = exp(-theta).
    """
    if not c > 0.0:
        raise ValueError("rate must be positive")
    if a < 0.0 or theta < 0.0:
        raise ValueError("a and theta must be nonnegative")
    if theta == 0.0 or a == 0.0:
        return math.exp(-theta)
    f = xi.pgf
    sol = solve_ivp(
        lambda _t, y: c * (f(min(max(y[0], 0.0), 1.0)) - min(max(y[0], 0.0), 1.0)),
        (0.0, a),
        [math.exp(-theta)],
        method="RK45",
        rtol=1e-12,
        atol=1e-14,
    )
    if not sol.success:
        raise FlowError(f"level-transform integration failed: {sol.message}")
    return float(min(max(sol.y[0, -1], 0.0), 1.0))


def height_cdf(xi: OffspringLaw, c: float, a: float) -> float:
    """P(total height <= a) for a single genealogical tree.

    The value w(a) solves int_0^w dr / (pgf(r) - r) = c a; it increases to
    the smallest fixed point of the pgf.
    """
    if not c > 0.0:
        raise ValueError("rate must be positive")
    if a < 0.0:
        raise ValueError("a must be nonnegative")
    if a == 0.0:
        return 0.0
    q = xi.smallest_fixed_point()
    if q == 0.0:
        return 0.0
    f = xi.pgf
    target = c * a

    def integral(w: float) -> float:
        val, _err = quad(lambda r: 1.0 / (f(r) - r), 0.0, w, limit=200)
        return val

    hi = q * 0.5
    while integral(hi) < target:
        hi = q - (q - hi) * 0.5
        if q - hi < 1e-14 * max(q, 1.0):
            return q
    lo = hi * 0.5
    while lo > 0.0 and integral(lo) > target:
        lo *= 0.5
    return float(brentq(lambda w: integral(w) - target, lo, hi, xtol=1e-15, rtol=8.9e-16))
