"""Sector distributions, windowed sums and the convexity certificate.

For a distribution ``P(l)`` set ``f(l) = l P(l)`` and

    F_L(l) = sum_{k = l-L}^{l+L} f(k).

If ``sigma F_L(l) <= F_L(l+L) + F_L(l-L)`` with ``sigma > 2`` then
``G(l) = F_L(lL)`` is discretely convex with

    (sigma - 2) G(l) <= G(l+1) + G(l-1) - 2 G(l),

so ``G`` decreases at rate ``1/(sigma-1)`` up to its minimum and grows at
rate ``sigma-1`` after it. Windows never extend past the valid range (no
zero padding); sectors with negative index do not exist and contribute 0.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, warn_if_not_normalized

log = logging.getLogger(__name__)

REL_TOL = 1e-12
RESOLUTION = 1e-14


class CertificateError(ArithmeticError):
    """A certificate precondition or envelope failed; ``site`` names where."""

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


@dataclass
class DecayProfile:
    """Sector weights ``P(l)``, ``l = 0..len(P)-1``, and the trusted range.

    Parameters
    ----------
    P : array_like
    source : {'full', 'bogoliubov', 'oracle', 'external'}
    valid_max : int, optional
        Largest sector unaffected by the cutoff. Defaults to ``M - 4`` for
        Fock-space sources and to the last index for oracle profiles.
    deficit : float
        Mass missing from ``P`` (oracle truncation).
    """

    P: np.ndarray
    source: str = "full"
    valid_max: int = None
    deficit: float = 0.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.ndim != 1 or len(self.P) == 0:
            raise ValueError("P must be a non-empty 1D sequence")
        if np.any(self.P < 0):
            raise ValueError("P has negative entries")
        if self.source not in ("full", "bogoliubov", "oracle", "external"):
            raise ValueError(f"unknown profile source {self.source!r}")
        M = len(self.P) - 1
        if self.valid_max is None:
            self.valid_max = M if self.source == "oracle" else max(M - 4, 0)
        self.valid_max = check_int(self.valid_max, "valid_max", minimum=0, maximum=M)

    @property
    def M(self):
        return len(self.P) - 1

    @property
    def f(self):
        return np.arange(len(self.P)) * self.P

    @property
    def valid_range(self):
        return (0, self.valid_max)

    def total(self):
        return float(self.P.sum())


def sector_distribution(gs, source="full", margin=4):
    """``P(l) = ||chi^(l)||^2`` for a normalized ground state."""
    x = gs.vector if hasattr(gs, "vector") else gs
    P = x.sector_norms()
    warn_if_not_normalized(P.sum(), tol=1e-10, what="ground-state sector weights")
    return DecayProfile(P=P, source=source, valid_max=max(len(P) - 1 - margin, 0))


def oracle_profile(oracle):
    return DecayProfile(P=oracle.P, source="oracle", deficit=oracle.deficit)


def _window(profile, ell, L):
    if ell + L > profile.valid_max:
        raise ValueError(f"window of half-width {L} around l={ell} leaves the valid range "
                         f"[0, {profile.valid_max}]")
    lo = max(ell - L, 0)
    return float(profile.f[lo: ell + L + 1].sum())


def compute_FL(profile, L, ells=None):
    """``F_L(l)`` at ``ells`` (default: every ``l`` whose window fits).

    Returns ``(ells, values)``.
    """
    L = check_int(L, "L", minimum=0)
    if ells is None:
        ells = np.arange(0, profile.valid_max - L + 1)
    ells = np.asarray(ells, dtype=int)
    vals = np.array([_window(profile, int(l), L) for l in ells])
    return ells, vals


def window_monotone(profile, L, j=1):
    """True when ``F_{L+j}(l) >= F_L(l)`` wherever both windows fit."""
    ells, big = compute_FL(profile, L + j)
    _, small = compute_FL(profile, L, ells)
    return bool(np.all(big >= small * (1 - REL_TOL)))


@dataclass
class DifferenceReport:
    L: int
    sigma: float
    ells: np.ndarray
    ratios: np.ndarray

    @property
    def argmin(self):
        return int(self.ells[np.argmin(self.ratios)])

    def margins(self, sigma=None):
        """``F_L(l+L) + F_L(l-L) - sigma F_L(l)`` relative to ``F_L(l)``."""
        s = self.sigma if sigma is None else sigma
        return self.ratios - s


def verify_difference_inequality(profile, L, ell_range=None):
    """Largest ``sigma`` with ``sigma F_L(l) <= F_L(l+L) + F_L(l-L)`` on the range.

    The default range is ``[2L, valid_max - 2L]`` so that all three windows
    lie in ``[0, valid_max]``.
    """
    L = check_int(L, "L", minimum=1)
    lo, hi = (2 * L, profile.valid_max - 2 * L) if ell_range is None else ell_range
    if hi < lo:
        raise ValueError(f"no sector admits three windows of half-width {L} "
                         f"(valid range [0, {profile.valid_max}])")
    ells = np.arange(lo, hi + 1)
    _, mid = compute_FL(profile, L, ells)
    _, up = compute_FL(profile, L, ells + L)
    _, down = compute_FL(profile, L, ells - L)
    if np.any(mid <= 0):
        bad = int(ells[np.argmax(mid <= 0)])
        raise ZeroDivisionError(f"F_{L}({bad}) = 0: degenerate window")
    ratios = (up + down) / mid
    return DifferenceReport(L=L, sigma=float(ratios.min()), ells=ells, ratios=ratios)


def fl_bound_mu(profile, L, ell_range=None):
    """Smallest ratio of the four boundary terms to ``F_L``.

    ``mu(l) = [f(l+L+2) + f(l+L+1) + f(l-L-1) + f(l-L-2)] / F_L(l)``; the range
    defaults to the sectors for which ``l + L + 2`` is valid and
    ``l - L - 2 >= 0``.
    """
    L = check_int(L, "L", minimum=1)
    lo, hi = (L + 2, profile.valid_max - L - 2) if ell_range is None else ell_range
    if hi < lo:
        raise ValueError("range too short for the boundary terms")
    f = profile.f
    ells = np.arange(lo, hi + 1)
    _, F = compute_FL(profile, L, ells)
    num = f[ells + L + 2] + f[ells + L + 1] + f[ells - L - 1] + f[ells - L - 2]
    return float(np.min(num / F))


def G_sequence(profile, L):
    """``G(l) = F_L(lL)`` for ``l = 1..n`` with ``n = floor(valid_max / L) - 1``."""
    L = check_int(L, "L", minimum=1)
    n = profile.valid_max // L - 1
    if n < 1:
        raise ValueError(f"valid range too short for stride {L}")
    _, G = compute_FL(profile, L, L * np.arange(1, n + 1))
    return G


@dataclass
class DecayCertificate:
    """Verified envelopes for ``G`` and the induced bound ``P(k) <= C exp(-eps k)``.

    ``ell0`` is the (1-based) minimum location of ``G``; ``math.inf`` when
    ``G`` is still decreasing at the end of its range. ``decreasing_range``
    and ``growth_range`` are inclusive ``l`` ranges of ``G`` on which the two
    envelopes were checked; ``ell_range`` is the ``k`` range of the P-bound.
    """

    L: int
    sigma: float
    ell0: float
    G: np.ndarray
    decreasing_range: tuple
    growth_range: tuple
    C: float
    epsilon: float
    ell_range: tuple
    mu: float = None
    violations: int = 0
    verified: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "L": self.L,
            "sigma": self.sigma,
            "mu": self.mu,
            "ell0": "inf" if math.isinf(self.ell0) else int(self.ell0),
            "C": self.C,
            "epsilon": self.epsilon,
            "ell_range": list(self.ell_range),
            "decreasing_range": list(self.decreasing_range),
            "growth_range": list(self.growth_range),
            "violations": self.violations,
            "verified": self.verified,
            **self.extra,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _le(a, b):
    return a <= b + REL_TOL * max(abs(a), abs(b), 1e-300)


def check_second_difference(G, sigma):
    """Indices (1-based) where ``(sigma-2) G(l) <= G(l+1) + G(l-1) - 2 G(l)`` fails."""
    G = np.asarray(G, dtype=float)
    bad = []
    for l in range(2, len(G)):
        g0, gm, gp = G[l - 1], G[l - 2], G[l]
        if not _le(sigma * g0, gp + gm):
            bad.append(l)
    return bad


def _envelope_violations(G, sigma, ell0):
    n = len(G)
    r = sigma - 1.0
    dec_end = min(ell0, n) - 1 if not math.isinf(ell0) else n - 1
    bad = []
    for l in range(1, dec_end + 1):
        if not _le(G[l - 1], G[0] / r ** (l - 1)):
            bad.append(("decreasing", l))
    grow_start = int(ell0) + 1 if not math.isinf(ell0) else n + 1
    for l in range(grow_start, n + 1):
        for k in range(l, n + 1):
            if not _le(r ** (k - l) * G[l - 1], G[k - 1]):
                bad.append(("growth", l, k))
    return (1, dec_end), (grow_start, n), bad


def exponential_certificate(G, sigma, L=1, profile=None, mu=None):
    """Certify the two envelopes of a discretely convex ``G``.

    Parameters
    ----------
    G : array_like
        ``G(1), ..., G(n)``.
    sigma : float
        Must exceed 2; the second-difference inequality is verified at
        ``l = 2..n-1`` before anything is emitted.
    L : int
        Stride that produced ``G``; sets ``epsilon = ln(sigma - 1) / L``.
    profile : DecayProfile, optional
        When given, the P-envelope is checked pointwise too.

    Returns
    -------
    DecayCertificate

    Notes
    -----
    The decreasing envelope ``G(l) <= G(1) / (sigma-1)^(l-1)`` is certified
    on ``[1, l0 - 1]`` and the growth bound ``G(k) >= (sigma-1)^(k-l) G(l)``
    for ``l0 + 1 <= l <= k``; both need the step adjacent to ``l`` to lie on
    one side of the minimum, which fails at ``l0`` itself in general.
    """
    G = np.asarray(G, dtype=float)
    if not sigma > 2:
        raise CertificateError(f"sigma must exceed 2, got {sigma}")
    if len(G) < 3:
        raise CertificateError("need at least three values of G")
    if np.any(G < 0):
        raise CertificateError("G must be non-negative", site=int(np.argmax(G < 0)) + 1)
    bad = check_second_difference(G, sigma)
    if bad:
        raise CertificateError(f"second-difference inequality fails at l={bad[0]}", site=bad[0])
    n = len(G)
    i0 = int(np.argmin(G)) + 1
    ell0 = math.inf if i0 == n else i0
    dec, grow, viol = _envelope_violations(G, sigma, ell0)
    if viol:
        raise CertificateError(f"envelope violated at {viol[0]}", site=viol[0])
    r = sigma - 1.0
    eps = math.log(r) / L
    C = float(G[0] * r)
    k_end = dec[1] * L
    cert = DecayCertificate(L=L, sigma=float(sigma), ell0=ell0, G=G, decreasing_range=dec,
                            growth_range=grow, C=C, epsilon=eps, ell_range=(1, k_end), mu=mu)
    if profile is not None:
        cert.violations = len(p_envelope_violations(profile, cert))
        if cert.violations:
            raise CertificateError("P-envelope violated", site=p_envelope_violations(profile, cert)[0])
    cert.verified = True
    return cert


def p_envelope_violations(profile, cert):
    """Sectors ``k`` in the certified range with ``P(k) > C exp(-eps k)``."""
    lo, hi = cert.ell_range
    ks = np.arange(lo, min(hi, profile.M) + 1)
    bound = cert.C * np.exp(-cert.epsilon * ks)
    return [int(k) for k, p, b in zip(ks, profile.P[ks], bound) if not _le(p, b)]


def recheck_certificate(cert, profile):
    """Independent pass: rebuild ``G`` from ``P`` and re-verify every emitted bound."""
    L = cert.L
    f = np.arange(len(profile.P)) * profile.P
    n = len(cert.G)
    G = np.array([f[max(l * L - L, 0): l * L + L + 1].sum() for l in range(1, n + 1)])
    problems = []
    if not np.allclose(G, cert.G, rtol=1e-12, atol=0):
        problems.append("G does not match the profile")
    r = cert.sigma - 1
    a, b = cert.decreasing_range
    for l in range(a, b + 1):
        if G[l - 1] > G[0] * r ** (-(l - 1)) * (1 + 1e-10):
            problems.append(f"decreasing envelope at l={l}")
    a, b = cert.growth_range
    for l in range(a, b + 1):
        for k in range(l, b + 1):
            if G[k - 1] < r ** (k - l) * G[l - 1] * (1 - 1e-10):
                problems.append(f"growth bound at ({l}, {k})")
    lo, hi = cert.ell_range
    for k in range(lo, min(hi, profile.M) + 1):
        if profile.P[k] > cert.C * math.exp(-cert.epsilon * k) * (1 + 1e-10):
            problems.append(f"P-envelope at k={k}")
    return problems


def certify(profile, L_max=10, sigma_min=2.0):
    """Scan ``L = 1..L_max``; certify the smallest stride with ``sigma > sigma_min``.

    The smallest admissible stride gives the longest ``G`` sequence and so
    the widest certified range.

    Returns ``(certificate or None, table)`` where ``table`` lists
    ``(L, sigma)`` for every stride that fits the valid range.
    """
    table = []
    best = None
    for L in range(1, L_max + 1):
        try:
            rep = verify_difference_inequality(profile, L)
            G = G_sequence(profile, L)
        except (ValueError, ZeroDivisionError) as exc:
            table.append({"L": L, "sigma": None, "reason": str(exc)})
            continue
        table.append({"L": L, "sigma": rep.sigma})
        if rep.sigma > max(sigma_min, 2.0) and len(G) >= 3 and best is None:
            best = (L, rep, G)
    if best is None:
        return None, table
    L, rep, G = best
    try:
        mu = fl_bound_mu(profile, L)
    except ValueError:
        mu = None
    cert = exponential_certificate(G, rep.sigma, L=L, profile=profile, mu=mu)
    problems = recheck_certificate(cert, profile)
    if problems:
        raise CertificateError("independent recheck failed: " + "; ".join(problems))
    return cert, table


@dataclass
class DecayFit:
    C: float
    epsilon: float
    r2: float
    ells: np.ndarray

    def to_dict(self):
        return {"C": self.C, "epsilon": self.epsilon, "r2": self.r2, "ells": [int(l) for l in self.ells]}


def fit_decay_rate(profile, ell_range=(2, 8), parity="even", floor=RESOLUTION):
    """Least-squares line through ``(l, ln P(l))``; returns ``C, epsilon, R^2``.

    Sectors with ``P <= floor`` are at rounding level and make the fit
    meaningless, so they raise instead of being fitted.
    """
    lo, hi = ell_range
    ells = np.arange(lo, hi + 1)
    if parity == "even":
        ells = ells[ells % 2 == 0]
    elif parity == "odd":
        ells = ells[ells % 2 == 1]
    elif parity != "all":
        raise ValueError(f"parity must be even, odd or all, got {parity!r}")
    ells = ells[ells <= profile.M]
    if len(ells) < 3:
        raise ValueError(f"need at least 3 sectors to fit, got {len(ells)}")
    P = profile.P[ells]
    if np.any(P <= floor):
        raise ValueError(f"P(l) is below the resolution {floor:g} at l={int(ells[np.argmax(P <= floor)])}")
    y = np.log(P)
    slope, intercept = np.polyfit(ells.astype(float), y, 1)
    pred = intercept + slope * ells
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(C=float(np.exp(intercept)), epsilon=float(-slope), r2=r2, ells=ells)


def tail_energy_check(H, gs, cut):
    """Split ``chi`` at ``cut`` and inspect how the tail couples to the bulk.

    Returns a dict with ``empty`` (bool), the Rayleigh quotient of ``H - E`` on
    the tail, the ``K0`` part of that quotient and its lower bound
    ``tau (cut + 1)``, the coupling magnitudes through ``K2`` and ``K3`` and
    the part of ``<chi^>, H chi^<=>`` not explained by them.
    """
    basis = H.basis
    cut = check_int(cut, "cut", minimum=1)
    x = gs.vector.amplitudes
    tail_mask = basis.sector > cut
    hi = np.where(tail_mask, x, 0)
    lo = np.where(tail_mask, 0, x)
    norm2 = float(np.vdot(hi, hi).real)
    if norm2 == 0.0:
        return {"empty": True, "cut": cut}
    A = H.matrix
    E = gs.energy
    rq = float(np.vdot(hi, A @ hi).real / norm2 - E)
    k0 = float(np.vdot(hi, H.parts["K0"] @ hi).real / norm2)
    c2 = complex(np.vdot(hi, H.parts["K2"] @ lo))
    c3 = complex(np.vdot(hi, H.parts["K3"] @ lo))
    cross = complex(np.vdot(hi, A @ lo))
    report = {
        "empty": False,
        "cut": cut,
        "tail_norm2": norm2,
        "rayleigh_tail": rq,
        "k0_tail": k0,
        "k0_bound": None if H.tau is None else H.tau * (cut + 1),
        "coupling_K2": abs(c2),
        "coupling_K3": abs(c3),
        "unexplained_coupling": abs(cross - c2 - c3),
        # eigen-equation balance: <hi,(H-E)hi> = -<hi, H lo>
        "balance": abs(rq * norm2 + cross.real),
    }
    report["k0_ok"] = report["k0_bound"] is None or k0 >= report["k0_bound"] - 1e-10
    return report


def write_profile_csv(path, profile, L=None):
    """``ell,P,f,F_L`` with 12 significant digits; ``F_L`` is blank where the window does not fit."""
    with open(path, "w") as fh:
        fh.write("ell,P,f" + (",F_L" if L is not None else "") + "\n")
        for ell in range(len(profile.P)):
            row = [str(ell), f"{profile.P[ell]:.12g}", f"{profile.f[ell]:.12g}"]
            if L is not None:
                row.append(f"{_window(profile, ell, L):.12g}" if ell + L <= profile.valid_max else "")
            fh.write(",".join(row) + "\n")


def read_profile_csv(path, source="full", valid_max=None):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return DecayProfile(P=np.atleast_1d(data["P"]), source=source, valid_max=valid_max)


def write_svg(path, profile, cert=None, width=480, height=320):
    """Minimal log-scale plot of ``P(l)`` with the certified envelope."""
    ells = np.nonzero(profile.P > 0)[0]
    if len(ells) == 0:
        raise ValueError("nothing to plot")
    y = np.log10(profile.P[ells])
    ymin, ymax = float(y.min()) - 0.5, 0.5
    xmax = max(profile.M, 1)

    def px(l):
        return 40 + (width - 60) * l / xmax

    def py(v):
        return 20 + (height - 50) * (ymax - v) / (ymax - ymin)

    pts = " ".join(f"{px(l):.2f},{py(v):.2f}" for l, v in zip(ells, y))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<polyline fill="none" stroke="black" points="{pts}"/>']
    if cert is not None:
        ks = np.arange(cert.ell_range[0], min(cert.ell_range[1], profile.M) + 1)
        env = np.log10(cert.C) - cert.epsilon * ks / math.log(10)
        epts = " ".join(f"{px(k):.2f},{py(max(v, ymin)):.2f}" for k, v in zip(ks, env))
        parts.append(f'<polyline fill="none" stroke="red" stroke-dasharray="4" points="{epts}"/>')
    parts.append(f'<text x="40" y="{height - 10}" font-size="12">sector l (0..{profile.M}), log10 P</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
