"""Reaction terms, structural assumptions and the truncated approximation.

Reactions are callables acting on arrays of shape ``(m, ...)`` (one leading
axis per species) and returning the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import BC, State

MASS_CLASSES = ("M", "Mprime")
GROWTH_CLASSES = ("QG", "SQG")


@dataclass(frozen=True)
class Reaction:
    """Base for reaction terms. Subclasses implement :meth:`rates`.

    ``a`` is the mass vector; ``mass_class`` is ``"M"`` (sum a_i f_i <= 0) or
    ``"Mprime"`` (sum a_i f_i <= C0 (1 + sum r_i)). ``growth_class`` is
    ``"QG"``, ``"SQG"`` or ``None`` when no polynomial growth bound is claimed.
    """

    def _validate_common(self) -> None:
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.m,) or np.any(a <= 0):
            raise ValueError(f"mass vector must have {self.m} positive entries, got {self.a}")
        if self.mass_class not in MASS_CLASSES:
            raise ValueError(f"mass_class must be one of {MASS_CLASSES}")
        if self.growth_class is not None and self.growth_class not in GROWTH_CLASSES:
            raise ValueError(f"growth_class must be one of {GROWTH_CLASSES} or None")

    @property
    def m(self) -> int:  # pragma: no cover - overridden
        raise NotImplementedError

    def rates(self, u: np.ndarray) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.rates(np.asarray(u, dtype=float))

    def mass_identity(self) -> bool | None:
        """Whether sum a_i f_i == 0 holds identically (``None``: unknown)."""
        return None

    @property
    def degree(self) -> float:
        """Largest total polynomial degree appearing in the rates."""
        raise NotImplementedError


@dataclass(frozen=True)
class SAlphaBetaGamma(Reaction):
    """alpha U1 + beta U2 <=> gamma U3 with unit rate constants."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    mass_class: str = "M"
    C0: float = 0.0
    growth_class: str | None = None
    growth_C: float | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 1:
            raise ValueError("alpha, beta, gamma must be >= 1")
        if self.growth_class is None and self.degree <= 2:
            object.__setattr__(self, "growth_class", "QG")
        if self.growth_C is None:
            object.__setattr__(self, "growth_C", 2.0 * max(self.alpha, self.beta, self.gamma))
        self._validate_common()

    m = 3

    @property
    def a(self):
        return (self.gamma, self.gamma, self.alpha + self.beta)

    @property
    def coefficients(self):
        return (self.alpha, self.beta, -self.gamma)

    @property
    def degree(self):
        return max(self.gamma, self.alpha + self.beta)

    def rates(self, u):
        R = u[2] ** self.gamma - u[0] ** self.alpha * u[1] ** self.beta
        return np.stack([self.alpha * R, self.beta * R, -self.gamma * R])

    def mass_identity(self):
        return float(np.dot(self.a, self.coefficients)) == 0.0

    def conservation_combos(self):
        return [(self.gamma, 0.0, self.alpha), (0.0, self.gamma, self.beta)]


@dataclass(frozen=True)
class SAlphaBetaGammaDelta(Reaction):
    """alpha U1 + beta U2 <=> gamma U3 + delta U4 (rates in the 4x4 system)."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    mass_class: str = "M"
    C0: float = 0.0
    growth_class: str | None = None
    growth_C: float | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 1:
            raise ValueError("alpha, beta, gamma, delta must be >= 1")
        if self.growth_class is None and self.degree <= 2:
            object.__setattr__(self, "growth_class", "QG")
        if self.growth_C is None:
            object.__setattr__(
                self, "growth_C", 2.0 * max(self.alpha, self.beta, self.gamma, self.delta)
            )
        self._validate_common()

    m = 4

    @property
    def a(self):
        return (self.gamma, self.delta, self.alpha, self.beta)

    @property
    def coefficients(self):
        return (self.alpha, self.beta, -self.gamma, -self.delta)

    @property
    def degree(self):
        return max(self.gamma + self.delta, self.alpha + self.beta)

    def rates(self, u):
        R = u[2] ** self.gamma * u[3] ** self.delta - u[0] ** self.alpha * u[1] ** self.beta
        return np.stack([self.alpha * R, self.beta * R, -self.gamma * R, -self.delta * R])

    def mass_identity(self):
        return float(np.dot(self.a, self.coefficients)) == 0.0

    def conservation_combos(self):
        return [(self.gamma, 0.0, self.alpha, 0.0), (0.0, self.delta, 0.0, self.beta)]


@dataclass(frozen=True)
class LotkaVolterra(Reaction):
    """f_i = (e_i + sum_j A_ij u_j) u_i with e <= 0 and <Au, u> <= 0."""

    e: tuple[float, ...] = (-1.0, -1.0)
    A: tuple[tuple[float, ...], ...] = ((0.0, -1.0), (1.0, 0.0))
    a: tuple[float, ...] | None = None
    mass_class: str = "M"
    C0: float = 0.0
    growth_class: str | None = "QG"
    growth_C: float | None = None
    epsilon: float = 0.0

    SYM_TOL = 1e-12

    def __post_init__(self):
        e = tuple(float(x) for x in self.e)
        A = tuple(tuple(float(x) for x in row) for row in self.A)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "A", A)
        m = len(e)
        if np.asarray(A).shape != (m, m):
            raise ValueError("A must be m x m")
        if self.a is None:
            object.__setattr__(self, "a", (1.0,) * m)
        if any(x > 0 for x in e):
            raise ValueError("Lotka-Volterra needs e_i <= 0")
        if self.sym_max_eigenvalue() > self.SYM_TOL:
            raise ValueError("symmetric part of A must be negative semidefinite")
        if self.growth_C is None:
            Aa = np.abs(np.asarray(A))
            object.__setattr__(
                self, "growth_C", float((np.abs(np.asarray(e)) + Aa.sum(axis=1)).max())
            )
        self._validate_common()

    @property
    def m(self):
        return len(self.e)

    @property
    def degree(self):
        return 2

    def sym_max_eigenvalue(self) -> float:
        A = np.asarray(self.A)
        return float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())

    def rates(self, u):
        A = np.asarray(self.A)
        e = np.asarray(self.e)
        growth = np.tensordot(A, u, axes=(1, 0)) + e.reshape((-1,) + (1,) * (u.ndim - 1))
        return growth * u

    def mass_identity(self):
        return None


@dataclass(frozen=True)
class CustomPolynomial(Reaction):
    """Sums of monomials: ``terms[i]`` is a list of ``(coef, exponents)``."""

    terms: tuple = ()
    a: tuple[float, ...] | None = None
    mass_class: str = "M"
    C0: float = 0.0
    growth_class: str | None = None
    growth_C: float | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        m = len(self.terms)
        if m == 0:
            raise ValueError("custom reaction needs at least one species")
        norm = []
        for i, species_terms in enumerate(self.terms):
            row = []
            for coef, exps in species_terms:
                exps = tuple(float(p) for p in exps)
                if len(exps) != m or any(p < 0 for p in exps):
                    raise ValueError(f"species {i}: exponents need {m} nonnegative entries")
                row.append((float(coef), exps))
            norm.append(tuple(row))
        object.__setattr__(self, "terms", tuple(norm))
        if self.a is None:
            object.__setattr__(self, "a", (1.0,) * m)
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        if self.growth_class is None and self.degree <= 2:
            object.__setattr__(self, "growth_class", "QG")
        if self.growth_C is None:
            C = max((sum(abs(c) for c, _ in row) for row in self.terms), default=0.0)
            object.__setattr__(self, "growth_C", float(C))
        self._validate_common()

    @property
    def m(self):
        return len(self.terms)

    @property
    def degree(self):
        return max((sum(p) for row in self.terms for _, p in row), default=0.0)

    def rates(self, u):
        out = np.zeros_like(u)
        for i, row in enumerate(self.terms):
            for coef, exps in row:
                mono = np.full(u.shape[1:], coef)
                for j, p in enumerate(exps):
                    if p:
                        mono = mono * (u[j] if p == 1 else u[j] ** p)
                out[i] += mono
        return out


@dataclass(frozen=True)
class TruncatedReaction:
    """``f_i / (1 + sum_j |f_j| / n)``; bounded by ``n`` in absolute value."""

    base: Reaction
    n: float

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("truncation level must be positive")

    def __getattr__(self, name):
        # delegate a, m, mass_class ... to the wrapped reaction
        if name == "base":
            raise AttributeError(name)
        return getattr(self.base, name)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        f = self.base(u)
        if math.isinf(self.n):
            return f
        return f / (1.0 + np.abs(f).sum(axis=0) / self.n)


def evaluate_reaction(spec: Reaction, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("reaction arguments must be nonnegative")
    return spec(r)


def truncate(spec: Reaction, u0: State | None, n: float):
    """Truncated evaluator and initial data ``min(u0, n)``."""
    fn = TruncatedReaction(spec, float(n))
    if u0 is None:
        return fn, None
    return fn, State(u0.t, u0.grid, np.minimum(u0.u, n))


@dataclass(frozen=True)
class SystemSpec:
    reaction: Reaction
    d: tuple[float, ...]
    mexp: tuple[float, ...] | None = None
    bc: BC | None = None

    def __post_init__(self):
        m = self.reaction.m
        d = tuple(float(x) for x in self.d)
        mexp = (1.0,) * m if self.mexp is None else tuple(float(x) for x in self.mexp)
        if len(d) != m or len(mexp) != m:
            raise ValueError(f"need {m} diffusion coefficients and exponents")
        # d_i = 0 is allowed: it gives the reaction-only reduction
        if any(x < 0 for x in d):
            raise ValueError("diffusion coefficients must be nonnegative")
        if any(x < 1 for x in mexp):
            raise ValueError("porous exponents must be >= 1")
        porous = any(x > 1 for x in mexp)
        bc = self.bc
        if bc is None:
            bc = BC.DIRICHLET if porous else BC.NEUMANN
        bc = BC.parse(bc)
        if porous and bc is not BC.DIRICHLET:
            raise ValueError("porous-medium mode requires Dirichlet boundaries")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mexp", mexp)
        object.__setattr__(self, "bc", bc)

    @property
    def m(self) -> int:
        return self.reaction.m

    @property
    def porous(self) -> bool:
        return any(x > 1 for x in self.mexp)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.reaction.a, dtype=float)


# -- assumption checks -------------------------------------------------------


@dataclass
class AssumptionReport:
    checks: dict[str, bool] = field(default_factory=dict)
    violations: list[tuple[str, tuple[float, ...], str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def record(self, name: str, ok: bool) -> None:
        self.checks[name] = self.checks.get(name, True) and bool(ok)

    def __str__(self) -> str:
        lines = [f"{k}: {'ok' if v else 'VIOLATED'}" for k, v in self.checks.items()]
        lines += [f"  {name} at r={pt}: {msg}" for name, pt, msg in self.violations[:20]]
        return "\n".join(lines + self.notes)


SAMPLE_RADII = (1.0, 10.0, 100.0)
REL_TOL = 1e-12


def verify_assumptions(
    spec: Reaction,
    sample_count: int = 1000,
    mexp: Sequence[float] | None = None,
    seed: int = 0,
    max_violations: int = 20,
) -> AssumptionReport:
    """Sample ``[0, R]^m`` for R in (1, 10, 100) and check (P), mass and growth classes."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    m = spec.m
    a = np.asarray(spec.a, dtype=float)
    mexp = np.ones(m) if mexp is None else np.asarray(mexp, dtype=float)
    rng = np.random.default_rng(seed)
    rep = AssumptionReport()

    def flag(name, mask, r, msg):
        for k in np.flatnonzero(mask)[: max_violations - len(rep.violations)]:
            rep.violations.append((name, tuple(float(x) for x in r[:, k]), msg))

    for R in SAMPLE_RADII:
        r = rng.uniform(0.0, R, size=(m, sample_count))
        f = spec(r)
        scale = 1.0 + np.abs(f).sum(axis=0)

        for i in range(m):
            ri = r.copy()
            ri[i] = 0.0
            fi = spec(ri)[i]
            bad = fi < -REL_TOL * (1.0 + np.abs(spec(ri)).sum(axis=0))
            rep.record("P", not bad.any())
            flag("P", bad, ri, f"f_{i + 1} < 0 with r_{i + 1} = 0")

        s = a @ f
        if spec.mass_class == "M":
            bad = s > REL_TOL * scale * a.max()
            rep.record("M", not bad.any())
            flag("M", bad, r, "sum a_i f_i > 0")
        else:
            bound = spec.C0 * (1.0 + r.sum(axis=0))
            bad = s > bound + REL_TOL * scale * a.max()
            rep.record("Mprime", not bad.any())
            flag("Mprime", bad, r, "sum a_i f_i > C0 (1 + sum r)")

        if spec.growth_class == "QG":
            bound = spec.growth_C * (1.0 + (r * r).sum(axis=0))
            bad = np.abs(f) > bound * (1 + REL_TOL)
            rep.record("QG", not bad.any())
            flag("QG", bad.any(axis=0), r, "|f_i| > C (1 + sum r_j^2)")
        elif spec.growth_class == "SQG":
            powers = (mexp + 1.0 - spec.epsilon)[:, None]
            bound = spec.growth_C * (1.0 + (r**powers).sum(axis=0))
            bad = np.abs(f) > bound * (1 + REL_TOL)
            rep.record("SQG", not bad.any())
            flag("SQG", bad.any(axis=0), r, "|f_i| > C (1 + sum r_j^(m_j+1-eps))")

    ident = spec.mass_identity()
    if ident is not None:
        rep.record("mass_identity", ident)
    if isinstance(spec, LotkaVolterra):
        lam = spec.sym_max_eigenvalue()
        rep.record("LV_negative_semidefinite", lam <= LotkaVolterra.SYM_TOL)
        rep.record("LV_e_nonpositive", all(x <= 0 for x in spec.e))
        rep.notes.append(f"max eigenvalue of (A + A^T)/2 = {lam:.3e}")
    if spec.growth_class is None:
        rep.notes.append(f"no growth class declared (degree {spec.degree:g})")
    return rep


# -- catalogue ---------------------------------------------------------------


def lotka_volterra_skew() -> LotkaVolterra:
    """e = (-1, -1), A = [[0, -1], [1, 0]]: sum f_i = -(u1 + u2)."""
    return LotkaVolterra(e=(-1.0, -1.0), A=((0.0, -1.0), (1.0, 0.0)))


def builtin(name: str) -> Reaction:
    """Named systems used by the test matrix, e.g. ``"S112"`` or ``"S1111"``."""
    key = name.upper().replace("_", "")
    if key in ("LV", "LVSKEW", "LOTKAVOLTERRA"):
        return lotka_volterra_skew()
    if key.startswith("S") and key[1:].isdigit():
        digits = [float(c) for c in key[1:]]
        if len(digits) == 3:
            return SAlphaBetaGamma(*digits)
        if len(digits) == 4:
            return SAlphaBetaGammaDelta(*digits)
    raise ValueError(f"unknown built-in system {name!r}")


def conservation_combos(spec: Reaction) -> list[tuple[float, ...]]:
    combos = getattr(spec, "conservation_combos", None)
    return list(combos()) if combos else []
