"""Quasi-periodic material model ``a(x, y)`` for the five coefficient families.

Each phase carries isotropic micro values. The macro dependence is given per
family as ``scale * psi(x)`` or a constant, and combined with the micro value
either multiplicatively (``product``), additively (``sum``) or through a
user-supplied function (``general``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
import sympy

from .mesh import INCLUSION, Circle, micro_tags

FAMILIES = ("E", "nu", "k", "g", "alpha", "beta")
WEIGHTED = ("E", "k", "g", "alpha", "beta")

PSI_CATALOG = {
    "constant": "1",
    "example1_product": "5 + sin(4*pi*x1) + sin(4*pi*x2)",
    "example1_sum": "(x1 - 1/2)**2*(x2 - 1/2)**2",
    "x3": "x3",
    "one_plus_x3": "1 + x3",
}

_X = sympy.symbols("x1 x2 x3", real=True)


class EllipticityError(ValueError):
    pass


class WeightFunction:
    """Scalar macro weight ``psi(x)`` with its analytic gradient.

    ``spec`` is a catalog tag or an expression in ``x1, x2, x3``.
    """

    def __init__(self, spec: str | float = "constant"):
        self.spec = str(spec)
        text = PSI_CATALOG.get(self.spec, self.spec)
        try:
            expr = sympy.sympify(text, locals=dict(zip(("x1", "x2", "x3"), _X)))
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ValueError(f"cannot parse weight function {spec!r}") from exc
        stray = expr.free_symbols - set(_X)
        if stray:
            raise ValueError(f"weight function {spec!r} uses unknown symbols {stray}")
        self.expr = expr
        self._f = sympy.lambdify(_X, expr, "numpy")
        self._df = [sympy.lambdify(_X, sympy.diff(expr, s), "numpy") for s in _X]

    def __repr__(self):
        return f"WeightFunction({self.spec!r})"

    def __eq__(self, other):
        return isinstance(other, WeightFunction) and self.expr == other.expr

    def __hash__(self):
        return hash(str(self.expr))

    @staticmethod
    def _coords(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [x[:, i] if i < x.shape[1] else np.zeros(len(x)) for i in range(3)]
        return cols, len(x)

    def __call__(self, x) -> np.ndarray:
        cols, m = self._coords(x)
        return np.broadcast_to(np.asarray(self._f(*cols), dtype=float), (m,)).copy()

    def gradient(self, x, dim: int = 2) -> np.ndarray:
        cols, m = self._coords(x)
        out = np.empty((m, dim))
        for i in range(dim):
            out[:, i] = np.broadcast_to(np.asarray(self._df[i](*cols), dtype=float), (m,))
        return out

    @property
    def is_constant(self) -> bool:
        return not (self.expr.free_symbols & set(_X))


@dataclass(frozen=True)
class Phase:
    E: float
    nu: float
    k: float
    g: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in WEIGHTED:
            if getattr(self, name) < 0:
                raise ValueError(f"phase value {name} must be nonnegative")


@dataclass(frozen=True)
class MacroFactor:
    """Macro part ``a~(x) = scale * psi(x)`` if ``weighted`` else ``scale``."""

    scale: float = 1.0
    weighted: bool = True


@dataclass(frozen=True)
class CoefficientBundle:
    """Coefficient tensors at one or more points (leading axis = points)."""

    k: np.ndarray
    g: np.ndarray
    D: np.ndarray
    A: np.ndarray  # thermal expansion alpha_kl
    B: np.ndarray  # moisture expansion beta_kl

    def __getitem__(self, idx):
        return CoefficientBundle(self.k[idx], self.g[idx], self.D[idx], self.A[idx], self.B[idx])

    @property
    def Dalpha(self) -> np.ndarray:
        return np.einsum("...ijkl,...kl->...ij", self.D, self.A)

    @property
    def Dbeta(self) -> np.ndarray:
        return np.einsum("...ijkl,...kl->...ij", self.D, self.B)


def isotropic_elasticity(E, nu, dim: int = 2) -> np.ndarray:
    """Isotropic ``D_ijkl`` from Lame constants (plane strain in 2D)."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    nu = np.broadcast_to(np.asarray(nu, dtype=float), E.shape)
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    d = np.eye(dim)
    dd = np.einsum("ij,kl->ijkl", d, d)
    sym = np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)
    return lam[:, None, None, None, None] * dd + mu[:, None, None, None, None] * sym


def voigt(D: np.ndarray) -> np.ndarray:
    """Voigt matrix of 2D elasticity tensors ``(..., 2, 2, 2, 2) -> (..., 3, 3)``."""
    pairs = [(0, 0), (1, 1), (0, 1)]
    out = np.empty(D.shape[:-4] + (3, 3))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            out[..., a, b] = D[..., i, j, k, l]
    return out


def _check_phase_scalars(s: Mapping[str, np.ndarray], where: str = ""):
    bad = []
    for name in ("E", "k", "g"):
        if np.any(s[name] <= 0):
            bad.append(f"{name} <= 0")
    if np.any((s["nu"] <= -1) | (s["nu"] >= 0.5)):
        bad.append("nu outside (-1, 0.5)")
    if bad:
        raise EllipticityError(f"coefficients lose ellipticity{where}: {', '.join(bad)}")


@dataclass(frozen=True)
class MaterialModel:
    mode: str
    matrix: Phase
    inclusion_phase: Phase
    psi: WeightFunction = field(default_factory=WeightFunction)
    macro: Mapping[str, MacroFactor] = field(default_factory=dict)
    geometry: Circle | None = None
    combine: Callable | None = None  # general mode: combine(family, macro, micro)
    name: str = ""

    def __post_init__(self):
        if self.mode not in ("product", "sum", "general"):
            raise ValueError(f"unknown material mode {self.mode!r}")
        if self.mode == "general" and self.combine is None:
            raise ValueError("general mode needs a combine function")
        unknown = set(self.macro) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown coefficient families {sorted(unknown)}")

    def factor(self, family: str) -> MacroFactor:
        if family in self.macro:
            return self.macro[family]
        if self.mode == "product":
            return MacroFactor(1.0, family != "nu")
        return MacroFactor(0.0, False)

    def micro_values(self, tags: np.ndarray) -> dict[str, np.ndarray]:
        tags = np.asarray(tags)
        inc = tags == INCLUSION
        return {
            f: np.where(inc, getattr(self.inclusion_phase, f), getattr(self.matrix, f))
            for f in FAMILIES
        }

    def macro_values(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = np.atleast_2d(x)
        psi = self.psi(x)
        out = {}
        for f in FAMILIES:
            fac = self.factor(f)
            out[f] = fac.scale * psi if fac.weighted else np.full(len(x), fac.scale)
        return out

    def scalars(self, x: np.ndarray, tags: np.ndarray) -> dict[str, np.ndarray]:
        """Per-point scalar values of all families; ``x`` broadcasts against tags."""
        tags = np.atleast_1d(tags)
        x = np.atleast_2d(x)
        if len(x) == 1 and len(tags) > 1:
            x = np.repeat(x, len(tags), axis=0)
        macro = self.macro_values(x)
        micro = self.micro_values(tags)
        if self.mode == "product":
            return {f: macro[f] * micro[f] for f in FAMILIES}
        if self.mode == "sum":
            return {f: macro[f] + micro[f] for f in FAMILIES}
        return {f: np.asarray(self.combine(f, macro[f], micro[f]), dtype=float) for f in FAMILIES}

    def bundle(self, x: np.ndarray, tags: np.ndarray, check: bool = True) -> CoefficientBundle:
        s = self.scalars(x, tags)
        if check:
            _check_phase_scalars(s)
        n = len(s["k"])
        eye = np.broadcast_to(np.eye(2), (n, 2, 2))
        return CoefficientBundle(
            k=s["k"][:, None, None] * eye,
            g=s["g"][:, None, None] * eye,
            D=isotropic_elasticity(s["E"], s["nu"]),
            A=s["alpha"][:, None, None] * eye,
            B=s["beta"][:, None, None] * eye,
        )

    def with_psi(self, psi) -> "MaterialModel":
        return replace(self, psi=psi if isinstance(psi, WeightFunction) else WeightFunction(psi))

    @cached_property
    def separable(self) -> bool:
        """True when ``a(x, y) = omega(x) a*(y)`` holds for every family."""
        if self.mode != "product" or self.factor("nu").weighted:
            return False
        return all(self.factor(f).weighted for f in WEIGHTED)

    def separated(self) -> tuple[WeightFunction, "MaterialModel"]:
        """Split into the weight ``omega`` and an x-independent star model."""
        if not self.separable:
            raise ValueError("material model is not scale-separated")
        star = {f: MacroFactor(self.factor(f).scale, False) for f in FAMILIES}
        star_model = replace(self, psi=WeightFunction("constant"), macro=star, name=self.name + "*")
        return self.psi, star_model


def evaluate(model: MaterialModel, x, y) -> CoefficientBundle:
    """Coefficient bundle at a single macro point ``x`` and micro point ``y``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError(f"micro point {y} outside the unit cell")
    tags = micro_tags(y, model.geometry)
    return model.bundle(np.atleast_2d(x), tags)[0]


def validate_assumptions(model: MaterialModel, x_samples, y_samples) -> dict:
    """Minimum eigenvalues and symmetry defects over all sample pairs.

    Never raises on loss of ellipticity; the caller inspects the report.
    """
    xs = np.atleast_2d(np.asarray(x_samples, dtype=float))
    ys = np.atleast_2d(np.asarray(y_samples, dtype=float))
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("sample sets must be nonempty")
    X = np.repeat(xs, len(ys), axis=0)
    tags = np.tile(micro_tags(ys, model.geometry), len(xs))
    b = model.bundle(X, tags, check=False)
    report = {}
    sym = 0.0
    for name, t in (("k", b.k), ("g", b.g), ("alpha", b.A), ("beta", b.B)):
        report[name] = float(np.linalg.eigvalsh(0.5 * (t + t.swapaxes(-1, -2))).min())
        sym = max(sym, float(np.abs(t - t.swapaxes(-1, -2)).max()))
    V = voigt(b.D)
    report["D"] = float(np.linalg.eigvalsh(0.5 * (V + V.swapaxes(-1, -2))).min())
    sym = max(sym, tensor4_symmetry_defect(b.D))
    report["symmetry_defect"] = sym
    report["elliptic"] = all(report[f] > 0 for f in ("k", "g", "alpha", "beta", "D"))
    return report


def tensor4_symmetry_defect(D: np.ndarray) -> float:
    minor = np.abs(D - D.swapaxes(-1, -2)).max()
    minor2 = np.abs(D - D.swapaxes(-3, -4)).max()
    major = np.abs(D - np.swapaxes(np.swapaxes(D, -4, -2), -3, -1)).max()
    return float(max(minor, minor2, major))


PHASES = dict(
    matrix=Phase(E=10.0, nu=0.30, k=100.0, g=1.0, alpha=10.0, beta=1.0),
    inclusion_phase=Phase(E=1.0, nu=0.25, k=1.0, g=0.02, alpha=0.1, beta=0.02),
)


def product_composite(psi="example1_product", geometry: Circle | None = None) -> MaterialModel:
    """Scale-separated two-phase model with every family weighted by ``psi``."""
    macro = {f: MacroFactor(1.0, True) for f in WEIGHTED}
    macro["nu"] = MacroFactor(1.0, False)
    return MaterialModel(
        mode="product", psi=WeightFunction(psi), macro=macro, geometry=geometry,
        name="product", **PHASES,
    )


def sum_composite(psi="example1_sum", geometry: Circle | None = None) -> MaterialModel:
    """Scale-coupled two-phase model ``a~(x) + a^(y)``."""
    macro = {
        "E": MacroFactor(0.5, True),
        "nu": MacroFactor(0.0, False),
        "k": MacroFactor(0.005, True),
        "g": MacroFactor(0.01, True),
        "alpha": MacroFactor(0.005, True),
        "beta": MacroFactor(0.01, True),
    }
    return MaterialModel(
        mode="sum", psi=WeightFunction(psi), macro=macro, geometry=geometry,
        name="sum", **PHASES,
    )
