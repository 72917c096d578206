"""Angular basis families for view-dependent color expansion.

A pixel's color is modeled as ``k0 + sum_n k_n * H_n(v)`` where ``v`` is the
unit viewing direction.  The H_n come either from a small neural network (the
"learned" family, owned by :mod:`viewmpi.nn` / :mod:`viewmpi.mpi`) or from one
of the fixed families implemented here:

* ``sh`` / ``hsh`` / ``jh`` - harmonic ladders built from a complex azimuthal
  kernel and a first-degree radial polynomial, parameterized by a polar-domain
  lower bound ``a`` and a polynomial weight ``b``.  ``sh`` is the full-sphere
  special case (a=-1, b=0), ``hsh`` the hemisphere (a=0, b=0), ``jh`` a
  narrower default cap (a=cos 45deg, b=2).
* ``fs`` - sin/cos pairs in v_x and v_y with octave-spaced frequencies.
* ``ts`` - monomials in (v_x, v_y) in graded lexicographic order.

Frequency levels in the harmonic ladder run over m = 1, 2, 4, 8, ... (powers
of two), each level contributing four real-valued functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

FAMILIES = ("learned", "sh", "hsh", "jh", "fs", "ts")

# (a, b) pinned per family; jh entries are defaults and may be overridden.
_FAMILY_DOMAIN = {
    "sh": (-1.0, 0.0),
    "hsh": (0.0, 0.0),
    "jh": (1.0 / np.sqrt(2.0), 2.0),
}


class BasisDomainError(ValueError):
    """Viewing direction outside the family's polar domain (v_z <= a)."""


@dataclass(frozen=True)
class BasisConfig:
    """Which basis family to use and how many functions to keep.

    ``n = 0`` disables view dependence entirely (pure base color).
    """

    family: str
    n: int
    a: float = -1.0
    b: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.n < 0:
            raise ValueError("coefficient count must be >= 0")
        if self.family in ("sh", "hsh"):
            pinned = _FAMILY_DOMAIN[self.family]
            if (self.a, self.b) != pinned:
                raise ValueError(f"{self.family} requires (a, b) == {pinned}")
        if self.family == "jh":
            if not (-1.0 <= self.a < 1.0):
                raise ValueError("jh domain bound must lie in [-1, 1)")
            if self.b < 0:
                raise ValueError("jh polynomial weight must be >= 0")


def make_config(family: str, n: int, a: float | None = None, b: float | None = None) -> BasisConfig:
    """Build a BasisConfig with the family's canonical (a, b) defaults."""
    da, db = _FAMILY_DOMAIN.get(family, (-1.0, 0.0))
    return BasisConfig(family, n, da if a is None else a, db if b is None else b)


def legendre(n: int, x):
    """Legendre polynomial L_n(x) via the binomial-product closed form."""
    if n < 0:
        raise ValueError("degree must be >= 0")
    x = np.asarray(x, dtype=float)
    lo = (x - 1.0) / 2.0
    hi = (x + 1.0) / 2.0
    out = np.zeros_like(x)
    for i in range(n + 1):
        out = out + comb(n, i) ** 2 * lo**i * hi ** (n - i)
    return out if out.ndim else float(out)


def jacobi(n: int, b: float, x):
    """Jacobi polynomial J_n(x; b); reduces to legendre(n, x) at b = 0."""
    if n < 0:
        raise ValueError("degree must be >= 0")
    x = np.asarray(x, dtype=float)
    lo = (x - 1.0) / 2.0
    hi = (x + 1.0) / 2.0
    out = np.zeros_like(x)
    for i in range(n + 1):
        # comb generalized to the real upper argument n + b
        c = 1.0
        for j in range(i):
            c *= (n + b - j) / (i - j)
        out = out + comb(n, n - i) * c * lo**i * hi ** (n - i)
    return out if out.ndim else float(out)


def complex_kernel(a: float, m: int, v) -> tuple[float, float]:
    """Azimuthal kernel: Re/Im of ((v_x + i v_y) / (1 - a) * s)^m.

    ``s = sqrt((v_z - a) / (v_z + 1))`` shrinks the kernel toward the domain
    boundary; requires v_z > a.
    """
    if m < 1:
        raise ValueError("kernel order must be >= 1")
    vx, vy, vz = (float(c) for c in v)
    if vz <= a:
        raise BasisDomainError(f"v_z = {vz} outside domain (requires v_z > a = {a})")
    s = np.sqrt((vz - a) / (vz + 1.0))
    z = complex(vx, vy) * (s / (1.0 - a))
    k = z**m
    return k.real, k.imag


def radial_P(a: float, b: float, m: int, v) -> float:
    """First-degree radial factor (v_z - 1)/(1 - a) + (m + 1)/(b + 2m + 2)."""
    if m < 0:
        raise ValueError("order must be >= 0")
    if a == 1.0:
        raise ValueError("domain bound a = 1 is degenerate")
    vz = float(v[2])
    return (vz - 1.0) / (1.0 - a) + (m + 1.0) / (b + 2.0 * m + 2.0)


def _harmonic_ladder(a: float, b: float, n: int, vx, vy, vz, valid):
    """Stacked ladder terms [Re K, Im K, Re PK, Im PK] per level, shape (..., n)."""
    levels = -(-n // 4)  # each frequency level contributes 4 functions
    s2 = np.where(valid, (vz - a) / (vz + 1.0), 0.0)
    z = (vx + 1j * vy) * (np.sqrt(s2) / (1.0 - a))
    terms = []
    k = None
    for lev in range(levels):
        m = 2**lev
        # z**(2^lev) by repeated squaring of the previous level's kernel
        k = z.copy() if k is None else k * k
        p = (vz - 1.0) / (1.0 - a) + (m + 1.0) / (b + 2.0 * m + 2.0)
        pk = p * k
        terms.extend([k.real, k.imag, pk.real, pk.imag])
    out = np.stack(terms[:n], axis=-1)
    return np.where(valid[..., None], out, 0.0)


def _fourier_ladder(n: int, vx, vy):
    levels = -(-n // 4)
    terms = []
    for lev in range(levels):
        f = np.pi * 2.0 ** (lev - 1)  # 2^-1, 2^0, 2^1, ... octaves
        terms.extend([np.cos(f * vx), np.sin(f * vx), np.cos(f * vy), np.sin(f * vy)])
    return np.stack(terms[:n], axis=-1)


def _taylor_ladder(n: int, vx, vy):
    terms = []
    deg = 1
    while len(terms) < n:
        for i in range(deg, -1, -1):  # graded lex: x^deg, x^(deg-1) y, ..., y^deg
            terms.append(vx**i * vy ** (deg - i))
        deg += 1
    return np.stack(terms[:n], axis=-1)


def eval_fixed_basis_batch(cfg: BasisConfig, v: np.ndarray) -> np.ndarray:
    """Evaluate a fixed family on (..., 3) unit directions, shape (..., n).

    Directions outside the harmonic domain (v_z <= a) yield all-zero rows
    instead of raising, so training batches that graze the boundary survive.
    """
    if cfg.family == "learned":
        raise ValueError("learned basis is evaluated by the basis network, not here")
    v = np.asarray(v, dtype=float)
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    if cfg.n == 0:
        return np.zeros(v.shape[:-1] + (0,))
    if cfg.family == "fs":
        return _fourier_ladder(cfg.n, vx, vy)
    if cfg.family == "ts":
        return _taylor_ladder(cfg.n, vx, vy)
    valid = vz > cfg.a
    return _harmonic_ladder(cfg.a, cfg.b, cfg.n, vx, vy, vz, valid)


def eval_fixed_basis(cfg: BasisConfig, v) -> np.ndarray:
    """Single-direction evaluation; raises BasisDomainError outside the domain."""
    v = np.asarray(v, dtype=float)
    if cfg.family in ("sh", "hsh", "jh") and cfg.n > 0 and v[2] <= cfg.a:
        raise BasisDomainError(f"v_z = {v[2]} outside domain (requires v_z > a = {cfg.a})")
    return eval_fixed_basis_batch(cfg, v[None])[0]
