"""Compression operators, their error-bound constants, and bit-cost models.

Three operator classes are supported, distinguished by the bound their
compression error obeys:

* ``relative``        -- E||C(x)/r - x||^2 <= (1 - psi) ||x||^2
* ``global_absolute`` -- E||C(x) - x||_p^2 <= C for every x
* ``local_absolute``  -- ||C(x) - x||_p <= 1 - phi_c whenever ||x||_p <= 1

Relative-class specs also carry the derived constant
C = 2 r^2 (1 - psi) + 2 (1 - r)^2 bounding E||C(x) - x||^2 / ||x||^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = (
    "identity",
    "norm_sign",
    "uniform_quantize",
    "one_bit",
    "random_sparsify",
    "random_quantize",
)

RELATIVE = "relative"
GLOBAL_ABSOLUTE = "global_absolute"
LOCAL_ABSOLUTE = "local_absolute"

# integer codes shared with the iteration kernels
KIND_CODES = {
    "identity": 0,
    "norm_sign": 1,
    "uniform_quantize": 2,
    "one_bit": 3,
    "random_sparsify": 4,  # top mode; random mode is 5
    "random_quantize": 6,
}


class CompressorError(ValueError):
    pass


def derived_relative_cap(r: float, psi: float) -> float:
    """Absolute-error constant implied by a relative-class (r, psi) pair."""
    return 2.0 * r * r * (1.0 - psi) + 2.0 * (1.0 - r) ** 2


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    d: int
    assumption_class: str
    # operator parameters
    delta: float = 0.0          # uniform_quantize grid step
    keep_k: int = 0             # random_sparsify kept coordinates
    levels: int = 0             # random_quantize grid size
    sparsify_mode: str = "top"  # "top" | "random"
    rescale: bool = False       # random_sparsify d/k rescaling
    p_norm: float = math.inf    # norm for the absolute classes
    # error-bound constants
    r: float = 1.0
    psi: float = 1.0
    cap_c: float = 0.0
    phi_c: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CompressorError(f"unknown compressor kind {self.kind!r}")
        if self.d < 1:
            raise CompressorError("dimension must be positive")
        if self.assumption_class == RELATIVE:
            if self.r <= 0 or not 0.0 < self.psi <= 1.0:
                raise CompressorError(
                    f"relative class needs r > 0 and psi in (0, 1], got "
                    f"r={self.r}, psi={self.psi}")
            want = derived_relative_cap(self.r, self.psi)
            if not math.isclose(self.cap_c, want, rel_tol=1e-12, abs_tol=1e-12):
                raise CompressorError(
                    f"stored cap_c={self.cap_c} != 2r^2(1-psi)+2(1-r)^2={want}")
        elif self.assumption_class == GLOBAL_ABSOLUTE:
            if self.cap_c < 0:
                raise CompressorError("global absolute class needs cap_c >= 0")
        elif self.assumption_class == LOCAL_ABSOLUTE:
            if not 0.0 < self.phi_c <= 1.0:
                raise CompressorError("local absolute class needs phi_c in (0, 1]")
        else:
            raise CompressorError(
                f"unknown assumption class {self.assumption_class!r}")

    @property
    def kind_code(self) -> int:
        if self.kind == "random_sparsify" and self.sparsify_mode == "random":
            return 5
        return KIND_CODES[self.kind]

    @property
    def is_deterministic(self) -> bool:
        return self.kind_code not in (5, 6)

    def kernel_params(self) -> tuple[float, float, int]:
        """(float param, rescale factor, int param) consumed by kernels."""
        if self.kind == "uniform_quantize":
            return self.delta, 1.0, 0
        if self.kind == "random_sparsify":
            rs = self.d / self.keep_k if self.rescale else 1.0
            return 0.0, rs, self.keep_k
        if self.kind == "random_quantize":
            return 0.0, 1.0, self.levels
        return 0.0, 1.0, 0

    def describe(self) -> str:
        bits = [self.kind]
        if self.kind == "uniform_quantize":
            bits.append(f"delta={self.delta}")
        if self.kind == "random_sparsify":
            bits.append(f"k={self.keep_k}/{self.d} ({self.sparsify_mode})")
        if self.kind == "random_quantize":
            bits.append(f"levels={self.levels}")
        return " ".join(bits)


def make_compressor(kind: str, d: int, *, delta: float = 2.0, keep_k: int = 0,
                    levels: int = 0, sparsify_mode: str = "top",
                    rescale: bool = False, p_norm: float = math.inf,
                    r: float | None = None, psi: float | None = None,
                    cap_c: float | None = None,
                    phi_c: float | None = None) -> CompressorSpec:
    """Build a spec with the standard constants for each operator.

    Explicit ``r``/``psi`` (relative class), ``cap_c`` (global absolute) or
    ``phi_c`` (local absolute) override the defaults; the derived relative
    constant C is always recomputed from (r, psi).
    """
    if kind == "identity":
        rr, pp = 1.0, 1.0
        return CompressorSpec(kind, d, RELATIVE, r=rr, psi=pp,
                              cap_c=derived_relative_cap(rr, pp))
    if kind == "norm_sign":
        rr = d / 2.0 if r is None else r
        pp = 1.0 / d**2 if psi is None else psi
        return CompressorSpec(kind, d, RELATIVE, r=rr, psi=pp,
                              cap_c=derived_relative_cap(rr, pp))
    if kind == "random_sparsify":
        if not 1 <= keep_k <= d:
            raise CompressorError(f"keep_k={keep_k} outside [1, {d}]")
        if sparsify_mode not in ("top", "random"):
            raise CompressorError(f"bad sparsify_mode {sparsify_mode!r}")
        rr = (d / keep_k if rescale else 1.0) if r is None else r
        pp = keep_k / d if psi is None else psi
        return CompressorSpec(kind, d, RELATIVE, keep_k=keep_k,
                              sparsify_mode=sparsify_mode, rescale=rescale,
                              r=rr, psi=pp, cap_c=derived_relative_cap(rr, pp))
    if kind == "random_quantize":
        if levels < 2:
            raise CompressorError("random_quantize needs levels >= 2")
        if (levels - 1) ** 2 <= d and psi is None:
            raise CompressorError(
                f"random_quantize needs (levels-1)^2 > d for a valid psi; "
                f"got levels={levels}, d={d}")
        rr = 1.0 if r is None else r
        pp = 1.0 - d / (levels - 1) ** 2 if psi is None else psi
        return CompressorSpec(kind, d, RELATIVE, levels=levels, r=rr, psi=pp,
                              cap_c=derived_relative_cap(rr, pp))
    if kind == "uniform_quantize":
        if delta <= 0:
            raise CompressorError("uniform_quantize needs delta > 0")
        cc = 0.25 * delta * delta if cap_c is None else cap_c
        return CompressorSpec(kind, d, GLOBAL_ABSOLUTE, delta=delta,
                              p_norm=p_norm, cap_c=cc)
    if kind == "one_bit":
        pc = 0.5 if phi_c is None else phi_c
        return CompressorSpec(kind, d, LOCAL_ABSOLUTE, p_norm=p_norm, phi_c=pc)
    raise CompressorError(f"unknown compressor kind {kind!r}")


def spec_from_config(cfg: dict, d: int) -> CompressorSpec:
    """Parse a config mapping with keys kind/delta/keep_k/levels/p_norm plus
    optional overrides r/psi/cap_c/phi_c."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind is None:
        raise CompressorError("compressor config needs a 'kind' key")
    p = cfg.pop("p_norm", "inf")
    p_norm = math.inf if p in ("inf", None) else float(p)
    known = {"delta", "keep_k", "levels", "sparsify_mode", "rescale",
             "r", "psi", "cap_c", "phi_c"}
    bad = set(cfg) - known
    if bad:
        raise CompressorError(f"unknown compressor config keys: {sorted(bad)}")
    return make_compressor(kind, d, p_norm=p_norm, **cfg)


def _sign_pm(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    return np.where(x >= 0.0, 1.0, -1.0)


def compress(spec: CompressorSpec, x: np.ndarray,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the operator to one vector; rng is consumed only by random kinds."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise CompressorError("compress input has non-finite entries")
    kind = spec.kind
    if kind == "identity":
        return x.copy()
    if kind == "norm_sign":
        a = float(np.max(np.abs(x))) if x.size else 0.0
        if a == 0.0:
            return np.zeros_like(x)
        return (0.5 * a) * _sign_pm(x)
    if kind == "uniform_quantize":
        return spec.delta * np.floor(x / spec.delta + 0.5)
    if kind == "one_bit":
        return np.where(x >= 0.0, 0.5, -0.5)
    if kind == "random_sparsify":
        k = spec.keep_k
        if spec.sparsify_mode == "top":
            idx = np.argsort(-np.abs(x), kind="stable")[:k]
        else:
            if rng is None:
                raise CompressorError("random sparsify needs an rng")
            idx = rng.choice(x.size, size=k, replace=False)
        out = np.zeros_like(x)
        out[idx] = x[idx] * (spec.d / k if spec.rescale else 1.0)
        return out
    if kind == "random_quantize":
        if rng is None:
            raise CompressorError("random quantize needs an rng")
        a = float(np.max(np.abs(x)))
        if a == 0.0:
            return np.zeros_like(x)
        h = 2.0 * a / (spec.levels - 1)
        t = (x + a) / h
        lo = np.floor(t)
        up = rng.random(x.shape) < (t - lo)
        return (lo + up) * h - a
    raise CompressorError(f"unknown compressor kind {kind!r}")


@dataclass(frozen=True)
class BitCostModel:
    """Payload accounting: bits_scalar per full-precision real, bits_int per
    transmitted small integer."""

    bits_scalar: int = 64
    bits_int: int = 4

    def __post_init__(self):
        if self.bits_scalar < 1 or self.bits_int < 1:
            raise CompressorError("bit widths must be >= 1")


def bit_cost(spec: CompressorSpec, model: BitCostModel, d: int) -> int:
    """Bits to transmit one compressed d-vector (payload only, no headers)."""
    if d < 1:
        raise CompressorError("d must be >= 1")
    kind = spec.kind
    if kind == "norm_sign":
        return 2 * d + model.bits_scalar
    if kind == "uniform_quantize":
        return d * model.bits_int
    if kind == "one_bit":
        return d
    if kind == "identity":
        return d * model.bits_scalar
    if kind == "random_sparsify":
        # value plus index per kept coordinate
        return spec.keep_k * (model.bits_scalar + max(1, math.ceil(math.log2(d))))
    if kind == "random_quantize":
        # per-entry level plus the shared scale scalar
        return d * max(1, math.ceil(math.log2(spec.levels))) + model.bits_scalar
    raise CompressorError(f"unknown compressor kind {kind!r}")


@dataclass
class VerifyReport:
    spec: CompressorSpec
    trials: int
    max_observed_ratio: float
    bound: float
    passed: bool
    violations: list = field(default_factory=list)

    def worst_case(self):
        return self.violations[0] if self.violations else None


def _probe_inputs(trials: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal probes plus adversarial rows: spike, constant, tiny."""
    xs = rng.standard_normal((trials, d))
    if trials >= 4:
        xs[0] = 0.0
        xs[0, 0] = 3.0                      # single spike
        xs[1] = 1.0                         # constant
        xs[2] = 1e-12 * rng.standard_normal(d)  # tiny norm
        xs[3, : d // 2 or 1] = 0.0          # half-sparse
    return xs


def _p_norm(v: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(v)))
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


def verify_assumption(spec: CompressorSpec, trials: int, d: int,
                      rng: np.random.Generator,
                      inner: int = 1000, tol: float = 0.05) -> VerifyReport:
    """Empirically check the class bound on random plus adversarial inputs.

    Deterministic operators must satisfy the bound on every draw (tolerance
    1e-9 for rounding only); randomized ones are checked through the sample
    mean over ``inner`` draws against (1 - psi) * (1 + tol).
    """
    if trials < 100:
        raise CompressorError("need at least 100 trials")
    violations = []
    worst = 0.0

    if spec.assumption_class == RELATIVE:
        deterministic = spec.is_deterministic
        n_x = trials if deterministic else max(8, trials // 100)
        xs = _probe_inputs(n_x, d, rng)
        bound = 1.0 - spec.psi
        slack = 1e-9 if deterministic else tol
        for x in xs:
            nx2 = float(x @ x)
            if nx2 == 0.0:
                continue
            if deterministic:
                err = compress(spec, x) / spec.r - x
                ratio = float(err @ err) / nx2
            else:
                acc = 0.0
                for _ in range(inner):
                    err = compress(spec, x, rng) / spec.r - x
                    acc += float(err @ err)
                ratio = acc / inner / nx2
            worst = max(worst, ratio)
            if ratio > bound * (1.0 + slack) + 1e-15:
                violations.append((x.copy(), ratio))
        return VerifyReport(spec, n_x, worst, bound, not violations, violations)

    if spec.assumption_class == GLOBAL_ABSOLUTE:
        xs = _probe_inputs(trials, d, rng)
        xs[4:8] *= 100.0  # the bound is global: try large inputs too
        bound = spec.cap_c
        for x in xs:
            err = compress(spec, x, rng) - x
            val = _p_norm(err, spec.p_norm) ** 2
            worst = max(worst, val)
            if val > bound * (1.0 + 1e-9) + 1e-15:
                violations.append((x.copy(), val))
        return VerifyReport(spec, trials, worst, bound, not violations, violations)

    # local absolute: inputs live in the unit p-ball
    xs = _probe_inputs(trials, d, rng)
    bound = 1.0 - spec.phi_c
    for x in xs:
        nrm = _p_norm(x, spec.p_norm)
        if nrm > 1.0:
            x = x / nrm
        err = compress(spec, x, rng) - x
        val = _p_norm(err, spec.p_norm)
        worst = max(worst, val)
        if val > bound * (1.0 + 1e-9) + 1e-15:
            violations.append((x.copy(), val))
    return VerifyReport(spec, trials, worst, bound, not violations, violations)
