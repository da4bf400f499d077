# core/tuples.py

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import TupleConstraintError
from .models import ALL_SETTINGS, PerSetting, SettingsPair

logger = logging.getLogger(__name__)

EXACTNESS_TOL = 1e-12
T4_TOL = 1e-9
KINK_OFFSET = 1e-6

PRIMITIVE_KINDS = ("linear", "constant", "step", "abs", "threshold", "half_linear")
COMBINATOR_OPS = ("add", "scale", "reflect", "max", "shift", "clamp", "compose")

ArrayLike = Union[float, np.ndarray, Sequence[float]]


def _check_exact(op: str, name: str, values: Sequence[float]) -> List[float]:
    values = [float(v) for v in values]
    if len(values) != 4:
        raise TupleConstraintError(op, f"{name} needs 4 values (11, 12, 21, 22), got {len(values)}")
    gap = values[3] - (values[0] + values[1] + values[2])
    if abs(gap) > EXACTNESS_TOL:
        raise TupleConstraintError(op, f"{name} is not exact: 22 value differs from the sum by {gap:g}")
    return values


def _per_setting_list(values: Union[PerSetting, Sequence[float]]) -> List[float]:
    if isinstance(values, PerSetting):
        return list(values.values())
    return [float(v) for v in values]


class FunctionTuple(BaseModel):
    """
    Four real functions (f_11, f_12, f_21, f_22) stored as an expression tree.

    Leaves are parametric primitives; inner nodes are closure combinators.
    Per-setting parameters are lists ordered 11, 12, 21, 22. The tree is
    serialized with model_dump() and rebuilt with model_validate().
    """

    model_config = ConfigDict(frozen=True)

    kind: str
    params: Dict[str, Any] = Field(default_factory=dict)
    inputs: List["FunctionTuple"] = Field(default_factory=list)
    verified_t4: bool = False

    def __call__(self, ab: SettingsPair, x: ArrayLike) -> Union[float, np.ndarray]:
        return eval_tuple(self, ab, x)

    def breakpoints(self, ab: SettingsPair) -> List[float]:
        """Points where the ab component may be non-smooth."""
        return sorted(set(_breakpoints(self, ALL_SETTINGS.index(ab))))

    def is_nonnegative(self) -> bool:
        return _is_nonnegative(self)


class LinearEdgeWindowParams(BaseModel):
    """Thresholds and slopes of a linear-edge window tuple."""

    t_l: PerSetting
    t_h: PerSetting
    m_l: float
    m_h: float

    @classmethod
    def symmetric(cls, t: float, m: float) -> "LinearEdgeWindowParams":
        """Dead zone [-t, t] at non-22 settings and [-3t, 3t] at 22, equal slopes."""
        return cls(t_l=PerSetting.exact(-t, -t, -t), t_h=PerSetting.exact(t, t, t), m_l=m, m_h=m)

    def gap_bound(self) -> float:
        """Smallest u with f_ab(x) >= 1 for every ab and |x| > u."""
        return max(
            max(th + 1.0 / self.m_h, -tl + 1.0 / self.m_l)
            for tl, th in zip(self.t_l.values(), self.t_h.values())
        )


class ExactConstantTuple(BaseModel):
    """Constants c_ab with c_21 + c_11 + c_12 = c_22."""

    c: PerSetting

    @model_validator(mode="after")
    def _check_exact(self) -> "ExactConstantTuple":
        if not self.c.is_exact(EXACTNESS_TOL):
            raise TupleConstraintError("constant", "constants are not exact")
        return self


class T4Check(BaseModel):
    """Outcome of an empirical closure check."""

    passed: bool
    counterexample: Optional[Tuple[float, float, float]] = None
    excess: float = 0.0  # lhs - rhs at the counterexample
    checked: int = 0


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def make_linear_edge_window(p: LinearEdgeWindowParams) -> FunctionTuple:
    """
    Linear-edge window: min(1, max(0, m_h (x - t_h,ab), m_l (t_l,ab - x))).

    Raises:
        TupleConstraintError: On non-exact thresholds, t_l > t_h or a
            non-positive slope.
    """
    op = "linear_edge_window"
    t_l = _check_exact(op, "t_l", p.t_l.values())
    t_h = _check_exact(op, "t_h", p.t_h.values())
    if p.m_l <= 0 or p.m_h <= 0:
        raise TupleConstraintError(op, f"slopes must be positive (m_l={p.m_l}, m_h={p.m_h})")
    for ab, lo, hi in zip(ALL_SETTINGS, t_l, t_h):
        if lo > hi:
            raise TupleConstraintError(op, f"t_l > t_h at settings {ab.label}")
    return FunctionTuple(
        kind=op,
        params={"t_l": t_l, "t_h": t_h, "m_l": float(p.m_l), "m_h": float(p.m_h)},
        verified_t4=True,
    )


def make_primitive(kind: str, **params: Any) -> FunctionTuple:
    """
    Build one of the generating tuples.

    Args:
        kind: "linear" (lam), "constant" (c), "step", "abs",
            "threshold" (t) or "half_linear" (m, t, c)
        **params: Parameters for the kind; per-setting values may be given
            as a PerSetting or as four numbers ordered 11, 12, 21, 22.

    Returns:
        The primitive tuple.

    Raises:
        TupleConstraintError: On unknown kinds, missing parameters or
            non-exact per-setting values.
    """
    if kind not in PRIMITIVE_KINDS:
        raise TupleConstraintError(kind, f"unknown primitive (expected one of {', '.join(PRIMITIVE_KINDS)})")
    try:
        if kind == "linear":
            return FunctionTuple(kind=kind, params={"lam": float(params["lam"])}, verified_t4=True)
        if kind == "constant":
            c = _check_exact(kind, "c", _per_setting_list(params["c"]))
            return FunctionTuple(kind=kind, params={"c": c}, verified_t4=True)
        if kind in ("step", "abs"):
            return FunctionTuple(kind=kind, verified_t4=True)
        if kind == "threshold":
            t = _check_exact(kind, "t", _per_setting_list(params["t"]))
            return FunctionTuple(kind=kind, params={"t": t}, verified_t4=True)
        # half_linear
        m = float(params["m"])
        if m <= 0:
            raise TupleConstraintError(kind, f"slope must be positive, got {m}")
        t = _check_exact(kind, "t", _per_setting_list(params["t"]))
        c = _check_exact(kind, "c", _per_setting_list(params["c"]))
        return FunctionTuple(kind=kind, params={"m": m, "t": t, "c": c}, verified_t4=True)
    except KeyError as e:
        raise TupleConstraintError(kind, f"missing parameter {e.args[0]!r}") from e


def make_hard_window(w: Union[PerSetting, Sequence[float]]) -> FunctionTuple:
    """
    Hard window [|x| > w_ab].

    The 22 width must be at least the sum of the other three; the
    equal-width window used by conventional coincidence counting is not
    a member and is rejected here (see conventional_window).
    """
    op = "hard_window"
    widths = _per_setting_list(w)
    if len(widths) != 4:
        raise TupleConstraintError(op, "needs 4 widths")
    if any(x < 0 for x in widths):
        raise TupleConstraintError(op, "widths must be non-negative")
    if widths[3] < sum(widths[:3]) - EXACTNESS_TOL:
        raise TupleConstraintError(
            op, f"22 width {widths[3]:g} is below the sum of the others {sum(widths[:3]):g}"
        )
    return FunctionTuple(kind=op, params={"w": widths, "inclusive": False}, verified_t4=True)


def conventional_window(w: float) -> FunctionTuple:
    """
    Equal-width coincidence window [|x| >= w] at all settings.

    Not a closure member; used to count coincidences, never as a Bell test.
    """
    if w < 0:
        raise TupleConstraintError("conventional_window", "width must be non-negative")
    return FunctionTuple(kind="hard_window", params={"w": [float(w)] * 4, "inclusive": True})


def compression_tuple(lam: float) -> FunctionTuple:
    """min(lam |x|, 1) at all settings."""
    return combine("clamp", [combine("scale", [make_primitive("abs")], factor=lam)], c=1.0)


# ---------------------------------------------------------------------------
# Combinators
# ---------------------------------------------------------------------------


def combine(op: str, inputs: Sequence[FunctionTuple], **params: Any) -> FunctionTuple:
    """
    Apply a closure operation.

    Args:
        op: "add", "scale" (factor > 0), "reflect", "max",
            "shift" (exact offsets t, f(x + t_ab)), "clamp" (c >= 0,
            nonnegative input) or "compose" (inputs [outer, inner], outer
            22 component monotone non-decreasing)
        inputs: Operand tuples
        **params: Operation parameters

    Returns:
        The combined tuple; verified_t4 is set when every input is verified.

    Raises:
        TupleConstraintError: If a precondition fails; the message names op.
    """
    inputs = list(inputs)
    if op not in COMBINATOR_OPS:
        raise TupleConstraintError(op, f"unknown combinator (expected one of {', '.join(COMBINATOR_OPS)})")
    if not inputs:
        raise TupleConstraintError(op, "needs at least one input")
    verified = all(f.verified_t4 for f in inputs)

    if op in ("add", "max"):
        if len(inputs) < 2:
            raise TupleConstraintError(op, "needs at least two inputs")
        return FunctionTuple(kind=op, inputs=inputs, verified_t4=verified)

    if op == "compose":
        if len(inputs) != 2:
            raise TupleConstraintError(op, "needs exactly [outer, inner]")
        outer = inputs[0]
        if not is_monotone_22(outer):
            raise TupleConstraintError(op, "outer 22 component must be monotone non-decreasing")
        return FunctionTuple(kind=op, inputs=inputs, verified_t4=verified)

    if len(inputs) != 1:
        raise TupleConstraintError(op, "takes exactly one input")

    if op == "reflect":
        return FunctionTuple(kind=op, inputs=inputs, verified_t4=verified)
    if op == "scale":
        factor = float(params.get("factor", 0.0))
        if factor <= 0:
            raise TupleConstraintError(op, f"factor must be positive, got {factor}")
        return FunctionTuple(kind=op, params={"factor": factor}, inputs=inputs, verified_t4=verified)
    if op == "shift":
        if "t" not in params:
            raise TupleConstraintError(op, "missing offsets t")
        t = _check_exact(op, "t", _per_setting_list(params["t"]))
        return FunctionTuple(kind=op, params={"t": t}, inputs=inputs, verified_t4=verified)
    # clamp
    c = float(params.get("c", -1.0))
    if c < 0:
        raise TupleConstraintError(op, f"clamp level must be >= 0, got {c}")
    if not inputs[0].is_nonnegative():
        raise TupleConstraintError(op, "input tuple must be nonnegative")
    return FunctionTuple(kind=op, params={"c": c}, inputs=inputs, verified_t4=verified)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval(f: FunctionTuple, i: int, x: np.ndarray) -> np.ndarray:
    kind = f.kind
    p = f.params
    if kind == "linear":
        return p["lam"] * x
    if kind == "constant":
        return np.full_like(x, p["c"][i])
    if kind == "step":
        return (x >= 0.0).astype(float)
    if kind == "abs":
        return np.abs(x)
    if kind == "threshold":
        return (x >= p["t"][i]).astype(float)
    if kind == "half_linear":
        return np.maximum(p["m"] * (x - p["t"][i]), p["c"][i])
    if kind == "linear_edge_window":
        rise = np.maximum(p["m_h"] * (x - p["t_h"][i]), p["m_l"] * (p["t_l"][i] - x))
        return np.minimum(1.0, np.maximum(0.0, rise))
    if kind == "hard_window":
        if p.get("inclusive", False):
            return (np.abs(x) >= p["w"][i]).astype(float)
        return (np.abs(x) > p["w"][i]).astype(float)
    if kind == "add":
        return sum(_eval(g, i, x) for g in f.inputs)
    if kind == "max":
        out = _eval(f.inputs[0], i, x)
        for g in f.inputs[1:]:
            out = np.maximum(out, _eval(g, i, x))
        return out
    if kind == "scale":
        return p["factor"] * _eval(f.inputs[0], i, x)
    if kind == "reflect":
        return _eval(f.inputs[0], i, -x)
    if kind == "shift":
        return _eval(f.inputs[0], i, x + p["t"][i])
    if kind == "clamp":
        return np.minimum(_eval(f.inputs[0], i, x), p["c"])
    if kind == "compose":
        outer, inner = f.inputs
        return _eval(outer, i, _eval(inner, i, x))
    raise TupleConstraintError(kind, "unknown tuple node")


def eval_tuple(f: FunctionTuple, ab: SettingsPair, x: ArrayLike) -> Union[float, np.ndarray]:
    """
    Evaluate f_ab at x.

    Scalars give a float; arrays are evaluated element-wise.
    """
    arr = np.asarray(x, dtype=float)
    out = _eval(f, ALL_SETTINGS.index(ab), arr)
    if arr.ndim == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def _breakpoints(f: FunctionTuple, i: int) -> List[float]:
    kind = f.kind
    p = f.params
    if kind in ("linear", "constant"):
        return []
    if kind in ("step", "abs"):
        return [0.0]
    if kind == "threshold":
        return [p["t"][i]]
    if kind == "half_linear":
        return [p["t"][i] + p["c"][i] / p["m"]]
    if kind == "linear_edge_window":
        return [
            p["t_l"][i] - 1.0 / p["m_l"],
            p["t_l"][i],
            p["t_h"][i],
            p["t_h"][i] + 1.0 / p["m_h"],
        ]
    if kind == "hard_window":
        return [-p["w"][i], p["w"][i]]
    if kind == "reflect":
        return [-b for b in _breakpoints(f.inputs[0], i)]
    if kind == "shift":
        return [b - p["t"][i] for b in _breakpoints(f.inputs[0], i)]
    points: List[float] = []
    for g in f.inputs:
        points.extend(_breakpoints(g, i))
    return points


def _is_nonnegative(f: FunctionTuple) -> bool:
    kind = f.kind
    p = f.params
    if kind in ("step", "abs", "threshold", "linear_edge_window", "hard_window"):
        return True
    if kind == "constant":
        return min(p["c"]) >= 0
    if kind == "half_linear":
        return min(p["c"]) >= 0
    if kind == "linear":
        return p["lam"] == 0
    if kind in ("add", "scale", "reflect", "shift", "clamp"):
        return all(_is_nonnegative(g) for g in f.inputs)
    if kind == "max":
        return any(_is_nonnegative(g) for g in f.inputs)
    if kind == "compose":
        return _is_nonnegative(f.inputs[0]) or _sampled_min(f) >= 0
    return False


def _sampled_min(f: FunctionTuple) -> float:
    grid = np.linspace(-20.0, 20.0, 4001)
    return min(float(np.min(_eval(f, i, grid))) for i in range(4))


def _structurally_monotone_22(f: FunctionTuple) -> bool:
    kind = f.kind
    if kind in ("constant", "step", "threshold", "half_linear"):
        return True
    if kind == "linear":
        return f.params["lam"] >= 0
    if kind in ("add", "max", "scale", "shift", "clamp", "compose"):
        return all(_structurally_monotone_22(g) for g in f.inputs)
    return False


def is_monotone_22(f: FunctionTuple) -> bool:
    """
    True if f_22 is monotone non-decreasing.

    Known node types are decided structurally; anything else is checked on
    a dense grid including the 22 breakpoints.
    """
    if _structurally_monotone_22(f):
        return True
    bps = np.asarray(_breakpoints(f, 3), dtype=float)
    grid = np.sort(np.concatenate([np.linspace(-20.0, 20.0, 8001), bps, bps - KINK_OFFSET, bps + KINK_OFFSET]))
    values = _eval(f, 3, grid)
    return bool(np.all(np.diff(values) >= -T4_TOL))


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def _kink_points(f: FunctionTuple, i: int) -> np.ndarray:
    base = np.asarray(sorted(set(_breakpoints(f, i)) | {0.0}), dtype=float)
    return np.unique(np.concatenate([base, base - KINK_OFFSET, base + KINK_OFFSET]))


def _t4_excess(f: FunctionTuple, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    # Component indices follow ALL_SETTINGS: 11, 12, 21, 22.
    s = x + y + z
    # The rounded sum can land a few ulps past a step; take the kinder side.
    slack = 4.0 * np.finfo(float).eps * (np.abs(x) + np.abs(y) + np.abs(z))
    lhs = np.minimum(_eval(f, 3, s), np.minimum(_eval(f, 3, s - slack), _eval(f, 3, s + slack)))
    rhs = _eval(f, 2, x) + _eval(f, 0, y) + _eval(f, 1, z)
    return lhs - rhs


def verify_t4(
    f: FunctionTuple,
    range: Tuple[float, float] = (-5.0, 5.0),
    samples: int = 100_000,
    rng_seed: int = 0,
) -> T4Check:
    """
    Empirically check f_22(x+y+z) <= f_21(x) + f_11(y) + f_12(z).

    Random triples drawn uniformly from range are combined with a
    deterministic grid built from the component breakpoints (each shifted
    by +-1e-6), including triples whose sum lands on a 22 breakpoint.

    Args:
        f: Tuple to check
        range: Sampling interval for x, y and z
        samples: Number of random triples (>= 1)
        rng_seed: Seed for the random triples

    Returns:
        T4Check with the worst counterexample when the check fails.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    lo, hi = range
    rng = np.random.default_rng(rng_seed)
    xs = [rng.uniform(lo, hi, samples)]
    ys = [rng.uniform(lo, hi, samples)]
    zs = [rng.uniform(lo, hi, samples)]

    k11, k12, k21, k22 = (_kink_points(f, i) for i in (0, 1, 2, 3))
    gx, gy, gz = np.meshgrid(k21, k11, k12, indexing="ij")
    xs.append(gx.ravel())
    ys.append(gy.ravel())
    zs.append(gz.ravel())

    # Triples whose sum sits on (or next to) a kink of the 22 component.
    gx, gy, gs = np.meshgrid(k21, k11, k22, indexing="ij")
    xs.append(gx.ravel())
    ys.append(gy.ravel())
    zs.append((gs - gx - gy).ravel())

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    z = np.concatenate(zs)
    excess = _t4_excess(f, x, y, z)
    worst = int(np.argmax(excess))
    if excess[worst] > T4_TOL:
        logger.debug("T4 check failed for %s: excess %.3g", f.kind, excess[worst])
        return T4Check(
            passed=False,
            counterexample=(float(x[worst]), float(y[worst]), float(z[worst])),
            excess=float(excess[worst]),
            checked=len(x),
        )
    return T4Check(passed=True, checked=len(x))


def mark_verified(f: FunctionTuple, **kwargs: Any) -> FunctionTuple:
    """Run verify_t4 and return a copy with verified_t4 set, or raise on failure."""
    check = verify_t4(f, **kwargs)
    if not check.passed:
        raise TupleConstraintError(f.kind, f"closure inequality fails at {check.counterexample}")
    return f.model_copy(update={"verified_t4": True})


def max_value(f: FunctionTuple) -> float:
    """Supremum of the tuple over all settings, or inf when unbounded."""
    kind = f.kind
    if kind in ("step", "threshold", "linear_edge_window", "hard_window"):
        return 1.0
    if kind == "constant":
        return max(f.params["c"])
    if kind == "clamp":
        return min(f.params["c"], max_value(f.inputs[0]))
    if kind == "scale":
        return f.params["factor"] * max_value(f.inputs[0])
    if kind in ("reflect", "shift"):
        return max_value(f.inputs[0])
    if kind == "max":
        return max(max_value(g) for g in f.inputs)
    if kind == "add":
        return sum(max_value(g) for g in f.inputs)
    if kind == "linear" and f.params["lam"] == 0:
        return 0.0
    return float("inf")


FunctionTuple.model_rebuild()
