"""Ground-truth circuit oracle for parasitic-laden L-network topologies.

A topology is an ordered ladder of series/shunt arms, each arm an R/L/C
element tree with exactly one tunable capacitor in slot P (shunt leg of the
ideal L-network) and one in slot S (series leg).  Evaluation cascades the
arm ABCD factors in declared order and converts to S-parameters; it accepts
scalar states or broadcastable capacitance arrays, so full (cp, cs) grids
evaluate in one call.

Circuit spec files are JSON with units GHz / ohms / nanohenries / picofarads;
in-memory values are SI.  See `load_topology` for the schema.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (
    CircuitSpecError,
    NoFeasibleSolutionError,
    SingularTopologyError,
)
from .network import DEFAULT_Z0, SParameters

REFERENCE_CIRCUIT_RESOURCE = "circuits/reference_l_network.json"

_EXPR_KINDS = ("R", "L", "C", "TUNE", "SER", "PAR")


@dataclass(frozen=True)
class Element:
    """Node of an element tree: an R/L/C leaf, a tunable-capacitor slot
    reference, or a series/parallel combination of children."""

    kind: str
    value: float = 0.0  # ohms / henries / farads for R/L/C leaves
    slot: str = ""      # "P" or "S" for TUNE leaves
    children: tuple["Element", ...] = ()

    def __post_init__(self):
        if self.kind not in _EXPR_KINDS:
            raise CircuitSpecError(f"unknown element kind {self.kind!r}")
        if self.kind in ("R", "L", "C"):
            if not (math.isfinite(self.value) and self.value >= 0):
                raise CircuitSpecError(f"{self.kind} value must be finite and >= 0, got {self.value}")
        if self.kind == "TUNE" and self.slot not in ("P", "S"):
            raise CircuitSpecError(f"TUNE slot must be 'P' or 'S', got {self.slot!r}")
        if self.kind in ("SER", "PAR") and len(self.children) < 2:
            raise CircuitSpecError(f"{self.kind} node needs at least 2 children")


def resistor(ohms: float) -> Element:
    return Element("R", value=float(ohms))


def inductor(henries: float) -> Element:
    return Element("L", value=float(henries))


def capacitor(farads: float) -> Element:
    return Element("C", value=float(farads))


def tunable(slot: str) -> Element:
    return Element("TUNE", slot=slot)


def series_of(*children: Element) -> Element:
    return Element("SER", children=tuple(children))


def parallel_of(*children: Element) -> Element:
    return Element("PAR", children=tuple(children))


def expr_slots(expr: Element) -> list[str]:
    """All tunable slot references in the tree, in traversal order."""
    if expr.kind == "TUNE":
        return [expr.slot]
    out: list[str] = []
    for child in expr.children:
        out.extend(expr_slots(child))
    return out


@dataclass(frozen=True)
class Arm:
    orient: str  # "series" | "shunt"
    expr: Element

    def __post_init__(self):
        if self.orient not in ("series", "shunt"):
            raise CircuitSpecError(f"arm orientation must be series/shunt, got {self.orient!r}")


@dataclass(frozen=True)
class TunableState:
    """One operating point: frequency and the two tunable capacitances (SI)."""

    f: float
    cp: float
    cs: float


@dataclass(frozen=True)
class MatchSolutionPair:
    """One sign branch of the closed-form ideal L-network solution."""

    cp: float
    cs: float
    branch: str  # "+" | "-"


@dataclass(frozen=True)
class CircuitTopology:
    name: str
    band_hz: tuple[float, float]
    cp_range: tuple[float, float]  # farads
    cs_range: tuple[float, float]
    arms: tuple[Arm, ...]

    def __post_init__(self):
        if not self.arms:
            raise CircuitSpecError("topology needs at least one arm")
        slots: list[str] = []
        for arm in self.arms:
            slots.extend(expr_slots(arm.expr))
        if slots.count("P") != 1 or slots.count("S") != 1:
            raise CircuitSpecError(
                f"topology must reference slot P exactly once and slot S exactly once, got {slots}"
            )
        lo, hi = self.band_hz
        if not (0 < lo < hi):
            raise CircuitSpecError(f"band must satisfy 0 < lo < hi, got {self.band_hz}")
        for label, rng in (("cp", self.cp_range), ("cs", self.cs_range)):
            if not (0 <= rng[0] < rng[1]):
                raise CircuitSpecError(f"{label} range must satisfy 0 <= min < max, got {rng}")

    @property
    def fingerprint(self) -> str:
        """Stable hash of the canonical spec dict; identifies the circuit in reports."""
        blob = json.dumps(topology_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- element tree evaluation -------------------------------------------------

def _immittance(expr: Element, omega: float, cp, cs):
    """Evaluate an element tree to (impedance, open_mask).

    `open_mask` marks points where the branch is an exact open circuit
    (zero-valued capacitor, or a parallel combination whose admittances
    cancel); impedance entries are zero placeholders there.  Accepts scalar
    or array cp/cs (broadcastable), returning matching shapes.
    """
    if expr.kind == "R":
        return complex(expr.value), False
    if expr.kind == "L":
        return 1j * omega * expr.value, False
    if expr.kind in ("C", "TUNE"):
        if expr.kind == "C":
            c = expr.value
        else:
            c = cp if expr.slot == "P" else cs
        c = np.asarray(c, dtype=float)
        is_open = c == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(is_open, 0.0, 1.0 / (1j * omega * np.where(is_open, 1.0, c)))
        if z.ndim == 0:
            return complex(z), bool(is_open)
        return z, is_open
    if expr.kind == "SER":
        parts = [_immittance(child, omega, cp, cs) for child in expr.children]
        is_open = parts[0][1]
        for _, o in parts[1:]:
            is_open = is_open | o
        z = sum(np.where(o, 0.0, zi) for zi, o in parts)
        return np.where(is_open, 0.0, z), is_open
    # PAR: sum admittances; open children contribute zero
    parts = [_immittance(child, omega, cp, cs) for child in expr.children]
    all_open = parts[0][1]
    for _, o in parts[1:]:
        all_open = all_open & o
    with np.errstate(divide="ignore", invalid="ignore"):
        y = sum(np.where(o, 0.0, 1.0 / np.where(o | (zi == 0), 1.0, zi))
                + np.where(~o & (zi == 0), np.inf, 0.0)
                for zi, o in parts)
        is_open = all_open | (y == 0)
        z = np.where(is_open, 0.0, 1.0 / np.where(is_open, 1.0, y))
    z = np.where(np.isinf(y), 0.0, z)  # a shorted child shorts the combination
    return z, is_open


def _arm_factor(arm: Arm, omega: float, cp, cs):
    """ABCD entries (a, b, c, d) of one arm plus a validity mask.

    Series arms are singular where their element tree is open; shunt arms
    are singular where it is an exact short.
    """
    z, is_open = _immittance(arm.expr, omega, cp, cs)
    one = np.ones_like(np.asarray(z))
    zero = np.zeros_like(np.asarray(z))
    if arm.orient == "series":
        valid = ~np.asarray(is_open)
        return (one, np.where(is_open, 0.0, z), zero, one), valid
    is_short = ~np.asarray(is_open) & (np.asarray(z) == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(is_open, 0.0, 1.0 / np.where(np.asarray(z) == 0, 1.0, z))
    valid = ~is_short
    return (one, zero, np.where(is_short, 0.0, y), one), valid


def _mat_mul(m1, m2):
    a1, b1, c1, d1 = m1
    a2, b2, c2, d2 = m2
    return (
        a1 * a2 + b1 * c2,
        a1 * b2 + b1 * d2,
        c1 * a2 + d1 * c2,
        c1 * b2 + d1 * d2,
    )


def _fold_factors(factors):
    """Multiply ABCD factors left to right, deferring shape promotion.

    When the running product and the next factor live on different broadcast
    axes (the cp-axis vector meeting the cs-axis vector on a grid), the
    running product is parked and the fold restarts, so the full-grid
    multiply happens exactly once at the end.
    """
    def nelem(m):
        return int(np.prod(np.shape(m[0]))) if np.ndim(m[0]) else 1

    pieces = []
    acc = (1.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j, 1.0 + 0.0j)
    for fac in factors:
        combined = np.broadcast_shapes(np.shape(acc[0]), np.shape(fac[0]))
        grows = int(np.prod(combined)) > max(nelem(acc), nelem(fac))
        if grows and nelem(acc) > 1 and nelem(fac) > 1:
            pieces.append(acc)
            acc = fac
        else:
            acc = _mat_mul(acc, fac)
    pieces.append(acc)
    total = pieces[0]
    for piece in pieces[1:]:
        total = _mat_mul(total, piece)
    return total


def simulate_states(topology: CircuitTopology, f: float, cp, cs, z0: float = DEFAULT_Z0):
    """Exact S-parameters at one frequency over scalar or array (cp, cs).

    Returns (s, valid): `s` stacks (s11, s12, s21, s22) in the trailing axis
    of a complex array broadcast over cp/cs; `valid` is False wherever the
    topology is singular (open series arm, shorted shunt arm, or a vanishing
    conversion denominator).  Pass cp with shape (P, 1) and cs with shape
    (1, S) to evaluate a full grid in one call.  Both ports share the one
    reference impedance z0.
    """
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    if z0 <= 0:
        raise ValueError(f"reference impedance must be positive, got {z0}")
    omega = 2.0 * math.pi * f
    factors = []
    valid = True
    for arm in topology.arms:
        fac, v = _arm_factor(arm, omega, cp, cs)
        factors.append(fac)
        valid = valid & v
    a, b, c, d = _fold_factors(factors)
    with np.errstate(divide="ignore", invalid="ignore"):
        den = a + b / z0 + c * z0 + d
        s11 = (a + b / z0 - c * z0 - d) / den
        s12 = 2.0 * (a * d - b * c) / den
        s21 = 2.0 / den
        s22 = (-a + b / z0 - c * z0 + d) / den
    s = np.stack(np.broadcast_arrays(s11, s12, s21, s22), axis=-1)
    valid = np.broadcast_to(valid & (den != 0), s.shape[:-1]) & np.all(np.isfinite(s), axis=-1)
    return s, valid


def simulate(topology: CircuitTopology, state: TunableState, z0: float = DEFAULT_Z0) -> SParameters:
    """Exact S-parameters at a single state; raises on singular configurations."""
    s, valid = simulate_states(topology, state.f, state.cp, state.cs, z0=z0)
    if not np.all(valid):
        raise SingularTopologyError(
            f"topology {topology.name!r} is singular at f={state.f:g} Hz, "
            f"cp={state.cp:g} F, cs={state.cs:g} F"
        )
    flat = np.asarray(s).reshape(4)
    return SParameters(complex(flat[0]), complex(flat[1]), complex(flat[2]), complex(flat[3]), z0=z0)


def element_impedance(expr: Element, state: TunableState):
    """Impedance of one element tree at a state; raises if the tree is open."""
    if state.f <= 0:
        raise ValueError(f"frequency must be positive, got {state.f}")
    z, is_open = _immittance(expr, 2.0 * math.pi * state.f, state.cp, state.cs)
    if np.any(is_open):
        raise SingularTopologyError("element tree is an open circuit at this state")
    return complex(np.asarray(z).reshape(())[()])


# --- ideal L-network analytics ----------------------------------------------

def ideal_l_input_impedance(zl: complex, state: TunableState) -> complex:
    """Input impedance of the ideal two-capacitor L-network terminated in zl.

    zin = 1 / (j*bp + 1 / (zl + 1/(j*bs))) with bp = w*cp, bs = w*cs.
    """
    if state.f <= 0:
        raise ValueError(f"frequency must be positive, got {state.f}")
    if state.cs == 0:
        raise SingularTopologyError("series capacitor of 0 F is an open circuit")
    omega = 2.0 * math.pi * state.f
    inner = zl + 1.0 / (1j * omega * state.cs)
    if inner == 0:
        raise SingularTopologyError("series branch resonates to a short; input impedance undefined")
    den = 1j * omega * state.cp + 1.0 / inner
    if den == 0:
        raise SingularTopologyError("shunt branch antiresonates to an open; input impedance undefined")
    return 1.0 / den


def analytical_match(zl: complex, f: float, r: float = DEFAULT_Z0) -> list[MatchSolutionPair]:
    """Closed-form (cp, cs) pairs that match load zl through the ideal L-network.

    Evaluates both sign branches of the closed-form solution, keeps the pairs
    with positive capacitances, and verifies each by back-substitution into
    the input-impedance formula (residual below 1e-6 relative).  Raises
    NoFeasibleSolutionError in the forbidden region (load resistance above
    the reference) and when no branch survives.
    """
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    rl, xl = float(np.real(zl)), float(np.imag(zl))
    if rl <= 0:
        raise ValueError(f"load resistance must be positive, got {rl}")
    q = rl * r - rl * rl
    if q < 0:
        raise NoFeasibleSolutionError(
            f"load resistance {rl:g} exceeds reference {r:g}; no capacitor-only L-network solution"
        )
    omega = 2.0 * math.pi * f
    root = math.sqrt(q)
    out: list[MatchSolutionPair] = []
    seen: set[tuple[float, float]] = set()
    for sign_p in (+1.0, -1.0):
        for sign_s in (+1.0, -1.0):
            cp_den = omega * (rl * xl * r + sign_p * rl * r * root)
            cs_den = omega * (rl * rl + xl * xl - rl * r)
            if cp_den == 0 or cs_den == 0:
                continue
            cp = (q + sign_p * xl * root) / cp_den
            cs = (xl + sign_s * root) / cs_den
            if not (math.isfinite(cp) and math.isfinite(cs)):
                continue
            if cs <= 0 or cp < 0 or (cp == 0 and q > 0):
                continue
            if (cp, cs) in seen:
                continue
            try:
                zin = ideal_l_input_impedance(zl, TunableState(f, cp, cs))
            except SingularTopologyError:
                continue
            if abs(zin - r) >= 1e-6 * r:
                continue
            seen.add((cp, cs))
            out.append(MatchSolutionPair(cp=cp, cs=cs, branch="+" if sign_p > 0 else "-"))
    if not out:
        raise NoFeasibleSolutionError(
            f"no sign branch yields positive capacitors for load {zl!r} at {f:g} Hz"
        )
    return out


def ideal_l_topology(
    band_hz: tuple[float, float] = (1.5e9, 2.0e9),
    cp_range: tuple[float, float] = (0.0, 10e-12),
    cs_range: tuple[float, float] = (0.0, 10e-12),
) -> CircuitTopology:
    """The bare two-capacitor L-network (shunt P then series S), no parasitics."""
    return CircuitTopology(
        name="ideal-l-network",
        band_hz=band_hz,
        cp_range=cp_range,
        cs_range=cs_range,
        arms=(Arm("shunt", tunable("P")), Arm("series", tunable("S"))),
    )


# --- spec file I/O ------------------------------------------------------------

def _expr_from_dict(node: dict) -> Element:
    if not isinstance(node, dict) or len(node) != 1:
        raise CircuitSpecError(f"expr node must be a single-key object, got {node!r}")
    kind, payload = next(iter(node.items()))
    if kind == "R":
        return resistor(payload)
    if kind == "L":
        return inductor(float(payload) * 1e-9)
    if kind == "C":
        return capacitor(float(payload) * 1e-12)
    if kind == "TUNE":
        return tunable(payload)
    if kind in ("SER", "PAR"):
        if not isinstance(payload, list):
            raise CircuitSpecError(f"{kind} payload must be a list")
        children = tuple(_expr_from_dict(ch) for ch in payload)
        return Element(kind, children=children)
    raise CircuitSpecError(f"unknown expr tag {kind!r}")


def _expr_to_dict(expr: Element) -> dict:
    if expr.kind == "R":
        return {"R": expr.value}
    if expr.kind == "L":
        return {"L": expr.value / 1e-9}
    if expr.kind == "C":
        return {"C": expr.value / 1e-12}
    if expr.kind == "TUNE":
        return {"TUNE": expr.slot}
    return {expr.kind: [_expr_to_dict(ch) for ch in expr.children]}


def topology_from_dict(doc: dict) -> CircuitTopology:
    try:
        name = doc["name"]
        band = doc["band_ghz"]
        tun = doc["tunable_pf"]
        arms = doc["arms"]
    except (KeyError, TypeError) as exc:
        raise CircuitSpecError(f"missing required field: {exc}") from exc
    if not isinstance(arms, list) or not arms:
        raise CircuitSpecError("arms must be a non-empty list")
    parsed = []
    for i, arm in enumerate(arms):
        try:
            parsed.append(Arm(orient=arm["orient"], expr=_expr_from_dict(arm["expr"])))
        except (KeyError, TypeError) as exc:
            raise CircuitSpecError(f"arm {i} malformed: {exc}") from exc
    return CircuitTopology(
        name=str(name),
        band_hz=(float(band[0]) * 1e9, float(band[1]) * 1e9),
        cp_range=(float(tun["p"][0]) * 1e-12, float(tun["p"][1]) * 1e-12),
        cs_range=(float(tun["s"][0]) * 1e-12, float(tun["s"][1]) * 1e-12),
        arms=tuple(parsed),
    )


def topology_to_dict(topology: CircuitTopology) -> dict:
    return {
        "name": topology.name,
        "band_ghz": [topology.band_hz[0] / 1e9, topology.band_hz[1] / 1e9],
        "tunable_pf": {
            "p": [topology.cp_range[0] / 1e-12, topology.cp_range[1] / 1e-12],
            "s": [topology.cs_range[0] / 1e-12, topology.cs_range[1] / 1e-12],
        },
        "arms": [{"orient": a.orient, "expr": _expr_to_dict(a.expr)} for a in topology.arms],
    }


def load_topology(path: str) -> CircuitTopology:
    """Load and validate a circuit spec file (JSON, GHz/ohm/nH/pF units)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CircuitSpecError(f"{path}: not valid JSON: {exc}") from exc
    return topology_from_dict(doc)


def save_topology(topology: CircuitTopology, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(topology_to_dict(topology), fh, indent=2)
        fh.write("\n")


def reference_practical_circuit() -> CircuitTopology:
    """The repo's pinned 17-parasitic practical L-network (loaded from the
    committed circuit spec file, which is the single source of truth)."""
    ref = resources.files("rfmatch").joinpath(REFERENCE_CIRCUIT_RESOURCE)
    with resources.as_file(ref) as path:
        return load_topology(str(path))
