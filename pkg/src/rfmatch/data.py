"""Dataset generation, persistence, normalization, and splitting.

Everything here is a pure function of (topology, spec, seed): regenerating a
dataset yields bit-identical files.  Sweeps and inverse datasets are plain
(inputs, targets) tables persisted either as a binary columnar container or
as CSV with a one-line header plus a JSON metadata sidecar.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitTopology, simulate_states
from .errors import RfMatchError
from .network import SParameters, input_reflection, load_reflection_from_input
from .nn import MlpModel, NormalizationSpec, predict

DATASET_MAGIC = b"RFDS1\x00"
DATASET_FORMAT_VERSION = 1
NOISE_SIGMA_PRESETS = (0.0, 0.0002, 0.0004)
SCENARIO_COLUMNS = (
    "id", "f_hz", "cp_star_f", "cs_star_f", "cp_now_f", "cs_now_f",
    "gin_re", "gin_im", "gl_re", "gl_im", "sigma",
)


@dataclass(frozen=True)
class SweepSpec:
    """Inclusive lattice over frequency and both tunable capacitances (SI units)."""

    f_lo: float
    f_hi: float
    f_step: float
    cp_lo: float
    cp_hi: float
    cp_step: float
    cs_lo: float
    cs_hi: float
    cs_step: float

    def __post_init__(self):
        for lo, hi, step, name in (
            (self.f_lo, self.f_hi, self.f_step, "f"),
            (self.cp_lo, self.cp_hi, self.cp_step, "cp"),
            (self.cs_lo, self.cs_hi, self.cs_step, "cs"),
        ):
            if step <= 0:
                raise ValueError(f"{name} step must be positive")
            if hi < lo:
                raise ValueError(f"{name} range is not well ordered")
            k = round((hi - lo) / step)
            if abs(lo + k * step - hi) > 1e-9 * max(step, abs(hi), 1e-30):
                raise ValueError(f"{name} range is not an integer number of steps")

    def _axis(self, lo: float, hi: float, step: float) -> np.ndarray:
        count = round((hi - lo) / step) + 1
        return lo + step * np.arange(count)

    def f_axis(self) -> np.ndarray:
        return self._axis(self.f_lo, self.f_hi, self.f_step)

    def cp_axis(self) -> np.ndarray:
        return self._axis(self.cp_lo, self.cp_hi, self.cp_step)

    def cs_axis(self) -> np.ndarray:
        return self._axis(self.cs_lo, self.cs_hi, self.cs_step)

    def lattice_size(self) -> int:
        return len(self.f_axis()) * len(self.cp_axis()) * len(self.cs_axis())

    def to_dict(self) -> dict:
        return {
            "f_ghz": [self.f_lo / 1e9, self.f_hi / 1e9, self.f_step / 1e9],
            "cp_pf": [self.cp_lo / 1e-12, self.cp_hi / 1e-12, self.cp_step / 1e-12],
            "cs_pf": [self.cs_lo / 1e-12, self.cs_hi / 1e-12, self.cs_step / 1e-12],
        }

    @staticmethod
    def from_dict(doc: dict) -> "SweepSpec":
        f, cp, cs = doc["f_ghz"], doc["cp_pf"], doc["cs_pf"]
        return SweepSpec(
            f[0] * 1e9, f[1] * 1e9, f[2] * 1e9,
            cp[0] * 1e-12, cp[1] * 1e-12, cp[2] * 1e-12,
            cs[0] * 1e-12, cs[1] * 1e-12, cs[2] * 1e-12,
        )

    @staticmethod
    def for_topology(topology: CircuitTopology, f_step: float, c_step: float) -> "SweepSpec":
        return SweepSpec(
            topology.band_hz[0], topology.band_hz[1], f_step,
            topology.cp_range[0], topology.cp_range[1], c_step,
            topology.cs_range[0], topology.cs_range[1], c_step,
        )


@dataclass
class Dataset:
    """A flat supervised table: input columns followed by target columns."""

    inputs: np.ndarray
    targets: np.ndarray
    input_names: tuple[str, ...]
    target_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class Scenario:
    """One mismatched condition: where the tuner currently sits, what the
    sensor measured, and (hidden from strategies) the true load reflection."""

    id: int
    f: float
    cp_star: float
    cs_star: float
    cp_now: float
    cs_now: float
    gin: complex  # measured input reflection, noisy when sigma > 0
    gl: complex   # true load reflection
    sigma: float


def _targets_from_s(s: np.ndarray) -> np.ndarray:
    """(..., 4) complex S entries to (..., 8) reals in re/im pairs."""
    out = np.empty(s.shape[:-1] + (8,), dtype=float)
    out[..., 0::2] = s.real
    out[..., 1::2] = s.imag
    return out


def generate_sweep(topology: CircuitTopology, spec: SweepSpec) -> Dataset:
    """Exact oracle evaluated on every lattice point, rows ordered f-major
    then cp then cs.  Singular points are excluded and counted in the
    metadata rather than emitted."""
    f_axis, cp_axis, cs_axis = spec.f_axis(), spec.cp_axis(), spec.cs_axis()
    ncp, ncs = len(cp_axis), len(cs_axis)
    blocks_x, blocks_y, kept_mask = [], [], []
    for f in f_axis:
        s, valid = simulate_states(topology, f, cp_axis[:, None], cs_axis[None, :])
        y = _targets_from_s(s).reshape(-1, 8)
        x = np.column_stack([
            np.full(ncp * ncs, f),
            np.repeat(cp_axis, ncs),
            np.tile(cs_axis, ncp),
        ])
        flat_ok = valid.reshape(-1)
        blocks_x.append(x[flat_ok])
        blocks_y.append(y[flat_ok])
        kept_mask.append(flat_ok)
    inputs = np.concatenate(blocks_x)
    targets = np.concatenate(blocks_y)
    total = spec.lattice_size()
    return Dataset(
        inputs=inputs,
        targets=targets,
        input_names=("f_hz", "cp_f", "cs_f"),
        target_names=("s11_re", "s11_im", "s12_re", "s12_im",
                      "s21_re", "s21_im", "s22_re", "s22_im"),
        meta={
            "kind": "sweep",
            "format_version": DATASET_FORMAT_VERSION,
            "topology_fingerprint": topology.fingerprint,
            "spec": spec.to_dict(),
            "rows": int(len(inputs)),
            "lattice_points": int(total),
            "skipped_singular": int(total - len(inputs)),
            "row_order": "f,cp,cs",
        },
    )


def generate_inverse_dataset(
    model: MlpModel,
    spec: SweepSpec,
    batch_size: int = 65536,
) -> Dataset:
    """Inverse-solver training table built from surrogate predictions.

    For every lattice point the surrogate predicts S, a perfectly matched
    input (gin = 0) is assumed, and the implied load reflection becomes the
    input feature while the lattice (cp, cs) becomes the label.  Rows whose
    recovery denominator falls below 1e-9 in magnitude are skipped and
    counted.
    """
    f_axis, cp_axis, cs_axis = spec.f_axis(), spec.cp_axis(), spec.cs_axis()
    ncp, ncs = len(cp_axis), len(cs_axis)
    xs, labels = [], []
    skipped = 0
    for f in f_axis:
        grid = np.column_stack([
            np.full(ncp * ncs, f),
            np.repeat(cp_axis, ncs),
            np.tile(cs_axis, ncp),
        ])
        for start in range(0, len(grid), batch_size):
            chunk = grid[start:start + batch_size]
            y = predict(model, chunk)
            s11 = y[:, 0] + 1j * y[:, 1]
            s12 = y[:, 2] + 1j * y[:, 3]
            s21 = y[:, 4] + 1j * y[:, 5]
            s22 = y[:, 6] + 1j * y[:, 7]
            den = s12 * s21 - s11 * s22
            ok = np.abs(den) >= 1e-9
            skipped += int((~ok).sum())
            gl = -s11[ok] / den[ok]
            xs.append(np.column_stack([chunk[ok, 0], gl.real, gl.imag]))
            labels.append(chunk[ok, 1:3])
    inputs = np.concatenate(xs)
    targets = np.concatenate(labels)
    return Dataset(
        inputs=inputs,
        targets=targets,
        input_names=("f_hz", "gl_re", "gl_im"),
        target_names=("cp_f", "cs_f"),
        meta={
            "kind": "inverse",
            "format_version": DATASET_FORMAT_VERSION,
            "recbm_fingerprint": model.fingerprint,
            "spec": spec.to_dict(),
            "rows": int(len(inputs)),
            "skipped_degenerate": int(skipped),
            "row_order": "f,cp,cs",
        },
    )


def add_measurement_noise(gin: complex, sigma: float, rng: np.random.Generator) -> complex:
    """gin plus circularly symmetric complex Gaussian noise of variance sigma^2."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    w = complex(rng.normal(), rng.normal()) / math.sqrt(2.0)
    return gin + sigma * w


def generate_scenarios(
    topology: CircuitTopology,
    n: int,
    seed: int,
    sigma: float = 0.0,
    max_retries: int = 100,
) -> list[Scenario]:
    """Seeded mismatched-scenario suite.

    Each scenario samples a frequency and an in-box perfect solution, derives
    the (matchable by construction) true load reflection from the oracle at
    that solution, then samples a different current state and computes the
    measured input reflection there.  The noise draw is a unit complex
    Gaussian scaled by sigma, taken from the same per-scenario stream, so
    suites generated with identical seeds but different sigma share their
    underlying scenarios.  Degenerate oracle points are resampled up to
    `max_retries` times.
    """
    if n < 1:
        raise ValueError("scenario count must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    f_lo, f_hi = topology.band_hz
    cp_lo, cp_hi = topology.cp_range
    cs_lo, cs_hi = topology.cs_range
    out: list[Scenario] = []
    for i in range(n):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        scenario = None
        for _ in range(max_retries):
            f = f_lo + rng.random() * (f_hi - f_lo)
            cp_star = cp_lo + rng.random() * (cp_hi - cp_lo)
            cs_star = cs_lo + rng.random() * (cs_hi - cs_lo)
            cp_now = cp_lo + rng.random() * (cp_hi - cp_lo)
            cs_now = cs_lo + rng.random() * (cs_hi - cs_lo)
            s_star, ok_star = simulate_states(topology, f, cp_star, cs_star)
            s_now, ok_now = simulate_states(topology, f, cp_now, cs_now)
            if not (np.all(ok_star) and np.all(ok_now)):
                continue
            sp = SParameters(*(complex(v) for v in np.asarray(s_star).reshape(4)))
            den = sp.s12 * sp.s21 + (0.0 - sp.s11) * sp.s22
            if den == 0:
                continue
            gl = load_reflection_from_input(sp, 0.0)
            if not (np.isfinite(gl.real) and np.isfinite(gl.imag)) or abs(gl) >= 1.0:
                continue
            sn = SParameters(*(complex(v) for v in np.asarray(s_now).reshape(4)))
            if 1.0 - gl * sn.s22 == 0:
                continue
            gin = input_reflection(sn, gl)
            scenario = (f, cp_star, cs_star, cp_now, cs_now, gin, gl)
            break
        if scenario is None:
            raise RfMatchError(f"scenario {i}: no non-degenerate sample in {max_retries} tries")
        f, cp_star, cs_star, cp_now, cs_now, gin, gl = scenario
        gin_noisy = add_measurement_noise(gin, sigma, rng)
        out.append(Scenario(
            id=i, f=f, cp_star=cp_star, cs_star=cs_star,
            cp_now=cp_now, cs_now=cs_now, gin=gin_noisy, gl=gl, sigma=sigma,
        ))
    return out


def fit_normalization(inputs: np.ndarray) -> NormalizationSpec:
    """Per-feature min-max bounds; raises on constant features."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.size == 0:
        raise ValueError("dataset is empty")
    return NormalizationSpec(
        lo=tuple(float(v) for v in inputs.min(axis=0)),
        hi=tuple(float(v) for v in inputs.max(axis=0)),
    )


def apply_normalization(spec: NormalizationSpec, x: np.ndarray) -> np.ndarray:
    return spec.apply(x)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle-split: first int(n*fraction) indices train, rest validation."""
    if not (0 < fraction < 1):
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    k = int(n * fraction)
    if k == 0 or k == n:
        raise ValueError(f"split of {n} rows at {fraction} leaves an empty partition")
    return order[:k], order[k:]


def split_dataset(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/validation split of a dataset."""
    tr, va = split_indices(len(dataset), fraction, seed)
    def take(idx):
        return Dataset(
            inputs=dataset.inputs[idx],
            targets=dataset.targets[idx],
            input_names=dataset.input_names,
            target_names=dataset.target_names,
            meta=dict(dataset.meta),
        )
    return take(tr), take(va)


# --- persistence ---------------------------------------------------------------

def save_dataset(dataset: Dataset, path: str, fmt: str = "bin") -> None:
    """Persist a dataset; `fmt` is "bin" (default, exact) or "csv".

    CSV files carry the column header as their first line and a
    `<path>.meta.json` sidecar; the binary container embeds the metadata.
    """
    columns = list(dataset.input_names) + list(dataset.target_names)
    table = np.column_stack([dataset.inputs, dataset.targets])
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "columns": columns,
        "n_inputs": len(dataset.input_names),
        "n_rows": int(len(table)),
        "meta": dataset.meta,
    }
    if fmt == "bin":
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write(",".join(columns) + "\n")
            for row in table:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        with open(path + ".meta.json", "w") as fh:
            json.dump(header, fh, sort_keys=True, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path: str) -> Dataset:
    """Load a dataset saved by save_dataset (format sniffed from content)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
    if magic == DATASET_MAGIC:
        with open(path, "rb") as fh:
            raw = fh.read()
        off = len(DATASET_MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off:off + hlen].decode())
        off += hlen
        ncol = len(header["columns"])
        table = np.frombuffer(raw, dtype="<f8", offset=off).reshape(header["n_rows"], ncol)
        table = table.astype(float)
    else:
        with open(path) as fh:
            columns = fh.readline().strip().split(",")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
        try:
            with open(path + ".meta.json") as fh:
                header = json.load(fh)
        except FileNotFoundError:
            header = {"columns": columns, "n_inputs": 3, "meta": {}}
        if table.size == 0:
            table = table.reshape(0, len(columns))
    k = header["n_inputs"]
    cols = header["columns"]
    return Dataset(
        inputs=table[:, :k],
        targets=table[:, k:],
        input_names=tuple(cols[:k]),
        target_names=tuple(cols[k:]),
        meta=header.get("meta", {}),
    )


def save_scenarios(scenarios: list[Scenario], path: str, meta: dict | None = None) -> None:
    """Scenario suite as CSV plus a self-describing metadata sidecar."""
    with open(path, "w") as fh:
        fh.write(",".join(SCENARIO_COLUMNS) + "\n")
        for sc in scenarios:
            row = (
                sc.id, sc.f, sc.cp_star, sc.cs_star, sc.cp_now, sc.cs_now,
                sc.gin.real, sc.gin.imag, sc.gl.real, sc.gl.imag, sc.sigma,
            )
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    sidecar = {"format_version": DATASET_FORMAT_VERSION, "count": len(scenarios)}
    sidecar.update(meta or {})
    with open(path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_scenarios(path: str) -> tuple[list[Scenario], dict]:
    with open(path) as fh:
        columns = fh.readline().strip().split(",")
        if tuple(columns) != SCENARIO_COLUMNS:
            raise RfMatchError(f"{path}: unexpected scenario columns {columns}")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.size == 0:
        rows = rows.reshape(0, len(SCENARIO_COLUMNS))
    scenarios = [
        Scenario(
            id=int(r[0]), f=r[1], cp_star=r[2], cs_star=r[3], cp_now=r[4], cs_now=r[5],
            gin=complex(r[6], r[7]), gl=complex(r[8], r[9]), sigma=r[10],
        )
        for r in rows
    ]
    try:
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    return scenarios, meta
