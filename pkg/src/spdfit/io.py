"""CSV and JSON plumbing: datasets, matrices, experiment specs and reports.

Datasets are comma-separated with one header row and one observation per
row. An optional column named ``weight`` holds observation weights.
Matrices are written as q header-less rows.
"""

import csv
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import InputError
from .penalties import penalty_from_dict
from .rho import Dataset, rho_from_dict
from .simulate import DISTRIBUTIONS, spiked_scatter
from .solver import SolverConfig

REPORT_COLUMNS = ("alpha", "cv_value", "eps0", "eps1", "eps2", "iterations", "runtime_ms")


def _fmt(v):
    return repr(float(v))


def read_dataset_csv(path):
    """Read a dataset; malformed rows raise InputError naming the line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        try:
            [float(h) for h in header]
        except ValueError:
            pass
        else:
            raise InputError(f"{path}:1: expected a header row, found numbers")
        wcol = header.index("weight") if "weight" in header else None
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}:{line}: non-numeric field") from None
            if not all(np.isfinite(vals)):
                raise InputError(f"{path}:{line}: non-finite value")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no observations")
    arr = np.array(rows)
    if wcol is None:
        return Dataset.from_points(arr)
    w = arr[:, wcol]
    return Dataset.from_points(np.delete(arr, wcol, axis=1), w)


def write_dataset_csv(path, x):
    x = np.asarray(x, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{j + 1}" for j in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_matrix_csv(path, m):
    with open(path, "w", newline="") as fh:
        for row in np.asarray(m, dtype=float):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path):
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read matrix from {path}: {exc}") from None
    if m.shape[0] != m.shape[1]:
        raise InputError(f"{path}: matrix is not square")
    return m


def _cell(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def write_rows_csv(path, columns, rows):
    """Write dict rows in the given column order; NaN becomes an empty cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def sigma_from_spec(spec):
    """Build a scatter matrix from ``{"kind": ...}``.

    Kinds: ``identity`` (q), ``diag`` (values), ``matrix`` (values),
    ``spiked`` (q, leading standard deviations).
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InputError("sigma spec must be an object with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "identity":
            return np.eye(int(spec["q"]))
        if kind == "diag":
            return np.diag(np.asarray(spec["values"], dtype=float))
        if kind == "matrix":
            return np.asarray(spec["values"], dtype=float)
        if kind == "spiked":
            return spiked_scatter(int(spec["q"]), tuple(spec.get("leading", (10, 5, 3, 2))))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad sigma spec: {exc}") from None
    raise InputError(f"unknown sigma kind {kind!r}")


@dataclass
class ExperimentSpec:
    """Everything needed to run a fit or a cross-validation.

    ``data`` is ``{"file": path}`` or ``{"simulate": {"distribution",
    "sigma", "n", "seed", "nu"}}``. ``alphas`` (a CV grid) takes precedence
    over ``alpha`` for the ``cv`` command.
    """

    rho: dict = field(default_factory=lambda: {"name": "tyler"})
    penalty: dict = None
    alpha: float = 0.0
    alphas: list = None
    data: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def validate(self):
        if not isinstance(self.rho, dict) or "name" not in self.rho:
            raise InputError("spec.rho must be an object with a 'name'")
        if self.penalty is not None and (not isinstance(self.penalty, dict)
                                         or "kind" not in self.penalty):
            raise InputError("spec.penalty must be null or an object with a 'kind'")
        if not isinstance(self.data, dict) or len(set(self.data) & {"file", "simulate"}) != 1:
            raise InputError("spec.data needs exactly one of 'file' or 'simulate'")
        if "simulate" in self.data:
            sim = self.data["simulate"]
            if sim.get("distribution", "cauchy") not in DISTRIBUTIONS:
                raise InputError(f"unknown distribution {sim.get('distribution')!r}")
            if "sigma" not in sim or "n" not in sim:
                raise InputError("spec.data.simulate needs 'sigma' and 'n'")
        known = {f.name for f in fields(SolverConfig)}
        bad = set(self.solver) - known
        if bad:
            raise InputError(f"unknown solver options: {sorted(bad)}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InputError("spec must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InputError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d).validate()

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"spec is not valid JSON: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise InputError(f"cannot read spec {path}: {exc.strerror}") from None

    def build_rho(self, q):
        return rho_from_dict(self.rho, q)

    def build_penalty(self):
        return None if self.penalty is None else penalty_from_dict(self.penalty)

    def solver_config(self, **overrides):
        opts = {**self.solver, **overrides}
        if isinstance(opts.get("start"), list):
            opts["start"] = np.asarray(opts["start"], dtype=float)
        try:
            return SolverConfig(**opts)
        except TypeError as exc:
            raise InputError(f"bad solver options: {exc}") from None
