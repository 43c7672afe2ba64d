"""On-disk formats: the energy ledger CSV, legacy-ASCII VTK field dumps,
and the small report tables (equivalence rows, convergence rates).

Floats are written with ``repr``, which round-trips every double exactly;
identical runs therefore produce byte-identical ledgers, and ``check``
can re-derive each row's imbalance from its neighbours without slack for
formatting loss.
"""

import os

import numpy as np

from .diagnostics import EnergyRecord
from .errors import ConfigurationError, InvariantViolation
from .spectral_lab import EquivalenceReport, ReportRow

__all__ = [
    "LEDGER_HEADER",
    "LEDGER_NAME",
    "write_energy_ledger",
    "read_energy_ledger",
    "check_energy_ledger",
    "write_fields_vtk",
    "read_fields_vtk",
    "write_equivalence_csv",
    "read_equivalence_csv",
    "write_table_csv",
]

LEDGER_HEADER = "t,ke_fe,ke_sub,visc_diss,sub_diss,power_in,jump_terms,imbalance"
LEDGER_NAME = "ledger.csv"

#: invariant bound on each row's relative imbalance
IMBALANCE_TOL = 1e-10
#: agreement required between a stored imbalance and its recomputation
CONSISTENCY_TOL = 1e-12


def _fmt(x):
    return repr(float(x))


def write_energy_ledger(records, path):
    """One row per time step, strictly increasing t, repr-exact floats."""
    lines = [LEDGER_HEADER]
    for r in records:
        lines.append(",".join(_fmt(v) for v in (
            r.t, r.ke_fe, r.ke_sub, r.visc_diss, r.sub_diss,
            r.power_in, r.jump_terms, r.imbalance)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_energy_ledger(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
    except OSError as exc:
        raise ConfigurationError(f"cannot read ledger {path}: {exc}") from exc
    if not lines or lines[0] != LEDGER_HEADER:
        raise InvariantViolation(
            f"{path}: ledger header mismatch "
            f"(expected {LEDGER_HEADER!r}, got {lines[0] if lines else ''!r})")
    records = []
    n_fields = len(LEDGER_HEADER.split(","))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n_fields:
            raise InvariantViolation(
                f"{path}:{lineno}: expected {n_fields} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise InvariantViolation(f"{path}:{lineno}: {exc}") from exc
        records.append(EnergyRecord(*vals))
    for a, b in zip(records, records[1:]):
        if not b.t > a.t:
            raise InvariantViolation(
                f"{path}: ledger times not strictly increasing at t={b.t!r}")
    return records


def check_energy_ledger(records, imbalance_tol=IMBALANCE_TOL,
                        consistency_tol=CONSISTENCY_TOL):
    """Audit a ledger: every row's imbalance must sit inside the invariant
    band, and from the second row on it must be re-derivable from the
    neighbouring rows' energies (the first row's reference state is not in
    the file, so it is bounds-checked only)."""
    problems = []
    prev_t = 0.0
    prev = None
    for i, r in enumerate(records):
        dt = r.t - prev_t
        if dt <= 0:
            problems.append(f"row {i + 1}: nonpositive step size {dt!r}")
            continue
        scale = r.relative_scale(dt)
        if abs(r.imbalance) > imbalance_tol * scale:
            problems.append(
                f"row {i + 1} (t={r.t!r}): imbalance {r.imbalance!r} exceeds "
                f"{imbalance_tol} x scale {scale!r}")
        if prev is not None:
            recomputed = ((r.ke_fe - prev.ke_fe) + (r.ke_sub - prev.ke_sub)
                          + r.jump_terms + dt * r.visc_diss + dt * r.sub_diss
                          - dt * r.power_in)
            if abs(recomputed - r.imbalance) > consistency_tol * scale:
                problems.append(
                    f"row {i + 1} (t={r.t!r}): stored imbalance {r.imbalance!r} "
                    f"disagrees with recomputed {recomputed!r}")
        prev, prev_t = r, r.t
    if problems:
        raise InvariantViolation(problems)


# ---------------------------------------------------------------------------
# VTK legacy ASCII fields
# ---------------------------------------------------------------------------

def _vertex_values(space, coeffs):
    """Per-vertex field values (constrained nodes read as zero)."""
    comp = space.components
    out = np.zeros((space.mesh.n_vertices, comp))
    for v in range(space.mesh.n_vertices):
        s = space.node_dof[v]
        if s >= 0:
            for k in range(comp):
                out[v, k] = coeffs[s * comp + k]
    return out


def write_fields_vtk(state, path, title="flow fields"):
    """Velocity (point vectors), pressure (point scalars), and the
    quadrature-averaged subscale magnitude (cell scalars)."""
    disc = state.disc
    mesh = disc.mesh
    vel = _vertex_values(disc.V, state.u)
    pres = _vertex_values(disc.Q, state.p)[:, 0]
    tab = disc.V.tabulation()
    w = tab["weights"]
    mag = np.sqrt(np.einsum("cqk,cqk->cq", state.tilde.values,
                            state.tilde.values))
    sub_mag = np.einsum("cq,cq->c", w, mag) / w.sum(axis=1)

    pts3 = np.zeros((mesh.n_vertices, 3))
    pts3[:, :mesh.dim] = mesh.vertices
    vel3 = np.zeros((mesh.n_vertices, 3))
    vel3[:, :mesh.dim] = vel
    npc = mesh.cells.shape[1]
    cell_type = 5 if mesh.dim == 2 else 10

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [" ".join(_fmt(c) for c in p) for p in pts3]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (npc + 1)}")
    lines += [f"{npc} " + " ".join(str(v) for v in cell) for cell in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(cell_type)] * mesh.n_cells
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    lines.append("VECTORS velocity double")
    lines += [" ".join(_fmt(c) for c in v) for v in vel3]
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [_fmt(p) for p in pres]
    lines.append(f"CELL_DATA {mesh.n_cells}")
    lines.append("SCALARS subscale_magnitude double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [_fmt(v) for v in sub_mag]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_fields_vtk(path):
    """Minimal reader for the files write_fields_vtk produces (round-trip
    checks and downstream tooling)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    idx = {"cursor": 0}

    def take():
        ln = lines[idx["cursor"]]
        idx["cursor"] += 1
        return ln

    def expect(prefix):
        ln = take()
        if not ln.startswith(prefix):
            raise InvariantViolation(f"{path}: expected {prefix!r}, got {ln!r}")
        return ln

    expect("# vtk DataFile")
    take()                       # title
    expect("ASCII")
    expect("DATASET UNSTRUCTURED_GRID")
    n_pts = int(expect("POINTS").split()[1])
    points = np.array([[float(c) for c in take().split()] for _ in range(n_pts)])
    n_cells = int(expect("CELLS").split()[1])
    cells = []
    for _ in range(n_cells):
        parts = [int(v) for v in take().split()]
        cells.append(parts[1:1 + parts[0]])
    cells = np.array(cells)
    expect("CELL_TYPES")
    for _ in range(n_cells):
        take()
    expect("POINT_DATA")
    expect("VECTORS velocity")
    velocity = np.array([[float(c) for c in take().split()] for _ in range(n_pts)])
    expect("SCALARS pressure")
    expect("LOOKUP_TABLE")
    pressure = np.array([float(take()) for _ in range(n_pts)])
    expect("CELL_DATA")
    expect("SCALARS subscale_magnitude")
    expect("LOOKUP_TABLE")
    subscale = np.array([float(take()) for _ in range(n_cells)])
    return {"points": points, "cells": cells, "velocity": velocity,
            "pressure": pressure, "subscale_magnitude": subscale}


# ---------------------------------------------------------------------------
# report tables
# ---------------------------------------------------------------------------

def write_table_csv(header, rows, path):
    """Small-table writer: floats via repr, None as an empty cell."""
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return "" if np.isnan(v) else _fmt(v)
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_equivalence_csv(report, path):
    rows = [(r.lemma, r.s, r.level, r.h, r.value, r.ratio_min, r.ratio_max)
            for r in report.rows]
    write_table_csv(EquivalenceReport.HEADER, rows, path)


def read_equivalence_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = tuple(lines[0].split(","))
    if header != EquivalenceReport.HEADER:
        raise InvariantViolation(f"{path}: unexpected header {header}")
    rows = []
    for line in lines[1:]:
        lemma, s, level, h, value, rmin, rmax = line.split(",")
        rows.append(ReportRow(
            lemma=lemma, s=float(s), level=int(level), h=float(h),
            value=float(value),
            ratio_min=float(rmin) if rmin else float("nan"),
            ratio_max=float(rmax) if rmax else float("nan")))
    return EquivalenceReport(rows=tuple(rows))


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
