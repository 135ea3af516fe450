"""Writers for ledgers, tables, field snapshots (CSV) and legacy VTK structured points.

CSV files use ``,`` separators, ``.`` decimals, a header row and 17
significant digits, so values round-trip exactly and reruns diff cleanly.
"""
import csv
import json
import math
import os

import numpy as np

_MATRIX_COLS = [f"p{i}{j}" for i in range(1, 4) for j in range(1, 4)]


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def write_rows(path, columns, rows):
    """Write dict rows (or sequences) under a fixed header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([fmt(v) for v in vals])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [[float(v) for v in row] for row in rd]


def write_field_csv(path, grid, field, names=None):
    """Node index, coordinates and the field components, one node per row."""
    f = np.asarray(field).reshape(grid.n_nodes, -1)
    if names is None:
        names = _MATRIX_COLS if f.shape[1] == 9 else [f"c{k}" for k in range(f.shape[1])]
    cols = ["node", "i", "j", "k", "x", "y", "z"] + list(names)
    idx, xyz = grid.index, grid.coords
    rows = ([n, *idx[n], *xyz[n], *f[n]] for n in range(grid.n_nodes))
    write_rows(path, cols, rows)


def write_state_csv(path, grid, z):
    write_field_csv(path, grid, z, _MATRIX_COLS + ["gamma"])


def write_vtk(path, grid, fields, title="gradplast"):
    """Legacy ASCII VTK structured points with point data.

    ``fields`` maps names to ``(n,)`` scalars, ``(n, 3)`` vectors or
    ``(n, 3, 3)`` tensors. VTK orders points x-fastest, so node arrays are
    transposed from the C-ordered ``(nx, ny, nz)`` layout.
    """
    nx, ny, nz = grid.dims
    order = np.arange(grid.n_nodes).reshape(nx, ny, nz).transpose(2, 1, 0).ravel()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN " + " ".join(fmt(o) for o in grid.origin) + "\n")
        fh.write("SPACING " + " ".join(fmt(h) for h in grid.spacing) + "\n")
        fh.write(f"POINT_DATA {grid.n_nodes}\n")
        for name, arr in fields.items():
            a = np.asarray(arr)[order]
            if a.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(fmt(v) + "\n" for v in a)
            elif a.shape[1:] == (3,):
                fh.write(f"VECTORS {name} double\n")
                fh.writelines(" ".join(fmt(v) for v in row) + "\n" for row in a)
            elif a.shape[1:] == (3, 3):
                fh.write(f"TENSORS {name} double\n")
                for t in a:
                    fh.writelines(" ".join(fmt(v) for v in row) + "\n" for row in t)
            else:
                raise ValueError(f"cannot write field {name!r} of shape {a.shape}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
