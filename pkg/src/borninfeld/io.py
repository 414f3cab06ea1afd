"""Field dumps, CSV tables and structured text reports.

BIFIELD v1 layout: one ASCII header line ``BIFIELD v1 <n> <m> <L>`` followed
by the ``(m+1)^n`` node values as little-endian float64 in lexicographic
(C) node order.
"""

import numpy as np

from . import grid as g
from .errors import DomainError

MAGIC = "BIFIELD"
VERSION = "v1"


def dump_field(path, u, grid):
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise DomainError("field shape %s does not match grid shape %s" % (u.shape, grid.shape))
    header = "%s %s %d %d %r\n" % (MAGIC, VERSION, grid.n, grid.cells, float(grid.half_width))
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def load_field(path):
    """Read a BIFIELD v1 dump; returns ``(u, grid)``."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        payload = fh.read()
    if len(header) != 5 or header[0] != MAGIC:
        raise DomainError("%s is not a BIFIELD dump" % path)
    if header[1] != VERSION:
        raise DomainError("unsupported BIFIELD version %s" % header[1])
    n, m, L = int(header[2]), int(header[3]), float(header[4])
    grid = g.Grid(L, m, n)
    count = (m + 1) ** n
    if len(payload) != 8 * count:
        raise DomainError("BIFIELD payload has %d bytes, expected %d" % (len(payload), 8 * count))
    u = np.frombuffer(payload, dtype="<f8").astype(float).reshape(grid.shape)
    return u, grid


def fmt17(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % x


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt17(v) for v in row) + "\n")


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [[_parse_cell(v) for v in ln.split(",")] for ln in lines[1:]]


def _parse_cell(v):
    if v in ("true", "false"):
        return v == "true"
    try:
        return float(v)
    except ValueError:
        return v


def _center_index(grid):
    return int(np.argmin(np.abs(grid.axis)))


def field_slices(u, grid):
    """Rows for an axis slice (along x_1 through the node nearest the origin) and the main diagonal.

    Each row is ``(path, s, x_1..x_n, u, |Du|, nu)`` with ``s`` the signed
    distance from the origin along the path; ``|Du|`` and ``nu`` use the
    centered gradient.
    """
    n = grid.n
    Du = g.gradient(u, grid, "centered")
    mag = np.sqrt(np.einsum("i...,i...->...", Du, Du))
    nu = 1.0 / np.sqrt(np.maximum(1.0 - mag ** 2, 1e-300))
    c = _center_index(grid)
    idx = np.arange(grid.cells + 1)
    rows = []
    for i in idx:
        node = (i,) + (c,) * (n - 1)
        x = grid.axis[list(node)]
        rows.append(("axis", grid.axis[i]) + tuple(x) + (u[node], mag[node], nu[node]))
    for i in idx:
        node = (i,) * n
        x = grid.axis[list(node)]
        rows.append(("diagonal", np.sign(grid.axis[i]) * np.sqrt(n) * abs(grid.axis[i])) + tuple(x)
                    + (u[node], mag[node], nu[node]))
    return rows


def write_slices(path, u, grid):
    header = ["path", "s"] + ["x%d" % (k + 1) for k in range(grid.n)] + ["u", "grad_norm", "nu"]
    write_csv(path, header, field_slices(u, grid))


def write_report(path, sections):
    """Structured text: ``[section]`` blocks of ``key = value`` lines, then free text blocks.

    ``sections`` is a list of ``(title, content)`` where content is a dict
    (rendered as key/value lines) or a string (written verbatim).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_report(sections))


def render_report(sections):
    out = []
    for title, content in sections:
        out.append("[%s]" % title)
        if isinstance(content, dict):
            for k, v in content.items():
                out.append("%s = %s" % (k, fmt17(v) if not isinstance(v, (list, tuple)) else
                                        ", ".join(fmt17(x) for x in v)))
        else:
            out.append(content.rstrip("\n"))
        out.append("")
    return "\n".join(out)
