"""Plain-text readers and writers: FOCI, MASK, GRID, JUMPS, traces and snapshots.

Every reader skips blank lines and lines starting with ``#``.  Writers take
an optional ``header`` string that is emitted as a leading comment line.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np

from .geometry import BoxWindow, Grid, IntensityGrid, MaskWindow, Window
from .procgen import DataError, Dataset, PointPattern
from .randfield import JumpSet

__all__ = [
    "read_foci",
    "write_foci",
    "read_mask",
    "write_mask",
    "read_grid",
    "write_grid",
    "read_jumps",
    "write_jumps",
    "write_trace",
    "read_trace",
    "write_snapshots",
    "read_snapshots",
    "fmt",
]


def fmt(x) -> str:
    """Shortest round-tripping text for a float."""
    x = float(x)
    if x == 0.0:
        return "0"
    return repr(x)


def _lines(src):
    """Yield ``(line_number, stripped_text)`` for content lines."""
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            text = fh.read()
    else:
        text = src.read()
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s and not s.startswith("#"):
            yield no, s


def _open_out(dst):
    if isinstance(dst, (str, Path)):
        return open(dst, "w"), True
    return dst, False


def _emit(dst, lines, header: str | None = None):
    fh, close = _open_out(dst)
    try:
        if header:
            for h in header.splitlines():
                fh.write(f"# {h}\n")
        for ln in lines:
            fh.write(ln)
            fh.write("\n")
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------- FOCI


def read_foci(src, window: Window | None = None, labels=None) -> Dataset:
    """Parse a FOCI file into a :class:`Dataset`.

    Rows are ``study_id,type,x,y[,z]``.  With a window, one extra trailing
    column is read as the study weight, and a row holding only
    ``study_id,type`` declares a study with no foci.

    Raises
    ------
    DataError
        Naming the offending line for malformed rows, unknown labels or
        points outside the window.
    """
    it = _lines(src)
    try:
        no, first = next(it)
    except StopIteration:
        raise DataError("empty foci file") from None
    if first != "FOCI":
        raise DataError(f"line {no}: expected FOCI header")
    dim = window.dim if window is not None else None
    groups: dict = {}
    order = []
    weights: dict = {}
    seen_labels = []
    for no, s in it:
        parts = [p.strip() for p in s.split(",")]
        if len(parts) < 2 or not parts[0] or not parts[1]:
            raise DataError(f"line {no}: malformed row")
        sid, lab = parts[0], parts[1]
        if labels is not None and lab not in labels:
            raise DataError(f"line {no}: unknown type label {lab!r}")
        key = (sid, lab)
        if key not in groups:
            groups[key] = []
            order.append(key)
            if lab not in seen_labels:
                seen_labels.append(lab)
        vals = parts[2:]
        if not vals:
            continue
        if dim is None:
            dim = len(vals)
            if dim not in (2, 3):
                raise DataError(f"line {no}: malformed row")
        if len(vals) == dim + 1:
            w = _float(vals[-1], no)
            if not w > 0:
                raise DataError(f"line {no}: study weight must be positive")
            weights[key] = w
            vals = vals[:-1]
        if len(vals) != dim:
            raise DataError(f"line {no}: malformed row")
        pt = np.array([_float(v, no) for v in vals])
        if window is not None and not window.contains(pt[None, :])[0]:
            raise DataError(f"line {no}: point outside window")
        groups[key].append(pt)
    if dim is None:
        raise DataError("cannot infer dimension from a file without coordinates")
    if window is None:
        raise DataError("a window is required to build a dataset")
    labs = list(labels) if labels is not None else seen_labels
    pats = [
        PointPattern(sid, lab, np.array(groups[(sid, lab)]).reshape(-1, dim), weights.get((sid, lab), 1.0))
        for sid, lab in order
    ]
    return Dataset(window, labs, pats)


def _float(v: str, no: int) -> float:
    try:
        x = float(v)
    except ValueError:
        raise DataError(f"line {no}: malformed row") from None
    if not math.isfinite(x):
        raise DataError(f"line {no}: malformed row")
    return x


def write_foci(dataset: Dataset, dst, header: str | None = None) -> None:
    lines = ["FOCI"]
    for p in dataset.patterns:
        wtail = "" if p.weight == 1.0 else "," + fmt(p.weight)
        if len(p) == 0:
            lines.append(f"{p.study_id},{p.type}")
        for row in p.points:
            lines.append(",".join([p.study_id, p.type, *map(fmt, row)]) + wtail)
    _emit(dst, lines, header)


# ---------------------------------------------------------------- MASK / GRID


def _read_lattice(src, kind: str):
    it = _lines(src)
    try:
        no, head = next(it)
    except StopIteration:
        raise DataError(f"empty {kind.lower()} file") from None
    tok = head.split()
    if tok[0] not in (f"{kind}2D", f"{kind}3D"):
        raise DataError(f"line {no}: expected {kind}2D or {kind}3D header")
    d = 2 if tok[0].endswith("2D") else 3
    try:
        shape = tuple(int(t) for t in tok[1:])
        _, org = next(it)
        _, vox = next(it)
    except (ValueError, StopIteration):
        raise DataError(f"line {no}: malformed {kind.lower()} header") from None
    if len(shape) != d or min(shape) < 1:
        raise DataError(f"line {no}: malformed {kind.lower()} header")
    ot, vt = org.split(), vox.split()
    if ot[0] != "ORIGIN" or vt[0] != "VOXEL" or len(ot) != d + 1 or len(vt) != d + 1:
        raise DataError(f"{kind.lower()} header needs ORIGIN and VOXEL lines")
    origin = np.array([float(x) for x in ot[1:]])
    voxel = np.array([float(x) for x in vt[1:]])
    body = " ".join(s for _, s in it)
    try:
        vals = np.array(body.split(), dtype=float)
    except ValueError:
        raise DataError(f"malformed {kind.lower()} values") from None
    if vals.size != int(np.prod(shape)):
        raise DataError(f"{kind.lower()} has {vals.size} values, expected {int(np.prod(shape))}")
    # x-fastest ordering = Fortran order on [ix, iy, iz]
    return vals.reshape(shape, order="F"), origin, voxel


def read_mask(src) -> MaskWindow:
    occ, origin, voxel = _read_lattice(src, "MASK")
    if not np.all((occ == 0) | (occ == 1)):
        raise DataError("mask values must be 0 or 1")
    return MaskWindow(occ.astype(bool), origin, voxel)


def _lattice_lines(kind: str, values: np.ndarray, origin, voxel, as_int: bool) -> list:
    d = values.ndim
    head = [f"{kind}{d}D " + " ".join(str(n) for n in values.shape)]
    head.append("ORIGIN " + " ".join(fmt(o) for o in origin))
    head.append("VOXEL " + " ".join(fmt(v) for v in voxel))
    flat = values.ravel(order="F")
    nx = values.shape[0]
    body = []
    for s in range(0, flat.size, nx):
        chunk = flat[s : s + nx]
        body.append(" ".join(str(int(v)) for v in chunk) if as_int else " ".join(fmt(v) for v in chunk))
    return head + body


def write_mask(mask: MaskWindow, dst, header: str | None = None) -> None:
    _emit(dst, _lattice_lines("MASK", mask.occupancy.astype(int), mask.origin, mask.voxel, True), header)


def write_grid(ig: IntensityGrid, dst, header: str | None = None) -> None:
    """GRID file: mask-style header (ORIGIN is the lattice corner) then values, 0 outside the window."""
    g = ig.grid
    origin = np.array([ax[0] for ax in g.axes]) - g.spacing / 2
    vals = np.where(g.inside, ig.values, 0.0)
    _emit(dst, _lattice_lines("GRID", vals, origin, g.spacing, False), header)


def read_grid(src, window: Window | None = None) -> IntensityGrid:
    vals, origin, voxel = _read_lattice(src, "GRID")
    axes = [origin[a] + (np.arange(vals.shape[a]) + 0.5) * voxel[a] for a in range(vals.ndim)]
    if window is None:
        window = BoxWindow(origin, origin + voxel * np.array(vals.shape))
    return IntensityGrid(Grid(window, axes, voxel), vals)


# ---------------------------------------------------------------- JUMPS


def _jump_lines(jumps: JumpSet, counts: np.ndarray | None = None) -> list:
    M, J = jumps.M, jumps.J
    mu = jumps.mu
    head = f"JUMPS {M} {J}" + (" COUNTS" if counts is not None else "")
    out = [head]
    for m in range(M):
        row = [str(m + 1), *map(fmt, jumps.locations[m]), fmt(jumps.heights[m]), *map(fmt, mu[:, m])]
        if counts is not None:
            row += [str(int(c)) for c in counts[:, m]]
        out.append(" ".join(row))
    return out


def write_jumps(jumps: JumpSet, dst, header: str | None = None) -> None:
    _emit(dst, _jump_lines(jumps), header)


def _parse_jump_block(head: str, rows: list, no: int):
    tok = head.split()
    if tok[0] != "JUMPS" or len(tok) not in (3, 4):
        raise DataError(f"line {no}: expected JUMPS header")
    M, J = int(tok[1]), int(tok[2])
    with_counts = len(tok) == 4 and tok[3] == "COUNTS"
    if len(rows) != M:
        raise DataError(f"line {no}: expected {M} jump rows, found {len(rows)}")
    arr = np.loadtxt(io.StringIO("\n".join(rows)), ndmin=2)
    ncol = arr.shape[1]
    d = ncol - 2 - J - (J if with_counts else 0)
    if d not in (2, 3):
        raise DataError(f"line {no}: jump rows have {ncol} columns")
    theta = arr[:, 1 : 1 + d]
    nu = arr[:, 1 + d]
    mu = arr[:, 2 + d : 2 + d + J].T
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
    counts = arr[:, 2 + d + J :].T.astype(np.int64) if with_counts else None
    return JumpSet(theta, nu, log_mu), counts


def read_jumps(src) -> JumpSet:
    lines = list(_lines(src))
    if not lines:
        raise DataError("empty jumps file")
    js, _ = _parse_jump_block(lines[0][1], [s for _, s in lines[1:]], lines[0][0])
    js.check_order()
    return js


# ---------------------------------------------------------------- traces and snapshots


def write_trace(chain, dst, header: str | None = None) -> None:
    """``iter,tau,beta,sigma_1..sigma_J,mass_1..mass_J,logpost``; the sigma columns hold sigma_j^2."""
    lines = [",".join(chain.trace_names)]
    for row in chain.trace:
        lines.append(",".join([str(int(row[0]))] + [fmt(v) for v in row[1:]]))
    _emit(dst, lines, header)


def read_trace(src) -> tuple[list, np.ndarray]:
    lines = list(_lines(src))
    names = lines[0][1].split(",")
    data = np.loadtxt(io.StringIO("\n".join(s for _, s in lines[1:])), delimiter=",", ndmin=2)
    return names, data


def write_snapshots(chain, dst, header: str | None = None) -> None:
    """Saved states as JUMPS blocks (with assignment counts), one per snapshot."""
    S, J = chain.n_snapshots, chain.J
    M, d = chain.nu.shape[1], chain.theta.shape[2]
    out = [f"SNAPSHOTS {S} {M} {J} {d}"]
    out.append("LABELS " + " ".join(chain.labels))
    out.append(f"ALPHA {fmt(chain.alpha_total)}")
    for s in range(S):
        sig = " ".join(fmt(v) for v in chain.sigma2[s])
        out.append(f"SNAPSHOT {s + 1} {int(chain.saved_iters[s])} {fmt(chain.tau[s])} {fmt(chain.beta[s])} {sig} {fmt(chain.truncation[s])}")
        js = JumpSet(chain.theta[s], chain.nu[s], chain.log_mu[s], float(chain.beta[s]), float(chain.tau[s]))
        out.extend(_jump_lines(js, chain.counts[s]))
    _emit(dst, out, header)


def read_snapshots(src, window: Window, trace_src=None, model: str = "hpgrf"):
    """Rebuild a :class:`~hpgrf.mcmc.Chain` from a snapshot file (and optional trace)."""
    from .mcmc import Chain, ChainConfig

    lines = list(_lines(src))
    if not lines or not lines[0][1].startswith("SNAPSHOTS"):
        raise DataError("expected SNAPSHOTS header")
    S, M, J, d = (int(t) for t in lines[0][1].split()[1:])
    labels = lines[1][1].split()[1:]
    alpha = float(lines[2][1].split()[1])
    theta = np.empty((S, M, d))
    nu = np.empty((S, M))
    log_mu = np.empty((S, J, M))
    counts = np.empty((S, J, M), dtype=np.int32)
    sigma2 = np.empty((S, J))
    tau, beta, iters, trunc = np.empty(S), np.empty(S), np.empty(S, dtype=np.int64), np.empty(S)
    pos = 3
    for s in range(S):
        no, head = lines[pos]
        tok = head.split()
        if tok[0] != "SNAPSHOT":
            raise DataError(f"line {no}: expected SNAPSHOT")
        iters[s], tau[s], beta[s] = int(tok[2]), float(tok[3]), float(tok[4])
        sigma2[s] = [float(x) for x in tok[5 : 5 + J]]
        trunc[s] = float(tok[5 + J])
        no, jhead = lines[pos + 1]
        rows = [x for _, x in lines[pos + 2 : pos + 2 + M]]
        js, cnt = _parse_jump_block(jhead, rows, no)
        theta[s], nu[s], log_mu[s], counts[s] = js.locations, js.heights, js.log_mu, cnt
        pos += 2 + M
    names, trace = (["iter"], np.empty((0, 1)))
    if trace_src is not None:
        names, trace = read_trace(trace_src)
    cfg = ChainConfig(M=M, burn_in=0, iterations=max(int(iters.max()) if S else 1, 1), thin=1)
    return Chain(labels, window, cfg, alpha, theta, nu, log_mu, sigma2, tau, beta, counts, iters, trace, names, trunc, {}, model)
