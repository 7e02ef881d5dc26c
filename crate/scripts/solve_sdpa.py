#!/usr/bin/env python3
"""Solve an SDPA file written by `densopt export-sdpa` with Clarabel or SCS.

Usage: solve_sdpa.py problem.dat-s solution.json [clarabel|scs]

The file encodes `max <F0, Y>  s.t. <Fi, Y> = c_i, Y psd`, with an optional
trailing block of free variables flagged by a `*free-block k` comment.
In densopt's orientation that is the primal `min <C, X> + c_f'x` with
`C = -F0`. The conic solver is handed the dual

    min -b'y   s.t.   C - sum y_i A_i psd,   A_f'y = c_f

so `y` is its primal and `(X, x)` come back as cone multipliers.
The solution file holds full symmetric blocks, free values and `y`.
"""

import json
import math
import os
import sys

import numpy as np
import scipy.sparse as sp

SQ2 = math.sqrt(2.0)


def read_sdpa(path):
    free_block = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("*free-block"):
                free_block = int(line.split()[1])
                continue
            if line[0] in "*\"":
                continue
            for ch in ",{}()":
                line = line.replace(ch, " ")
            rows.append(line)
    m = int(rows[0].split()[0])
    nblocks = int(rows[1].split()[0])
    sizes = [int(v) for v in rows[2].split()[:nblocks]]
    c = [float(v) for v in rows[3].split()[:m]]
    entries = [tuple(r.split()[:5]) for r in rows[4:]]
    entries = [(int(k), int(b), int(i), int(j), float(v)) for k, b, i, j, v in entries]
    return m, sizes, free_block, c, entries


def svec_index(order, s, i, j):
    """Position of entry (i, j), i <= j, 0-based, in a packed triangle."""
    if order == "clarabel":
        # upper triangle, column by column
        return j * (j + 1) // 2 + i
    # scs: lower triangle column by column, i.e. entry (j, i)
    return i * s - i * (i - 1) // 2 + (j - i)


def solve_clarabel(q, a, b, nzero, psd_sizes):
    import clarabel

    cones = ([clarabel.ZeroConeT(nzero)] if nzero else []) + [clarabel.PSDTriangleConeT(s) for s in psd_sizes]
    sol = None
    # the default static regularization (1e-8) can fail on the first
    # factorization of large programs; retry with a stiffer one
    for reg in (None, 1e-6):
        settings = clarabel.DefaultSettings()
        settings.verbose = os.environ.get("VERBOSE", "0") == "1"
        settings.tol_gap_abs = 1e-9
        settings.tol_gap_rel = 1e-9
        settings.tol_feas = 1e-9
        settings.max_iter = 400
        if reg is not None:
            settings.static_regularization_constant = reg
        solver = clarabel.DefaultSolver(sp.csc_matrix((len(q), len(q))), q, a, b, cones, settings)
        sol = solver.solve()
        if str(sol.status) in ("Solved", "AlmostSolved"):
            break
    info = {"status": str(sol.status), "iterations": int(sol.iterations), "solve_time": float(sol.solve_time)}
    return np.asarray(sol.x), np.asarray(sol.z), info


def solve_scs(q, a, b, nzero, psd_sizes):
    import scs

    data = {"A": a, "b": b, "c": q}
    cone = {"z": nzero, "s": list(psd_sizes)}
    solver = scs.SCS(
        data,
        cone,
        verbose=os.environ.get("VERBOSE", "0") == "1",
        eps_abs=1e-7,
        eps_rel=1e-7,
        max_iters=200000,
    )
    sol = solver.solve()
    info = {
        "status": sol["info"]["status"],
        "iterations": int(sol["info"]["iter"]),
        "solve_time": float(sol["info"]["solve_time"]) / 1e3,
    }
    return np.asarray(sol["x"]), np.asarray(sol["y"]), info


def main(src, dst, backend="clarabel"):
    m, sizes, free_block, rhs, entries = read_sdpa(src)
    nfree = abs(sizes[free_block - 1]) if free_block else 0
    psd = [k for k in range(1, len(sizes) + 1) if k != free_block]
    # rows: zero cone for the free columns, then one packed triangle per block
    offsets = {}
    row = nfree
    for k in psd:
        offsets[k] = row
        row += sizes[k - 1] * (sizes[k - 1] + 1) // 2
    nrows = row

    def place(k, i, j):
        i, j = min(i, j) - 1, max(i, j) - 1
        return offsets[k] + svec_index(backend, sizes[k - 1], i, j), (1.0 if i == j else SQ2)

    b = np.zeros(nrows)
    ar, ac, av = [], [], []
    for k, blk, i, j, v in entries:
        if blk == free_block:
            r, scale = i - 1, 1.0
        else:
            r, scale = place(blk, i, j)
        if k == 0:
            # C = -F0 and c_f = -F0 on the free block
            b[r] += -v * scale
        else:
            ar.append(r)
            ac.append(k - 1)
            av.append(v * scale)
    a = sp.csc_matrix((av, (ar, ac)), shape=(nrows, m))
    q = -np.asarray(rhs, dtype=float)

    solve = solve_scs if backend == "scs" else solve_clarabel
    y, z, info = solve(q, a, b, nfree, [sizes[k - 1] for k in psd])

    blocks = []
    for k in psd:
        s = sizes[k - 1]
        mat = np.zeros((s, s))
        for jj in range(s):
            for ii in range(jj + 1):
                r, scale = place(k, ii + 1, jj + 1)
                mat[ii, jj] = mat[jj, ii] = z[r] / scale
        blocks.append(mat.tolist())
    result = dict(info)
    result.update(
        {
            "backend": backend,
            # densopt's primal objective equals the dual optimum b'y
            "objective": float(-q @ y),
            "x_blocks": blocks,
            "x_free": z[:nfree].tolist(),
            "y": y.tolist(),
        }
    )
    with open(dst, "w") as fh:
        json.dump(result, fh)
    print(result["status"], result["objective"], result["iterations"])


if __name__ == "__main__":
    main(*sys.argv[1:4])
