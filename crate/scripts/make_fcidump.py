#!/usr/bin/env python3
"""Generate STO-3G FCIDUMP test fixtures (RHF molecular-orbital basis).

Minimal-basis restricted Hartree-Fock over s/p contracted Gaussians,
McMurchie-Davidson integrals. Only used to produce the files under data/;
the Rust crate consumes FCIDUMP files and never touches molecular geometry.

Usage: python3 scripts/make_fcidump.py <outdir>
"""

import sys
import math
import numpy as np
from scipy.special import hyp1f1

ANG2BOHR = 1.8897259886

# STO-3G contractions: (exponents, coefficients) per shell
STO3G = {
    "H": [("s", [3.42525091, 0.62391373, 0.16885540],
           [0.15432897, 0.53532814, 0.44463454])],
    "O": [("s", [130.7093200, 23.80886100, 6.443608300],
           [0.15432897, 0.53532814, 0.44463454]),
          ("s", [5.033151300, 1.169596100, 0.380389000],
           [-0.09996723, 0.39951283, 0.70011547]),
          ("p", [5.033151300, 1.169596100, 0.380389000],
           [0.15591627, 0.60768372, 0.39195739])],
}
CHARGE = {"H": 1, "O": 8}


def boys(n, t):
    return hyp1f1(n + 0.5, n + 1.5, -t) / (2.0 * n + 1.0)


def hermite_e(i, j, t, qx, a, b):
    """Hermite expansion coefficients E_t^{ij} (McMurchie-Davidson)."""
    p = a + b
    q = a * b / p
    if t < 0 or t > i + j:
        return 0.0
    if i == j == t == 0:
        return math.exp(-q * qx * qx)
    if j == 0:
        return (1.0 / (2.0 * p) * hermite_e(i - 1, j, t - 1, qx, a, b)
                - q * qx / a * hermite_e(i - 1, j, t, qx, a, b)
                + (t + 1) * hermite_e(i - 1, j, t + 1, qx, a, b))
    return (1.0 / (2.0 * p) * hermite_e(i, j - 1, t - 1, qx, a, b)
            + q * qx / b * hermite_e(i, j - 1, t, qx, a, b)
            + (t + 1) * hermite_e(i, j - 1, t + 1, qx, a, b))


def overlap_prim(a, la, ra, b, lb, rb):
    p = a + b
    s = 1.0
    for x in range(3):
        s *= hermite_e(la[x], lb[x], 0, ra[x] - rb[x], a, b)
    return s * (math.pi / p) ** 1.5


def kinetic_prim(a, la, ra, b, lb, rb):
    l, m, n = lb
    term0 = b * (2 * (l + m + n) + 3) * overlap_prim(a, la, ra, b, (l, m, n), rb)
    term1 = -2.0 * b * b * (
        overlap_prim(a, la, ra, b, (l + 2, m, n), rb)
        + overlap_prim(a, la, ra, b, (l, m + 2, n), rb)
        + overlap_prim(a, la, ra, b, (l, m, n + 2), rb))
    term2 = -0.5 * (
        l * (l - 1) * overlap_prim(a, la, ra, b, (l - 2, m, n), rb)
        + m * (m - 1) * overlap_prim(a, la, ra, b, (l, m - 2, n), rb)
        + n * (n - 1) * overlap_prim(a, la, ra, b, (l, m, n - 2), rb))
    return term0 + term1 + term2


def hermite_coulomb(t, u, v, n, p, pcx, pcy, pcz, rpc2):
    if t == u == v == 0:
        return (-2.0 * p) ** n * boys(n, p * rpc2)
    if t > 0:
        val = 0.0
        if t > 1:
            val += (t - 1) * hermite_coulomb(t - 2, u, v, n + 1, p, pcx, pcy, pcz, rpc2)
        val += pcx * hermite_coulomb(t - 1, u, v, n + 1, p, pcx, pcy, pcz, rpc2)
        return val
    if u > 0:
        val = 0.0
        if u > 1:
            val += (u - 1) * hermite_coulomb(t, u - 2, v, n + 1, p, pcx, pcy, pcz, rpc2)
        val += pcy * hermite_coulomb(t, u - 1, v, n + 1, p, pcx, pcy, pcz, rpc2)
        return val
    val = 0.0
    if v > 1:
        val += (v - 1) * hermite_coulomb(t, u, v - 2, n + 1, p, pcx, pcy, pcz, rpc2)
    val += pcz * hermite_coulomb(t, u, v - 1, n + 1, p, pcx, pcy, pcz, rpc2)
    return val


def nuclear_prim(a, la, ra, b, lb, rb, rc):
    p = a + b
    rp = (a * np.asarray(ra) + b * np.asarray(rb)) / p
    pc = rp - np.asarray(rc)
    rpc2 = float(pc @ pc)
    val = 0.0
    for t in range(la[0] + lb[0] + 1):
        et = hermite_e(la[0], lb[0], t, ra[0] - rb[0], a, b)
        for u in range(la[1] + lb[1] + 1):
            eu = hermite_e(la[1], lb[1], u, ra[1] - rb[1], a, b)
            for v in range(la[2] + lb[2] + 1):
                ev = hermite_e(la[2], lb[2], v, ra[2] - rb[2], a, b)
                val += et * eu * ev * hermite_coulomb(
                    t, u, v, 0, p, pc[0], pc[1], pc[2], rpc2)
    return val * 2.0 * math.pi / p


def eri_prim(a, la, ra, b, lb, rb, c, lc, rc, d, ld, rd):
    p = a + b
    q = c + d
    alpha = p * q / (p + q)
    rp = (a * np.asarray(ra) + b * np.asarray(rb)) / p
    rq = (c * np.asarray(rc) + d * np.asarray(rd)) / q
    pq = rp - rq
    rpq2 = float(pq @ pq)
    val = 0.0
    for t in range(la[0] + lb[0] + 1):
        et = hermite_e(la[0], lb[0], t, ra[0] - rb[0], a, b)
        for u in range(la[1] + lb[1] + 1):
            eu = hermite_e(la[1], lb[1], u, ra[1] - rb[1], a, b)
            for v in range(la[2] + lb[2] + 1):
                ev = hermite_e(la[2], lb[2], v, ra[2] - rb[2], a, b)
                euv = et * eu * ev
                if euv == 0.0:
                    continue
                for tt in range(lc[0] + ld[0] + 1):
                    ett = hermite_e(lc[0], ld[0], tt, rc[0] - rd[0], c, d)
                    for uu in range(lc[1] + ld[1] + 1):
                        euu = hermite_e(lc[1], ld[1], uu, rc[1] - rd[1], c, d)
                        for vv in range(lc[2] + ld[2] + 1):
                            evv = hermite_e(lc[2], ld[2], vv, rc[2] - rd[2], c, d)
                            f = ett * euu * evv
                            if f == 0.0:
                                continue
                            sign = (-1.0) ** (tt + uu + vv)
                            val += euv * f * sign * hermite_coulomb(
                                t + tt, u + uu, v + vv, 0, alpha,
                                pq[0], pq[1], pq[2], rpq2)
    return val * 2.0 * math.pi ** 2.5 / (p * q * math.sqrt(p + q))


def prim_norm(a, l):
    lx, ly, lz = l
    L = lx + ly + lz

    def df(n):
        return 1 if n <= 0 else n * df(n - 2)

    return math.sqrt((2 * a / math.pi) ** 1.5 * (4 * a) ** L
                     / (df(2 * lx - 1) * df(2 * ly - 1) * df(2 * lz - 1)))


class Bf:
    def __init__(self, center, l, exps, coefs):
        self.center = np.asarray(center, dtype=float)
        self.l = l
        self.exps = list(exps)
        self.coefs = [c * prim_norm(a, l) for c, a in zip(coefs, exps)]
        s = 0.0
        for ci, ai in zip(self.coefs, self.exps):
            for cj, aj in zip(self.coefs, self.exps):
                s += ci * cj * overlap_prim(ai, l, self.center, aj, l, self.center)
        self.coefs = [c / math.sqrt(s) for c in self.coefs]


def build_basis(atoms):
    bfs = []
    for sym, pos in atoms:
        for shell, exps, coefs in STO3G[sym]:
            if shell == "s":
                bfs.append(Bf(pos, (0, 0, 0), exps, coefs))
            else:
                for l in [(1, 0, 0), (0, 1, 0), (0, 0, 1)]:
                    bfs.append(Bf(pos, l, exps, coefs))
    return bfs


def contracted(fn, *bfs_and_args):
    raise NotImplementedError


def one_electron(bfs, atoms):
    n = len(bfs)
    s = np.zeros((n, n))
    t = np.zeros((n, n))
    v = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            bi, bj = bfs[i], bfs[j]
            sv = tv = vv = 0.0
            for ci, ai in zip(bi.coefs, bi.exps):
                for cj, aj in zip(bj.coefs, bj.exps):
                    w = ci * cj
                    sv += w * overlap_prim(ai, bi.l, bi.center, aj, bj.l, bj.center)
                    tv += w * kinetic_prim(ai, bi.l, bi.center, aj, bj.l, bj.center)
                    for sym, pos in atoms:
                        vv -= CHARGE[sym] * w * nuclear_prim(
                            ai, bi.l, bi.center, aj, bj.l, bj.center, pos)
            s[i, j] = s[j, i] = sv
            t[i, j] = t[j, i] = tv
            v[i, j] = v[j, i] = vv
    return s, t, v


def two_electron(bfs):
    n = len(bfs)
    eri = np.zeros((n, n, n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1)]
    for ij, (i, j) in enumerate(pairs):
        for kl in range(ij + 1):
            k, l = pairs[kl]
            bi, bj, bk, bl = bfs[i], bfs[j], bfs[k], bfs[l]
            val = 0.0
            for ci, ai in zip(bi.coefs, bi.exps):
                for cj, aj in zip(bj.coefs, bj.exps):
                    for ck, ak in zip(bk.coefs, bk.exps):
                        for cl, al in zip(bl.coefs, bl.exps):
                            val += ci * cj * ck * cl * eri_prim(
                                ai, bi.l, bi.center, aj, bj.l, bj.center,
                                ak, bk.l, bk.center, al, bl.l, bl.center)
            for (p, q, r, s_) in {(i, j, k, l), (j, i, k, l), (i, j, l, k),
                                  (j, i, l, k), (k, l, i, j), (l, k, i, j),
                                  (k, l, j, i), (l, k, j, i)}:
                eri[p, q, r, s_] = val
    return eri


def nuclear_repulsion(atoms):
    e = 0.0
    for i, (si, ri) in enumerate(atoms):
        for j, (sj, rj) in enumerate(atoms):
            if j < i:
                d = np.linalg.norm(np.asarray(ri) - np.asarray(rj))
                e += CHARGE[si] * CHARGE[sj] / d
    return e


def rhf(s, hcore, eri, n_elec, max_iter=200, tol=1e-11):
    n = s.shape[0]
    nocc = n_elec // 2
    w, u = np.linalg.eigh(s)
    x = u @ np.diag(w ** -0.5) @ u.T
    f = hcore.copy()
    e_old = 0.0
    dm = np.zeros_like(s)
    for it in range(max_iter):
        fp = x.T @ f @ x
        eps, cp = np.linalg.eigh(fp)
        c = x @ cp
        cocc = c[:, :nocc]
        dm = 2.0 * cocc @ cocc.T
        jmat = np.einsum("pqrs,rs->pq", eri, dm)
        kmat = np.einsum("prqs,rs->pq", eri, dm)
        f_new = hcore + jmat - 0.5 * kmat
        e_elec = 0.5 * np.sum(dm * (hcore + f_new))
        if abs(e_elec - e_old) < tol and it > 1:
            f = f_new
            break
        e_old = e_elec
        f = 0.7 * f_new + 0.3 * f  # light damping
    fp = x.T @ f @ x
    eps, cp = np.linalg.eigh(fp)
    c = x @ cp
    cocc = c[:, :nocc]
    dm = 2.0 * cocc @ cocc.T
    jmat = np.einsum("pqrs,rs->pq", eri, dm)
    kmat = np.einsum("prqs,rs->pq", eri, dm)
    f = hcore + jmat - 0.5 * kmat
    e_elec = 0.5 * np.sum(dm * (hcore + f))
    return e_elec, c, eps


def write_fcidump(path, h1, eri_mo, e_core, n_elec, ms2=0, thresh=1e-12):
    n = h1.shape[0]
    with open(path, "w") as fh:
        fh.write(f"&FCI NORB={n},NELEC={n_elec},MS2={ms2},\n")
        fh.write("  ORBSYM=" + "1," * n + "\n")
        fh.write("  ISYM=1,\n")
        fh.write("&END\n")
        for i in range(n):
            for j in range(i + 1):
                ij = i * (i + 1) // 2 + j
                for k in range(i + 1):
                    for l in range(k + 1):
                        kl = k * (k + 1) // 2 + l
                        if kl > ij:
                            continue
                        v = eri_mo[i, j, k, l]
                        if abs(v) > thresh:
                            fh.write(f"{v:23.16e} {i+1:3d} {j+1:3d} {k+1:3d} {l+1:3d}\n")
        for i in range(n):
            for j in range(i + 1):
                v = h1[i, j]
                if abs(v) > thresh:
                    fh.write(f"{v:23.16e} {i+1:3d} {j+1:3d}   0   0\n")
        fh.write(f"{e_core:23.16e}   0   0   0   0\n")


def run(label, atoms, n_elec, outpath):
    atoms = [(sym, np.asarray(pos, dtype=float) * ANG2BOHR) for sym, pos in atoms]
    bfs = build_basis(atoms)
    s, t, v = one_electron(bfs, atoms)
    eri = two_electron(bfs)
    hcore = t + v
    e_nuc = nuclear_repulsion(atoms)
    e_elec, c, eps = rhf(s, hcore, eri, n_elec)
    e_rhf = e_elec + e_nuc
    h1_mo = c.T @ hcore @ c
    eri_mo = np.einsum("pqrs,pi,qj,rk,sl->ijkl", eri, c, c, c, c, optimize=True)
    write_fcidump(outpath, h1_mo, eri_mo, e_nuc, n_elec)
    print(f"{label}: n_ao={len(bfs)} E_RHF={e_rhf:.8f} -> {outpath}")
    return e_rhf


def octahedron(r):
    """Six H atoms at the vertices of a regular octahedron, r = center-vertex."""
    return [("H", (r, 0, 0)), ("H", (-r, 0, 0)),
            ("H", (0, r, 0)), ("H", (0, -r, 0)),
            ("H", (0, 0, r)), ("H", (0, 0, -r))]


def water(r_oh, angle_deg=104.52):
    half = math.radians(angle_deg) / 2.0
    return [("O", (0.0, 0.0, 0.0)),
            ("H", (r_oh * math.sin(half), 0.0, r_oh * math.cos(half))),
            ("H", (-r_oh * math.sin(half), 0.0, r_oh * math.cos(half)))]


def main():
    outdir = sys.argv[1] if len(sys.argv) > 1 else "data"
    import os
    os.makedirs(outdir, exist_ok=True)
    run("H2 r=0.7414", [("H", (0, 0, 0)), ("H", (0, 0, 0.7414))], 2,
        f"{outdir}/h2_0.7414.fcidump")
    run("H6 oct r=1.70", octahedron(1.70), 6, f"{outdir}/h6_oct_1.70.fcidump")
    for r in (2.0, 2.5, 3.0):
        run(f"H2O r={r}", water(r), 10, f"{outdir}/h2o_{r:.1f}.fcidump")


if __name__ == "__main__":
    main()
