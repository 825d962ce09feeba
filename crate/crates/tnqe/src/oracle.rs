//! Exact sparse representation of the second-quantized Hamiltonian in the
//! determinant basis, plus FCI reference energies. This module is the stand-in for
//! every QPU matrix-element evaluation in the laboratory.
//!
//! Conventions (shared crate-wide):
//! - Spin-orbital modes are interleaved: mode `2p` is orbital p spin-up, mode `2p+1`
//!   spin-down, so one local-dimension-4 site maps onto two adjacent qubits.
//! - Statevector indices are big-endian in the site chain: site 0 carries the most
//!   significant digit. For d=4 the site digit is `k = n_up + 2*n_down`
//!   (0 vacant, 1 up, 2 down, 3 doubly occupied); for d=2 the site digit is the
//!   mode occupation bit.
//! - Jordan-Wigner signs count occupied modes strictly before the acted-on mode in
//!   the interleaved order.

use crate::chem::FermionIntegrals;
use crate::{Result, TnqeError};
use nalgebra::{DMatrix, DVector};

/// Charge sector label: (particle count, twice the z-spin).
pub type Sector = (usize, i32);

/// Occupied-mode bitmask of a packed statevector index (bit q = mode q).
pub fn modes_of_index(d: usize, n_sites: usize, idx: usize) -> u32 {
    let mut mask = 0u32;
    match d {
        4 => {
            for p in 0..n_sites {
                let k = (idx >> (2 * (n_sites - 1 - p))) & 3;
                if k & 1 != 0 {
                    mask |= 1 << (2 * p);
                }
                if k & 2 != 0 {
                    mask |= 1 << (2 * p + 1);
                }
            }
        }
        2 => {
            for q in 0..n_sites {
                if (idx >> (n_sites - 1 - q)) & 1 != 0 {
                    mask |= 1 << q;
                }
            }
        }
        _ => panic!("local dimension must be 2 or 4"),
    }
    mask
}

/// Inverse of [`modes_of_index`].
pub fn index_of_modes(d: usize, n_sites: usize, mask: u32) -> usize {
    let mut idx = 0usize;
    match d {
        4 => {
            for p in 0..n_sites {
                let up = (mask >> (2 * p)) & 1;
                let dn = (mask >> (2 * p + 1)) & 1;
                idx |= ((up + 2 * dn) as usize) << (2 * (n_sites - 1 - p));
            }
        }
        2 => {
            for q in 0..n_sites {
                if (mask >> q) & 1 != 0 {
                    idx |= 1 << (n_sites - 1 - q);
                }
            }
        }
        _ => panic!("local dimension must be 2 or 4"),
    }
    idx
}

/// Map a d=4 statevector index to the equivalent d=2 index over 2N interleaved
/// qubits (site digit k = n_up + 2 n_down becomes the bit pair (n_up, n_down)).
pub fn d4_index_to_d2(n_spatial: usize, idx: usize) -> usize {
    index_of_modes(2, 2 * n_spatial, modes_of_index(4, n_spatial, idx))
}

/// Charge (particle count, 2Sz) of a mode mask.
pub fn charge_of_modes(mask: u32) -> Sector {
    let n = mask.count_ones() as usize;
    let mut sz2 = 0i32;
    let mut m = mask;
    while m != 0 {
        let q = m.trailing_zeros();
        sz2 += if q % 2 == 0 { 1 } else { -1 };
        m &= m - 1;
    }
    (n, sz2)
}

/// A determinant space: either the full d^n product space or a fixed charge sector.
/// `states` are packed statevector indices in ascending order; `lookup` inverts the
/// packing for O(1) membership queries.
#[derive(Debug, Clone)]
pub struct DetSpace {
    pub n_sites: usize,
    pub d: usize,
    pub sector: Option<Sector>,
    pub states: Vec<u32>,
    lookup: Vec<i32>,
}

const DIM_CAP: usize = 65536;

impl DetSpace {
    pub fn full(n_sites: usize, d: usize) -> Result<Self> {
        let dim = d.checked_pow(n_sites as u32).filter(|&x| x <= DIM_CAP).ok_or_else(|| {
            TnqeError::Resource(format!("state space {d}^{n_sites} exceeds the desk-scale cap"))
        })?;
        Ok(DetSpace {
            n_sites,
            d,
            sector: None,
            states: (0..dim as u32).collect(),
            lookup: (0..dim as i32).collect(),
        })
    }

    pub fn in_sector(n_sites: usize, d: usize, sector: Sector) -> Result<Self> {
        let dim = d.checked_pow(n_sites as u32).filter(|&x| x <= DIM_CAP).ok_or_else(|| {
            TnqeError::Resource(format!("state space {d}^{n_sites} exceeds the desk-scale cap"))
        })?;
        let mut states = Vec::new();
        let mut lookup = vec![-1i32; dim];
        for idx in 0..dim {
            if charge_of_modes(modes_of_index(d, n_sites, idx)) == sector {
                lookup[idx] = states.len() as i32;
                states.push(idx as u32);
            }
        }
        if states.is_empty() {
            return Err(TnqeError::Precondition(format!(
                "sector {sector:?} is unreachable with {n_sites} sites at d={d}"
            )));
        }
        Ok(DetSpace { n_sites, d, sector: Some(sector), states, lookup })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Position of a packed index within this space, if present.
    pub fn position(&self, packed: usize) -> Option<usize> {
        let v = *self.lookup.get(packed)?;
        if v < 0 {
            None
        } else {
            Some(v as usize)
        }
    }

    /// Scatter a space-ordered vector into the full d^n statevector.
    pub fn expand(&self, amps: &[f64]) -> Vec<f64> {
        let dim = self.d.pow(self.n_sites as u32);
        let mut out = vec![0.0; dim];
        for (i, &s) in self.states.iter().enumerate() {
            out[s as usize] = amps[i];
        }
        out
    }

    /// Gather the components of a full statevector that lie in this space.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.states.iter().map(|&s| full[s as usize]).collect()
    }
}

/// Sparse symmetric Hamiltonian over a determinant space (CSR storage). The core
/// energy is folded into the diagonal.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    pub space: DetSpace,
    pub e_core: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

/// Jordan-Wigner parity: (-1)^(number of occupied modes strictly below `mode`).
#[inline]
fn jw_sign(mask: u32, mode: u32) -> f64 {
    let below = mask & ((1u32 << mode) - 1);
    if below.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn annihilate(mask: u32, mode: u32) -> Option<(u32, f64)> {
    if mask & (1 << mode) == 0 {
        None
    } else {
        Some((mask & !(1 << mode), jw_sign(mask, mode)))
    }
}

#[inline]
fn create(mask: u32, mode: u32) -> Option<(u32, f64)> {
    if mask & (1 << mode) != 0 {
        None
    } else {
        Some((mask | (1 << mode), jw_sign(mask, mode)))
    }
}

/// Build the Hamiltonian over an explicit determinant space. The spin-orbital
/// operator is Σ h_pq a†_pσ a_qσ + Σ (pq|rs)/2 a†_pσ a†_rτ a_sτ a_qσ.
pub fn build_hamiltonian(ints: &FermionIntegrals, space: DetSpace) -> Result<SparseHamiltonian> {
    let n = ints.n_spatial;
    let expected_sites = if space.d == 4 { n } else { 2 * n };
    if space.n_sites != expected_sites {
        return Err(TnqeError::DimMismatch(format!(
            "space has {} sites, integrals need {expected_sites} at d={}",
            space.n_sites, space.d
        )));
    }
    // Collect nonzero terms once.
    let mut one_body = Vec::new();
    for p in 0..n {
        for q in 0..n {
            let v = ints.h1[[p, q]];
            if v.abs() > 1e-14 {
                one_body.push((p as u32, q as u32, v));
            }
        }
    }
    let mut two_body = Vec::new();
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let v = 0.5 * ints.h2[[p, q, r, s]];
                    if v.abs() > 1e-14 {
                        two_body.push((p as u32, q as u32, r as u32, s as u32, v));
                    }
                }
            }
        }
    }

    let dim = space.dim();
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0usize);
    let full_dim = space.d.pow(space.n_sites as u32);
    let mut scratch = vec![0.0f64; full_dim];
    let mut touched: Vec<usize> = Vec::new();

    for &ket in &space.states {
        let mask = modes_of_index(space.d, space.n_sites, ket as usize);
        let add = |target_mask: u32, amp: f64, scratch: &mut Vec<f64>, touched: &mut Vec<usize>| {
            let idx = index_of_modes(space.d, space.n_sites, target_mask);
            if scratch[idx] == 0.0 {
                touched.push(idx);
            }
            scratch[idx] += amp;
        };
        for &(p, q, v) in &one_body {
            for sp in 0..2u32 {
                if let Some((m1, s1)) = annihilate(mask, 2 * q + sp) {
                    if let Some((m2, s2)) = create(m1, 2 * p + sp) {
                        add(m2, v * s1 * s2, &mut scratch, &mut touched);
                    }
                }
            }
        }
        for &(p, q, r, s, v) in &two_body {
            for sp in 0..2u32 {
                let mq = 2 * q + sp;
                let Some((m1, s1)) = annihilate(mask, mq) else { continue };
                for tau in 0..2u32 {
                    if let Some((m2, s2)) = annihilate(m1, 2 * s + tau) {
                        if let Some((m3, s3)) = create(m2, 2 * r + tau) {
                            if let Some((m4, s4)) = create(m3, 2 * p + sp) {
                                add(m4, v * s1 * s2 * s3 * s4, &mut scratch, &mut touched);
                            }
                        }
                    }
                }
            }
        }
        // Core energy on the diagonal.
        let diag_idx = ket as usize;
        if scratch[diag_idx] == 0.0 {
            touched.push(diag_idx);
        }
        scratch[diag_idx] += ints.e_core;

        touched.sort_unstable();
        for &idx in &touched {
            let v = scratch[idx];
            scratch[idx] = 0.0;
            if v.abs() > 1e-15 {
                let col = space.position(idx).ok_or_else(|| {
                    TnqeError::Numerical("Hamiltonian leaks out of the determinant space".into())
                })?;
                cols.push(col as u32);
                vals.push(v);
            }
        }
        touched.clear();
        row_ptr.push(cols.len());
    }
    Ok(SparseHamiltonian { space, e_core: ints.e_core, row_ptr, cols, vals })
}

/// Full-space Hamiltonian at local dimension `d` (2 or 4).
pub fn build_sparse_hamiltonian(ints: &FermionIntegrals, d: usize) -> Result<SparseHamiltonian> {
    if d != 2 && d != 4 {
        return Err(TnqeError::Precondition(format!("local dimension {d} not in {{2,4}}")));
    }
    if d == 2 && 2 * ints.n_spatial > 16 {
        return Err(TnqeError::Resource("more than 16 qubits at d=2".into()));
    }
    let sites = if d == 4 { ints.n_spatial } else { 2 * ints.n_spatial };
    build_hamiltonian(ints, DetSpace::full(sites, d)?)
}

/// Sector-restricted Hamiltonian at d=4 (the solver's working representation).
pub fn build_sector_hamiltonian(
    ints: &FermionIntegrals,
    sector: Sector,
) -> Result<SparseHamiltonian> {
    build_hamiltonian(ints, DetSpace::in_sector(ints.n_spatial, 4, sector)?)
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// y = H x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for (row, y_r) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for t in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.vals[t] * x[self.cols[t] as usize];
            }
            *y_r = acc;
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// H applied column-by-column to a dense matrix.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.dim());
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let x: Vec<f64> = m.column(c).iter().copied().collect();
            let y = self.apply_vec(&x);
            out.column_mut(c).copy_from_slice(&y);
        }
        out
    }

    pub fn quadratic_form(&self, bra: &[f64], ket: &[f64]) -> f64 {
        let hk = self.apply_vec(ket);
        bra.iter().zip(hk.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for row in 0..n {
            for t in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.cols[t] as usize)] = self.vals[t];
            }
        }
        m
    }

    /// Extract the sub-operator over the determinants of `sub` (which must be a
    /// subset of this operator's space).
    pub fn restrict(&self, sub: &DetSpace) -> Result<SparseHamiltonian> {
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &s in &sub.states {
            let row = self.space.position(s as usize).ok_or_else(|| {
                TnqeError::DimMismatch("restriction target is not a subspace".into())
            })?;
            for t in self.row_ptr[row]..self.row_ptr[row + 1] {
                let packed = self.space.states[self.cols[t] as usize] as usize;
                if let Some(c) = sub.position(packed) {
                    cols.push(c as u32);
                    vals.push(self.vals[t]);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseHamiltonian { space: sub.clone(), e_core: self.e_core, row_ptr, cols, vals })
    }
}

/// Result of an FCI sector diagonalization: lowest eigenpair over `space`.
#[derive(Debug, Clone)]
pub struct FciResult {
    pub energy: f64,
    pub space: DetSpace,
    pub vec: Vec<f64>,
}

/// Minimal eigenvalue and ground vector of `h` inside `sector`. Dense solve below
/// dimension 4097, Lanczos with full reorthogonalization above.
pub fn fci_ground_state(h: &SparseHamiltonian, sector: Sector) -> Result<FciResult> {
    let (op, space);
    if h.space.sector == Some(sector) {
        op = h.clone();
        space = h.space.clone();
    } else {
        let sub = DetSpace::in_sector(h.space.n_sites, h.space.d, sector)?;
        op = h.restrict(&sub)?;
        space = sub;
    }
    let dim = op.dim();
    if dim == 0 {
        return Err(TnqeError::Precondition("empty sector".into()));
    }
    let (energy, vec) = if dim <= 4096 {
        let dense = op.to_dense();
        let eig = nalgebra::SymmetricEigen::new(dense);
        let mut best = 0;
        for i in 0..dim {
            if eig.eigenvalues[i] < eig.eigenvalues[best] {
                best = i;
            }
        }
        let v: Vec<f64> = eig.eigenvectors.column(best).iter().copied().collect();
        (eig.eigenvalues[best], v)
    } else {
        lanczos_lowest(&op)?
    };
    // Residual check.
    let hv = op.apply_vec(&vec);
    let res: f64 = hv
        .iter()
        .zip(vec.iter())
        .map(|(a, b)| (a - energy * b).powi(2))
        .sum::<f64>()
        .sqrt();
    if res > 1e-7 {
        return Err(TnqeError::Numerical(format!(
            "eigensolver residual {res:.2e} exceeds 1e-7"
        )));
    }
    Ok(FciResult { energy, space, vec })
}

/// Lanczos with full reorthogonalization and a deterministic start vector.
fn lanczos_lowest(op: &SparseHamiltonian) -> Result<(f64, Vec<f64>)> {
    let n = op.dim();
    let max_iters = 400.min(n);
    // Deterministic pseudo-random start.
    let mut v0 = DVector::from_fn(n, |i, _| {
        let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    });
    v0 /= v0.norm();
    let mut basis: Vec<DVector<f64>> = vec![v0.clone()];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut prev_energy = f64::INFINITY;
    for it in 0..max_iters {
        let v = &basis[it];
        let mut w = DVector::from_vec(op.apply_vec(v.as_slice()));
        let alpha = v.dot(&w);
        alphas.push(alpha);
        // Full reorthogonalization for numerical robustness.
        for b in &basis {
            let c = b.dot(&w);
            w -= b * c;
        }
        for b in &basis {
            let c = b.dot(&w);
            w -= b * c;
        }
        let beta = w.norm();
        // Tridiagonal Ritz solve every few steps.
        if it % 5 == 4 || beta < 1e-12 || it == max_iters - 1 {
            let m = alphas.len();
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alphas[i];
                if i + 1 < m {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = nalgebra::SymmetricEigen::new(t);
            let mut best = 0;
            for i in 0..m {
                if eig.eigenvalues[i] < eig.eigenvalues[best] {
                    best = i;
                }
            }
            let e = eig.eigenvalues[best];
            if (prev_energy - e).abs() < 1e-11 || beta < 1e-12 || it == max_iters - 1 {
                let mut vec = DVector::zeros(n);
                for (j, b) in basis.iter().enumerate() {
                    vec += b * eig.eigenvectors[(j, best)];
                }
                vec /= vec.norm();
                let hv = DVector::from_vec(op.apply_vec(vec.as_slice()));
                let res = (&hv - &vec * e).norm();
                if res > 1e-8 && beta >= 1e-12 && it != max_iters - 1 {
                    prev_energy = e;
                } else if res > 1e-7 {
                    return Err(TnqeError::Numerical(format!(
                        "Lanczos failed to converge: residual {res:.2e}"
                    )));
                } else {
                    return Ok((e, vec.as_slice().to_vec()));
                }
            } else {
                prev_energy = e;
            }
        }
        if beta < 1e-12 {
            break;
        }
        basis.push(w / beta);
        betas.push(beta);
    }
    Err(TnqeError::Numerical("Lanczos iteration limit reached".into()))
}

/// Restricted single-determinant energy: lowest η/2 spatial orbitals doubly
/// occupied. Requires integrals in an RHF molecular-orbital basis and even η.
pub fn hf_energy(ints: &FermionIntegrals) -> Result<f64> {
    if ints.n_electrons % 2 != 0 {
        return Err(TnqeError::Unsupported("odd electron count in hf_energy".into()));
    }
    let nocc = ints.n_electrons / 2;
    let mut e = ints.e_core;
    for i in 0..nocc {
        e += 2.0 * ints.h1[[i, i]];
        for j in 0..nocc {
            e += 2.0 * ints.h2[[i, i, j, j]] - ints.h2[[i, j, j, i]];
        }
    }
    Ok(e)
}

/// Exact ⟨bra|op|ket⟩ (op = None means the identity).
pub fn oracle_matrix_element(
    bra: &[f64],
    op: Option<&SparseHamiltonian>,
    ket: &[f64],
) -> Result<f64> {
    if bra.len() != ket.len() {
        return Err(TnqeError::DimMismatch(format!(
            "bra dim {} vs ket dim {}",
            bra.len(),
            ket.len()
        )));
    }
    match op {
        None => Ok(bra.iter().zip(ket.iter()).map(|(a, b)| a * b).sum()),
        Some(h) => {
            if h.dim() != ket.len() {
                return Err(TnqeError::DimMismatch(format!(
                    "operator dim {} vs vector dim {}",
                    h.dim(),
                    ket.len()
                )));
            }
            Ok(h.quadratic_form(bra, ket))
        }
    }
}
