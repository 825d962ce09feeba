//! Matrix product states over chains of local dimension 2 or 4, with optional
//! charge-labelled bonds for particle-number and spin conservation.
//!
//! Tensors are stored as `(left, physical, right)` arrays. Bond charge labels, when
//! present, record the cumulative (particle count, 2Sz) of all sites to the left of
//! the bond; a tensor entry is admissible only when `left label + site charge =
//! right label`. Charge labels are supported at d=4 (one site per spatial orbital);
//! d=2 qubit chains are always handled densely.
//!
//! The flattening convention for two-site blocks is lexicographic in
//! `(left, k1, k2, right)`, matching the one-hot basis ordering used by the
//! subspace engine.

use crate::{Result, TnqeError};
use nalgebra::DMatrix;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Cumulative charge label of a bond: (particles to the left, 2Sz to the left).
pub type Charge = (i32, i32);

/// Charge carried by a single d=4 site digit.
pub fn site_charge_d4(k: usize) -> Charge {
    match k {
        0 => (0, 0),
        1 => (1, 1),
        2 => (1, -1),
        3 => (2, 0),
        _ => panic!("d=4 digit out of range"),
    }
}

#[derive(Debug, Clone)]
pub struct Mps {
    pub d: usize,
    pub tensors: Vec<Array3<f64>>,
    /// Per-bond cumulative charge labels (length n_sites+1) when the state lives in
    /// a fixed charge sector; `None` for dense (unrestricted) states.
    pub bond_charges: Option<Vec<Vec<Charge>>>,
}

/// Outcome of a truncated two-site split.
#[derive(Debug, Clone)]
pub struct SplitReport {
    /// Singular values of the normalized two-site block, descending.
    pub singular_values: Vec<f64>,
    /// Number kept.
    pub kept: usize,
    /// Truncation error: 1 - (kept weight)/(total weight).
    pub xi: f64,
}

impl Mps {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.tensors[0].shape()[0]];
        for t in &self.tensors {
            dims.push(t.shape()[2]);
        }
        dims
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Product state with the given site digits. Charge labels are attached at d=4.
    pub fn product_state(d: usize, digits: &[usize]) -> Self {
        let tensors = digits
            .iter()
            .map(|&k| {
                let mut t = Array3::zeros((1, d, 1));
                t[[0, k, 0]] = 1.0;
                t
            })
            .collect();
        let bond_charges = (d == 4).then(|| {
            let mut labels = vec![vec![(0, 0)]];
            let mut acc = (0, 0);
            for &k in digits {
                let c = site_charge_d4(k);
                acc = (acc.0 + c.0, acc.1 + c.1);
                labels.push(vec![acc]);
            }
            labels
        });
        Mps { d, tensors, bond_charges }
    }

    /// Dense random state with bond dimension ≤ chi, right-canonical, normalized.
    pub fn random_dense(n_sites: usize, d: usize, chi: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(n_sites);
        let mut left = 1usize;
        let mut dims = vec![1usize];
        for p in 0..n_sites {
            let cap_l = d.pow(p as u32).min(1 << 20);
            let cap_r = d.pow((n_sites - 1 - p) as u32).min(1 << 20);
            let right = if p == n_sites - 1 { 1 } else { chi.min(cap_l * d).min(cap_r) };
            dims.push(right);
            left = right;
        }
        let _ = left;
        let mut l = 1usize;
        for p in 0..n_sites {
            let r = dims[p + 1];
            let t = Array3::from_shape_fn((l, d, r), |_| rng.gen::<f64>() - 0.5);
            tensors.push(t);
            l = r;
        }
        let mut mps = Mps { d, tensors, bond_charges: None };
        mps.right_canonicalize().expect("canonicalization of dense random state");
        mps.normalize_at(0);
        mps
    }

    /// Random normalized state inside a charge sector: iid Gaussian amplitudes on
    /// every sector determinant, then compression to bond dimension chi.
    pub fn random_in_sector(
        n_spatial: usize,
        sector: (usize, i32),
        chi: usize,
        seed: u64,
    ) -> Result<Self> {
        let space = crate::oracle::DetSpace::in_sector(n_spatial, 4, sector)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut amps: Vec<f64> = (0..space.dim())
            .map(|_| {
                // Box-Muller from two uniforms.
                let u1: f64 = rng.gen::<f64>().max(1e-300);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let norm: f64 = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        let full = space.expand(&amps);
        let (mps, _) = Mps::from_statevector(&full, n_spatial, 4, chi, Some(sector))?;
        Ok(mps)
    }

    /// Compress a statevector into an MPS with bond dimension ≤ chi via sequential
    /// SVDs. Returns the state (renormalized) and the accumulated truncation error.
    /// When `sector` is given (d=4 only) the decomposition is blockwise per charge
    /// and the result carries bond labels.
    pub fn from_statevector(
        v: &[f64],
        n_sites: usize,
        d: usize,
        chi: usize,
        sector: Option<(usize, i32)>,
    ) -> Result<(Self, f64)> {
        let dim = d.checked_pow(n_sites as u32).ok_or_else(|| {
            TnqeError::Resource("statevector dimension overflow".into())
        })?;
        if v.len() != dim {
            return Err(TnqeError::DimMismatch(format!(
                "statevector length {} vs {d}^{n_sites}",
                v.len()
            )));
        }
        if sector.is_some() && d != 4 {
            return Err(TnqeError::Unsupported("charge labels require d=4".into()));
        }
        let charged = sector.is_some();
        let mut tensors = Vec::with_capacity(n_sites);
        let mut bond_labels: Vec<Vec<Charge>> = vec![vec![(0, 0)]];
        // Current factor: rows = current left bond, cols = remaining configuration.
        let mut rows = 1usize;
        let mut cols = dim;
        let mut c: Vec<f64> = v.to_vec(); // row-major rows x cols
        let mut labels: Vec<Charge> = vec![(0, 0)];
        let mut xi_total = 0.0f64;
        for p in 0..n_sites {
            let new_cols = cols / d;
            // Reshape to (rows*d) x new_cols; row (b,k) label = labels[b] + ch(k).
            let nrows = rows * d;
            let row_label = |row: usize| -> Charge {
                if !charged {
                    return (0, 0);
                }
                let b = row / d;
                let k = row % d;
                let ch = site_charge_d4(k);
                (labels[b].0 + ch.0, labels[b].1 + ch.1)
            };
            if p == n_sites - 1 {
                // Last site: the remaining factor IS the tensor (right bond 1).
                let mut t = Array3::zeros((rows, d, 1));
                for b in 0..rows {
                    for k in 0..d {
                        t[[b, k, 0]] = c[b * cols + k];
                    }
                }
                tensors.push(t);
                if charged {
                    let (ne, ms2) = sector.unwrap();
                    bond_labels.push(vec![(ne as i32, ms2)]);
                }
                break;
            }
            // Group rows by label.
            let mut groups: Vec<(Charge, Vec<usize>)> = Vec::new();
            for row in 0..nrows {
                let lab = row_label(row);
                match groups.iter_mut().find(|(g, _)| *g == lab) {
                    Some((_, idxs)) => idxs.push(row),
                    None => groups.push((lab, vec![row])),
                }
            }
            groups.sort_by_key(|(g, _)| *g);
            // SVD each block; collect singular triples.
            struct Block {
                label: Charge,
                rows: Vec<usize>,
                u: DMatrix<f64>,
                s: Vec<f64>,
                vt: DMatrix<f64>,
            }
            let mut blocks = Vec::new();
            let mut all_sv: Vec<(f64, usize, usize)> = Vec::new(); // (sigma, block, col)
            for (bi, (lab, ridx)) in groups.iter().enumerate() {
                let m = DMatrix::from_fn(ridx.len(), new_cols, |i, j| {
                    let row = ridx[i];
                    let (b, k) = (row / d, row % d);
                    c[b * cols + k * new_cols + j]
                });
                let (u, s, vt) = crate::linalg::thin_svd(&m);
                let s: Vec<f64> = s.iter().copied().collect();
                for (ci, &sv) in s.iter().enumerate() {
                    if sv > 1e-14 {
                        all_sv.push((sv, bi, ci));
                    }
                }
                blocks.push(Block { label: *lab, rows: ridx.clone(), u, s, vt });
            }
            all_sv.sort_by(|a, b| b.0.total_cmp(&a.0));
            let total_w: f64 = all_sv.iter().map(|(s, _, _)| s * s).sum();
            let keep = all_sv.len().min(chi).max(1.min(all_sv.len()));
            if keep == 0 {
                return Err(TnqeError::Numerical("statevector has zero norm".into()));
            }
            let kept_w: f64 = all_sv[..keep].iter().map(|(s, _, _)| s * s).sum();
            xi_total += 1.0 - kept_w / total_w;
            let selected = &all_sv[..keep];
            // Build the site tensor and the next factor.
            let mut t = Array3::zeros((rows, d, keep));
            let mut next_c = vec![0.0f64; keep * new_cols];
            let mut next_labels = Vec::with_capacity(keep);
            for (out, &(sv, bi, ci)) in selected.iter().enumerate() {
                let blk = &blocks[bi];
                next_labels.push(blk.label);
                for (i, &row) in blk.rows.iter().enumerate() {
                    let (b, k) = (row / d, row % d);
                    t[[b, k, out]] = blk.u[(i, ci)];
                }
                for j in 0..new_cols {
                    next_c[out * new_cols + j] = sv * blk.vt[(ci, j)];
                }
                let _ = blk.s[ci];
                debug_assert!((blk.s[ci] - sv).abs() < 1e-12);
            }
            tensors.push(t);
            if charged {
                bond_labels.push(next_labels.clone());
            }
            labels = next_labels;
            rows = keep;
            cols = new_cols;
            c = next_c;
        }
        let mut mps = Mps {
            d,
            tensors,
            bond_charges: charged.then_some(bond_labels),
        };
        mps.normalize();
        Ok((mps, xi_total))
    }

    /// Full statevector (desk scale only).
    pub fn to_statevector(&self) -> Result<Vec<f64>> {
        let n = self.n_sites();
        let dim = self
            .d
            .checked_pow(n as u32)
            .filter(|&x| x <= (1 << 24))
            .ok_or_else(|| TnqeError::Resource("statevector too large to materialize".into()))?;
        // Contract left to right: partial[config_prefix][right_bond].
        let mut partial: Vec<f64> = vec![1.0];
        let mut right = 1usize;
        let mut prefix = 1usize;
        for t in &self.tensors {
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            debug_assert_eq!(l, right);
            let mut next = vec![0.0f64; prefix * d * r];
            for cfg in 0..prefix {
                for k in 0..d {
                    for b in 0..l {
                        let a = partial[cfg * l + b];
                        if a == 0.0 {
                            continue;
                        }
                        for rr in 0..r {
                            next[(cfg * d + k) * r + rr] += a * t[[b, k, rr]];
                        }
                    }
                }
            }
            partial = next;
            prefix *= d;
            right = r;
        }
        debug_assert_eq!(prefix, dim);
        Ok(partial)
    }

    /// ⟨self|other⟩ via transfer-matrix contraction (works at any chain length).
    pub fn overlap(&self, other: &Mps) -> Result<f64> {
        if self.n_sites() != other.n_sites() || self.d != other.d {
            return Err(TnqeError::DimMismatch("overlap of incompatible chains".into()));
        }
        let mut env = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.tensors.iter().zip(other.tensors.iter()) {
            let (la, d, ra) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let (lb, rb) = (b.shape()[0], b.shape()[2]);
            let mut next = DMatrix::zeros(ra, rb);
            for k in 0..d {
                // next += A_k^T env B_k
                let ak = DMatrix::from_fn(la, ra, |i, j| a[[i, k, j]]);
                let bk = DMatrix::from_fn(lb, rb, |i, j| b[[i, k, j]]);
                next += ak.transpose() * &env * bk;
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.overlap(self).expect("self-overlap").max(0.0).sqrt()
    }

    /// Rescale the tensor at site `p` (the orthogonality center) to unit norm.
    pub fn normalize_at(&mut self, p: usize) {
        let n = self.norm();
        if n > 0.0 {
            self.tensors[p].mapv_inplace(|x| x / n);
        }
    }

    pub fn normalize(&mut self) {
        let last = self.tensors.len() - 1;
        self.normalize_at(last);
    }

    /// Zero every tensor entry that violates the bond charge labels. Householder
    /// factorizations leave ~1e-16 junk on structurally zero entries; downstream
    /// code relies on exact structural zeros in the environments.
    pub fn enforce_charge_structure(&mut self) {
        let Some(bc) = self.bond_charges.clone() else { return };
        for p in 0..self.n_sites() {
            let t = &mut self.tensors[p];
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            for b in 0..l {
                let lab = bc[p][b];
                for k in 0..d {
                    let c = site_charge_d4(k);
                    let target = (lab.0 + c.0, lab.1 + c.1);
                    for rr in 0..r {
                        if bc[p + 1][rr] != target {
                            t[[b, k, rr]] = 0.0;
                        }
                    }
                }
            }
        }
    }

    fn site_row_label(&self, bond_before: usize, b: usize, k: usize) -> Option<Charge> {
        let labels = self.bond_charges.as_ref()?;
        let lab = labels[bond_before][b];
        let ch = site_charge_d4(k);
        Some((lab.0 + ch.0, lab.1 + ch.1))
    }

    /// Left-canonicalize sites `0..=upto` (blockwise QR when charge labels exist).
    /// The last site is never touched: it remains the orthogonality center.
    pub fn left_canonicalize_upto(&mut self, upto: usize) -> Result<()> {
        if self.n_sites() < 2 {
            return Ok(());
        }
        for p in 0..=upto.min(self.n_sites() - 2) {
            self.left_normalize_site(p)?;
        }
        self.enforce_charge_structure();
        Ok(())
    }

    /// QR site `p` into left-orthogonal form and absorb the carry into site p+1,
    /// moving the orthogonality center one step right. Only bond p+1 is re-gauged.
    pub fn left_normalize_site(&mut self, p: usize) -> Result<()> {
        {
            let t = &self.tensors[p];
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            // Rows (b,k) grouped by outgoing label; QR per group.
            let charged = self.bond_charges.is_some();
            let mut groups: Vec<(Charge, Vec<usize>)> = Vec::new();
            for row in 0..l * d {
                let lab = if charged {
                    self.site_row_label(p, row / d, row % d).unwrap()
                } else {
                    (0, 0)
                };
                match groups.iter_mut().find(|(g, _)| *g == lab) {
                    Some((_, v)) => v.push(row),
                    None => groups.push((lab, vec![row])),
                }
            }
            groups.sort_by_key(|(g, _)| *g);
            let mut new_t_cols: Vec<(Charge, Vec<f64>)> = Vec::new(); // columns of Q per label
            let mut carry_rows: Vec<Vec<f64>> = Vec::new(); // rows of R (len r)
            for (lab, ridx) in &groups {
                // Restrict to the columns carrying this label: unpivoted QR over
                // the full column set does not reveal the rank when admissible
                // columns sit to the right of structural zeros, and the bond
                // would inflate by the spurious directions.
                let cidx: Vec<usize> = if charged {
                    let bc = self.bond_charges.as_ref().unwrap();
                    (0..r).filter(|&rr| bc[p + 1][rr] == *lab).collect()
                } else {
                    (0..r).collect()
                };
                if cidx.is_empty() {
                    continue;
                }
                let m = DMatrix::from_fn(ridx.len(), cidx.len(), |i, j| {
                    let row = ridx[i];
                    t[[row / d, row % d, cidx[j]]]
                });
                // Economy QR; drop numerically null directions to keep bonds tight.
                let qr = m.qr();
                let q = qr.q();
                let rm = qr.r();
                let rank = rm.nrows();
                for c in 0..rank {
                    // Column norm of R row c decides whether this direction matters.
                    let rnorm: f64 =
                        (0..cidx.len()).map(|j| rm[(c, j)] * rm[(c, j)]).sum::<f64>().sqrt();
                    if rnorm < 1e-14 {
                        continue;
                    }
                    let mut col = vec![0.0; l * d];
                    for (i, &row) in ridx.iter().enumerate() {
                        col[row] = q[(i, c)];
                    }
                    new_t_cols.push((*lab, col));
                    let mut full = vec![0.0; r];
                    for (j, &rr) in cidx.iter().enumerate() {
                        full[rr] = rm[(c, j)];
                    }
                    carry_rows.push(full);
                }
            }
            let new_r = new_t_cols.len();
            if new_r == 0 {
                return Err(TnqeError::Numerical("tensor is numerically zero".into()));
            }
            let mut a = Array3::zeros((l, d, new_r));
            let mut new_labels = Vec::with_capacity(new_r);
            for (out, (lab, col)) in new_t_cols.iter().enumerate() {
                new_labels.push(*lab);
                for row in 0..l * d {
                    a[[row / d, row % d, out]] = col[row];
                }
            }
            self.tensors[p] = a;
            if let Some(labels) = self.bond_charges.as_mut() {
                labels[p + 1] = new_labels;
            }
            // Absorb carry into the next tensor.
            let nt = &self.tensors[p + 1];
            let (_, d2, r2) = (nt.shape()[0], nt.shape()[1], nt.shape()[2]);
            let mut merged = Array3::zeros((new_r, d2, r2));
            for (i, row) in carry_rows.iter().enumerate() {
                for (b, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..d2 {
                        for j in 0..r2 {
                            merged[[i, k, j]] += w * nt[[b, k, j]];
                        }
                    }
                }
            }
            self.tensors[p + 1] = merged;
        }
        self.enforce_charge_structure();
        Ok(())
    }

    pub fn left_canonicalize(&mut self) -> Result<()> {
        let n = self.n_sites();
        self.left_canonicalize_upto(n - 1)
    }

    /// Right-canonicalize sites `max(from,1)..n` (blockwise LQ when charge labels
    /// exist). Site 0 is never touched: it remains the orthogonality center.
    pub fn right_canonicalize_from(&mut self, from: usize) -> Result<()> {
        if self.n_sites() < 2 {
            return Ok(());
        }
        for p in (from.max(1)..self.n_sites()).rev() {
            self.right_normalize_site(p)?;
        }
        self.enforce_charge_structure();
        Ok(())
    }

    /// LQ site `p` into right-orthogonal form and absorb the carry into site p-1,
    /// moving the orthogonality center one step left. Only bond p is re-gauged.
    pub fn right_normalize_site(&mut self, p: usize) -> Result<()> {
        {
            let t = &self.tensors[p];
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let charged = self.bond_charges.is_some();
            // Group left-bond rows by incoming label; LQ per group over columns (k,r).
            let mut groups: Vec<(Charge, Vec<usize>)> = Vec::new();
            for b in 0..l {
                let lab = if charged {
                    self.bond_charges.as_ref().unwrap()[p][b]
                } else {
                    (0, 0)
                };
                match groups.iter_mut().find(|(g, _)| *g == lab) {
                    Some((_, v)) => v.push(b),
                    None => groups.push((lab, vec![b])),
                }
            }
            groups.sort_by_key(|(g, _)| *g);
            let mut new_rows: Vec<(Charge, Vec<f64>)> = Vec::new(); // rows of Q (len d*r)
            let mut carry_cols: Vec<Vec<f64>> = Vec::new(); // columns of L (len l)
            for (lab, bidx) in &groups {
                // Same column restriction as in the left-moving QR: only the
                // (k, rr) pairs consistent with this incoming label can carry
                // weight, and the unpivoted factorization needs them isolated
                // to report the true rank.
                let cidx: Vec<usize> = if charged {
                    let bc = self.bond_charges.as_ref().unwrap();
                    (0..d * r)
                        .filter(|&j| {
                            let (k, rr) = (j / r, j % r);
                            let ch = site_charge_d4(k);
                            bc[p + 1][rr] == (lab.0 + ch.0, lab.1 + ch.1)
                        })
                        .collect()
                } else {
                    (0..d * r).collect()
                };
                if cidx.is_empty() {
                    continue;
                }
                let m = DMatrix::from_fn(bidx.len(), cidx.len(), |i, j| {
                    t[[bidx[i], cidx[j] / r, cidx[j] % r]]
                });
                // LQ via QR of the transpose: M^T = Q R  =>  M = R^T Q^T.
                let qr = m.transpose().qr();
                let q = qr.q(); // |cidx| x rank, orthonormal columns
                let rm = qr.r(); // rank x |bidx|
                let rank = rm.nrows();
                for c in 0..rank {
                    let rnorm: f64 =
                        (0..bidx.len()).map(|j| rm[(c, j)] * rm[(c, j)]).sum::<f64>().sqrt();
                    if rnorm < 1e-14 {
                        continue;
                    }
                    let mut row = vec![0.0; d * r];
                    for (j, &cj) in cidx.iter().enumerate() {
                        row[cj] = q[(j, c)];
                    }
                    new_rows.push((*lab, row));
                    let mut col = vec![0.0; l];
                    for (i, &b) in bidx.iter().enumerate() {
                        col[b] = rm[(c, i)];
                    }
                    carry_cols.push(col);
                }
            }
            let new_l = new_rows.len();
            if new_l == 0 {
                return Err(TnqeError::Numerical("tensor is numerically zero".into()));
            }
            let mut bt = Array3::zeros((new_l, d, r));
            let mut new_labels = Vec::with_capacity(new_l);
            for (out, (lab, row)) in new_rows.iter().enumerate() {
                new_labels.push(*lab);
                for j in 0..d * r {
                    bt[[out, j / r, j % r]] = row[j];
                }
            }
            self.tensors[p] = bt;
            if let Some(labels) = self.bond_charges.as_mut() {
                labels[p] = new_labels;
            }
            let pt = &self.tensors[p - 1];
            let (l0, d0, _) = (pt.shape()[0], pt.shape()[1], pt.shape()[2]);
            let mut merged = Array3::zeros((l0, d0, new_l));
            for (i, col) in carry_cols.iter().enumerate() {
                for (b, &w) in col.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for bb in 0..l0 {
                        for k in 0..d0 {
                            merged[[bb, k, i]] += pt[[bb, k, b]] * w;
                        }
                    }
                }
            }
            self.tensors[p - 1] = merged;
        }
        self.enforce_charge_structure();
        Ok(())
    }

    pub fn right_canonicalize(&mut self) -> Result<()> {
        self.right_canonicalize_from(0)
    }

    /// Merge sites p and p+1 into a two-site block flattened as (l, k1, k2, r).
    pub fn merge_two_site(&self, p: usize) -> Vec<f64> {
        let a = &self.tensors[p];
        let b = &self.tensors[p + 1];
        let (l, d, m) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let r = b.shape()[2];
        let mut theta = vec![0.0f64; l * d * d * r];
        for bl in 0..l {
            for k1 in 0..d {
                for mm in 0..m {
                    let av = a[[bl, k1, mm]];
                    if av == 0.0 {
                        continue;
                    }
                    for k2 in 0..d {
                        for rr in 0..r {
                            theta[((bl * d + k1) * d + k2) * r + rr] += av * b[[mm, k2, rr]];
                        }
                    }
                }
            }
        }
        theta
    }

    /// Split a two-site block back into tensors at (p, p+1), truncating to chi.
    /// The block is normalized before the SVD; the split is blockwise per middle-bond
    /// charge when labels exist. The left factor absorbs nothing (left-canonical);
    /// singular values and the right factor are merged (right tensor = S V^T),
    /// leaving the orthogonality center at p+1.
    pub fn split_two_site(&mut self, p: usize, theta: &[f64], chi: usize) -> Result<SplitReport> {
        let (l, d) = (self.tensors[p].shape()[0], self.d);
        let r = self.tensors[p + 1].shape()[2];
        if theta.len() != l * d * d * r {
            return Err(TnqeError::DimMismatch("two-site block has wrong size".into()));
        }
        let norm: f64 = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(TnqeError::Numerical("two-site block has zero norm".into()));
        }
        let charged = self.bond_charges.is_some();
        // Rows (bl,k1), columns (k2,rr); row label = left label + ch(k1); admissible
        // entries have row label + ch(k2) = right label.
        let mut groups: Vec<(Charge, Vec<usize>)> = Vec::new();
        for row in 0..l * d {
            let lab = if charged {
                self.site_row_label(p, row / d, row % d).unwrap()
            } else {
                (0, 0)
            };
            match groups.iter_mut().find(|(g, _)| *g == lab) {
                Some((_, v)) => v.push(row),
                None => groups.push((lab, vec![row])),
            }
        }
        groups.sort_by_key(|(g, _)| *g);
        struct Block {
            label: Charge,
            rows: Vec<usize>,
            u: DMatrix<f64>,
            vt: DMatrix<f64>,
        }
        let mut blocks = Vec::new();
        let mut all_sv: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, (lab, ridx)) in groups.iter().enumerate() {
            let m = DMatrix::from_fn(ridx.len(), d * r, |i, j| {
                theta[(ridx[i] * d + j / r) * r + j % r] / norm
            });
            let (u, s, vt) = crate::linalg::thin_svd(&m);
            for (ci, &sv) in s.iter().enumerate() {
                if sv > 1e-14 {
                    all_sv.push((sv, bi, ci));
                }
            }
            blocks.push(Block { label: *lab, rows: ridx.clone(), u, vt });
        }
        all_sv.sort_by(|a, b| b.0.total_cmp(&a.0));
        if all_sv.is_empty() {
            return Err(TnqeError::Numerical("two-site block is numerically zero".into()));
        }
        let keep = all_sv.len().min(chi);
        let total_w: f64 = all_sv.iter().map(|(s, _, _)| s * s).sum();
        let kept_w: f64 = all_sv[..keep].iter().map(|(s, _, _)| s * s).sum();
        let xi = 1.0 - kept_w / total_w;
        let renorm = kept_w.sqrt();
        let mut a = Array3::zeros((l, d, keep));
        let mut b = Array3::zeros((keep, d, r));
        let mut labels = Vec::with_capacity(keep);
        for (out, &(sv, bi, ci)) in all_sv[..keep].iter().enumerate() {
            let blk = &blocks[bi];
            labels.push(blk.label);
            for (i, &row) in blk.rows.iter().enumerate() {
                a[[row / d, row % d, out]] = blk.u[(i, ci)];
            }
            let w = sv / renorm;
            for j in 0..d * r {
                b[[out, j / r, j % r]] = w * blk.vt[(ci, j)];
            }
        }
        self.tensors[p] = a;
        self.tensors[p + 1] = b;
        if let Some(bc) = self.bond_charges.as_mut() {
            bc[p + 1] = labels;
        }
        Ok(SplitReport {
            singular_values: all_sv.iter().map(|(s, _, _)| *s).collect(),
            kept: keep,
            xi,
        })
    }

    /// Singular values of a two-site block at bond (p, p+1) without modifying the
    /// state (blockwise per middle-bond charge when labels exist). The block is
    /// normalized first; values are returned descending.
    pub fn two_site_spectrum(&self, p: usize, theta: &[f64]) -> Result<Vec<f64>> {
        let (l, d) = (self.tensors[p].shape()[0], self.d);
        let r = self.tensors[p + 1].shape()[2];
        if theta.len() != l * d * d * r {
            return Err(TnqeError::DimMismatch("two-site block has wrong size".into()));
        }
        let norm: f64 = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(TnqeError::Numerical("two-site block has zero norm".into()));
        }
        let charged = self.bond_charges.is_some();
        let mut groups: Vec<(Charge, Vec<usize>)> = Vec::new();
        for row in 0..l * d {
            let lab = if charged {
                self.site_row_label(p, row / d, row % d).unwrap()
            } else {
                (0, 0)
            };
            match groups.iter_mut().find(|(g, _)| *g == lab) {
                Some((_, v)) => v.push(row),
                None => groups.push((lab, vec![row])),
            }
        }
        let mut all: Vec<f64> = Vec::new();
        for (_, ridx) in &groups {
            let m = DMatrix::from_fn(ridx.len(), d * r, |i, j| {
                theta[(ridx[i] * d + j / r) * r + j % r] / norm
            });
            let (_, s, _) = crate::linalg::thin_svd(&m);
            for &sv in s.iter() {
                if sv > 1e-14 {
                    all.push(sv);
                }
            }
        }
        all.sort_by(|a, b| b.total_cmp(a));
        Ok(all)
    }

    /// Apply a two-site gate to a flat (l, k1, k2, r) block, out of place.
    pub fn apply_gate_to_block(theta: &[f64], l: usize, d: usize, r: usize, gate: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(theta.len(), l * d * d * r);
        assert_eq!(gate.nrows(), d * d);
        let mut out = vec![0.0f64; theta.len()];
        for bl in 0..l {
            for kp in 0..d * d {
                for kq in 0..d * d {
                    let g = gate[(kp, kq)];
                    if g == 0.0 {
                        continue;
                    }
                    for rr in 0..r {
                        out[(bl * d * d + kp) * r + rr] += g * theta[(bl * d * d + kq) * r + rr];
                    }
                }
            }
        }
        out
    }

    /// Apply a two-site gate (d² × d², row index k1'·d+k2') at bond (p, p+1),
    /// truncating to chi. Returns the split report.
    pub fn apply_two_site_gate(
        &mut self,
        p: usize,
        gate: &DMatrix<f64>,
        chi: usize,
    ) -> Result<SplitReport> {
        let d = self.d;
        if gate.nrows() != d * d || gate.ncols() != d * d {
            return Err(TnqeError::DimMismatch("gate is not two-site".into()));
        }
        let theta = self.merge_two_site(p);
        let l = self.tensors[p].shape()[0];
        let r = self.tensors[p + 1].shape()[2];
        let mut out = vec![0.0f64; theta.len()];
        for bl in 0..l {
            for kp in 0..d * d {
                for kq in 0..d * d {
                    let g = gate[(kp, kq)];
                    if g == 0.0 {
                        continue;
                    }
                    for rr in 0..r {
                        out[(bl * d * d + kp) * r + rr] += g * theta[(bl * d * d + kq) * r + rr];
                    }
                }
            }
        }
        self.split_two_site(p, &out, chi)
    }

    /// Apply a one-site gate (d × d) at site p in place.
    pub fn apply_one_site_gate(&mut self, p: usize, gate: &DMatrix<f64>) -> Result<()> {
        let d = self.d;
        if gate.nrows() != d || gate.ncols() != d {
            return Err(TnqeError::DimMismatch("gate is not one-site".into()));
        }
        let t = &self.tensors[p];
        let (l, _, r) = (t.shape()[0], d, t.shape()[2]);
        let mut nt = Array3::zeros((l, d, r));
        for b in 0..l {
            for kp in 0..d {
                for kq in 0..d {
                    let g = gate[(kp, kq)];
                    if g == 0.0 {
                        continue;
                    }
                    for rr in 0..r {
                        nt[[b, kp, rr]] += g * t[[b, kq, rr]];
                    }
                }
            }
        }
        self.tensors[p] = nt;
        Ok(())
    }

    /// Schmidt values across the bond after site `p` (statevector route; desk scale).
    pub fn schmidt_values(&self, p: usize) -> Result<Vec<f64>> {
        let v = self.to_statevector()?;
        let n = self.n_sites();
        let rows = self.d.pow((p + 1) as u32);
        let cols = self.d.pow((n - p - 1) as u32);
        let m = DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j]);
        let (_, sv, _) = crate::linalg::thin_svd(&m);
        let mut s: Vec<f64> = sv.iter().copied().filter(|x| *x > 1e-14).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }

    /// Von Neumann entanglement entropy across the bond after site `p` (natural log).
    pub fn entanglement_entropy(&self, p: usize) -> Result<f64> {
        let s = self.schmidt_values(p)?;
        let w: f64 = s.iter().map(|x| x * x).sum();
        Ok(s.iter().map(|x| {
            let q = x * x / w;
            if q > 0.0 {
                -q * q.ln()
            } else {
                0.0
            }
        }).sum())
    }

    /// Expand a d=4 chain into a d=2 chain with two qubits per site (up before
    /// down), splitting each site by an exact SVD. Charge labels are dropped.
    pub fn split_d4_to_d2(&self) -> Result<Mps> {
        if self.d != 4 {
            return Err(TnqeError::Precondition("split requires a d=4 chain".into()));
        }
        let mut tensors = Vec::with_capacity(2 * self.n_sites());
        for t in &self.tensors {
            let (l, _, r) = (t.shape()[0], 4, t.shape()[2]);
            // k = b_up + 2 b_down; rows (l, b_up), cols (b_down, r).
            let m = DMatrix::from_fn(2 * l, 2 * r, |i, j| {
                let (b, bu) = (i / 2, i % 2);
                let (bd, rr) = (j / r, j % r);
                t[[b, bu + 2 * bd, rr]]
            });
            let (u, sv, vt) = crate::linalg::thin_svd(&m);
            let keep: Vec<usize> = sv
                .iter()
                .enumerate()
                .filter(|(_, s)| **s > 1e-13)
                .map(|(i, _)| i)
                .collect();
            let mid = keep.len().max(1);
            let mut a = Array3::zeros((l, 2, mid));
            let mut bt = Array3::zeros((mid, 2, r));
            for (out, &ci) in keep.iter().enumerate() {
                let s = sv[ci];
                for b in 0..l {
                    for bu in 0..2 {
                        a[[b, bu, out]] = u[(b * 2 + bu, ci)];
                    }
                }
                for bd in 0..2 {
                    for rr in 0..r {
                        bt[[out, bd, rr]] = s * vt[(ci, bd * r + rr)];
                    }
                }
            }
            tensors.push(a);
            tensors.push(bt);
        }
        Ok(Mps { d: 2, tensors, bond_charges: None })
    }

    /// Check left-canonical form: Σ_k A_k† A_k = I at every site except the last.
    pub fn left_ortho_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.n_sites() - 1 {
            let t = &self.tensors[p];
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let m = DMatrix::from_fn(l * d, r, |i, j| t[[i / d, i % d, j]]);
            let g = m.transpose() * &m;
            let defect = (&g - DMatrix::identity(r, r)).amax();
            worst = worst.max(defect);
        }
        worst
    }

    /// Check right-canonical form: Σ_k B_k B_k† = I at every site except the first.
    pub fn right_ortho_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 1..self.n_sites() {
            let t = &self.tensors[p];
            let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let m = DMatrix::from_fn(l, d * r, |i, j| t[[i, j / r, j % r]]);
            let g = &m * m.transpose();
            let defect = (&g - DMatrix::identity(l, l)).amax();
            worst = worst.max(defect);
        }
        worst
    }
}
