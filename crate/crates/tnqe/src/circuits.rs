//! Compilation of low-entanglement states into two-qubit gate netlists and a
//! small real statevector simulator realizing the ancilla-interference readout.
//!
//! The compiler follows the iterated-disentangler scheme: each layer is a
//! staircase of two-qubit orthogonal gates preparing the χ=2 truncation of the
//! residual state exactly, and the residual is pulled back through the layer's
//! adjoint. Optional re-optimization runs exact coordinate ascent over the gates,
//! replacing each by the orthogonal polar factor of its environment. Controlled
//! netlists are produced by factoring every gate through a real orthogonal square
//! root (rotation half-angles in the Schur basis); determinant −1 gates split off
//! a reflection realized as a basis-changed controlled phase.

use crate::mps::Mps;
use crate::rotations::{apply_rotation_network, GivensNetwork};
use crate::{Result, TnqeError};
use nalgebra::DMatrix;

/// One element of a netlist. Two-qubit matrices are 4×4 over |q0 q1⟩ (q0 the more
/// significant bit); controlled variants act only where the control qubit is 1.
#[derive(Debug, Clone)]
pub enum Gate {
    One { q: usize, m: DMatrix<f64> },
    Two { q0: usize, q1: usize, m: DMatrix<f64> },
    ControlledOne { ctrl: usize, q: usize, m: DMatrix<f64> },
    ControlledTwo { ctrl: usize, q0: usize, q1: usize, m: DMatrix<f64> },
}

impl Gate {
    fn matrix(&self) -> &DMatrix<f64> {
        match self {
            Gate::One { m, .. }
            | Gate::Two { m, .. }
            | Gate::ControlledOne { m, .. }
            | Gate::ControlledTwo { m, .. } => m,
        }
    }

    fn orthogonality_defect(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - DMatrix::identity(m.nrows(), m.nrows())).amax()
    }

    fn transposed(&self) -> Gate {
        match self {
            Gate::One { q, m } => Gate::One { q: *q, m: m.transpose() },
            Gate::Two { q0, q1, m } => Gate::Two { q0: *q0, q1: *q1, m: m.transpose() },
            Gate::ControlledOne { ctrl, q, m } => {
                Gate::ControlledOne { ctrl: *ctrl, q: *q, m: m.transpose() }
            }
            Gate::ControlledTwo { ctrl, q0, q1, m } => {
                Gate::ControlledTwo { ctrl: *ctrl, q0: *q0, q1: *q1, m: m.transpose() }
            }
        }
    }
}

/// Ordered gate list applied front-to-back to |0…0⟩. Qubit 0 is the most
/// significant bit of statevector indices.
#[derive(Debug, Clone)]
pub struct Netlist {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

fn bit_stride(n_qubits: usize, q: usize) -> usize {
    1 << (n_qubits - 1 - q)
}

fn apply_one(state: &mut [f64], n: usize, q: usize, m: &DMatrix<f64>, ctrl: Option<usize>) {
    let s = bit_stride(n, q);
    let sc = ctrl.map(|c| bit_stride(n, c));
    for i in 0..state.len() {
        if i & s != 0 {
            continue;
        }
        if let Some(c) = sc {
            if i & c == 0 {
                continue;
            }
        }
        let (a, b) = (state[i], state[i | s]);
        state[i] = m[(0, 0)] * a + m[(0, 1)] * b;
        state[i | s] = m[(1, 0)] * a + m[(1, 1)] * b;
    }
}

fn apply_two(
    state: &mut [f64],
    n: usize,
    q0: usize,
    q1: usize,
    m: &DMatrix<f64>,
    ctrl: Option<usize>,
) {
    let (s0, s1) = (bit_stride(n, q0), bit_stride(n, q1));
    let sc = ctrl.map(|c| bit_stride(n, c));
    for i in 0..state.len() {
        if i & s0 != 0 || i & s1 != 0 {
            continue;
        }
        if let Some(c) = sc {
            if i & c == 0 {
                continue;
            }
        }
        let idx = [i, i | s1, i | s0, i | s0 | s1];
        let v = [state[idx[0]], state[idx[1]], state[idx[2]], state[idx[3]]];
        for r in 0..4 {
            state[idx[r]] = (0..4).map(|c| m[(r, c)] * v[c]).sum();
        }
    }
}

impl Netlist {
    pub fn identity(n_qubits: usize) -> Self {
        Netlist { n_qubits, gates: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.gates {
            if g.orthogonality_defect() > 1e-10 {
                return Err(TnqeError::Precondition("netlist gate is not orthogonal".into()));
            }
            let in_range = |q: usize| q < self.n_qubits;
            let ok = match g {
                Gate::One { q, .. } => in_range(*q),
                Gate::Two { q0, q1, .. } => in_range(*q0) && in_range(*q1) && q0 != q1,
                Gate::ControlledOne { ctrl, q, .. } => in_range(*ctrl) && in_range(*q) && ctrl != q,
                Gate::ControlledTwo { ctrl, q0, q1, .. } => {
                    in_range(*ctrl) && in_range(*q0) && in_range(*q1) && ctrl != q0 && ctrl != q1 && q0 != q1
                }
            };
            if !ok {
                return Err(TnqeError::Precondition("netlist qubit index out of range".into()));
            }
        }
        Ok(())
    }

    pub fn apply_to(&self, state: &mut [f64]) {
        assert_eq!(state.len(), 1 << self.n_qubits);
        for g in &self.gates {
            match g {
                Gate::One { q, m } => apply_one(state, self.n_qubits, *q, m, None),
                Gate::Two { q0, q1, m } => apply_two(state, self.n_qubits, *q0, *q1, m, None),
                Gate::ControlledOne { ctrl, q, m } => {
                    apply_one(state, self.n_qubits, *q, m, Some(*ctrl))
                }
                Gate::ControlledTwo { ctrl, q0, q1, m } => {
                    apply_two(state, self.n_qubits, *q0, *q1, m, Some(*ctrl))
                }
            }
        }
    }

    /// The state this netlist prepares from |0…0⟩.
    pub fn prepare(&self) -> Vec<f64> {
        let mut state = vec![0.0; 1 << self.n_qubits];
        state[0] = 1.0;
        self.apply_to(&mut state);
        state
    }

    /// Adjoint netlist: reversed order, transposed gates.
    pub fn inverted(&self) -> Netlist {
        Netlist {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::transposed).collect(),
        }
    }

    /// One gate per line: kind, qubits, then row-major matrix entries.
    pub fn to_text(&self) -> String {
        let mut out = format!("qubits {}\n", self.n_qubits);
        let fmt = |m: &DMatrix<f64>| {
            m.row_iter()
                .flat_map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .join(" ")
        };
        for g in &self.gates {
            let line = match g {
                Gate::One { q, m } => format!("one {q} {}", fmt(m)),
                Gate::Two { q0, q1, m } => format!("two {q0} {q1} {}", fmt(m)),
                Gate::ControlledOne { ctrl, q, m } => format!("cone {ctrl} {q} {}", fmt(m)),
                Gate::ControlledTwo { ctrl, q0, q1, m } => {
                    format!("ctwo {ctrl} {q0} {q1} {}", fmt(m))
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Complete a set of orthonormal columns to a full orthogonal matrix, choosing the
/// free columns deterministically (Gram–Schmidt over the standard basis) and using
/// the last free column's sign to set det = +1 when possible.
fn complete_orthonormal(dim: usize, cols: &[Vec<f64>], positions: &[usize]) -> DMatrix<f64> {
    assert_eq!(cols.len(), positions.len());
    let mut basis: Vec<Vec<f64>> = cols.to_vec();
    for seed in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut v = vec![0.0; dim];
        v[seed] = 1.0;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    assert_eq!(basis.len(), dim, "orthonormal completion failed");
    // Specified columns go to their requested positions, completions fill the rest.
    let free: Vec<usize> = (0..dim).filter(|p| !positions.contains(p)).collect();
    let mut m = DMatrix::zeros(dim, dim);
    for (i, &p) in positions.iter().enumerate() {
        for r in 0..dim {
            m[(r, p)] = basis[i][r];
        }
    }
    for (i, &p) in free.iter().enumerate() {
        for r in 0..dim {
            m[(r, p)] = basis[cols.len() + i][r];
        }
    }
    if let Some(&last) = free.last() {
        if m.determinant() < 0.0 {
            for r in 0..dim {
                m[(r, last)] = -m[(r, last)];
            }
        }
    }
    m
}

/// Staircase netlist preparing a right-canonical χ≤2 qubit MPS exactly from
/// |0…0⟩: gates descend the chain, each embedding one site tensor with the bond
/// index carried on the next qubit.
fn staircase_layer(mps: &Mps) -> Result<Vec<Gate>> {
    if mps.d != 2 {
        return Err(TnqeError::Precondition("staircase compilation needs qubit chains".into()));
    }
    if mps.max_bond_dim() > 2 {
        return Err(TnqeError::Precondition("staircase layer needs bond dimension ≤ 2".into()));
    }
    let n = mps.n_sites();
    if n < 2 {
        return Err(TnqeError::Precondition("need at least two qubits".into()));
    }
    let mut gates = Vec::with_capacity(n);
    // Site 0 carries the norm: column (0,0) of the first gate is the flattened
    // tensor; the bond index lands on qubit 1.
    let t0 = &mps.tensors[0];
    let r0 = t0.shape()[2];
    let mut col = vec![0.0; 4];
    for k in 0..2 {
        for a in 0..r0 {
            col[2 * k + a] = t0[[0, k, a]];
        }
    }
    gates.push(Gate::Two { q0: 0, q1: 1, m: complete_orthonormal(4, &[col], &[0]) });
    // Interior sites: |b⟩|0⟩ → Σ B[b,k,l] |k⟩|l⟩, valid by right-orthonormality.
    for i in 1..n - 1 {
        let t = &mps.tensors[i];
        let (l, r) = (t.shape()[0], t.shape()[2]);
        let mut cols = Vec::new();
        for b in 0..l {
            let mut c = vec![0.0; 4];
            for k in 0..2 {
                for a in 0..r {
                    c[2 * k + a] = t[[b, k, a]];
                }
            }
            cols.push(c);
        }
        let positions: Vec<usize> = (0..l).map(|b| 2 * b).collect();
        gates.push(Gate::Two { q0: i, q1: i + 1, m: complete_orthonormal(4, &cols, &positions) });
    }
    // Last site: single-qubit rotation of the residual bond label.
    let t = &mps.tensors[n - 1];
    let l = t.shape()[0];
    let cols: Vec<Vec<f64>> = (0..l).map(|b| vec![t[[b, 0, 0]], t[[b, 1, 0]]]).collect();
    let positions: Vec<usize> = (0..l).collect();
    gates.push(Gate::One { q: n - 1, m: complete_orthonormal(2, &cols, &positions) });
    Ok(gates)
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinate ascent over the netlist gates: each gate is replaced by the
/// orthogonal polar factor (determinant sign preserved) of its environment, which
/// maximizes the overlap with the target exactly per step.
fn reoptimize(net: &mut Netlist, target: &[f64], iters: usize) {
    let n = net.n_qubits;
    let dim = 1usize << n;
    for _ in 0..iters {
        // Suffix states: target pulled back through the gates after position t.
        let t_count = net.gates.len();
        let mut suffix = vec![target.to_vec(); t_count + 1];
        for t in (0..t_count).rev() {
            let mut s = suffix[t + 1].clone();
            let inv = Netlist { n_qubits: n, gates: vec![net.gates[t].transposed()] };
            inv.apply_to(&mut s);
            suffix[t] = s;
        }
        let mut x = vec![0.0; dim];
        x[0] = 1.0;
        for t in 0..t_count {
            let y = &suffix[t + 1];
            let (q0, q1, is_two) = match &net.gates[t] {
                Gate::Two { q0, q1, .. } => (*q0, *q1, true),
                Gate::One { q, .. } => (*q, *q, false),
                // Controlled gates are produced by lifting, not compiling; skip.
                _ => {
                    net.gates[t].clone().apply_in(&mut x, n);
                    continue;
                }
            };
            let gdim = if is_two { 4 } else { 2 };
            // Environment E[u, v] = Σ_rest y[rest,u] · x[rest,v].
            let mut env: DMatrix<f64> = DMatrix::zeros(gdim, gdim);
            let (s0, s1) = (bit_stride(n, q0), if is_two { bit_stride(n, q1) } else { 0 });
            for i in 0..dim {
                if i & s0 != 0 || (is_two && i & s1 != 0) {
                    continue;
                }
                let idx: Vec<usize> = if is_two {
                    vec![i, i | s1, i | s0, i | s0 | s1]
                } else {
                    vec![i, i | s0]
                };
                for u in 0..gdim {
                    for v in 0..gdim {
                        env[(u, v)] += y[idx[u]] * x[idx[v]];
                    }
                }
            }
            let old_det = net.gates[t].matrix().determinant();
            let (u, _, vt) = crate::linalg::thin_svd(&env);
            let mut m = &u * &vt;
            if m.determinant() * old_det < 0.0 {
                // Flip the direction of the smallest singular value to keep the
                // determinant sign (constrained orthogonal Procrustes).
                let k = gdim - 1;
                let mut uk = u.clone();
                for r in 0..gdim {
                    uk[(r, k)] = -uk[(r, k)];
                }
                m = &uk * &vt;
            }
            match &mut net.gates[t] {
                Gate::Two { m: gm, .. } | Gate::One { m: gm, .. } => *gm = m,
                _ => unreachable!(),
            }
            net.gates[t].clone().apply_in(&mut x, n);
        }
    }
}

impl Gate {
    fn apply_in(&self, state: &mut [f64], n: usize) {
        let single = Netlist { n_qubits: n, gates: vec![self.clone()] };
        single.apply_to(state);
    }
}

/// Compile a qubit MPS into a ≤`d_max`-layer staircase netlist. Returns the
/// netlist and the fidelity |⟨target|prepared⟩|².
pub fn disentangler_compile(
    mps: &Mps,
    d_max: usize,
    reopt_iters: usize,
) -> Result<(Netlist, f64)> {
    if mps.d != 2 {
        return Err(TnqeError::Precondition("compilation needs a qubit chain".into()));
    }
    let n = mps.n_sites();
    let mut target = mps.to_statevector()?;
    let norm = inner(&target, &target).sqrt();
    if norm < 1e-300 {
        return Err(TnqeError::Numerical("cannot compile the zero state".into()));
    }
    target.iter_mut().for_each(|x| *x /= norm);

    let mut residual = target.clone();
    let mut layers: Vec<Vec<Gate>> = Vec::new();
    for _ in 0..d_max.max(1) {
        let (mut trunc, _xi) = Mps::from_statevector(&residual, n, 2, 2, None)?;
        trunc.right_canonicalize_from(1)?;
        trunc.normalize_at(0);
        let gates = staircase_layer(&trunc)?;
        let layer = Netlist { n_qubits: n, gates };
        let mut next = residual.clone();
        layer.inverted().apply_to(&mut next);
        layers.push(layer.gates);
        residual = next;
        if 1.0 - residual[0] * residual[0] < 1e-14 {
            break;
        }
    }
    // Applied order: last layer first (it acts on |0…0⟩).
    let mut gates = Vec::new();
    for layer in layers.iter().rev() {
        gates.extend(layer.iter().cloned());
    }
    let mut net = Netlist { n_qubits: n, gates };
    if reopt_iters > 0 {
        reoptimize(&mut net, &target, reopt_iters);
    }
    let overlap = inner(&target, &net.prepare());
    Ok((net, overlap * overlap))
}

/// Real orthogonal square root of a special-orthogonal matrix via half-angle
/// rotations in the Schur basis. Paired −1 eigenvalues become quarter-turns.
pub fn sqrt_special_orthogonal(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = m.nrows();
    if (m.transpose() * m - DMatrix::identity(dim, dim)).amax() > 1e-9 || m.determinant() < 0.0 {
        return Err(TnqeError::Precondition(
            "square root path needs a special orthogonal matrix".into(),
        ));
    }
    let schur = m.clone().schur();
    let (q, t) = schur.unpack();
    let mut w = DMatrix::identity(dim, dim);
    let mut minus_ones: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < dim {
        if i + 1 < dim && t[(i + 1, i)].abs() > 1e-9 {
            let theta = t[(i + 1, i)].atan2(t[(i, i)]);
            let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
            w[(i, i)] = c;
            w[(i, i + 1)] = -s;
            w[(i + 1, i)] = s;
            w[(i + 1, i + 1)] = c;
            i += 2;
        } else {
            if t[(i, i)] < 0.0 {
                minus_ones.push(i);
            }
            i += 1;
        }
    }
    // det = +1 forces an even count; each pair forms a π rotation plane.
    if minus_ones.len() % 2 != 0 {
        return Err(TnqeError::Numerical("unpaired reflection in a rotation".into()));
    }
    for pair in minus_ones.chunks(2) {
        let (a, b) = (pair[0], pair[1]);
        w[(a, a)] = 0.0;
        w[(b, b)] = 0.0;
        w[(a, b)] = -1.0;
        w[(b, a)] = 1.0;
    }
    let root = &q * w * q.transpose();
    if ((&root * &root) - m).amax() > 1e-9 {
        return Err(TnqeError::Numerical("square root verification failed".into()));
    }
    Ok(root)
}

/// Lift a netlist to its controlled version on one extra (appended) ancilla.
/// Rotation gates become two controlled square roots; determinant −1 gates split
/// off a reflection, realized as an uncontrolled basis change around a controlled
/// phase on the gate's reflection axis.
pub fn controlled_lift(net: &Netlist) -> Result<Netlist> {
    net.validate()?;
    let n = net.n_qubits;
    let ctrl = n; // appended ancilla
    let mut out = Netlist { n_qubits: n + 1, gates: Vec::new() };
    for g in &net.gates {
        match g {
            Gate::One { q, m } => {
                let det = m.determinant();
                if det > 0.0 {
                    let w = sqrt_special_orthogonal(m)?;
                    out.gates.push(Gate::ControlledOne { ctrl, q: *q, m: w.clone() });
                    out.gates.push(Gate::ControlledOne { ctrl, q: *q, m: w });
                } else {
                    // Reflection: diagonalize as Sᵀ·diag(1,−1)·S and control the phase.
                    lift_reflection(&mut out, ctrl, &[*q], m)?;
                }
            }
            Gate::Two { q0, q1, m } => {
                let det = m.determinant();
                if det > 0.0 {
                    let w = sqrt_special_orthogonal(m)?;
                    out.gates.push(Gate::ControlledTwo { ctrl, q0: *q0, q1: *q1, m: w.clone() });
                    out.gates.push(Gate::ControlledTwo { ctrl, q0: *q0, q1: *q1, m: w });
                } else {
                    lift_reflection(&mut out, ctrl, &[*q0, *q1], m)?;
                }
            }
            _ => {
                return Err(TnqeError::Precondition(
                    "cannot lift an already-controlled netlist".into(),
                ));
            }
        }
    }
    Ok(out)
}

/// Emit the controlled version of a determinant −1 orthogonal gate U: factor
/// U = W²·H with H a reflection about one axis, so that ctrl-U =
/// (ctrl-W)² · S · (ctrl-phase) · Sᵀ with S an uncontrolled basis change.
fn lift_reflection(out: &mut Netlist, ctrl: usize, qs: &[usize], m: &DMatrix<f64>) -> Result<()> {
    let dim = m.nrows();
    // Reflection axis: eigenvector of U with eigenvalue −1 (symmetric part safe —
    // use U + I kernel via SVD of (U + I) complement: take the singular vector of
    // (U + I) with the smallest singular value.
    let plus = m + DMatrix::identity(dim, dim);
    let (_, sv, vt) = crate::linalg::thin_svd(&plus);
    let mut k = 0;
    for i in 0..dim {
        if sv[i] < sv[k] {
            k = i;
        }
    }
    let v: Vec<f64> = (0..dim).map(|i| vt[(k, i)]).collect();
    // H = I − 2vvᵀ; S maps v to the last basis axis so H = Sᵀ·diag(1,…,1,−1)·S.
    let h = DMatrix::from_fn(dim, dim, |r, c| {
        (if r == c { 1.0 } else { 0.0 }) - 2.0 * v[r] * v[c]
    });
    let rot = m * &h; // det +1 by construction
    let w = sqrt_special_orthogonal(&rot)?;
    let mut last_col = vec![0.0; dim];
    last_col[dim - 1] = 1.0;
    // S: orthogonal with last ROW = v (so S v = e_last).
    let mut cols: Vec<Vec<f64>> = Vec::new();
    cols.push(v.clone());
    let s_t = complete_orthonormal(dim, &cols, &[0]); // columns: first = v
    // Reorder so v is the LAST column of Sᵀ (i.e. last row of S).
    let mut st = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let src = (c + 1) % dim;
        for r in 0..dim {
            st[(r, c)] = s_t[(r, src)];
        }
    }
    let s = st.transpose();
    let mut phase = DMatrix::identity(dim, dim);
    phase[(dim - 1, dim - 1)] = -1.0;
    // Applied order realizes U = W² · (Sᵀ · phase · S) on the ctrl=1 branch.
    let push = |out: &mut Netlist, mat: DMatrix<f64>, controlled: bool| match qs.len() {
        1 => out.gates.push(if controlled {
            Gate::ControlledOne { ctrl, q: qs[0], m: mat }
        } else {
            Gate::One { q: qs[0], m: mat }
        }),
        _ => out.gates.push(if controlled {
            Gate::ControlledTwo { ctrl, q0: qs[0], q1: qs[1], m: mat }
        } else {
            Gate::Two { q0: qs[0], q1: qs[1], m: mat }
        }),
    };
    push(out, s.clone(), false);
    push(out, phase, true);
    push(out, s.transpose(), false);
    push(out, w.clone(), true);
    push(out, w, true);
    Ok(())
}

/// Real Pauli-string matrix elements are only defined for even Y counts; the
/// string is given most-significant qubit first, characters I, X, Y, Z.
fn pauli_gates(pauli: &str, n: usize, ctrl: usize) -> Result<Vec<Gate>> {
    if pauli.len() != n {
        return Err(TnqeError::DimMismatch("Pauli string length must match qubits".into()));
    }
    let y_count = pauli.chars().filter(|&c| c == 'Y').count();
    if y_count % 2 != 0 {
        return Err(TnqeError::Unsupported(
            "odd-Y Pauli strings have imaginary matrix elements".into(),
        ));
    }
    let mut gates = Vec::new();
    let mut pending_sign = (y_count / 2) % 2 == 1; // i² per Y pair
    for (q, c) in pauli.chars().enumerate() {
        let m = match c {
            'I' => continue,
            'X' => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            // Y = i·[[0,−1],[1,0]]; the i's combine into the global sign above.
            'Y' => DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            'Z' => DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            _ => return Err(TnqeError::Format { line: 0, msg: format!("bad Pauli letter {c}") }),
        };
        let m = if pending_sign {
            pending_sign = false;
            -m
        } else {
            m
        };
        gates.push(Gate::ControlledOne { ctrl, q, m });
    }
    if pending_sign {
        // All-identity string with a global −1: fold into an ancilla-controlled
        // phase via Z on the control pair trick is unnecessary — cannot happen,
        // since a nonzero Y count emits at least one gate.
        return Err(TnqeError::Numerical("sign with no carrier gate".into()));
    }
    Ok(gates)
}

/// Ancilla-interference readout: P(0) − P(1) after
/// H_a · ctrl-U_j† · ctrl-P · Γ · ctrl-U_i · H_a on |0…0⟩, which equals
/// Re⟨0|U_j†·P·Γ·U_i|0⟩ for real circuits. The rotation network Γ is uncontrolled.
pub fn hadamard_test(
    u_i: &Netlist,
    u_j: &Netlist,
    rotation: &GivensNetwork,
    pauli: Option<&str>,
) -> Result<f64> {
    if u_i.n_qubits != u_j.n_qubits {
        return Err(TnqeError::DimMismatch("netlists act on different registers".into()));
    }
    let n = u_i.n_qubits;
    if rotation.n_sites != n && !(rotation.gates.is_empty() && !rotation.flip_last) {
        return Err(TnqeError::DimMismatch("rotation network size mismatch".into()));
    }
    let dim = 1usize << (n + 1);
    let mut state = vec![0.0; dim];
    state[0] = 1.0;
    let ctrl = n; // ancilla appended, least significant bit
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let hadamard = DMatrix::from_row_slice(2, 2, &[h, h, h, -h]);
    let full = |gates: Vec<Gate>| Netlist { n_qubits: n + 1, gates };
    full(vec![Gate::One { q: ctrl, m: hadamard.clone() }]).apply_to(&mut state);
    controlled_lift(u_i)?.apply_to(&mut state);
    if !rotation.gates.is_empty() || rotation.flip_last {
        // Uncontrolled network on the system: apply per ancilla branch. The
        // ancilla is the least significant bit, so branches are interleaved.
        for a in 0..2usize {
            let mut sys: Vec<f64> = (0..1 << n).map(|i| state[(i << 1) | a]).collect();
            sys = apply_rotation_network(&sys, rotation, 2)?;
            for (i, v) in sys.into_iter().enumerate() {
                state[(i << 1) | a] = v;
            }
        }
    }
    if let Some(p) = pauli {
        full(pauli_gates(p, n, ctrl)?).apply_to(&mut state);
    }
    controlled_lift(&u_j.inverted())?.apply_to(&mut state);
    full(vec![Gate::One { q: ctrl, m: hadamard }]).apply_to(&mut state);
    let mut p0 = 0.0;
    let mut p1 = 0.0;
    for i in 0..dim {
        if i & 1 == 0 {
            p0 += state[i] * state[i];
        } else {
            p1 += state[i] * state[i];
        }
    }
    Ok(p0 - p1)
}
