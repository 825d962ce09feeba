//! Run orchestration: iterative subspace construction over a growing set of
//! references, with variant selection, initial-ordering heuristics, and
//! convergence tracing.
//!
//! A run starts with a single randomly initialized reference optimized by plain
//! noiseless sweeps (the classical-DMRG role). Each subsequent stage adds a fresh
//! random reference that inherits the previous reference's orbital basis, settles
//! it with a few swap-enabled sweeps over the new reference alone, then alternates
//! full-set sweeps whose rotation moves depend on the variant: `Lcmps` never
//! rotates, `TnqeF` uses fermionic swaps only, and `TnqeG` alternates swap and
//! continuous Givens sweeps.

use crate::chem::FermionIntegrals;
use crate::mps::Mps;
use crate::oracle::{build_sector_hamiltonian, hf_energy};
use crate::par::ExecMode;
use crate::subspace::{GeeMode, NoiseModel};
use crate::sweep::{generalized_sweep, RotationMode, SweepConfig, TnqeState};
use crate::{Result, TnqeError};
use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Rotation policy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Linear combination of fixed-basis states: no orbital rotations.
    Lcmps,
    /// Discrete reorderings only (fermionic swaps).
    TnqeF,
    /// Full schedule: swap sweeps alternating with Givens-angle sweeps.
    TnqeG,
}

impl Variant {
    /// (settle-phase rotation, first and second alternating-phase rotations).
    fn rotations(self) -> (RotationMode, RotationMode, RotationMode) {
        match self {
            Variant::Lcmps => (RotationMode::None, RotationMode::None, RotationMode::None),
            Variant::TnqeF => (RotationMode::Fswap, RotationMode::Fswap, RotationMode::Fswap),
            Variant::TnqeG => (RotationMode::Fswap, RotationMode::Fswap, RotationMode::Givens),
        }
    }
}

/// How the initial site order of the orbital chain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingStrategy {
    /// Keep the integrals' own order.
    Given,
    /// Uniformly random permutation from the given seed.
    Random(u64),
    /// Order by the Fiedler vector of the |exchange integral| adjacency graph.
    FiedlerExchange,
}

/// Site permutation for the chain: position i holds original orbital `perm[i]`.
pub fn initial_ordering(ints: &FermionIntegrals, strategy: OrderingStrategy) -> Vec<usize> {
    let n = ints.n_spatial;
    match strategy {
        OrderingStrategy::Given => (0..n).collect(),
        OrderingStrategy::Random(seed) => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
            perm
        }
        OrderingStrategy::FiedlerExchange => {
            // Graph Laplacian of the exchange magnitudes K_pq = |(pq|qp)|.
            let mut lap = nalgebra::DMatrix::zeros(n, n);
            for p in 0..n {
                for q in 0..n {
                    if p == q {
                        continue;
                    }
                    let w = ints.h2[[p, q, q, p]].abs();
                    lap[(p, q)] = -w;
                    lap[(p, p)] += w;
                }
            }
            let eig = nalgebra::SymmetricEigen::new(lap);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let fiedler = eig.eigenvectors.column(order[1.min(n - 1)]).into_owned();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by(|&a, &b| fiedler[a].total_cmp(&fiedler[b]));
            perm
        }
    }
}

/// Reindex the integrals so chain site i carries original orbital `perm[i]`.
pub fn permute_integrals(ints: &FermionIntegrals, perm: &[usize]) -> Result<FermionIntegrals> {
    let n = ints.n_spatial;
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(TnqeError::Precondition("not a permutation of the orbitals".into()));
    }
    let mut h1 = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            h1[[i, j]] = ints.h1[[perm[i], perm[j]]];
        }
    }
    let mut h2 = Array4::zeros((n, n, n, n));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    h2[[i, j, k, l]] = ints.h2[[perm[i], perm[j], perm[k], perm[l]]];
                }
            }
        }
    }
    Ok(FermionIntegrals {
        n_spatial: n,
        n_electrons: ints.n_electrons,
        ms2: ints.ms2,
        e_core: ints.e_core,
        h1,
        h2,
        label: ints.label.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunParams {
    pub chi_max: usize,
    pub m_max: usize,
    /// Settle sweeps over each newly added reference.
    pub ns1: usize,
    /// Alternating sweep pairs over the full set per stage.
    pub ns2: usize,
    pub variant: Variant,
    pub ordering: OrderingStrategy,
    /// Seeds the random reference tensors.
    pub seed: u64,
    pub noise: NoiseModel,
    pub nreps: usize,
    pub e_tol: f64,
    pub gee_mode: GeeMode,
    pub lin_dep_tol: f64,
    pub cond_max: f64,
    pub exec: ExecMode,
    pub dmrg_max_sweeps: usize,
    pub dmrg_tol: f64,
    /// Known FCI energy, if available, for correlation fractions in the trace.
    pub e_fci: Option<f64>,
}

impl RunParams {
    pub fn new(chi_max: usize, m_max: usize) -> Self {
        RunParams {
            chi_max,
            m_max,
            ns1: 4,
            ns2: 6,
            variant: Variant::TnqeG,
            ordering: OrderingStrategy::Given,
            seed: 1,
            noise: NoiseModel::none(),
            nreps: 2,
            e_tol: 1e-3,
            gee_mode: GeeMode::Projection,
            lin_dep_tol: 1e-3,
            cond_max: 1e8,
            exec: ExecMode::default(),
            dmrg_max_sweeps: 30,
            dmrg_tol: 1e-10,
            e_fci: None,
        }
    }
}

/// Fraction of the correlation energy E_HF − E_FCI recovered at energy `e`.
pub fn correlation_fraction(e: f64, e_hf: f64, e_fci: f64) -> Result<f64> {
    let denom = e_hf - e_fci;
    if denom <= 0.0 {
        return Err(TnqeError::Numerical(
            "correlation fraction needs E_HF above E_FCI".into(),
        ));
    }
    Ok((e_hf - e) / denom)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    /// Stage (number of references in play).
    pub stage_m: usize,
    /// Global sweep index within the run.
    pub sweep: usize,
    pub rotation: RotationMode,
    /// Pencil energy estimate after the sweep.
    pub e1: f64,
    /// Exact-oracle subspace energy of the current state.
    pub e_exact: f64,
    /// Correlation fraction of `e_exact` (NaN when no FCI energy is known).
    pub corr_fraction: f64,
    pub qpu_total: u64,
    pub batches: u64,
    pub n_swaps: usize,
    pub max_chi: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage_m,sweep,rotation,e1,e_exact,corr_fraction,qpu_total,batches,n_swaps,max_chi\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:?},{:.12e},{:.12e},{:.6},{},{},{},{}\n",
                r.stage_m,
                r.sweep,
                r.rotation,
                r.e1,
                r.e_exact,
                r.corr_fraction,
                r.qpu_total,
                r.batches,
                r.n_swaps,
                r.max_chi
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serialization cannot fail")
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub state: TnqeState,
    pub trace: ConvergenceTrace,
    /// Exact-oracle subspace energy of the final state.
    pub energy_exact: f64,
    /// Final (possibly noisy) pencil estimate.
    pub energy_estimate: f64,
    pub e_hf: f64,
    pub ordering: Vec<usize>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over (seed, salt).
    let mut x = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct RunCtx<'a, 'b> {
    params: &'a RunParams,
    e_hf: f64,
    trace: ConvergenceTrace,
    sweep_index: usize,
    observer: Option<&'b mut dyn FnMut(&ConvergenceTrace)>,
}

impl RunCtx<'_, '_> {
    fn record(&mut self, state: &TnqeState, rotation: RotationMode, e1: f64, n_swaps: usize) {
        let e_exact = state.exact_energy().unwrap_or(f64::NAN);
        let corr = match self.params.e_fci {
            Some(f) => correlation_fraction(e_exact, self.e_hf, f).unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        self.trace.rows.push(TraceRow {
            stage_m: state.n_refs(),
            sweep: self.sweep_index,
            rotation,
            e1,
            e_exact,
            corr_fraction: corr,
            qpu_total: state.qpu_total,
            batches: state.batches,
            n_swaps,
            max_chi: state.refs.iter().map(|r| r.max_bond_dim()).max().unwrap_or(0),
        });
        self.sweep_index += 1;
        if let Some(obs) = self.observer.as_mut() {
            obs(&self.trace);
        }
    }

    /// Run one sweep, tolerate (and trace) solver failures.
    fn sweep(&mut self, state: &mut TnqeState, cfg: &SweepConfig) {
        match generalized_sweep(state, cfg) {
            Ok(rep) => self.record(state, cfg.rotation, rep.energy, rep.n_swaps),
            Err(e) => {
                eprintln!("sweep {} failed, continuing: {e}", self.sweep_index);
                self.record(state, cfg.rotation, f64::NAN, 0);
            }
        }
    }
}

/// Execute the full staged run on the given integrals.
pub fn run_tnqe(ints: &FermionIntegrals, params: &RunParams) -> Result<RunResult> {
    run_tnqe_observed(ints, params, None)
}

/// As `run_tnqe`, but invokes `observer` with the trace after every recorded
/// sweep, so callers can flush partial results.
pub fn run_tnqe_observed(
    ints: &FermionIntegrals,
    params: &RunParams,
    observer: Option<&mut dyn FnMut(&ConvergenceTrace)>,
) -> Result<RunResult> {
    if params.m_max < 1 {
        return Err(TnqeError::Precondition("at least one reference is required".into()));
    }
    let ordering = initial_ordering(ints, params.ordering);
    let ints = permute_integrals(ints, &ordering)?;
    let sector = (ints.n_electrons, ints.ms2);
    let h = build_sector_hamiltonian(&ints, sector)?;
    let e_hf = hf_energy(&ints)?;
    let n = ints.n_spatial;

    let phi1 = Mps::random_in_sector(n, sector, params.chi_max, mix_seed(params.seed, 1))?;
    let mut state = TnqeState::new(h, vec![phi1])?;
    let mut ctx =
        RunCtx { params, e_hf, trace: ConvergenceTrace::default(), sweep_index: 0, observer };

    let base_cfg = |jset: Vec<usize>, rotation: RotationMode, noise: NoiseModel| {
        let mut cfg = SweepConfig::new(jset, params.chi_max);
        cfg.rotation = rotation;
        cfg.nreps = params.nreps;
        cfg.e_tol = params.e_tol;
        cfg.noise = noise;
        cfg.gee_mode = params.gee_mode;
        cfg.lin_dep_tol = params.lin_dep_tol;
        cfg.cond_max = params.cond_max;
        cfg.exec = params.exec;
        cfg
    };

    // Stage 1: plain noiseless sweeps play the role of classical DMRG.
    let dmrg_cfg = base_cfg(vec![0], RotationMode::None, NoiseModel::none());
    let mut prev = state.energy;
    for _ in 0..params.dmrg_max_sweeps {
        ctx.sweep(&mut state, &dmrg_cfg);
        if (prev - state.energy).abs() < params.dmrg_tol {
            break;
        }
        prev = state.energy;
    }

    let (rot_settle, rot_a, rot_b) = params.variant.rotations();
    for m in 2..=params.m_max {
        let phi = Mps::random_in_sector(n, sector, params.chi_max, mix_seed(params.seed, m as u64))?;
        state.add_reference(phi, m - 2)?;
        state.refresh_estimate()?;
        let all: Vec<usize> = (0..m).collect();
        let settle_cfg = base_cfg(vec![m - 1], rot_settle, params.noise);
        for _ in 0..params.ns1 {
            ctx.sweep(&mut state, &settle_cfg);
        }
        let cfg_a = base_cfg(all.clone(), rot_a, params.noise);
        let cfg_b = base_cfg(all, rot_b, params.noise);
        for _ in 0..params.ns2 {
            ctx.sweep(&mut state, &cfg_a);
            ctx.sweep(&mut state, &cfg_b);
        }
    }

    let energy_exact = state.exact_energy()?;
    Ok(RunResult {
        energy_estimate: state.energy,
        energy_exact,
        e_hf,
        ordering,
        trace: ctx.trace,
        state,
    })
}

/// Run up to `n_seeds` restarts with derived seeds and keep the best result.
/// Stops early once `target` (if given) is reached by the exact energy.
pub fn run_tnqe_best(
    ints: &FermionIntegrals,
    params: &RunParams,
    n_seeds: usize,
    target: Option<f64>,
) -> Result<RunResult> {
    let mut best: Option<RunResult> = None;
    for k in 0..n_seeds.max(1) {
        let mut p = params.clone();
        p.seed = mix_seed(params.seed, 1000 + k as u64);
        let res = run_tnqe(ints, &p)?;
        let better = best.as_ref().map_or(true, |b| res.energy_exact < b.energy_exact);
        if better {
            best = Some(res);
        }
        if let (Some(t), Some(b)) = (target, best.as_ref()) {
            if b.energy_exact <= t {
                break;
            }
        }
    }
    Ok(best.expect("at least one restart runs"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fci_ground_state;
    use ndarray::{Array2, Array4};
    use rand::Rng;

    fn random_integrals(n: usize, seed: u64) -> FermionIntegrals {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut h1 = Array2::zeros((n, n));
        for p in 0..n {
            for q in 0..=p {
                let v = rng.gen_range(-1.0..1.0) + if p == q { -2.0 } else { 0.0 };
                h1[[p, q]] = v;
                h1[[q, p]] = v;
            }
        }
        let mut h2 = Array4::zeros((n, n, n, n));
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        if h2[[p, q, r, s]] != 0.0 {
                            continue;
                        }
                        let v = 0.2 * rng.gen_range(-1.0..1.0);
                        for &(a, b, c, d) in &[
                            (p, q, r, s),
                            (q, p, r, s),
                            (p, q, s, r),
                            (q, p, s, r),
                            (r, s, p, q),
                            (s, r, p, q),
                            (r, s, q, p),
                            (s, r, q, p),
                        ] {
                            h2[[a, b, c, d]] = v;
                        }
                    }
                }
            }
        }
        FermionIntegrals {
            n_spatial: n,
            n_electrons: n - n % 2,
            ms2: 0,
            e_core: 0.1,
            h1,
            h2,
            label: "random".into(),
        }
    }

    #[test]
    fn ordering_given_is_identity_and_random_is_deterministic() {
        let ints = random_integrals(4, 3);
        assert_eq!(initial_ordering(&ints, OrderingStrategy::Given), vec![0, 1, 2, 3]);
        let a = initial_ordering(&ints, OrderingStrategy::Random(9));
        let b = initial_ordering(&ints, OrderingStrategy::Random(9));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fiedler_ordering_recovers_a_path_graph() {
        // Exchange couplings form a path 2-0-3-1: the Fiedler order must walk it.
        let mut ints = random_integrals(4, 5);
        ints.h2.fill(0.0);
        let path = [2usize, 0, 3, 1];
        for w in path.windows(2) {
            let (p, q) = (w[0], w[1]);
            for &(a, b, c, d) in &[(p, q, q, p), (q, p, p, q)] {
                ints.h2[[a, b, c, d]] = 1.0;
            }
        }
        let perm = initial_ordering(&ints, OrderingStrategy::FiedlerExchange);
        let rev: Vec<usize> = path.iter().rev().copied().collect();
        assert!(perm == path.to_vec() || perm == rev, "got {perm:?}");
    }

    #[test]
    fn permuted_integrals_leave_the_spectrum_invariant() {
        let ints = random_integrals(3, 11);
        let sector = (ints.n_electrons, ints.ms2);
        let e0 = fci_ground_state(&build_sector_hamiltonian(&ints, sector).unwrap(), sector)
            .unwrap()
            .energy;
        let perm = vec![2, 0, 1];
        let permuted = permute_integrals(&ints, &perm).unwrap();
        let e1 = fci_ground_state(&build_sector_hamiltonian(&permuted, sector).unwrap(), sector)
            .unwrap()
            .energy;
        assert!((e0 - e1).abs() < 1e-9);
    }

    #[test]
    fn correlation_fraction_endpoints() {
        assert_eq!(correlation_fraction(-1.0, -1.0, -2.0).unwrap(), 0.0);
        assert_eq!(correlation_fraction(-2.0, -1.0, -2.0).unwrap(), 1.0);
        assert_eq!(correlation_fraction(-1.5, -1.0, -2.0).unwrap(), 0.5);
        assert!(correlation_fraction(-1.0, -2.0, -1.0).is_err());
    }

    #[test]
    fn staged_run_counts_batches_and_stays_variational() {
        let ints = random_integrals(3, 17);
        let sector = (ints.n_electrons, ints.ms2);
        let e_fci = fci_ground_state(&build_sector_hamiltonian(&ints, sector).unwrap(), sector)
            .unwrap()
            .energy;
        let mut params = RunParams::new(3, 3);
        params.ns1 = 2;
        params.ns2 = 2;
        params.e_fci = Some(e_fci);
        let res = run_tnqe(&ints, &params).unwrap();
        // Batches come only from multi-reference sweeps: (ns1 + 2·ns2) per stage.
        let multi_sweeps = (params.m_max - 1) * (params.ns1 + 2 * params.ns2);
        let bonds = ints.n_spatial - 1;
        assert_eq!(res.state.batches, (multi_sweeps * bonds) as u64);
        assert!(res.energy_exact >= e_fci - 1e-9);
        // Counters in the trace never decrease.
        for w in res.trace.rows.windows(2) {
            assert!(w[1].qpu_total >= w[0].qpu_total);
            assert!(w[1].batches >= w[0].batches);
            assert!(w[1].stage_m >= w[0].stage_m);
        }
        let csv = res.trace.to_csv();
        assert!(csv.lines().count() == res.trace.rows.len() + 1);
    }

    #[test]
    fn fixed_seed_runs_are_bitwise_deterministic() {
        let ints = random_integrals(3, 23);
        let mut params = RunParams::new(2, 2);
        params.ns1 = 1;
        params.ns2 = 1;
        params.noise = NoiseModel { delta_h: 1e-4, delta_s: 1e-5, seed: 7 };
        let a = run_tnqe(&ints, &params).unwrap();
        let b = run_tnqe(&ints, &params).unwrap();
        let ea: Vec<f64> = a.trace.rows.iter().map(|r| r.e1).collect();
        let eb: Vec<f64> = b.trace.rows.iter().map(|r| r.e1).collect();
        assert!(ea.iter().zip(&eb).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan())));
        assert_eq!(a.energy_exact.to_bits(), b.energy_exact.to_bits());
    }

    #[test]
    fn added_references_do_not_hurt_the_noiseless_energy() {
        let ints = random_integrals(3, 29);
        let mut params = RunParams::new(2, 3);
        params.ns1 = 2;
        params.ns2 = 2;
        let res = run_tnqe(&ints, &params).unwrap();
        // Best exact energy per stage is non-increasing within the accept tolerance.
        let mut best_by_stage: Vec<(usize, f64)> = Vec::new();
        for r in &res.trace.rows {
            if r.e_exact.is_nan() {
                continue;
            }
            match best_by_stage.last_mut() {
                Some((m, e)) if *m == r.stage_m => *e = e.min(r.e_exact),
                _ => best_by_stage.push((r.stage_m, r.e_exact)),
            }
        }
        for w in best_by_stage.windows(2) {
            assert!(w[1].1 <= w[0].1 + params.e_tol, "stage regression: {w:?}");
        }
    }
}
