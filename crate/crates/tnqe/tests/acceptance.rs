//! Acceptance gate: the ten release criteria, one test (and one pass/fail
//! line) each. Criteria that involve stochastic restarts use fixed seeds and
//! the documented seed budgets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;
use tnqe::chem::{parse_fcidump, FermionIntegrals};
use tnqe::circuits::{disentangler_compile, hadamard_test, Gate, Netlist};
use tnqe::dequantize::{double_sampling_hits, overlap_batches};
use tnqe::driver::{run_tnqe, run_tnqe_best, RunParams, Variant};
use tnqe::mps::Mps;
use tnqe::oracle::{build_sector_hamiltonian, fci_ground_state, oracle_matrix_element};
use tnqe::par::ExecMode;
use tnqe::resources::{
    cnot_count, layer_depth, report, shots_per_h_element, shots_per_s_element, ResourceInput,
};
use tnqe::rotations::{
    apply_rotation_network, givens_decompose, givens_reconstruct, max_entanglement_network,
    GivensNetwork,
};
use tnqe::subspace::{one_hot_decompose, NoiseModel};

const MHA: f64 = 1e-3;
const CHEMICAL_ACCURACY: f64 = 1.6 * MHA;

fn load(name: &str) -> FermionIntegrals {
    let path = format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(path).expect("fixture present");
    parse_fcidump(&text).expect("fixture parses")
}

fn fci_energy(ints: &FermionIntegrals) -> f64 {
    let sector = (ints.n_electrons, ints.ms2);
    let h = build_sector_hamiltonian(ints, sector).unwrap();
    fci_ground_state(&h, sector).unwrap().energy
}

fn rel(x: f64, want: f64) -> f64 {
    (x / want - 1.0).abs()
}

/// Criterion 1: closed-form resource arithmetic and the published schedule
/// totals (within 1%), batches exactly 240.
#[test]
fn c01_formula_suite_and_schedule_totals() {
    let t0 = Instant::now();
    assert_eq!(cnot_count(12, 6), 1188);
    assert_eq!(cnot_count(12, 0), 12 * 12 - 12);
    assert_eq!(cnot_count(50, 100), 80850);
    assert_eq!(layer_depth(12, 6, false), 2033);
    assert_eq!(layer_depth(12, 6, true), 659);
    assert!(rel(shots_per_h_element(46.95, 1e-4), 2.204e11) < 1e-3);
    assert!(rel(shots_per_s_element(1e-5), 1e10) < 1e-12);
    let rep = report(&ResourceInput {
        n_qubits: 12,
        d_layers: 6,
        delta_h: 1e-4,
        delta_s: 1e-5,
        l1_norm: 46.95,
        n_qpu_calls: 5.6e5,
        batches: 240,
    });
    assert!(rel(rep.total_shots, 6.44e16) < 0.01, "total shots {}", rep.total_shots);
    assert!(rel(rep.total_cnots, 7.7e19) < 0.01, "total cnots {}", rep.total_cnots);
    assert_eq!(rep.batches, 240);
    assert!(t0.elapsed().as_millis() < 1000);
    println!(
        "criterion 1: pass (shots {:.3e}, cnots {:.3e}, batches {})",
        rep.total_shots, rep.total_cnots, rep.batches
    );
}

/// Criterion 2: the two-orbital molecule at equilibrium is solved exactly by a
/// single reference at full bond dimension, fast.
#[test]
fn c02_h2_single_reference_exact() {
    let t0 = Instant::now();
    let ints = load("h2_0.7414.fcidump");
    let e_fci = fci_energy(&ints);
    let mut params = RunParams::new(4, 1);
    params.e_fci = Some(e_fci);
    let res = run_tnqe(&ints, &params).unwrap();
    let err = (res.energy_exact - e_fci).abs();
    assert!(err < 1e-8, "H2 error {err:.3e}");
    assert!(t0.elapsed().as_secs() < 10, "took {:?}", t0.elapsed());
    println!("criterion 2: pass (error {err:.3e}, {:?})", t0.elapsed());
}

fn h6_params(chi: usize, m: usize, e_fci: f64) -> RunParams {
    let mut params = RunParams::new(chi, m);
    params.ns1 = 4;
    params.ns2 = 6;
    params.variant = Variant::TnqeG;
    params.e_fci = Some(e_fci);
    params
}

/// Criterion 3: the strongly correlated six-atom benchmark reaches chemical
/// accuracy noiselessly within the seed budget.
#[test]
fn c03_h6_noiseless_chemical_accuracy() {
    let ints = load("h6_oct_1.70.fcidump");
    let e_fci = fci_energy(&ints);
    let params = h6_params(4, 4, e_fci);
    let res = run_tnqe_best(&ints, &params, 3, Some(e_fci + CHEMICAL_ACCURACY)).unwrap();
    let err = res.energy_exact - e_fci;
    assert!(err <= CHEMICAL_ACCURACY, "H6 noiseless error {:.3} mHa", err / MHA);
    println!("criterion 3: pass (error {:.3} mHa)", err / MHA);
}

/// Criterion 4: the same benchmark under the published noise levels still
/// converges to chemical accuracy over the 48-sweep schedule.
#[test]
fn c04_h6_noise_robustness() {
    let ints = load("h6_oct_1.70.fcidump");
    let e_fci = fci_energy(&ints);
    let mut params = h6_params(4, 4, e_fci);
    params.noise = NoiseModel { delta_h: 1e-4, delta_s: 1e-5, seed: 11 };
    let res = run_tnqe_best(&ints, &params, 3, Some(e_fci + CHEMICAL_ACCURACY)).unwrap();
    // ns1 + 2·ns2 = 16 noisy sweeps per added reference, x3 stages = 48.
    let noisy_sweeps: usize =
        res.trace.rows.iter().filter(|r| r.stage_m > 1).count();
    assert_eq!(noisy_sweeps, 48, "schedule is 48 sweeps");
    let err = res.energy_exact - e_fci;
    assert!(err <= CHEMICAL_ACCURACY, "H6 noisy error {:.3} mHa", err / MHA);
    println!("criterion 4: pass (error {:.3} mHa over {noisy_sweeps} sweeps)", err / MHA);
}

/// Criterion 5: with tight bond dimension the three variants separate —
/// rotation-free worst, swap-only intermediate, full rotations best.
#[test]
fn c05_h6_variant_ordering() {
    let ints = load("h6_oct_1.70.fcidump");
    let e_fci = fci_energy(&ints);
    let run = |variant: Variant| {
        let mut params = h6_params(3, 6, e_fci);
        params.variant = variant;
        let res = run_tnqe(&ints, &params).unwrap();
        res.energy_exact - e_fci
    };
    let e_lcmps = run(Variant::Lcmps);
    let e_f = run(Variant::TnqeF);
    let e_g = run(Variant::TnqeG);
    let (ml, mf, mg) = (e_lcmps / MHA, e_f / MHA, e_g / MHA);
    assert!((15.0..=45.0).contains(&ml), "lcmps {ml:.2} mHa outside 30±15");
    assert!((5.0..=15.0).contains(&mf), "tnqe_f {mf:.2} mHa outside 10±5");
    assert!(mg <= 2.0, "tnqe_g {mg:.2} mHa above 2");
    assert!(e_g < e_f && e_f < e_lcmps, "ordering violated: {mg:.2} {mf:.2} {ml:.2}");
    println!("criterion 5: pass (lcmps {ml:.1}, tnqe_f {mf:.1}, tnqe_g {mg:.2} mHa)");
}

/// Criterion 6: stretched water at three geometries, small subspace, chemical
/// accuracy each time.
#[test]
fn c06_h2o_stretched_geometries() {
    let mut worst = 0.0f64;
    for name in ["h2o_2.0.fcidump", "h2o_2.5.fcidump", "h2o_3.0.fcidump"] {
        let ints = load(name);
        let e_fci = fci_energy(&ints);
        let mut params = RunParams::new(3, 3);
        params.e_fci = Some(e_fci);
        let res = run_tnqe_best(&ints, &params, 3, Some(e_fci + CHEMICAL_ACCURACY)).unwrap();
        let err = res.energy_exact - e_fci;
        assert!(err <= CHEMICAL_ACCURACY, "{name} error {:.3} mHa", err / MHA);
        worst = worst.max(err);
    }
    println!("criterion 6: pass (worst error {:.3} mHa)", worst / MHA);
}

/// Criterion 7: the per-commit property suites live in tests/properties.rs;
/// this spot-checks one representative of each family so the acceptance gate
/// stands alone.
#[test]
fn c07_property_suite_representatives() {
    // Canonical-form orthogonality and gauge invariance of the statevector.
    let mps0 = Mps::random_in_sector(5, (4, 0), 3, 42).unwrap();
    let v0 = mps0.to_statevector().unwrap();
    let mut mps = mps0.clone();
    mps.left_canonicalize_upto(4).unwrap();
    assert!(mps.left_ortho_defect() < 1e-10);
    let v1 = mps.to_statevector().unwrap();
    let dot: f64 = v0.iter().zip(&v1).map(|(a, b)| a * b).sum();
    assert!((dot.abs() - 1.0).abs() < 1e-12, "gauge changed the state: {dot}");
    // Truncation identity xi + sum(kept sigma^2) = 1 on a merge/split cycle.
    let mut m2 = mps0.clone();
    m2.left_canonicalize_upto(2).unwrap();
    m2.right_canonicalize_from(3).unwrap();
    m2.normalize_at(2);
    let theta = m2.merge_two_site(2);
    let rep = m2.split_two_site(2, &theta, 2).unwrap();
    let kept: f64 = rep.singular_values.iter().take(rep.kept).map(|s| s * s).sum();
    assert!((rep.xi + kept - 1.0).abs() < 1e-12);
    // Givens round trip.
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for _ in 0..5 {
        let n = 5;
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q = a.qr().q();
        let net = givens_decompose(&q).unwrap();
        assert!((givens_reconstruct(&net) - &q).amax() < 1e-9);
    }
    println!("criterion 7: pass (full suites in tests/properties.rs)");
}

/// Criterion 8: the diamond network drives a half-filled product state to
/// maximal Schmidt rank and entropy across the central cut.
#[test]
fn c08_max_entanglement_network() {
    for n in [4usize, 6, 8] {
        let net = max_entanglement_network(n).unwrap();
        let half = n / 2;
        let mut v = vec![0.0; 1usize << n];
        v[((1usize << half) - 1) << half] = 1.0;
        let rotated = apply_rotation_network(&v, &net, 2).unwrap();
        let dim = 1usize << half;
        let m = DMatrix::from_fn(dim, dim, |r, c| rotated[r * dim + c]);
        let (_, sv, _) = tnqe::linalg::thin_svd(&m);
        let probs: Vec<f64> = sv.iter().map(|s| s * s).filter(|&p| p > 1e-14).collect();
        assert_eq!(probs.len(), dim, "Schmidt rank at N={n}");
        let entropy: f64 = probs.iter().map(|&p| -p * p.ln()).sum();
        let want = half as f64 * std::f64::consts::LN_2;
        assert!((entropy - want).abs() < 1e-10, "entropy {entropy} at N={n}");
    }
    println!("criterion 8: pass (rank 2^(N/2), entropy (N/2)ln2 at N=4,6,8)");
}

/// Criterion 9: the swap-network overlap sampler agrees with the exact oracle
/// to three standard errors, and independent double sampling registers no
/// coincidences on a wide 20-site pair.
#[test]
fn c09_dequantizer_statistics() {
    let n = 8;
    let mps_i = Mps::random_dense(n, 2, 4, 21);
    let mps_j = Mps::random_dense(n, 2, 4, 22);
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let gates: Vec<(usize, f64)> =
        (0..12).map(|_| (rng.gen_range(0..n - 1), std::f64::consts::FRAC_PI_2)).collect();
    let net = GivensNetwork { n_sites: n, gates, flip_last: false };
    let vi = mps_i.to_statevector().unwrap();
    let vj = mps_j.to_statevector().unwrap();
    let gj = apply_rotation_network(&vj, &net, 2).unwrap();
    let exact: f64 = vi.iter().zip(&gj).map(|(a, b)| a * b).sum();
    let batches =
        overlap_batches(&mps_i, &mps_j, &net, 400, 40, 17, ExecMode::Parallel).unwrap();
    assert!(batches.len() >= 30);
    let nb = batches.len() as f64;
    let mean: f64 = batches.iter().map(|(m, _)| m).sum::<f64>() / nb;
    let var: f64 =
        batches.iter().map(|(m, _)| (m - mean) * (m - mean)).sum::<f64>() / (nb - 1.0);
    let stderr = (var / nb).sqrt();
    let dev = (mean - exact).abs();
    assert!(dev <= 3.0 * stderr, "sampled {mean:.5} vs exact {exact:.5}, 3se {:.5}", 3.0 * stderr);
    // Negative control: coincidence rate collapses for broad 20-site states.
    let wide_i = Mps::random_dense(20, 2, 4, 31);
    let wide_j = Mps::random_dense(20, 2, 4, 32);
    let hits = double_sampling_hits(&wide_i, &wide_j, 10_000, 3).unwrap();
    assert_eq!(hits, 0, "double sampling found {hits} coincidences");
    println!(
        "criterion 9: pass (deviation {:.2} se over {} batches, 0/10000 coincidences)",
        dev / stderr.max(1e-300),
        batches.len()
    );
}

/// Criterion 10: every admissible one-hot insertion of a converged six-atom
/// reference compiles to depth 6 with re-optimization at infidelity ≤ 1e-6
/// (≤ 1e-4 tolerated with a warning), and the Hadamard-test simulator matches
/// the exact oracle on random small instances.
#[test]
fn c10_compilation_and_hadamard_test() {
    let ints = load("h6_oct_1.70.fcidump");
    let mut params = RunParams::new(4, 1);
    params.e_fci = Some(fci_energy(&ints));
    let res = run_tnqe(&ints, &params).unwrap();
    let mut mps = res.state.refs[0].clone();
    let p = 2; // central bond
    mps.left_canonicalize_upto(p).unwrap();
    mps.right_canonicalize_from(p + 1).unwrap();
    mps.normalize_at(p);
    let basis = one_hot_decompose(&mps, p, 0).unwrap();
    let infidelities = tnqe::par::map_indexed(ExecMode::Parallel, basis.len(), |t| {
        let (l, k1, k2, r) = basis.tuples[t];
        let mut tensors = mps.tensors.clone();
        let (chi_l, chi_r) = (tensors[p].shape()[0], tensors[p + 1].shape()[2]);
        let mut a = ndarray::Array3::zeros((chi_l, 4, 1));
        a[[l, k1, 0]] = 1.0;
        let mut b = ndarray::Array3::zeros((1, 4, chi_r));
        b[[0, k2, r]] = 1.0;
        tensors[p] = a;
        tensors[p + 1] = b;
        let one_hot = Mps { d: 4, tensors, bond_charges: None };
        let qubit_chain = one_hot.split_d4_to_d2().unwrap();
        let (_, fidelity) = disentangler_compile(&qubit_chain, 6, 10).unwrap();
        1.0 - fidelity
    });
    let worst = infidelities.iter().cloned().fold(0.0f64, f64::max);
    let warned = infidelities.iter().filter(|&&x| x > 1e-6).count();
    if warned > 0 {
        eprintln!(
            "warning: {warned}/{} one-hot compilations exceeded 1e-6 infidelity (worst {worst:.3e}); \
             the truncation-gauge choice is fidelity-sensitive",
            infidelities.len()
        );
    }
    assert!(worst <= 1e-4, "worst infidelity {worst:.3e}");

    // Hadamard test vs the exact oracle on random ≤6-qubit instances.
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut random_net = |n: usize, gates: usize| {
        let gs = (0..gates)
            .map(|_| {
                let q0 = rng.gen_range(0..n - 1);
                let a = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.5);
                let mut q = a.qr().q();
                if rng.gen::<bool>() {
                    // Exercise both determinant signs.
                    for row in 0..4 {
                        q[(row, 3)] = -q[(row, 3)];
                    }
                }
                Gate::Two { q0, q1: q0 + 1, m: q }
            })
            .collect();
        Netlist { n_qubits: n, gates: gs }
    };
    let mut worst_dev = 0.0f64;
    for _case in 0..20 {
        let n = 2 + (_case % 4); // 2..=5 system qubits, +1 ancilla ≤ 6
        let u_i = random_net(n, 3);
        let u_j = random_net(n, 3);
        let mut rng2 = ChaCha12Rng::seed_from_u64(1000 + _case as u64);
        let rot_gates: Vec<(usize, f64)> =
            (0..3).map(|_| (rng2.gen_range(0..n - 1), rng2.gen_range(-1.5..1.5))).collect();
        let rotation = GivensNetwork { n_sites: n, gates: rot_gates, flip_last: false };
        let pauli: String = {
            let mut s: Vec<char> = (0..n)
                .map(|_| ['I', 'X', 'Y', 'Z'][rng2.gen_range(0..4)])
                .collect();
            if s.iter().filter(|&&c| c == 'Y').count() % 2 == 1 {
                let k = s.iter().position(|&c| c == 'Y').unwrap();
                s[k] = 'X';
            }
            s.into_iter().collect()
        };
        let got = hadamard_test(&u_i, &u_j, &rotation, Some(&pauli)).unwrap();
        // Exact value through statevectors: bra = U_j|0>, ket = P·Γ·U_i|0>,
        // with the even-Y Pauli string applied as real matrices times (−1)^(#Y/2).
        let bra = u_j.prepare();
        let mut ket = apply_rotation_network(&u_i.prepare(), &rotation, 2).unwrap();
        let mut sign = 1.0f64;
        for (q, c) in pauli.chars().enumerate() {
            let m = match c {
                'I' => continue,
                'X' => [[0.0, 1.0], [1.0, 0.0]],
                'Y' => [[0.0, -1.0], [1.0, 0.0]],
                'Z' => [[1.0, 0.0], [0.0, -1.0]],
                _ => unreachable!(),
            };
            let stride = 1usize << (n - 1 - q);
            for i in 0..ket.len() {
                if i & stride != 0 {
                    continue;
                }
                let (a, b) = (ket[i], ket[i | stride]);
                ket[i] = m[0][0] * a + m[0][1] * b;
                ket[i | stride] = m[1][0] * a + m[1][1] * b;
            }
        }
        // (−1)^(#Y/2): each Y contributed a factor i through the real proxy.
        let n_y = pauli.chars().filter(|&c| c == 'Y').count();
        if n_y % 4 == 2 {
            sign = -sign;
        }
        let want = sign * oracle_matrix_element(&bra, None, &ket).unwrap();
        worst_dev = worst_dev.max((got - want).abs());
    }
    assert!(worst_dev < 1e-10, "Hadamard-test deviation {worst_dev:.3e}");
    println!(
        "criterion 10: pass ({} one-hot compilations, worst infidelity {worst:.3e}; \
         Hadamard-test deviation {worst_dev:.3e})",
        infidelities.len()
    );
}
