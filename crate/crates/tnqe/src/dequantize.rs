//! Classical dequantization of the permutation-restricted solver: perfect
//! bitstring sampling from an MPS, signed-permutation propagation of basis
//! strings through swap-only rotation networks, and the sampling estimator for
//! overlaps between references whose bases differ only by orbital reorderings.
//!
//! Networks containing genuine Givens angles are rejected: a continuous rotation
//! maps a basis string to a superposition, and the ratio estimator no longer
//! applies. That error path marks the classical hardness boundary of the method.

use crate::mps::Mps;
use crate::par::{map_indexed, ExecMode};
use crate::rotations::{gate_matrix, GateKind, GivensNetwork};
use crate::{Result, TnqeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A configuration drawn from |⟨x|φ⟩|² with its exact amplitude.
#[derive(Debug, Clone)]
pub struct SampledBitstring {
    /// One digit per site (0..d).
    pub bits: Vec<usize>,
    pub amplitude: f64,
    /// Product of the conditional probabilities used while sampling; equals the
    /// squared amplitude for a normalized right-canonical state.
    pub probability: f64,
}

/// Deterministic per-batch stream: batches are independent and reproducible.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha12Rng {
    let mut x = seed ^ batch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha12Rng::seed_from_u64(x ^ (x >> 31))
}

/// Perfect sampler over a fixed state: holds a right-canonical normalized copy so
/// repeated draws cost O(N·d·χ²) each.
#[derive(Debug, Clone)]
pub struct Sampler {
    mps: Mps,
}

impl Sampler {
    pub fn new(mps: &Mps) -> Result<Self> {
        let mut m = mps.clone();
        m.right_canonicalize_from(1)?;
        m.normalize_at(0);
        Ok(Sampler { mps: m })
    }

    /// Draw one configuration by site-by-site conditional sampling.
    pub fn sample(&self, rng: &mut impl Rng) -> SampledBitstring {
        let d = self.mps.d;
        let mut v = vec![1.0f64];
        let mut bits = Vec::with_capacity(self.mps.n_sites());
        let mut probability = 1.0;
        for t in &self.mps.tensors {
            let (l, _, r) = (t.shape()[0], d, t.shape()[2]);
            debug_assert_eq!(l, v.len());
            // Candidate boundary vectors and their weights per digit.
            let mut cands: Vec<Vec<f64>> = Vec::with_capacity(d);
            let mut weights = Vec::with_capacity(d);
            for k in 0..d {
                let mut w = vec![0.0; r];
                for b in 0..l {
                    let vb = v[b];
                    if vb == 0.0 {
                        continue;
                    }
                    for j in 0..r {
                        w[j] += vb * t[[b, k, j]];
                    }
                }
                weights.push(w.iter().map(|x| x * x).sum::<f64>());
                cands.push(w);
            }
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut k = d - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    k = i;
                    break;
                }
                u -= w;
            }
            probability *= weights[k] / total;
            v = std::mem::take(&mut cands[k]);
            bits.push(k);
        }
        SampledBitstring { bits, amplitude: v[0], probability }
    }

    /// Exact amplitude ⟨x|φ⟩ by direct contraction.
    pub fn amplitude(&self, bits: &[usize]) -> f64 {
        amplitude_of(&self.mps, bits)
    }
}

/// ⟨x|φ⟩ for an arbitrary (not necessarily canonical) state.
pub fn amplitude_of(mps: &Mps, bits: &[usize]) -> f64 {
    assert_eq!(bits.len(), mps.n_sites());
    let mut v = vec![1.0f64];
    for (t, &k) in mps.tensors.iter().zip(bits) {
        let (l, r) = (t.shape()[0], t.shape()[2]);
        let mut w = vec![0.0; r];
        for b in 0..l {
            for j in 0..r {
                w[j] += v[b] * t[[b, k, j]];
            }
        }
        v = w;
    }
    v[0]
}

/// Convenience one-shot wrapper around [`Sampler`].
pub fn sample_bitstring(mps: &Mps, rng: &mut impl Rng) -> Result<SampledBitstring> {
    Ok(Sampler::new(mps)?.sample(rng))
}

fn occupation(d: usize, k: usize) -> usize {
    if d == 2 {
        k
    } else {
        (k & 1) + (k >> 1)
    }
}

/// True when every gate of the network maps basis strings to signed basis strings
/// (angles that are multiples of π/2, i.e. the network realizes a signed orbital
/// permutation).
pub fn is_swap_network(net: &GivensNetwork) -> bool {
    use std::f64::consts::FRAC_PI_2;
    net.gates.iter().all(|&(_, th)| {
        let q = th / FRAC_PI_2;
        (q - q.round()).abs() < 1e-12
    })
}

fn propagate(
    bits: &[usize],
    net: &GivensNetwork,
    d: usize,
    adjoint: bool,
) -> Result<(Vec<usize>, f64)> {
    if !is_swap_network(net) {
        return Err(TnqeError::Unsupported(
            "network contains continuous rotations; basis strings do not stay basis strings"
                .into(),
        ));
    }
    let mut x = bits.to_vec();
    let mut phase = 1.0f64;
    let flip = |x: &[usize], phase: &mut f64| {
        if occupation(d, x[x.len() - 1]) % 2 == 1 {
            *phase = -*phase;
        }
    };
    if adjoint && net.flip_last {
        flip(&x, &mut phase);
    }
    let order: Vec<usize> = if adjoint {
        (0..net.gates.len()).rev().collect()
    } else {
        (0..net.gates.len()).collect()
    };
    for gi in order {
        let (p, th) = net.gates[gi];
        if th.abs() < 1e-12 {
            continue;
        }
        let g = gate_matrix(GateKind::Givens(th), d)?;
        let c = x[p] * d + x[p + 1];
        // A signed permutation column has exactly one ±1 entry.
        let mut hit = None;
        for r in 0..d * d {
            let v = if adjoint { g[(c, r)] } else { g[(r, c)] };
            if v.abs() > 1e-9 {
                if hit.is_some() || (v.abs() - 1.0).abs() > 1e-9 {
                    return Err(TnqeError::Unsupported(
                        "gate is not a signed permutation on basis strings".into(),
                    ));
                }
                hit = Some((r, v));
            }
        }
        let (r, v) = hit.ok_or_else(|| TnqeError::Numerical("singular gate".into()))?;
        x[p] = r / d;
        x[p + 1] = r % d;
        if v < 0.0 {
            phase = -phase;
        }
    }
    if !adjoint && net.flip_last {
        flip(&x, &mut phase);
    }
    Ok((x, phase))
}

/// Push a basis string through a swap-only network: the bits are permuted and the
/// phase flips whenever both exchanged orbitals are occupied.
pub fn fswap_propagate(bits: &[usize], net: &GivensNetwork, d: usize) -> Result<(Vec<usize>, f64)> {
    propagate(bits, net, d, false)
}

/// Sampling estimate of ⟨φ_i|Γ(net)|φ_j⟩ with its standard error: draw
/// x ~ |⟨x|φ_i⟩|² and average phase(x)·⟨x̃|φ_j⟩/⟨x|φ_i⟩ where Γ†|x⟩ = phase·|x̃⟩.
pub fn overlap_sampled(
    mps_i: &Mps,
    mps_j: &Mps,
    net: &GivensNetwork,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if mps_i.n_sites() != mps_j.n_sites() || mps_i.d != mps_j.d {
        return Err(TnqeError::DimMismatch("states live on different chains".into()));
    }
    if n_samples < 2 {
        return Err(TnqeError::Precondition("need at least two samples".into()));
    }
    if !is_swap_network(net) {
        return Err(TnqeError::Unsupported(
            "overlap sampling is only defined for swap-only networks".into(),
        ));
    }
    let si = Sampler::new(mps_i)?;
    let sj = Sampler::new(mps_j)?;
    let d = mps_i.d;
    let (mut sum, mut sum2) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let s = si.sample(rng);
        let (xt, phase) = propagate(&s.bits, net, d, true)?;
        let ratio = phase * sj.amplitude(&xt) / s.amplitude;
        sum += ratio;
        sum2 += ratio * ratio;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum2 / n - mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, var.sqrt()))
}

/// Independent batches of the overlap estimator with per-batch derived seeds.
pub fn overlap_batches(
    mps_i: &Mps,
    mps_j: &Mps,
    net: &GivensNetwork,
    n_samples: usize,
    n_batches: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Vec<(f64, f64)>> {
    let results = map_indexed(exec, n_batches, |b| {
        let mut rng = batch_rng(seed, b as u64);
        overlap_sampled(mps_i, mps_j, net, n_samples, &mut rng)
    });
    results.into_iter().collect()
}

/// Negative control: sample both states independently and count identical draws.
/// For broad superpositions the hit rate — and with it any estimator built on
/// independent double sampling — collapses exponentially in N.
pub fn double_sampling_hits(
    mps_i: &Mps,
    mps_j: &Mps,
    n_samples: usize,
    seed: u64,
) -> Result<usize> {
    let si = Sampler::new(mps_i)?;
    let sj = Sampler::new(mps_j)?;
    let mut rng = batch_rng(seed, 0);
    let mut hits = 0;
    for _ in 0..n_samples {
        let a = si.sample(&mut rng);
        let b = sj.sample(&mut rng);
        if a.bits == b.bits {
            hits += 1;
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::{apply_rotation_network, givens_decompose};
    use nalgebra::DMatrix;
    use ndarray::Array3;

    fn uniform_superposition(n: usize) -> Mps {
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let tensors = (0..n)
            .map(|_| Array3::from_shape_vec((1, 2, 1), vec![w, w]).unwrap())
            .collect();
        Mps { d: 2, tensors, bond_charges: None }
    }

    #[test]
    fn product_state_samples_itself() {
        let mps = Mps::product_state(2, &[1, 0, 1, 1]);
        let mut rng = batch_rng(5, 0);
        for _ in 0..10 {
            let s = sample_bitstring(&mps, &mut rng).unwrap();
            assert_eq!(s.bits, vec![1, 0, 1, 1]);
            assert!((s.probability - 1.0).abs() < 1e-12);
            assert!((s.amplitude.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_state_samples_uniformly() {
        let mps = uniform_superposition(3);
        let mut rng = batch_rng(7, 0);
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let s = sample_bitstring(&mps, &mut rng).unwrap();
            counts[s.bits.iter().fold(0, |a, &b| a * 2 + b)] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 30.0, "chi-square {chi2}");
    }

    #[test]
    fn probability_matches_squared_amplitude_and_statevector() {
        let mps = Mps::random_in_sector(3, (2, 0), 4, 13).unwrap();
        let sv = mps.to_statevector().unwrap();
        let sampler = Sampler::new(&mps).unwrap();
        let mut rng = batch_rng(11, 0);
        for _ in 0..50 {
            let s = sampler.sample(&mut rng);
            assert!((s.probability - s.amplitude * s.amplitude).abs() < 1e-12);
            let idx = s.bits.iter().fold(0, |a, &b| a * 4 + b);
            assert!((sv[idx] - s.amplitude).abs() < 1e-12);
        }
    }

    #[test]
    fn fswap_phase_flips_on_double_occupancy() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let net = givens_decompose(&swap).unwrap();
        let (bits, phase) = fswap_propagate(&[1, 1], &net, 2).unwrap();
        assert_eq!(bits, vec![1, 1]);
        assert_eq!(phase, -1.0);
        let (bits, phase) = fswap_propagate(&[0, 0], &net, 2).unwrap();
        assert_eq!(bits, vec![0, 0]);
        assert_eq!(phase, 1.0);
    }

    #[test]
    fn propagation_agrees_with_dense_network_action() {
        // Random orbital permutation on three spatial sites, d=4 chain.
        for (perm, seed) in [(vec![2usize, 0, 1], 3u64), (vec![1, 0, 2], 4), (vec![2, 1, 0], 5)] {
            let mut u = DMatrix::zeros(3, 3);
            for (i, &p) in perm.iter().enumerate() {
                u[(p, i)] = 1.0;
            }
            let net = givens_decompose(&u).unwrap();
            let mut rng = batch_rng(seed, 0);
            for _ in 0..10 {
                let bits: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
                let (xb, phase) = fswap_propagate(&bits, &net, 4).unwrap();
                let mut e = vec![0.0; 64];
                e[bits.iter().fold(0, |a, &b| a * 4 + b)] = 1.0;
                let out = apply_rotation_network(&e, &net, 4).unwrap();
                let idx = xb.iter().fold(0, |a, &b| a * 4 + b);
                assert!((out[idx] - phase).abs() < 1e-9);
                assert!(out.iter().map(|v| v * v).sum::<f64>() - 1.0 < 1e-9);
            }
        }
    }

    #[test]
    fn identical_states_give_exact_unit_overlap() {
        let mps = Mps::random_in_sector(3, (2, 0), 3, 21).unwrap();
        let net = GivensNetwork { n_sites: 3, gates: vec![], flip_last: false };
        let mut rng = batch_rng(1, 0);
        let (est, err) = overlap_sampled(&mps, &mps, &net, 200, &mut rng).unwrap();
        assert!((est - 1.0).abs() < 1e-12);
        assert!(err < 1e-12);
    }

    #[test]
    fn sampled_overlap_matches_oracle_within_three_sigma() {
        let a = Mps::random_in_sector(3, (2, 0), 3, 31).unwrap();
        let b = Mps::random_in_sector(3, (2, 0), 3, 32).unwrap();
        let mut u = DMatrix::zeros(3, 3);
        for (i, &p) in [1usize, 2, 0].iter().enumerate() {
            u[(p, i)] = 1.0;
        }
        let net = givens_decompose(&u).unwrap();
        let exact = {
            let sb = b.to_statevector().unwrap();
            let rotated = apply_rotation_network(&sb, &net, 4).unwrap();
            let sa = a.to_statevector().unwrap();
            sa.iter().zip(&rotated).map(|(x, y)| x * y).sum::<f64>()
        };
        let mut rng = batch_rng(17, 0);
        let (est, err) = overlap_sampled(&a, &b, &net, 4000, &mut rng).unwrap();
        assert!(
            (est - exact).abs() < 3.0 * err.max(1e-6),
            "est {est} exact {exact} err {err}"
        );
    }

    #[test]
    fn continuous_rotations_are_rejected() {
        let a = Mps::random_in_sector(2, (2, 0), 2, 41).unwrap();
        let net = GivensNetwork { n_sites: 2, gates: vec![(0, 0.3)], flip_last: false };
        let mut rng = batch_rng(2, 0);
        match overlap_sampled(&a, &a, &net, 10, &mut rng) {
            Err(TnqeError::Unsupported(_)) => {}
            other => panic!("expected the unsupported-regime error, got {other:?}"),
        }
    }

    #[test]
    fn double_sampling_misses_broad_superpositions() {
        let a = uniform_superposition(20);
        let hits = double_sampling_hits(&a, &a, 10_000, 23).unwrap();
        assert_eq!(hits, 0);
    }
}
