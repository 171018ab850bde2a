//! Process-level invariants checked by Monte Carlo.

use levy_pv::kernel::KernelSpec;
use levy_pv::mc_harness::ks_two_sample;
use levy_pv::simulate::{
    coupled_marks, limit_z_with_marks, sample_cp_record, simulate_cp_driven_path, EngineOptions, StablePathSimulator,
    DEFAULT_T_PAST,
};
use levy_pv::stable_rng::{DriverSpec, JumpLaw, SeedStream};
use levy_pv::statistics::{increments_of, power_variation};
use rayon::prelude::*;

#[test]
fn increments_are_stationary_in_law() {
    let n = 256;
    let reps = 10_000;
    let sim = StablePathSimulator::new(&KernelSpec::pure_power(0.25, 1.0), 1.5, 1.0, n, EngineOptions::default()).unwrap();
    let samples: Vec<[f64; 4]> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let path = sim.sample(SeedStream::new(11, r as u64));
            let d1 = increments_of(&path.values, 1).unwrap();
            let d2 = increments_of(&path.values, 2).unwrap();
            // Index 0 is i = k; index n/2 - k is i = n/2.
            [d1[0], d1[n / 2 - 1], d2[0], d2[n / 2 - 2]]
        })
        .collect();
    for (a, b) in [(0, 1), (2, 3)] {
        let first: Vec<f64> = samples.iter().map(|s| s[a]).collect();
        let middle: Vec<f64> = samples.iter().map(|s| s[b]).collect();
        let d = ks_two_sample(&first, &middle).unwrap();
        assert!(d < 0.03, "KS distance {d} between increments at i = k and i = n/2");
    }
}

#[test]
fn coupled_statistic_converges_to_limit_on_each_record() {
    let (alpha, p, k) = (0.3, 2.0, 1);
    let driver = DriverSpec::compound_poisson(1.0, 5.0, JumpLaw::TwoPoint { a: 1.0 });
    let kernel = KernelSpec::pure_power(alpha, 1.0);
    let mut terminal = Vec::new();
    for r in 0..40u64 {
        let jumps = sample_cp_record(&driver, DEFAULT_T_PAST, SeedStream::new(5, r)).unwrap();
        let mut times: Vec<f64> = jumps.iter().map(|(t, _)| t).filter(|t| *t > 0.0 && *t <= 1.0).collect();
        times.sort_by(f64::total_cmp);
        let separated = times.windows(2).all(|w| w[1] - w[0] > 1.0 / 128.0);
        if times.is_empty() || !separated {
            continue;
        }
        let mut gaps = Vec::new();
        for e in [8, 11, 14] {
            let n = 1usize << e;
            let path = simulate_cp_driven_path(&kernel, &jumps, n).unwrap();
            let stat = power_variation(&path, p, k).unwrap().raw * (n as f64).powf(alpha * p);
            let z = limit_z_with_marks(&jumps, &coupled_marks(&jumps, n), alpha, p, k, 1.0, 1e-8).unwrap().value;
            gaps.push((stat / z - 1.0).abs());
        }
        // Jumps before time 0 leave a bias of order n^(alpha p - 1) on every record.
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "record {r}: relative gaps {gaps:?}");
        terminal.push(gaps[2]);
    }
    assert!(terminal.len() >= 5, "only {} records with separated jumps", terminal.len());
    terminal.sort_by(f64::total_cmp);
    let median = terminal[terminal.len() / 2];
    assert!(median < 0.10, "median relative gap {median} at n = 2^14");
}
