//! Engine-versus-enumeration comparisons on tiny lattices.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tmc_core::jarzynski::{estimate_entropy, run_ensemble, TrajectoryConfig};
use tmc_core::lattice::{anyon_path, default_path_length};
use tmc_core::observables::measure_anyon;
use tmc_core::oracle::{
    exact_logz, exact_renyi2, exact_t_l, swap_average_purity, ExactWavefunction,
};
use tmc_core::sampler::draw_gauge;
use tmc_core::tn::{build_network, contract_logz_flipped};
use tmc_core::{build_lattice, log_partition, params_from_p, BondConfig, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(rename = "L")]
    pub size: usize,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, size: usize, measured: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            size,
            measured,
            tolerance,
            pass: measured <= tolerance,
        }
    }
}

fn random_bonds(n: usize, rng: &mut impl Rng) -> BondConfig {
    BondConfig::from_signs(
        (0..n)
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect(),
    )
    .unwrap()
}

/// Runs every check for each size and returns them in order.
pub fn oracle_checks(sizes: &[usize], chi: usize, seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut out = Vec::new();
    for &size in sizes {
        let g = build_lattice(size as i64)?;
        let mut rng = RngStream::new(seed, size as u64).rng();

        let mut worst: f64 = 0.0;
        for beta in [0.7f64.atanh(), 1.05] {
            for _ in 0..20 {
                let x = random_bonds(g.n_bonds(), &mut rng);
                let exact = exact_logz(&g, &x, beta)?;
                let tn = log_partition(&g, &x, beta, chi)?;
                worst = worst.max(((tn - exact) / exact).abs());
            }
        }
        out.push(Check::at_most(
            "contraction_relative_error",
            size,
            worst,
            1e-10,
        ));

        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let x = random_bonds(g.n_bonds(), &mut rng);
            let sigma = draw_gauge(g.n_spins(), &mut rng);
            let a = log_partition(&g, &x, 1.05, chi)?;
            let b = log_partition(&g, &x.gauge_transform(&g, &sigma)?, 1.05, chi)?;
            worst = worst.max((a - b).abs());
        }
        out.push(Check::at_most("gauge_invariance", size, worst, 1e-10));

        let path = anyon_path(&g, default_path_length(&g).max(1))?;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = random_bonds(g.n_bonds(), &mut rng);
            let grid = build_network(&g, &x, 0.9)?;
            let flipped = contract_logz_flipped(&grid, &path.bonds, chi)?;
            let exact = exact_logz(&g, &x.flipped(&path.bonds)?, 0.9)?;
            worst = worst.max((flipped - exact).abs());
        }
        out.push(Check::at_most("flipped_contraction", size, worst, 1e-10));

        let params = params_from_p(0.15)?;
        let exact = exact_t_l(&g, &path, 0.15)?;
        let mc = measure_anyon(
            &g,
            &path,
            &params,
            4000,
            chi,
            RngStream::new(seed, 1000 + size as u64),
        )?;
        let sigma = mc.error.max(1e-12);
        out.push(Check::at_most(
            "anyon_vs_exact_sigmas",
            size,
            (mc.value - exact).abs() / sigma,
            4.0,
        ));

        let region: Vec<usize> = (0..g.n_bonds() / 2).collect();
        let mask: Vec<bool> = (0..g.n_bonds()).map(|b| b < g.n_bonds() / 2).collect();
        if size == 1 {
            let wf = ExactWavefunction::new(&g, params.beta)?;
            let gram = wf.purity(&region)?;
            let swap = swap_average_purity(&g, &region, 0.15)?;
            out.push(Check::at_most(
                "swap_average_vs_gram_purity",
                size,
                (gram - swap).abs(),
                1e-10,
            ));
        }
        let s2_exact = exact_renyi2(&g, &region, 0.15)?;
        let config = TrajectoryConfig {
            n_steps: 500,
            chi,
            ..Default::default()
        };
        let records = run_ensemble(&g, &mask, "half", &params, &config, seed, 0xC0DE, 40)?;
        let est = estimate_entropy(&records)?;
        let tol = (4.0 * est.error).max(0.05);
        out.push(Check::at_most(
            "renyi2_vs_exact",
            size,
            (est.s2 - s2_exact).abs(),
            tol,
        ));
    }
    Ok(out)
}
