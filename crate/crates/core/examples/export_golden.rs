//! Writes exact reference values for the integration tests.
//!
//! ```text
//! cargo run --release -p tmc-core --example export_golden -- crates/core/tests/fixtures/golden.json
//! ```

use tmc_core::build_lattice;
use tmc_core::lattice::{anyon_path, default_path_length};
use tmc_core::oracle::{exact_t_l_weighted, golden_fixture};

fn main() -> tmc_core::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "golden.json".into());
    let mut fixtures = Vec::new();
    for size in [1i64, 2] {
        let g = build_lattice(size)?;
        let region: Vec<usize> = (0..g.n_bonds() / 2).collect();
        let path = anyon_path(&g, default_path_length(&g).max(1))?;
        for p in [0.05, 0.15, 0.30] {
            let f = golden_fixture(&g, &region, &path, p)?;
            let check = exact_t_l_weighted(&g, &path, p)?;
            assert!(
                (f.t_l - check).abs() < 1e-12,
                "loop orders disagree: {} vs {check}",
                f.t_l
            );
            fixtures.push(f);
        }
    }
    std::fs::write(&out, serde_json::to_vec_pretty(&fixtures)?)?;
    println!("wrote {} fixtures to {out}", fixtures.len());
    Ok(())
}
