use tmc_core::lattice::{anyon_path, default_path_length};
use tmc_core::observables::measure_anyon;
use tmc_core::oracle::{exact_renyi2, exact_t_l, GoldenFixture};
use tmc_core::{build_lattice, params_from_p, RngStream};

fn fixtures() -> Vec<GoldenFixture> {
    let raw = include_str!("fixtures/golden.json");
    serde_json::from_str(raw).expect("golden fixture parses")
}

#[test]
fn fixtures_match_fresh_enumeration() {
    for f in fixtures() {
        let g = build_lattice(f.size as i64).unwrap();
        let path = anyon_path(&g, f.path.len()).unwrap();
        assert_eq!(path.bonds, f.path);
        assert!((exact_renyi2(&g, &f.region, f.p).unwrap() - f.renyi2).abs() < 1e-12);
        assert!((exact_t_l(&g, &path, f.p).unwrap() - f.t_l).abs() < 1e-12);
        assert!((params_from_p(f.p).unwrap().beta - f.beta).abs() < 1e-14);
    }
}

// On the 4-spin ring Z[x] only depends on the product of the bonds, which gives
// <T_l> = sqrt(1 - t^8) and purity 1 - t^8 / 2 for half the ring, t = tanh(beta).
#[test]
fn ring_fixtures_match_closed_forms() {
    for f in fixtures().into_iter().filter(|f| f.size == 1) {
        let t8 = (1.0 - 2.0 * f.p).powi(8);
        assert!((f.t_l - (1.0 - t8).sqrt()).abs() < 1e-12, "{f:?}");
        assert!((f.renyi2 + (1.0 - 0.5 * t8).ln()).abs() < 1e-12, "{f:?}");
    }
}

#[test]
fn sampled_anyon_matches_fixture() {
    for f in fixtures().into_iter().filter(|f| f.size == 2) {
        let g = build_lattice(2).unwrap();
        let path = anyon_path(&g, default_path_length(&g)).unwrap();
        let params = params_from_p(f.p).unwrap();
        let r = measure_anyon(&g, &path, &params, 3000, 8, RngStream::new(11, 0)).unwrap();
        assert!(
            (r.value - f.t_l).abs() <= 4.0 * r.error,
            "{} +- {} vs {}",
            r.value,
            r.error,
            f.t_l
        );
    }
}
