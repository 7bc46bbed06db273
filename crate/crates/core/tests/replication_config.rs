use std::path::PathBuf;

use lnspdc::config::{load_config, RunConfig};
use lnspdc::experiments as exp;

fn path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_replication.toml")
}

#[test]
fn loads_validates_and_round_trips() {
    let cfg = load_config(&path()).unwrap();
    cfg.validate().unwrap();
    let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(cfg.resonator.families.len(), 15);
}

#[test]
fn device_pins_the_reference_triple() {
    let cfg = load_config(&path()).unwrap();
    let dev = exp::build_device(&cfg).unwrap();
    let triple = exp::reference_triple(&cfg, &dev).unwrap();
    assert_eq!(triple.delta_m, 1);
    assert!(triple.delta_f_ghz.abs() < cfg.matching.linewidth_ghz * cfg.matching.window_fraction);
}
