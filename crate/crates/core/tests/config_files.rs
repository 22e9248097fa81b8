use std::path::Path;

use scd_core::config::RunConfig;

fn load(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn example_config_lists_the_defaults() {
    assert_eq!(load("example.toml"), RunConfig::default());
}

#[test]
fn quick_config_is_valid() {
    let cfg = load("quick.toml");
    cfg.validate().unwrap();
    assert_eq!(cfg.seed(), 7);
}
