use fefet_sim::config::Config;
use std::path::PathBuf;

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn shipped_default_matches_builtin() {
    let cfg = Config::load(&repo_file("configs/default.toml")).unwrap();
    let builtin = Config::default();
    assert_eq!(cfg.to_toml().unwrap(), builtin.to_toml().unwrap());
    assert_eq!(cfg.hash(), builtin.hash());
}
