//! Replays the checked-in fuzz corpus through the same round-trip checks the
//! fuzz targets perform.

use std::fs;
use std::path::PathBuf;

use mplab::config::{Manifest, RunConfig};
use mplab::lss::TestFunction;

fn corpus(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn config_seeds_parse_and_round_trip() {
    for (path, text) in corpus("config_parse") {
        let cfg = RunConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn test_function_seeds_parse_and_round_trip() {
    for (path, text) in corpus("test_function_parse") {
        let f: TestFunction = text.parse().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(f.to_string().parse::<TestFunction>().unwrap(), f);
    }
}

#[test]
fn manifest_seeds_parse_and_round_trip() {
    for (path, text) in corpus("manifest_parse") {
        let m = Manifest::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(Manifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
