use std::path::Path;

use graphmeta::harness::{ExperimentConfig, StepMode};

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            let cfg =
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(cfg.steps, StepMode::Adaptive);
            let again = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 5);
}
