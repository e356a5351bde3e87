use std::path::PathBuf;

use xshard::report::Report;
use xshard::scenario::{run_scenario, Scenario};

fn files() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    out
}

#[test]
fn shipped_scenarios_pass() {
    let files = files();
    assert!(files.len() >= 5);
    for path in files {
        let scn = Scenario::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let out = run_scenario(&scn).unwrap();
        let failed: Vec<_> = out.assertions.iter().filter(|a| !a.passed).collect();
        assert!(failed.is_empty(), "{}: {failed:?}", path.display());
    }
}

#[test]
fn shipped_scenarios_report_identically_twice() {
    for path in files() {
        let scn = Scenario::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let a = Report::from_outcome(&run_scenario(&scn).unwrap()).to_json().unwrap();
        let b = Report::from_outcome(&run_scenario(&scn).unwrap()).to_json().unwrap();
        assert_eq!(a, b, "{}", path.display());
    }
}

#[test]
fn unknown_fields_and_schemas_are_rejected() {
    let good = std::fs::read_to_string(&files()[0]).unwrap();
    assert!(Scenario::from_toml(&format!("{good}\nbogus = 1\n")).is_err());
    assert!(Scenario::from_toml(&good.replace("xshard-scenario/1", "xshard-scenario/9")).is_err());
}
