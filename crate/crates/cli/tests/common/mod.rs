#![allow(dead_code)]

use std::path::Path;

use mediate_core::pipeline::scenario_dir;

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dest);
        } else {
            std::fs::copy(&p, dest).unwrap();
        }
    }
}

/// A fresh copy of the bundled scenario.
pub fn scenario() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&scenario_dir(), dir.path());
    dir
}

pub fn read(dir: &Path, artifact: &str) -> String {
    std::fs::read_to_string(dir.join(".mediate").join(artifact)).unwrap()
}

pub const DESIGN_ARTIFACTS: [&str; 7] =
    ["model.json", "deduction.json", "cartography.json", "process.bpmn", "matches.json", "datamaps.json", "workflows.json"];
