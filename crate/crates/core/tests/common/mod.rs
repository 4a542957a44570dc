#![allow(dead_code)]

use std::path::{Path, PathBuf};

use robocal::calibration::{Measurement, MeasurementSet};
use robocal::cli::{cmd_generate, GenerateArgs};
use robocal::io::{read_json, read_measurement_set, Robot, TruthFile};
use robocal::{cable_length, DHParams};

pub fn robot_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/hsr_jr680.json")
}

/// Files and parsed data of one generated scenario.
pub struct Scenario {
    pub dir: tempfile::TempDir,
    pub prefix: PathBuf,
    pub robot: Robot,
    pub truth: DHParams,
    pub train: MeasurementSet,
    pub holdout: MeasurementSet,
}

impl Scenario {
    pub fn train_csv(&self) -> PathBuf {
        suffixed(&self.prefix, "_train.csv")
    }

    pub fn holdout_csv(&self) -> PathBuf {
        suffixed(&self.prefix, "_holdout.csv")
    }

    /// Holdout poses with wire lengths computed exactly from the true robot.
    pub fn exact_holdout(&self) -> MeasurementSet {
        let rig = *self.holdout.rig();
        let records = self
            .holdout
            .records()
            .iter()
            .map(|m| Measurement {
                q: m.q,
                c_measured: cable_length(&self.truth, &m.q, &rig),
            })
            .collect();
        MeasurementSet::new(records, rig).unwrap()
    }
}

pub fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", prefix.display()))
}

/// HSR-JR680 nominal robot, bounds 0.5 deg / 1 mm, 2000 poses split 80/20, seed 1.
pub fn s1(noise_sigma_mm: f64) -> Scenario {
    generate(2000, 0.8, noise_sigma_mm, 1)
}

pub fn generate(n: usize, split: f64, noise_sigma_mm: f64, seed: u64) -> Scenario {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("s");
    let args = GenerateArgs {
        robot: robot_file(),
        n,
        split,
        angle_bound_deg: 0.5,
        length_bound_mm: 1.0,
        noise_sigma_mm,
        seed,
        out_prefix: prefix.clone(),
    };
    assert_eq!(cmd_generate(&args, &mut std::io::sink()).unwrap(), 0);
    let robot = robocal::io::read_robot(&robot_file()).unwrap();
    let truth_file: TruthFile = read_json(&suffixed(&prefix, "_truth.json")).unwrap();
    let truth = DHParams::unflatten(&truth_file.true_params).unwrap();
    let train = read_measurement_set(&suffixed(&prefix, "_train.csv"), &robot.rig).unwrap();
    let holdout = read_measurement_set(&suffixed(&prefix, "_holdout.csv"), &robot.rig).unwrap();
    Scenario {
        dir,
        prefix,
        robot,
        truth,
        train,
        holdout,
    }
}
