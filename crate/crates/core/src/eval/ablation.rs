//! Arms that differ only in mechanism flags, trained and scored over a
//! grid of seeds and shot counts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ArmFlags, ImageProto};
use crate::data::world::Dataset;
use crate::error::Result;
use crate::experiment::Experiment;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub name: String,
    pub flags: ArmFlags,
    /// Overrides the coupling width, for the width sweep.
    pub embed: Option<usize>,
}

impl AblationArm {
    pub fn new(name: &str, flags: ArmFlags) -> Self {
        AblationArm {
            name: name.to_string(),
            flags,
            embed: None,
        }
    }

    pub fn apply(&self, exp: &Experiment) -> Experiment {
        let mut e = exp.clone();
        e.model.flags = self.flags;
        if let Some(d) = self.embed {
            e.model.embed = d;
        }
        e
    }
}

const CIC_ONLY: ArmFlags = ArmFlags {
    use_cic: true,
    use_ccm: true,
    use_intra: false,
    use_inter: false,
    img_proto: ImageProto::Gap,
};

const PDA_ONLY: ArmFlags = ArmFlags {
    use_cic: false,
    use_ccm: false,
    use_intra: true,
    use_inter: true,
    img_proto: ImageProto::Gap,
};

/// Neither module, coupling only, aggregation only, both.
pub fn module_arms() -> Vec<AblationArm> {
    vec![
        AblationArm::new("baseline", ArmFlags::BASELINE),
        AblationArm::new("cic", CIC_ONLY),
        AblationArm::new("pda", PDA_ONLY),
        AblationArm::new("full", ArmFlags::FULL),
    ]
}

/// Image-prototype variants without coupling.
pub fn pooling_arms() -> Vec<AblationArm> {
    let gmp = ArmFlags {
        img_proto: ImageProto::GapGmp,
        ..ArmFlags::BASELINE
    };
    let intra = ArmFlags {
        use_intra: true,
        ..ArmFlags::BASELINE
    };
    vec![
        AblationArm::new("gap", ArmFlags::BASELINE),
        AblationArm::new("gap+gmp", gmp),
        AblationArm::new("intra", intra),
        AblationArm::new("intra+inter", PDA_ONLY),
    ]
}

/// Coupling with and without the condition mask.
pub fn condition_arms() -> Vec<AblationArm> {
    let no_ccm = ArmFlags {
        use_ccm: false,
        ..CIC_ONLY
    };
    vec![
        AblationArm::new("cic-no-ccm", no_ccm),
        AblationArm::new("cic", CIC_ONLY),
    ]
}

/// Full model at coupling widths C/4, C/2, C, 2C.
pub fn width_arms(channels: usize) -> Vec<AblationArm> {
    [channels / 4, channels / 2, channels, 2 * channels]
        .into_iter()
        .filter(|&d| d > 0)
        .map(|d| AblationArm {
            name: format!("width-{d}"),
            flags: ArmFlags::FULL,
            embed: Some(d),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub shots: usize,
    /// `base` or `novel`.
    pub split: &'static str,
    pub class: usize,
    pub ap: f64,
}

impl AblationRow {
    pub fn split_label(&self) -> String {
        format!("{}@{}shot", self.split, self.shots)
    }
}

pub const RESULTS_HEADER: &str = "icpe-ablation v1";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationTable {
    /// Mean AP over a split's classes for one (arm, seed, shots) cell.
    pub fn split_map(&self, arm: &str, seed: u64, shots: usize, split: &str) -> Option<f64> {
        let aps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm && r.seed == seed && r.shots == shots && r.split == split)
            .map(|r| r.ap)
            .collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    /// Per seed, the novel mAP averaged over shot counts.
    pub fn novel_by_seed(&self, arm: &str) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|&s| {
                let v: Vec<f64> = self
                    .shots
                    .iter()
                    .filter_map(|&k| self.split_map(arm, s, k, "novel"))
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }

    /// Median over seeds of the shot-averaged novel mAP.
    pub fn median_novel(&self, arm: &str) -> f64 {
        median(self.novel_by_seed(arm))
    }

    /// Median over seeds of the novel mAP at one shot count.
    pub fn median_novel_at(&self, arm: &str, shots: usize) -> f64 {
        median(
            self.seeds
                .iter()
                .filter_map(|&s| self.split_map(arm, s, shots, "novel"))
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{RESULTS_HEADER}").unwrap();
        writeln!(s, "arm,seed,split,class,AP").unwrap();
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.arm, r.seed, r.split_label(), r.class, r.ap).unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{RESULTS_HEADER} summary").unwrap();
        for arm in &self.arms {
            for &k in &self.shots {
                for split in ["base", "novel"] {
                    let v: Vec<f64> = self
                        .seeds
                        .iter()
                        .filter_map(|&seed| self.split_map(arm, seed, k, split))
                        .collect();
                    if v.is_empty() {
                        continue;
                    }
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    writeln!(
                        s,
                        "{arm:<12} {split:<5} {k:>2}-shot  mean {:6.2}  range [{:6.2}, {:6.2}]  median {:6.2}",
                        100.0 * mean,
                        100.0 * lo,
                        100.0 * hi,
                        100.0 * median(v.clone())
                    )
                    .unwrap();
                }
            }
            writeln!(s, "{arm:<12} novel median over seeds of shot-mean: {:6.2}", 100.0 * self.median_novel(arm)).unwrap();
        }
        s
    }
}

/// Meta-trains one arm at one seed and scores every shot count.
pub fn run_job(exp: &Experiment, arm: &AblationArm, seed: u64, train: &Dataset, test: &Dataset) -> Result<Vec<AblationRow>> {
    let mut e = arm.apply(exp);
    e.seed = seed;
    let (model, _, _) = e.meta_train(train)?;
    let mut rows = Vec::new();
    for &k in &e.shots {
        let (tuned, _) = e.finetune(&model, train, k)?;
        let report = e.evaluate(&tuned, test, k)?;
        for (&class, &ap) in &report.per_class {
            let split = if e.world.novel_classes.contains(&class) { "novel" } else { "base" };
            rows.push(AblationRow {
                arm: arm.name.clone(),
                seed,
                shots: k,
                split,
                class,
                ap,
            });
        }
        log::info!(
            "ablation arm={} seed={seed} shots={k} base_map={:.4} novel_map={:.4}",
            arm.name,
            report.base_map.unwrap_or(f64::NAN),
            report.novel_map.unwrap_or(f64::NAN)
        );
    }
    Ok(rows)
}

/// Runs every `(arm, seed)` job in parallel. Rows come back in arm-major,
/// seed-minor order regardless of scheduling (indexed collect keeps job
/// order). With `partial_dir`, each
/// finished job's rows are written there immediately.
pub fn run_ablation(
    exp: &Experiment,
    arms: &[AblationArm],
    seeds: &[u64],
    partial_dir: Option<&Path>,
) -> Result<AblationTable> {
    exp.validate()?;
    let train = exp.train_data()?;
    let test = exp.test_data()?;
    if let Some(dir) = partial_dir {
        fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let rows = run_job(exp, &arms[a], seed, &train, &test)?;
            if let Some(dir) = partial_dir {
                let partial = AblationTable {
                    arms: vec![arms[a].name.clone()],
                    seeds: vec![seed],
                    shots: exp.shots.clone(),
                    rows: rows.clone(),
                };
                fs::write(dir.join(format!("{}_{seed}.csv", arms[a].name)), partial.to_csv())?;
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        arms: arms.iter().map(|a| a.name.clone()).collect(),
        seeds: seeds.to_vec(),
        shots: exp.shots.clone(),
        rows: results.into_iter().flatten().collect(),
    })
}
