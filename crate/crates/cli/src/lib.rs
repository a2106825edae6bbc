//! Command-line front end: one subcommand per pipeline stage, all sharing
//! a resolved [`config::RunConfig`].
//!
//! Every output lands under `--out`. Training stages regenerate the
//! datasets from the world spec, so `gen-data` only exports them.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use icpe::detector::Model;
use icpe::eval::ablation::{self, AblationArm};
use icpe::eval::gradsuite::{grad_check_suite, Scope};
use icpe::eval::viz::dump_visualizations;
use icpe::experiment::Experiment;
use icpe::IcpeError;
use icpe_tensor::checkpoint;

use crate::config::RunConfig;

pub const RESOLVED_CONFIG: &str = "resolved.toml";
pub const ROSTER_HEADER: &str = "icpe-roster v1";
pub const TRACE_HEADER: &str = "icpe-trace v1";

#[derive(Debug, Parser)]
#[command(name = "icpe", about = "Few-shot detection on a synthetic shape world")]
#[command(after_help = "Any config key can be overridden with --section.key=value (or --key=value at top level).")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory every output is written under.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Write the train and test datasets to disk.
    GenData,
    /// Meta-train on base-class episodes.
    MetaTrain,
    /// Finetune the meta-trained model with k shots per class.
    Finetune,
    /// Score a model on the test split.
    Eval,
    /// Train and score every configured arm over every seed.
    Ablate,
    /// Compare analytic gradients with finite differences.
    Gradcheck,
    /// Write condition maps, aggregation weights and contributions.
    DumpViz,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration; exit status 1.
    Invalid(String),
    /// Anything that went wrong while running; exit status 2.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "{m}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        // Configuration problems found deep inside the library still count
        // as validation errors.
        match e.downcast_ref::<IcpeError>() {
            Some(IcpeError::Config(m)) => Failure::Invalid(format!("invalid configuration: {m}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<IcpeError> for Failure {
    fn from(e: IcpeError) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

/// `--key=value` arguments that are not CLI options become config
/// overrides; everything else goes to the argument parser.
fn split_overrides(args: &[OsString]) -> (Vec<OsString>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for (i, arg) in args.iter().enumerate() {
        let parsed = arg
            .to_str()
            .filter(|_| i > 0)
            .and_then(|s| s.strip_prefix("--"))
            .and_then(|s| s.split_once('='))
            .filter(|(k, _)| !matches!(*k, "config" | "out"));
        match parsed {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg.clone()),
        }
    }
    (rest, overrides)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status. Help output exits 0.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (rest, overrides) = split_overrides(&args);
    let cli = match Cli::try_parse_from(&rest) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &overrides) {
        Ok(()) => 0,
        Err(f) => {
            log::error!("failed status={} error={f}", f.exit_code());
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn execute(cli: &Cli, overrides: &[(String, String)]) -> Result<(), Failure> {
    let cfg = config::load(cli.config.as_deref(), overrides).map_err(Failure::Invalid)?;
    let exp = cfg.to_experiment()?;
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())?;
    log::info!(
        "start command={:?} out={} fingerprint={}",
        cli.command,
        out.display(),
        exp.fingerprint()
    );
    match cli.command {
        Command::GenData => gen_data(&exp, out),
        Command::MetaTrain => meta_train(&exp, out),
        Command::Finetune => finetune(&cfg, &exp, out),
        Command::Eval => eval(&cfg, &exp, out),
        Command::Ablate => ablate(&cfg, &exp, out),
        Command::Gradcheck => gradcheck(&cfg, out),
        Command::DumpViz => dump_viz(&cfg, &exp, out),
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote path={} bytes={}", path.display(), bytes.len());
    Ok(())
}

fn gen_data(exp: &Experiment, out: &Path) -> Result<(), Failure> {
    for (name, data) in [("train", exp.train_data()?), ("test", exp.test_data()?)] {
        let dir = out.join("data").join(name);
        icpe::data::io::save_dataset(&dir, &data)?;
        log::info!(
            "dataset split={name} dir={} images={} supports={}",
            dir.display(),
            data.images.len(),
            data.supports.len()
        );
    }
    Ok(())
}

/// Class roster stored beside every checkpoint.
pub fn roster_text(exp: &Experiment) -> String {
    let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    format!(
        "{ROSTER_HEADER}\nnum_classes {}\nbase {}\nnovel {}\n",
        exp.model.num_classes,
        list(&exp.world.base_classes),
        list(&exp.world.novel_classes)
    )
}

fn trace_text(losses: &[f64]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{i} {l}").unwrap();
    }
    s
}

fn save_model(model: &Model, exp: &Experiment, out: &Path, stem: &str) -> anyhow::Result<()> {
    let ckpt = out.join(format!("{stem}.ckpt"));
    checkpoint::save(&ckpt, &model.params).with_context(|| format!("writing {}", ckpt.display()))?;
    log::info!("wrote path={}", ckpt.display());
    write(&out.join(format!("{stem}.roster")), roster_text(exp).as_bytes())
}

fn checkpoint_stem(stage: &str, k: usize) -> Result<String, Failure> {
    match stage {
        "meta" => Ok("meta".into()),
        "finetune" => Ok(format!("finetune_k{k}")),
        other => Err(Failure::Invalid(format!(
            "model must be `init`, `meta` or `finetune`, got `{other}`"
        ))),
    }
}

/// The model a stage reads: freshly initialized, or a checkpoint whose
/// roster must match the configuration.
fn load_model(exp: &Experiment, out: &Path, stage: &str, k: usize) -> Result<Model, Failure> {
    let model = exp.init_model()?;
    if stage == "init" {
        return Ok(model);
    }
    let stem = checkpoint_stem(stage, k)?;
    let roster_path = out.join(format!("{stem}.roster"));
    let roster = fs::read_to_string(&roster_path)
        .with_context(|| format!("reading {} (run the {stage} stage first)", roster_path.display()))?;
    if roster != roster_text(exp) {
        return Err(Failure::Invalid(format!(
            "{} does not match the configured class roster",
            roster_path.display()
        )));
    }
    let ckpt = out.join(format!("{stem}.ckpt"));
    checkpoint::load_into(&ckpt, &model.params).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok(model)
}

fn meta_train(exp: &Experiment, out: &Path) -> Result<(), Failure> {
    let train = exp.train_data()?;
    let (model, trace, _) = exp.meta_train(&train)?;
    if let Some(last) = trace.losses.last() {
        log::info!("meta-train done iterations={} final_loss={last}", trace.losses.len());
    }
    save_model(&model, exp, out, "meta")?;
    write(&out.join("meta.trace"), trace_text(&trace.losses).as_bytes())?;
    Ok(())
}

fn finetune(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<(), Failure> {
    let model = load_model(exp, out, "meta", cfg.k)?;
    let train = exp.train_data()?;
    let (tuned, trace) = exp.finetune(&model, &train, cfg.k)?;
    let stem = format!("finetune_k{}", cfg.k);
    save_model(&tuned, exp, out, &stem)?;
    write(&out.join(format!("{stem}.trace")), trace_text(&trace.losses).as_bytes())?;
    Ok(())
}

fn eval(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<(), Failure> {
    let model = load_model(exp, out, &cfg.eval.model, cfg.k)?;
    let test = exp.test_data()?;
    let report = exp.evaluate(&model, &test, cfg.k)?;
    log::info!(
        "eval k={} base_map={:.4} novel_map={:.4}",
        cfg.k,
        report.base_map.unwrap_or(f64::NAN),
        report.novel_map.unwrap_or(f64::NAN)
    );
    let name = format!("eval_{}_k{}.txt", cfg.eval.model, cfg.k);
    write(&out.join(name), report.to_text().as_bytes())?;
    Ok(())
}

/// Resolves arm names against every arm set the library defines.
pub fn find_arms(names: &[String], channels: usize) -> Result<Vec<AblationArm>, String> {
    let known: Vec<AblationArm> = ablation::module_arms()
        .into_iter()
        .chain(ablation::pooling_arms())
        .chain(ablation::condition_arms())
        .chain(ablation::width_arms(channels))
        .collect();
    names
        .iter()
        .map(|n| {
            if let Some(d) = n.strip_prefix("width-") {
                let embed: usize = d.parse().map_err(|_| format!("bad width arm `{n}`"))?;
                return Ok(AblationArm {
                    name: n.clone(),
                    flags: icpe::ArmFlags::FULL,
                    embed: Some(embed),
                });
            }
            known
                .iter()
                .find(|a| &a.name == n)
                .cloned()
                .ok_or_else(|| format!("unknown ablation arm `{n}`"))
        })
        .collect()
}

fn ablate(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<(), Failure> {
    let arms = find_arms(&cfg.ablate.arms, exp.model.channels()).map_err(Failure::Invalid)?;
    if arms.is_empty() || cfg.ablate.seeds.is_empty() {
        return Err(Failure::Invalid("ablate needs at least one arm and one seed".into()));
    }
    let table = ablation::run_ablation(exp, &arms, &cfg.ablate.seeds, Some(&out.join("ablation_partial")))?;
    write(&out.join("ablation.csv"), table.to_csv().as_bytes())?;
    let summary = table.summary();
    write(&out.join("ablation_summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let scopes = cfg
        .gradcheck
        .scopes
        .iter()
        .map(|s| Scope::parse(s).ok_or_else(|| Failure::Invalid(format!("unknown gradcheck scope `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = grad_check_suite(&scopes)?;
    let mut text = String::new();
    for r in &reports {
        writeln!(text, "{r}").unwrap();
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    writeln!(text, "checks={} failed={failed}", reports.len()).unwrap();
    write(&out.join("gradcheck.txt"), text.as_bytes())?;
    print!("{text}");
    if failed > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!("{failed} of {} gradient checks failed", reports.len())));
    }
    Ok(())
}

fn dump_viz(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<(), Failure> {
    let model = load_model(exp, out, &cfg.viz.model, cfg.k)?;
    let test = exp.test_data()?;
    let episode = exp.eval_episode(&test, cfg.k, cfg.viz.query)?;
    let dir = out.join(format!("viz_{}_k{}", cfg.viz.model, cfg.k));
    let files = dump_visualizations(&model, &episode, &dir)?;
    log::info!("dump-viz dir={} files={}", dir.display(), files.len());
    Ok(())
}

/// Line-oriented log output: level, target, then the message, whose
/// `key=value` tail is meant for machines.
pub fn init_logging() {
    use std::io::Write;
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, record| writeln!(buf, "{:<5} {}: {}", record.level(), record.target(), record.args()))
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_from_options() {
        let args: Vec<OsString> = ["icpe", "eval", "--out=x", "--meta.lr=0.5", "--seed=3", "--config", "c.toml"]
            .iter()
            .map(OsString::from)
            .collect();
        let (rest, ov) = split_overrides(&args);
        assert_eq!(rest, ["icpe", "eval", "--out=x", "--config", "c.toml"].map(OsString::from));
        assert_eq!(ov, vec![("meta.lr".into(), "0.5".into()), ("seed".into(), "3".into())]);
    }

    #[test]
    fn arm_lookup() {
        let arms = find_arms(&["baseline".into(), "gap+gmp".into(), "width-8".into()], 32).unwrap();
        assert_eq!(arms[2].embed, Some(8));
        assert!(find_arms(&["nope".into()], 32).is_err());
    }
}
