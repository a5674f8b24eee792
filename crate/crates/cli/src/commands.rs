//! Subcommand implementations.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use deconf_core::causal::{verify_docalc, DiscreteScm};
use deconf_core::gradsuite::{self, CASES, DEFAULT_STEP, PASS_TOLERANCE};
use deconf_core::model::Model;
use deconf_core::skeleton::SkeletonSpec;
use deconf_core::synth::{
    enrichment, evaluate, generate_split, intervention_frequency, pck, score_validation,
    to_dataset, BenchConfig, InstanceErrors, PoseSample, Split, World,
};
use deconf_core::trainer::Trainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{BenchSection, RunConfig};
use crate::dataset;
use crate::error::CliError;
use crate::files;
use crate::records::{self, Record};

/// Tolerance for `scm-verify`.
pub const SCM_TOL: f64 = 1e-11;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(name = "deconf", version, about = "Counterfactual keypoint reasoning on a confounded synthetic benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, log and resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Generate benchmark splits and a manifest.
    Gen(GenArgs),
    /// Check the backdoor identities on discrete SCMs.
    ScmVerify(ScmArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradArgs),
    /// Dump canonical rows and sampled embeddings for offline projection.
    DumpEmbeddings(DumpArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value` or `section.key=value`, applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from the checkpoint in `--out` if one exists.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation; `--resume` continues.
    #[arg(long, value_name = "EPOCHS")]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Test => "test",
        }
    }
}

/// Where evaluation samples come from: a dataset file, or a split
/// regenerated from a run config.
#[derive(Debug, Args)]
pub struct SampleSource {
    #[arg(long, conflicts_with = "config")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SampleSource,
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
    /// Top-n enrichment with the easiest fraction `p` dropped.
    #[arg(long, num_args = 2, value_names = ["N", "P"])]
    pub enrich: Option<Vec<String>>,
    /// Report intervention frequency per keypoint group.
    #[arg(long)]
    pub freq: bool,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `metrics.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScmArgs {
    /// SCM file (TOML).
    #[arg(conflicts_with = "random")]
    pub file: Option<PathBuf>,
    /// Check this many random SCMs with domain sizes 2 to 5.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    /// Check a single case.
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SampleSource,
    /// Number of samples whose embeddings are dumped.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => train(&a, stdout),
        Command::Eval(a) => eval(&a, stdout),
        Command::Gen(a) => gen(&a, stdout),
        Command::ScmVerify(a) => scm_verify(&a, stdout),
        Command::Gradcheck(a) => gradcheck(&a, stdout),
        Command::DumpEmbeddings(a) => dump_embeddings(&a, stdout),
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::io("writing to stdout", e)
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p, overrides),
        None => RunConfig::parse("", overrides),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

fn split_samples(bench: &BenchSection, k: usize, split: SplitArg) -> Result<Vec<PoseSample>, CliError> {
    let c = bench.to_config()?;
    let world = World::new(k, c.n_contexts, c.world_seed).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(match split {
        SplitArg::Train => generate_split(&world, &c, Split::Train, c.n_train),
        SplitArg::Test => generate_split(&world, &c, Split::Test, c.n_test),
    })
}

fn check_samples(model: &Model, k: usize, samples: &[PoseSample]) -> Result<(), CliError> {
    if k != model.config.k {
        return Err(CliError::Mismatch(format!(
            "dataset has {k} keypoints, checkpoint expects {}",
            model.config.k
        )));
    }
    if let Some(s) = samples.first() {
        if s.features.len() != model.config.d_in {
            return Err(CliError::Mismatch(format!(
                "dataset features are {} wide, checkpoint expects {}",
                s.features.len(),
                model.config.d_in
            )));
        }
    }
    Ok(())
}

fn load_samples(src: &SampleSource, model: &Model) -> Result<Vec<PoseSample>, CliError> {
    let (k, samples) = match &src.dataset {
        Some(_) if !src.overrides.is_empty() => {
            return Err(CliError::Config("--override needs --config, not --dataset".into()))
        }
        Some(p) => dataset::load(p)?,
        None => {
            let cfg = load_config(src.config.as_deref(), &src.overrides)?;
            let spec = cfg.skeleton()?;
            if spec != model.skeleton {
                return Err(CliError::Mismatch(
                    "config skeleton differs from the checkpoint skeleton".into(),
                ));
            }
            (spec.k(), split_samples(&cfg.bench, spec.k(), src.split)?)
        }
    };
    check_samples(model, k, &samples)?;
    Ok(samples)
}

fn train_samples(cfg: &RunConfig, spec: &SkeletonSpec) -> Result<Vec<PoseSample>, CliError> {
    match &cfg.data.dataset {
        Some(p) => {
            let (k, samples) = dataset::load(p)?;
            if k != spec.k() {
                return Err(CliError::Mismatch(format!(
                    "dataset has {k} keypoints, skeleton has {}",
                    spec.k()
                )));
            }
            Ok(samples)
        }
        None => split_samples(&cfg.bench, spec.k(), SplitArg::Train),
    }
}

fn train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let spec = cfg.skeleton()?;
    let tc = cfg.train_config(spec.k())?;
    let samples = train_samples(&cfg, &spec)?;
    if samples.is_empty() {
        return Err(CliError::Config("training set is empty".into()));
    }
    let data = to_dataset(&samples, spec.k());
    let d_in = data.features.cols();

    create_dir(&a.out)?;
    write_text(&a.out.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let log_path = a.out.join(LOG_FILE);

    let mut trainer = if a.resume && ckpt_path.exists() {
        let t = checkpoint::load(&ckpt_path)?;
        if t.config != tc || t.model.skeleton != spec {
            return Err(CliError::Config(
                "resolved config differs from the one the checkpoint was trained with".into(),
            ));
        }
        if t.model.config.d_in != d_in {
            return Err(CliError::Mismatch(format!(
                "dataset features are {d_in} wide, checkpoint expects {}",
                t.model.config.d_in
            )));
        }
        // keep only the log lines the checkpoint already covers, verbatim
        let kept = if log_path.exists() {
            records::retain_lines(&log_path, |r| match r {
                Record::Step { iter, .. } => *iter < t.iter,
                Record::Epoch { epoch, .. } => *epoch < t.epoch,
                _ => false,
            })?
        } else {
            String::new()
        };
        write_text(&log_path, &kept)?;
        writeln!(stdout, "resuming at epoch {} (iteration {})", t.epoch, t.iter).map_err(out_err)?;
        t
    } else {
        records::write_all(&log_path, &[])?;
        Trainer::new(tc, spec, d_in, data.len())?
    };

    let epochs = trainer.config.epochs;
    let mut sha = None;
    let mut ran = 0;
    while (trainer.epoch as usize) < epochs && a.stop_after.is_none_or(|n| ran < n) {
        let steps = trainer.run_epoch(&data)?;
        ran += 1;
        let hash = checkpoint::save(&ckpt_path, &trainer)?;
        let summary = Record::epoch(trainer.epoch - 1, &steps, hash.clone());
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| CliError::write(&log_path, e))?;
        for r in steps.iter().map(Record::from).chain([summary.clone()]) {
            writeln!(f, "{}", r.to_line()).map_err(|e| CliError::write(&log_path, e))?;
        }
        if let Record::Epoch { mean_l_total, .. } = summary {
            writeln!(stdout, "epoch {}/{epochs}  l_total {mean_l_total:.6}", trainer.epoch)
                .map_err(out_err)?;
        }
        sha = Some(hash);
    }
    let sha = match sha {
        Some(h) => h,
        None => checkpoint::save(&ckpt_path, &trainer)?,
    };
    writeln!(stdout, "checkpoint {} sha256 {sha}", ckpt_path.display()).map_err(out_err)?;
    Ok(())
}

fn parse_enrich(v: &[String]) -> Result<(usize, f64), CliError> {
    let n = v[0]
        .parse::<usize>()
        .map_err(|_| CliError::Config(format!("--enrich n must be a non-negative integer, got `{}`", v[0])))?;
    let p = v[1]
        .parse::<f64>()
        .map_err(|_| CliError::Config(format!("--enrich p must be a number, got `{}`", v[1])))?;
    if n == 0 {
        return Err(CliError::Config("--enrich n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(CliError::Config(format!("--enrich p must be in [0, 1), got {p}")));
    }
    Ok((n, p))
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a Path>,
    overrides: &'a [String],
    split: &'a str,
    radius: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    enrich_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    enrich_p: Option<f64>,
    freq: bool,
}

fn eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(a.radius > 0.0) {
        return Err(CliError::Config(format!("--radius must be positive, got {}", a.radius)));
    }
    let enrich = a.enrich.as_deref().map(parse_enrich).transpose()?;
    let trainer = checkpoint::load(&a.checkpoint)?;
    let model = &trainer.model;
    let samples = load_samples(&a.source, model)?;
    let split = match &a.source.dataset {
        Some(_) => "dataset",
        None => a.source.split.name(),
    };

    let ev = evaluate(model, &samples)?;
    let errors = ev.errors(&samples);
    let k = ev.k;
    let vis: Vec<bool> = samples.iter().flat_map(|s| s.visibility.iter().copied()).collect();
    let occ: Vec<bool> = samples.iter().flat_map(|s| s.occluded.iter().copied()).collect();

    let mut out = Vec::new();
    let report = pck(&errors, &vis, k, a.radius, &model.skeleton);
    writeln!(stdout, "PCK@{}  overall {:.4}  ({} instances)", a.radius, report.overall, samples.len())
        .map_err(out_err)?;
    for (g, v) in &report.per_group {
        writeln!(stdout, "  {g:<16} {v:.4}").map_err(out_err)?;
    }
    out.push(Record::pck(split, &report));

    let sv = score_validation(&ev.scores, &occ);
    match (sv.occluded, sv.visible, sv.test) {
        (Some(o), Some(v), Some(t)) => writeln!(
            stdout,
            "confounder score median  occluded {:.4}  visible {:.4}  rank-sum p {:.3e}",
            o.median, v.median, t.p_value
        ),
        _ => writeln!(stdout, "confounder score: occluded or visible group is empty"),
    }
    .map_err(out_err)?;
    out.push(Record::scores(split, &sv));

    if let Some((n, p)) = enrich {
        let instances: Vec<InstanceErrors> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| InstanceErrors {
                errors: errors[i * k..(i + 1) * k].to_vec(),
                scores: ev.scores[i * k..(i + 1) * k].to_vec(),
                visible: s.visibility.clone(),
            })
            .collect();
        let r = enrichment(&instances, n, p, a.seed);
        writeln!(
            stdout,
            "enrichment n={n} p={p}  mean delta {:.6}  95% CI [{:.6}, {:.6}]  kept {}  excluded {}",
            r.mean_delta, r.ci_low, r.ci_high, r.kept, r.excluded
        )
        .map_err(out_err)?;
        out.push(Record::enrichment(split, &r));
    }

    if a.freq {
        let f = intervention_frequency(&ev.mask(), &model.skeleton);
        writeln!(stdout, "intervention frequency").map_err(out_err)?;
        for g in &f {
            writeln!(stdout, "  {:<16} rate {:.4}  share {:.4}", g.group, g.rate, g.share).map_err(out_err)?;
        }
        out.push(Record::frequency(split, &f));
    }

    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let echo = EvalEcho {
            checkpoint: &a.checkpoint,
            dataset: a.source.dataset.as_deref(),
            config: a.source.config.as_deref(),
            overrides: &a.source.overrides,
            split,
            radius: a.radius,
            seed: a.seed,
            enrich_n: enrich.map(|e| e.0),
            enrich_p: enrich.map(|e| e.1),
            freq: a.freq,
        };
        let text = toml::to_string(&echo).map_err(|e| CliError::Internal(e.to_string()))?;
        write_text(&dir.join("eval.resolved.toml"), &text)?;
        records::write_all(&dir.join(METRICS_FILE), &out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    split: String,
    samples: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    k: usize,
    d_in: usize,
    bench: &'a BenchSection,
    skeleton: files::SkeletonFile,
    files: Vec<ManifestFile>,
}

fn gen(a: &GenArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let spec = cfg.skeleton()?;
    let k = spec.k();
    create_dir(&a.out)?;
    let mut entries = Vec::new();
    for split in [SplitArg::Train, SplitArg::Test] {
        let samples = split_samples(&cfg.bench, k, split)?;
        let name = format!("{}.bin", split.name());
        let sha256 = dataset::save(&a.out.join(&name), k, &samples)?;
        writeln!(stdout, "{name}  {} samples  sha256 {sha256}", samples.len()).map_err(out_err)?;
        entries.push(ManifestFile {
            name,
            split: split.name().into(),
            samples: samples.len(),
            sha256,
        });
    }
    let manifest = Manifest {
        format: "DECONFDS v1",
        k,
        d_in: BenchConfig::d_in(k),
        bench: &cfg.bench,
        skeleton: files::SkeletonFile::from(&spec),
        files: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(&a.out.join("manifest.toml"), &text)?;
    Ok(())
}

fn scm_verify(a: &ScmArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let check = |scm: &DiscreteScm| verify_docalc(scm).map_err(|e| CliError::Internal(e.to_string()));
    match (&a.file, a.random) {
        (Some(path), None) => {
            let scm = files::load_scm(path)?;
            let r = check(&scm)?;
            let verdict = |d: f64| if d < SCM_TOL { "PASS" } else { "FAIL" };
            writeln!(stdout, "A2  P(c|do(f)) = P(c)              max dev {:e}  {}", r.a2_max_dev, verdict(r.a2_max_dev))
                .map_err(out_err)?;
            writeln!(stdout, "A3  P(y|do(f),c) = P(y|f,c)        max dev {:e}  {}", r.a3_max_dev, verdict(r.a3_max_dev))
                .map_err(out_err)?;
            writeln!(stdout, "adjustment vs graph surgery        max dev {:e}  {}", r.eq1_max_dev, verdict(r.eq1_max_dev))
                .map_err(out_err)?;
            if r.max_dev() < SCM_TOL {
                writeln!(stdout, "PASS").map_err(out_err)?;
                Ok(())
            } else {
                Err(CliError::Failed(format!("max deviation {:e} exceeds {SCM_TOL:e}", r.max_dev())))
            }
        }
        (None, Some(count)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let (mut passed, mut a2, mut a3, mut eq1) = (0usize, 0f64, 0f64, 0f64);
            for _ in 0..count {
                let sizes = [0; 4].map(|_| rng.random_range(2..=5));
                let scm = DiscreteScm::random(&mut rng, sizes).map_err(|e| CliError::Internal(e.to_string()))?;
                let r = check(&scm)?;
                a2 = a2.max(r.a2_max_dev);
                a3 = a3.max(r.a3_max_dev);
                eq1 = eq1.max(r.eq1_max_dev);
                passed += usize::from(r.max_dev() < SCM_TOL);
            }
            writeln!(stdout, "max dev  A2 {a2:e}  A3 {a3:e}  adjustment vs surgery {eq1:e}").map_err(out_err)?;
            writeln!(stdout, "{passed}/{count} PASS").map_err(out_err)?;
            if passed == count {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{} of {count} SCMs failed", count - passed)))
            }
        }
        (None, None) => Err(CliError::Config("give an SCM file or --random N".into())),
        (Some(_), Some(_)) => Err(CliError::Config("an SCM file and --random are exclusive".into())),
    }
}

fn gradcheck(a: &GradArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(op) = &a.op {
        if !CASES.contains(&op.as_str()) {
            return Err(CliError::Config(format!(
                "unknown op `{op}`; known: {}",
                CASES.join(", ")
            )));
        }
    }
    if !(a.step > 0.0) {
        return Err(CliError::Config(format!("--step must be positive, got {}", a.step)));
    }
    let results = gradsuite::run_suite(a.op.as_deref(), a.seed, a.step)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(stdout, "{:<14} max rel error {:.3e}  {verdict}", r.name, r.report.max_rel_error)
            .map_err(out_err)?;
    }
    if failed == 0 {
        writeln!(stdout, "PASS ({} cases, tolerance {PASS_TOLERANCE:e})", results.len()).map_err(out_err)?;
        Ok(())
    } else {
        Err(CliError::Failed(format!("{failed} of {} cases exceed {PASS_TOLERANCE:e}", results.len())))
    }
}

fn dump_embeddings(a: &DumpArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let trainer = checkpoint::load(&a.checkpoint)?;
    let model = &trainer.model;
    let mut samples = load_samples(&a.source, model)?;
    samples.truncate(a.samples);
    let names = model.skeleton.names();
    let z = &model.params.canonical;
    let mut out: Vec<Record> = (0..model.config.k)
        .map(|k| Record::Canonical {
            keypoint: k,
            name: names[k].clone(),
            values: z.row(k).to_vec(),
        })
        .collect();
    if !samples.is_empty() {
        let data = to_dataset(&samples, model.config.k);
        let inf = model.infer(&data.features)?;
        for (i, s) in samples.iter().enumerate() {
            for k in 0..model.config.k {
                out.push(Record::Embedding {
                    sample: i,
                    keypoint: k,
                    name: names[k].clone(),
                    context: s.context_id,
                    occluded: s.occluded[k],
                    values: inf.embeddings.row(i * model.config.k + k).to_vec(),
                });
            }
        }
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    records::write_all(&a.out, &out)?;
    writeln!(
        stdout,
        "{} canonical rows, {} embedding rows -> {}",
        model.config.k,
        samples.len() * model.config.k,
        a.out.display()
    )
    .map_err(out_err)?;
    Ok(())
}
