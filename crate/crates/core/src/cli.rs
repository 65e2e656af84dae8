//! Command-line driver: `train`, `evaluate`, `sensitivity`, `gradcheck`, `synth`, `import`.
//!
//! Exit codes: 0 success, 1 gradient check above tolerance, 2 configuration
//! error, 3 data error (including variant/dataset mismatch), 4 numeric abort.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::{
    export_jsonl, import_dong_triplets, import_sc_jsonl, import_tdsc_jsonl, synth_corpus, Dataset,
    VocabSpec,
};
use crate::embeddings::{load_embeddings_text, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Estimate};
use crate::gradcheck::{run_gradcheck, GradcheckProfile};
use crate::models::{Predictor, Variant};
use crate::sensitivity::{escape_html, occlusion_scores, render_heatmap, HeatmapFormat};
use crate::training::{
    ensemble_train, load_checkpoints, save_checkpoint, Ensemble, TrainConfig, TrainData,
};

#[derive(Debug, Parser)]
#[command(
    name = "mttdsc",
    version,
    about = "Multi-task bi-GRU target-dependent sentiment classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a variant (an ensemble of `ensemble_size` seeds) and write checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint or checkpoint directory on a dataset.
    Evaluate(EvaluateArgs),
    /// Occlusion heatmaps for targeted instances.
    Sensitivity(SensitivityArgs),
    /// Compare analytic and finite-difference gradients on tiny random models.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus with its embeddings.
    Synth(SynthArgs),
    /// Convert Dong-style triplet files to canonical JSONL.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub aux_data: Option<PathBuf>,
    #[arg(long)]
    pub main_data: Option<PathBuf>,
    #[arg(long)]
    pub validation_data: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint file, or a directory whose `*.json` checkpoints form an ensemble.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL dataset; targeted when its records carry target fields.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Use the expected value p(+1) - p(-1) for MAE and PIR instead of the argmax label.
    #[arg(long)]
    pub expected: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Html,
    Ansi,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Targeted JSONL instances.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// `ansi` prints to stdout instead of writing files.
    #[arg(long, value_enum, default_value = "html")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON profile overriding the tiny default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub n_main: usize,
    #[arg(long, default_value_t = 200)]
    pub n_heldout: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_aux: usize,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Triplet file: sentence with `$T$`, target, label.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

/// Paths and variant plus every [`TrainConfig`] field, in one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub embeddings: Option<PathBuf>,
    pub aux_data: Option<PathBuf>,
    pub main_data: Option<PathBuf>,
    pub validation_data: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Mttdsc,
            embeddings: None,
            aux_data: None,
            main_data: None,
            validation_data: None,
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config document; unknown keys are rejected, missing keys take defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Map<String, Value> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not a JSON object: {e}")))?;
        let mut merged = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("a struct serializes to an object"),
        };
        for (k, v) in doc {
            if !merged.contains_key(&k) {
                return Err(Error::Config(format!("unknown config field `{k}`")));
            }
            merged.insert(k, v);
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
    }

    fn apply(&mut self, a: &TrainArgs) {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = a.$flag.clone() { self.$($field).+ = v.into(); })*
            };
        }
        set!(
            variant => variant,
            output_dir => output_dir,
            seed => train.seed,
            epochs => train.epochs,
            hidden => train.hidden,
            batch => train.batch,
            lr => train.lr,
            alpha => train.alpha,
            ensemble_size => train.ensemble_size,
            workers => train.workers,
        );
        for (flag, field) in [
            (&a.embeddings, &mut self.embeddings),
            (&a.aux_data, &mut self.aux_data),
            (&a.main_data, &mut self.main_data),
            (&a.validation_data, &mut self.validation_data),
        ] {
            if flag.is_some() {
                field.clone_from(flag);
            }
        }
    }

    /// Checks that every path the variant needs is present and exists.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let require = |name: &str, p: &Option<PathBuf>| -> Result<()> {
            match p {
                None => Err(Error::Config(format!(
                    "`{name}` is required for variant {}",
                    self.variant
                ))),
                Some(p) if !p.exists() => Err(Error::Config(format!(
                    "`{name}`: {} does not exist",
                    p.display()
                ))),
                Some(_) => Ok(()),
            }
        };
        require("embeddings", &self.embeddings)?;
        if self.variant.uses_aux_data() {
            require("aux_data", &self.aux_data)?;
        }
        if self.variant.is_targeted() {
            require("main_data", &self.main_data)?;
        }
        if self.validation_data.is_some() {
            require("validation_data", &self.validation_data)?;
        }
        Ok(())
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sensitivity(a) => cmd_sensitivity(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Import(a) => cmd_import(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings_text(open(path)?, None)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Targeted when the first record carries `target_start`.
fn load_dataset(path: &Path) -> Result<Dataset> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let targeted = serde_json::from_str::<Value>(first)
        .map(|v| v.get("target_start").is_some())
        .unwrap_or(true);
    Ok(if targeted {
        Dataset::Targeted(import_tdsc_jsonl(text.as_bytes())?)
    } else {
        Dataset::Passages(import_sc_jsonl(text.as_bytes())?)
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(a);
    cfg.validate()?;
    let table = load_table(cfg.embeddings.as_deref().expect("validated"))?;
    let aux = match (&cfg.aux_data, cfg.variant.uses_aux_data()) {
        (Some(p), true) => Some(import_sc_jsonl(open(p)?)?),
        _ => None,
    };
    let main = match (&cfg.main_data, cfg.variant.is_targeted()) {
        (Some(p), true) => Some(import_tdsc_jsonl(open(p)?)?),
        _ => None,
    };
    let validation = cfg
        .validation_data
        .as_deref()
        .map(load_dataset)
        .transpose()?;

    let out = &cfg.output_dir;
    for sub in ["checkpoints", "reports", "heatmaps", "logs"] {
        fs::create_dir_all(out.join(sub))?;
    }
    write_json(&out.join("resolved_config.json"), &cfg)?;

    let data = TrainData {
        table: &table,
        aux: aux.as_deref(),
        main: main.as_deref(),
        validation: validation.as_ref(),
    };
    let members = ensemble_train(cfg.variant, &data, &cfg.train)?;
    let mut log = BufWriter::new(File::create(out.join("logs/train.log"))?);
    for (k, ck) in members.iter().enumerate() {
        let stem = format!("{}_member{k}", cfg.variant);
        save_checkpoint(ck, &out.join("checkpoints").join(format!("{stem}.json")))?;
        write_json(
            &out.join("reports").join(format!("{stem}_history.json")),
            &ck.history,
        )?;
        for e in &ck.history.epochs {
            writeln!(
                log,
                "member {k} seed {} epoch {}: aux_loss {} main_loss {} objective {}{}",
                ck.config.seed,
                e.epoch,
                e.aux_loss,
                e.main_loss,
                e.objective,
                e.validation
                    .as_ref()
                    .map(|r| format!(" validation_macro_f1 {}", r.macro_f1))
                    .unwrap_or_default()
            )?;
        }
    }
    log.flush()?;
    if let Some(v) = &validation {
        let ensemble = Ensemble::new(members.into_iter().map(|c| c.model).collect())?;
        let report = evaluate(&ensemble, v, &table, Estimate::Discrete)?;
        write_json(&out.join("reports/validation.json"), &report)?;
        fs::write(
            out.join("reports/validation.txt"),
            report.text_table(cfg.variant.tag()),
        )?;
        print!("{}", report.text_table(cfg.variant.tag()));
    }
    println!("wrote {}", out.display());
    Ok(0)
}

fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let members = load_checkpoints(path)?;
    Ensemble::new(members.into_iter().map(|c| c.model).collect())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let ensemble = load_ensemble(&a.checkpoint)?;
    let table = load_table(&a.embeddings)?;
    let data = load_dataset(&a.data)?;
    let estimate = if a.expected {
        Estimate::Expected
    } else {
        Estimate::Discrete
    };
    let report = evaluate(&ensemble, &data, &table, estimate)?;
    let dir = a.output_dir.join("reports");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("evaluation.json"), &report)?;
    let table_text = report.text_table(ensemble.variant().tag());
    fs::write(dir.join("evaluation.txt"), &table_text)?;
    print!("{table_text}");
    Ok(0)
}

pub fn cmd_sensitivity(a: &SensitivityArgs) -> Result<i32> {
    let ensemble = load_ensemble(&a.checkpoint)?;
    if !ensemble.variant().is_targeted() {
        return Err(Error::Usage(format!(
            "{} checkpoints classify passages; sensitivity needs a target-dependent model",
            ensemble.variant()
        )));
    }
    let table = load_table(&a.embeddings)?;
    let instances = import_tdsc_jsonl(open(&a.data)?)?;
    let format = match a.format {
        FormatArg::Html => HeatmapFormat::Html,
        FormatArg::Ansi => HeatmapFormat::Ansi,
    };
    let dir = a.output_dir.join("heatmaps");
    if matches!(format, HeatmapFormat::Html) {
        fs::create_dir_all(&dir)?;
    }
    let mut index = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>word sensitivity index</title>\n</head>\n<body>\n<ol>\n",
    );
    for (k, inst) in instances.iter().enumerate() {
        let records = occlusion_scores(&ensemble, inst, &table)?;
        let doc = render_heatmap(&records, inst, format);
        match format {
            HeatmapFormat::Ansi => print!("{doc}"),
            HeatmapFormat::Html => {
                let name = format!("instance_{:04}.html", k + 1);
                fs::write(dir.join(&name), doc)?;
                index.push_str(&format!(
                    "<li><a href=\"{name}\">{}</a></li>\n",
                    escape_html(&inst.tokens.join(" "))
                ));
            }
        }
    }
    if matches!(format, HeatmapFormat::Html) {
        index.push_str("</ol>\n</body>\n</html>\n");
        fs::write(dir.join("index.html"), index)?;
        println!("wrote {} heatmaps to {}", instances.len(), dir.display());
    }
    Ok(0)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let mut profile = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => GradcheckProfile::default(),
    };
    if let Some(s) = a.seed {
        profile.seed = s;
    }
    let report = run_gradcheck(&profile)?;
    for e in &report.entries {
        println!(
            "{:<10} params {:>5}  max relative error {:.3e}  (worst in {})",
            e.variant.tag(),
            e.parameters,
            e.max_relative_error,
            e.worst
        );
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_relative_error(),
        report.tolerance,
        if report.passed() { "ok" } else { "FAILED" }
    );
    Ok(if report.passed() { 0 } else { 1 })
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    if a.n_main == 0 || a.n_aux == 0 {
        return Err(Error::Config("n_main and n_aux must be positive".into()));
    }
    let corpus = synth_corpus(
        a.seed,
        a.n_main + a.n_heldout,
        a.n_aux,
        &VocabSpec::default(),
    )?;
    let (train, heldout) = corpus.main.split_at(a.n_main);
    fs::create_dir_all(&a.output_dir)?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(a.output_dir.join(name))?))
    };
    let mut emb = create("embeddings.txt")?;
    corpus.embeddings.write_text(&mut emb)?;
    emb.flush()?;
    export_jsonl(train, create("main_train.jsonl")?)?;
    export_jsonl(heldout, create("main_heldout.jsonl")?)?;
    export_jsonl(&corpus.aux, create("aux.jsonl")?)?;
    println!(
        "wrote {} train, {} held-out, {} auxiliary instances to {}",
        train.len(),
        heldout.len(),
        corpus.aux.len(),
        a.output_dir.display()
    );
    Ok(0)
}

pub fn cmd_import(a: &ImportArgs) -> Result<i32> {
    let instances = import_dong_triplets(open(&a.input)?)?;
    if let Some(parent) = a.output.parent() {
        fs::create_dir_all(parent)?;
    }
    export_jsonl(&instances, BufWriter::new(File::create(&a.output)?))?;
    println!("imported {} instances", instances.len());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = RunConfig::from_json(r#"{"variant": "tdgru", "epochs": 3}"#).unwrap();
        assert_eq!(c.variant, Variant::Tdgru);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.hidden, 64);
        assert!(matches!(
            RunConfig::from_json(r#"{"epoch": 3}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_json("[1]"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_embeddings_is_a_config_error() {
        let c = RunConfig::default();
        let err = c.validate().unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("embeddings"));
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 4);
        assert_eq!(exit_code(&Error::Usage("mismatch".into())), 3);
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::from_json(r#"{"seed": 4, "alpha": 0.5}"#).unwrap();
        let args = Cli::parse_from(["mttdsc", "train", "--seed", "9", "--variant", "naive-mtl"]);
        let Command::Train(a) = args.command else {
            panic!()
        };
        c.apply(&a);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.alpha, 0.5);
        assert_eq!(c.variant, Variant::NaiveMtl);
    }
}
