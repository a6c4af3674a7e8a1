//! Command-line entry point: synth, train, eval, and gradcheck workflows
//! with reproducible run directories.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use radd_core::evalrank::{
    case_trace, evaluate, AblationMode, EvalSettings, InferenceMode,
};
use radd_core::gradsuite::{run_suite, SuiteOptions};
use radd_core::kgdata::{
    load_features, synth_kg, write_rvec1, write_triples, KnowledgeGraph, ModalityFeatureStore,
    Split, SynthSpec,
};
use radd_core::trainer::{
    load_checkpoint, save_checkpoint, train, Checkpoint, TrainLogRow, TrainState,
};
use radd_core::RaddError;

use config::{RunConfig, WeightSource};

const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

#[derive(Parser)]
#[command(
    name = "radd",
    about = "Relation-gated multimodal retriever with a discrete-diffusion reranker",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic knowledge graph with modality features.
    Synth {
        /// Output directory for the triple splits, feature files, and manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        entities: usize,
        #[arg(long, default_value_t = 10)]
        relations: usize,
        #[arg(long, default_value_t = 1000)]
        triples: usize,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.2)]
        feature_noise: f64,
    },
    /// Train a model from a run configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 1 is bitwise reproducible.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate a checkpoint with filtered ranking metrics.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scoring path: full, retriever-only, denoiser-only, structure-only,
        /// no-distill, tail-only.
        #[arg(long)]
        mode: Option<String>,
        /// Shortlist size override.
        #[arg(long)]
        k: Option<usize>,
        /// Split to evaluate: test or valid.
        #[arg(long, default_value = "test")]
        split: String,
        /// Denoiser weights: ema or live.
        #[arg(long)]
        weights: Option<String>,
        /// Inference mode: single-pass or iterative.
        #[arg(long)]
        inference: Option<String>,
        /// Output directory for report files (defaults to the checkpoint's
        /// directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit per-query rank traces for this many sampled queries.
        #[arg(long, default_value_t = 0)]
        case_traces: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Certify every loss gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 6)]
        entities: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Synth {
            out,
            seed,
            entities,
            relations,
            triples,
            feature_dim,
            feature_noise,
        } => cmd_synth(out, seed, entities, relations, triples, feature_dim, feature_noise),
        Command::Train { config, threads } => cmd_train(&config, threads),
        Command::Eval {
            config,
            checkpoint,
            mode,
            k,
            split,
            weights,
            inference,
            out,
            case_traces,
            threads,
        } => cmd_eval(
            &config,
            &checkpoint,
            mode,
            k,
            &split,
            weights,
            inference,
            out,
            case_traces,
            threads,
        ),
        Command::Gradcheck {
            seeds,
            entities,
            d,
            threshold,
        } => cmd_gradcheck(seeds, entities, d, threshold),
    };
    std::process::exit(code);
}

fn core_exit_code(e: &RaddError) -> i32 {
    match e {
        RaddError::Config(_) | RaddError::InvalidArg(_) => EXIT_CONFIG,
        RaddError::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn fail(e: &RaddError) -> i32 {
    eprintln!("error: {e}");
    core_exit_code(e)
}

fn cmd_synth(
    out: PathBuf,
    seed: u64,
    entities: usize,
    relations: usize,
    triples: usize,
    feature_dim: usize,
    feature_noise: f64,
) -> i32 {
    let spec = SynthSpec {
        seed,
        n_entities: entities,
        n_relations: relations,
        n_triples: triples,
        feature_dim,
        feature_noise,
    };
    let (kg, features) = match synth_kg(spec) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        return fail(&RaddError::io(&out, e));
    }
    let write = || -> radd_core::Result<()> {
        write_triples(&out.join("train.tsv"), &kg.train, &kg.entities, &kg.relations)?;
        write_triples(&out.join("valid.tsv"), &kg.valid, &kg.entities, &kg.relations)?;
        write_triples(&out.join("test.tsv"), &kg.test, &kg.entities, &kg.relations)?;
        write_rvec1(&out.join("visual.rvec"), &features.visual)?;
        write_rvec1(&out.join("textual.rvec"), &features.textual)?;
        let manifest = format!(
            "entities={entities}\nfeature_dim={feature_dim}\nfeature_noise={feature_noise:?}\n\
             relations={relations}\nseed={seed}\ntriples={triples}\n"
        );
        std::fs::write(out.join("manifest.kv"), manifest)
            .map_err(|e| RaddError::io(out.join("manifest.kv"), e))?;
        Ok(())
    };
    match write() {
        Ok(()) => {
            println!(
                "wrote {} triples ({} train / {} valid / {} test), {} entities, {} relations to {}",
                kg.train.len() + kg.valid.len() + kg.test.len(),
                kg.train.len(),
                kg.valid.len(),
                kg.test.len(),
                kg.n_entities(),
                kg.n_relations(),
                out.display()
            );
            0
        }
        Err(e) => fail(&e),
    }
}

fn load_dataset(cfg: &RunConfig) -> radd_core::Result<(KnowledgeGraph, ModalityFeatureStore)> {
    let kg = KnowledgeGraph::load(&cfg.triples_train, &cfg.triples_valid, &cfg.triples_test)?;
    let features = match (&cfg.features_visual, &cfg.features_textual) {
        (Some(v), Some(t)) => ModalityFeatureStore {
            visual: load_features(v, kg.n_entities())?,
            textual: load_features(t, kg.n_entities())?,
        },
        _ => ModalityFeatureStore::empty(kg.n_entities()),
    };
    Ok((kg, features))
}

/// Existing run directories are never reused; a timestamp (and counter, if
/// needed) is appended until the path is fresh.
fn fresh_run_dir(base: &Path) -> PathBuf {
    if !base.exists() {
        return base.to_path_buf();
    }
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut candidate = PathBuf::from(format!("{}-{ts}", base.display()));
    let mut i = 1;
    while candidate.exists() {
        candidate = PathBuf::from(format!("{}-{ts}-{i}", base.display()));
        i += 1;
    }
    candidate
}

fn cmd_train(config_path: &Path, threads: Option<usize>) -> i32 {
    let mut cfg = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("invalid configuration ({} problems):", errors.len());
            for e in &errors {
                eprintln!("  - {e}");
            }
            return EXIT_CONFIG;
        }
    };
    if let Some(t) = threads {
        cfg.train.threads = t;
    }
    let (kg, features) = match load_dataset(&cfg) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let config_errors = cfg.train.validate(&kg);
    if !config_errors.is_empty() {
        eprintln!("invalid configuration ({} problems):", config_errors.len());
        for e in &config_errors {
            eprintln!("  - {e}");
        }
        return EXIT_CONFIG;
    }

    let run_dir = fresh_run_dir(&cfg.run_dir);
    if let Err(e) = std::fs::create_dir_all(&run_dir) {
        return fail(&RaddError::io(&run_dir, e));
    }
    let mut frozen = cfg.clone();
    frozen.run_dir = run_dir.clone();
    if let Err(e) = std::fs::write(run_dir.join("config.resolved"), frozen.to_kv()) {
        return fail(&RaddError::io(run_dir.join("config.resolved"), e));
    }
    let log_path = run_dir.join("train.log");
    let mut log_file = match std::fs::File::create(&log_path) {
        Ok(f) => f,
        Err(e) => return fail(&RaddError::io(&log_path, e)),
    };
    let _ = writeln!(log_file, "{}", TrainLogRow::TSV_HEADER);
    println!("{}", TrainLogRow::TSV_HEADER);

    let outcome = train(&kg, &features, cfg.train.clone(), |row: &TrainLogRow| {
        let line = row.to_tsv();
        println!("{line}");
        let _ = writeln!(log_file, "{line}");
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    for (name, ckpt) in [("best.ckpt", &outcome.best), ("final.ckpt", &outcome.last)] {
        if let Err(e) = save_checkpoint(ckpt, &run_dir.join(name)) {
            return fail(&e);
        }
    }
    println!(
        "run directory: {} (best epoch {}, final epoch {})",
        run_dir.display(),
        outcome.best.epoch,
        outcome.last.epoch
    );
    0
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config_path: &Path,
    checkpoint_path: &Path,
    mode: Option<String>,
    k: Option<usize>,
    split: &str,
    weights: Option<String>,
    inference: Option<String>,
    out: Option<PathBuf>,
    case_traces: usize,
    threads: Option<usize>,
) -> i32 {
    let cfg = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("invalid configuration ({} problems):", errors.len());
            for e in &errors {
                eprintln!("  - {e}");
            }
            return EXIT_CONFIG;
        }
    };
    let split = match split {
        "test" => Split::Test,
        "valid" => Split::Valid,
        _ => {
            eprintln!("error: unknown split '{split}' (test, valid)");
            return EXIT_CONFIG;
        }
    };
    let mode = match mode.as_deref().map(AblationMode::parse).transpose() {
        Ok(m) => m.unwrap_or(cfg.eval_mode),
        Err(e) => return fail(&e),
    };
    let weights = match weights.as_deref().map(WeightSource::parse).transpose() {
        Ok(w) => w.unwrap_or(cfg.eval_weights),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let inference = match inference.as_deref() {
        None => cfg.eval_inference,
        Some("single-pass") => InferenceMode::SinglePass,
        Some("iterative") => InferenceMode::Iterative,
        Some(other) => {
            eprintln!("error: unknown inference mode '{other}' (single-pass, iterative)");
            return EXIT_CONFIG;
        }
    };

    let (kg, features) = match load_dataset(&cfg) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let ckpt: Checkpoint = match load_checkpoint(checkpoint_path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let state = match TrainState::from_checkpoint(ckpt, &kg) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let shortlist_k = k.unwrap_or(state.config.shortlist_k);
    if shortlist_k == 0 || shortlist_k > kg.n_entities() {
        eprintln!(
            "error: shortlist size {shortlist_k} outside 1..=|E| = {}",
            kg.n_entities()
        );
        return EXIT_CONFIG;
    }
    let denoiser = match weights {
        WeightSource::Ema => &state.ema,
        WeightSource::Live => &state.denoiser,
    };
    let settings = EvalSettings {
        split,
        mode,
        inference,
        shortlist_k,
        t_steps: state.config.t_steps,
        rho0: state.config.rho0,
        seed: state.config.seed,
        threads: threads.unwrap_or(state.config.threads),
    };
    let report = match evaluate(&kg, &features, &state.retriever, denoiser, &settings) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    print!("{}", report.to_tsv());

    let out_dir = out.unwrap_or_else(|| {
        checkpoint_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(&RaddError::io(&out_dir, e));
    }
    let stem = format!("metrics-{}-{}", mode.name(), split_name(split));
    let write = || -> radd_core::Result<()> {
        std::fs::write(out_dir.join(format!("{stem}.tsv")), report.to_tsv())
            .map_err(|e| RaddError::io(out_dir.join(format!("{stem}.tsv")), e))?;
        std::fs::write(out_dir.join(format!("{stem}.kv")), report.to_kv())
            .map_err(|e| RaddError::io(out_dir.join(format!("{stem}.kv")), e))?;
        if case_traces > 0 {
            let queries = radd_core::kgdata::make_queries(&kg, split);
            let step = (queries.len() / case_traces.max(1)).max(1);
            let mut text = String::from("query\tmode\trank\n");
            for q in queries.iter().step_by(step).take(case_traces) {
                let trace = case_trace(&kg, &features, &state.retriever, denoiser, q, &settings)?;
                text.push_str(&trace.to_tsv_rows(&kg));
            }
            std::fs::write(out_dir.join("case_traces.tsv"), text)
                .map_err(|e| RaddError::io(out_dir.join("case_traces.tsv"), e))?;
        }
        Ok(())
    };
    match write() {
        Ok(()) => 0,
        Err(e) => fail(&e),
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Test => "test",
        Split::Valid => "valid",
        Split::Train => "train",
    }
}

fn cmd_gradcheck(seeds: u64, entities: usize, d: usize, threshold: f64) -> i32 {
    let opts = SuiteOptions {
        seeds,
        n_entities: entities,
        d,
        threshold,
    };
    let checks = match run_suite(&opts) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let mut all_pass = true;
    println!("loss\tworst_rel_err\tseeds\tresult");
    for c in &checks {
        println!(
            "{}\t{:.3e}\t{}\t{}",
            c.name,
            c.worst_rel_err,
            c.seeds,
            if c.pass { "PASS" } else { "FAIL" }
        );
        all_pass &= c.pass;
    }
    if all_pass {
        0
    } else {
        EXIT_NUMERIC
    }
}
