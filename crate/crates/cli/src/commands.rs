//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::Serialize;
use tonequant_core::data::{generate_synthetic_corpus, CorpusManifest, Split, Stage, SyntheticSpec};
use tonequant_core::experiment::{
    fit_representation, probe_model, run_codebook_sweep, run_comparison, run_residual_analysis,
    write_comparison, write_residual, write_sweep, ExperimentSpec, Provenance, Representation,
    ResultTable, Splits,
};
use tonequant_core::probe::ProbeOutcome;
use tonequant_core::quantise::{quantise_split, write_units_tsv};
use tonequant_core::{Corpus, Error};

use crate::args::{
    Cli, Command, CompareArgs, FitArgs, GlobalArgs, ProbeArgs, QuantiseArgs, ReportArgs,
    ReportFormat, ResidualArgs, SpecArgs, SweepArgs, SynthArgs,
};
use crate::report::{self, parse_input, render_long_csv, render_markdown};
use crate::{model, CliError, CliResult};

/// Environment variable capping the worker thread count.
pub const THREADS_VAR: &str = "DSU_QUANT_THREADS";
pub const DEFAULT_SEED: u64 = 42;

pub fn execute(cli: Cli) -> CliResult<()> {
    init_logging(cli.global.verbose);
    init_threads()?;
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => cmd_synth(g, a),
        Command::Fit(a) => cmd_fit(g, a),
        Command::Quantise(a) => cmd_quantise(g, a),
        Command::Probe(a) => cmd_probe(g, a),
        Command::Compare(a) => cmd_compare(g, a),
        Command::Sweep(a) => cmd_sweep(g, a),
        Command::Residual(a) => cmd_residual(g, a),
        Command::Report(a) => cmd_report(g, a),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // A second initialisation (tests calling `run` repeatedly) is harmless.
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    // Fails only if the pool already exists, in which case it keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn out_dir(g: &GlobalArgs, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_corpus(g: &GlobalArgs) -> CliResult<Corpus> {
    let path = g
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Usage("--manifest is required".into()))?;
    let manifest = CorpusManifest::load(path)?;
    manifest.require_all_splits()?;
    Ok(Corpus::load(&manifest)?)
}

fn build_spec(g: &GlobalArgs, a: &SpecArgs, default_out: &str) -> CliResult<ExperimentSpec> {
    let mut spec = match &a.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec {
            seed: DEFAULT_SEED,
            ..ExperimentSpec::default()
        },
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    if let Some(m) = &g.manifest {
        spec.manifest = Some(m.clone());
    }
    spec.output_dir = Some(out_dir(g, default_out));
    if let Some(e) = a.probe_epochs {
        spec.recurrent_probe.max_epochs = e;
    }
    if let Some(e) = a.codec_epochs {
        spec.codec.max_epochs = e;
    }
    Ok(spec)
}

fn parse_representation(name: &str, budget: usize) -> CliResult<Representation> {
    Representation::parse_with_budget(name.trim(), budget)
        .map_err(|e| CliError::Usage(format!("invalid quantiser {name:?}: {e}")))
}

fn validate(spec: &ExperimentSpec) -> CliResult<()> {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn echo_provenance(p: &Provenance) {
    println!("seed: {}", p.seed);
    println!("spec sha256: {}", p.spec_hash);
}

fn cmd_synth(g: &GlobalArgs, a: &SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec {
            seed: DEFAULT_SEED,
            ..SyntheticSpec::default()
        },
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag { spec.$($field).+ = v; })*
        };
    }
    set!(
        num_phones => num_phones,
        num_consonants => num_consonants,
        num_tones => num_tones,
        dim => dim,
        phone_spread => phone_spread,
        tone_scale => tone_scale,
        noise_scale => noise_scale,
        train_utterances => utterances.train,
        val_utterances => utterances.validation,
        test_utterances => utterances.test,
    );
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if spec.num_tones <= 1 {
        eprintln!("warning: a single tone class makes tone probing degenerate");
    }
    let dir = out_dir(g, "corpus");
    create_dir(&dir)?;
    let generated = generate_synthetic_corpus(&spec, &dir)?;
    write_json(&dir.join("synthetic_spec.json"), &spec)?;
    println!("manifest: {}", generated.manifest_path.display());
    println!("seed: {}", spec.seed);
    for split in Split::ALL {
        let s = generated.summary.get(split);
        println!(
            "{split}: {} utterances, {} frames, {} vowel segments, {} consonant segments",
            s.utterances, s.frames, s.vowel_segments, s.consonant_segments
        );
    }
    let train = generated.summary.get(Split::Train);
    let counts = |m: &std::collections::BTreeMap<String, usize>| {
        m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    };
    println!("train tone counts: {}", counts(&train.tone_counts));
    println!("train phone counts: {}", counts(&train.phone_counts));
    Ok(())
}

fn cmd_fit(g: &GlobalArgs, a: &FitArgs) -> CliResult<()> {
    let rep = parse_representation(&a.quantiser, a.budget)?;
    if rep == Representation::Latent {
        return Err(CliError::Usage("the continuous baseline has nothing to fit".into()));
    }
    let spec = build_spec(g, &a.spec, "model")?;
    let corpus = load_corpus(g)?;
    let splits = Splits::new(&corpus)?;
    let fitted = fit_representation(&spec, &splits, &rep)?;
    let provenance = Provenance::new(&spec);
    let dir = out_dir(g, "model");
    let descriptor = model::save(&dir, &rep, &fitted, &provenance)?;
    println!("fitted {rep} -> {}", dir.display());
    for f in &descriptor.files {
        println!("  {f}");
    }
    echo_provenance(&provenance);
    Ok(())
}

fn cmd_quantise(g: &GlobalArgs, a: &QuantiseArgs) -> CliResult<()> {
    let (descriptor, fitted) = model::load(&a.model)?;
    let q = fitted.quantiser().expect("saved models always quantise");
    let corpus = load_corpus(g)?;
    let dir = out_dir(g, "units");
    create_dir(&dir)?;
    for split in Split::ALL {
        let view = corpus.view(Stage::Evaluate, split)?;
        let seqs = quantise_split(q, &view)?;
        let path = dir.join(format!("units_{split}.tsv"));
        write_units_tsv(&path, &seqs)?;
        println!("{split}: {} utterances -> {}", seqs.len(), path.display());
    }
    write_json(&dir.join("provenance.json"), &descriptor)?;
    echo_provenance(&descriptor.provenance);
    Ok(())
}

#[derive(Serialize)]
struct ProbeSummary<'a> {
    representation: String,
    phone_f1: f64,
    tone_f1: Option<f64>,
    epochs: &'a std::collections::BTreeMap<tonequant_core::probe::Task, usize>,
    provenance: &'a Provenance,
}

fn cmd_probe(g: &GlobalArgs, a: &ProbeArgs) -> CliResult<()> {
    let mut spec = build_spec(g, &a.spec, "probe")?;
    let corpus = load_corpus(g)?;
    let splits = Splits::new(&corpus)?;
    let (rep, fitted) = match &a.model {
        Some(dir) => {
            let (descriptor, fitted) = model::load(dir)?;
            spec.seed = descriptor.provenance.seed;
            (descriptor.representation, fitted)
        }
        None => {
            let rep = parse_representation(&a.quantiser, a.budget)?;
            let fitted = fit_representation(&spec, &splits, &rep)?;
            (rep, fitted)
        }
    };
    let name = rep.to_string();
    let outcome: ProbeOutcome = probe_model(&spec, &splits, &name, &fitted)?;
    let provenance = Provenance::new(&spec);
    let dir = out_dir(g, "probe");
    create_dir(&dir)?;
    for report in std::iter::once(&outcome.phone).chain(&outcome.tone) {
        let task = report.task.as_str();
        report.save_json(&dir.join(format!("probe_{task}.json")))?;
        report.save_per_class_csv(&dir.join(format!("per_class_{task}.csv")))?;
    }
    let summary = ProbeSummary {
        representation: name.clone(),
        phone_f1: outcome.phone.weighted_f1,
        tone_f1: outcome.tone.as_ref().map(|t| t.weighted_f1),
        epochs: &outcome.epochs,
        provenance: &provenance,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{name}: phone F1 {:.4}", summary.phone_f1);
    match summary.tone_f1 {
        Some(t) => println!("{name}: tone F1 {t:.4}"),
        None => println!("{name}: no tone labels to probe"),
    }
    echo_provenance(&provenance);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Re-reads written CSVs so the Markdown and long formats come from exactly
/// what is on disk.
fn write_derived(dir: &Path, csvs: &[PathBuf], long_name: &str) -> CliResult<()> {
    let inputs = csvs.iter().map(|p| parse_input(p)).collect::<CliResult<Vec<_>>>()?;
    let data: Vec<_> = inputs
        .iter()
        .filter(|i| !matches!(i.table, report::Table::Timing(_)))
        .cloned()
        .collect();
    write_text(&dir.join(long_name), &render_long_csv(&data))?;
    write_text(&dir.join("report.md"), &render_markdown(&inputs))
}

fn print_comparison(table: &ResultTable) {
    println!("{:<28} {:>6} {:>9} {:>9} {:>9}", "representation", "levels", "phone_f1", "tone_f1", "time_s");
    for r in &table.rows {
        let tone = r.tone_f1.map_or_else(|| "n/a".into(), |t| format!("{t:.4}"));
        println!(
            "{:<28} {:>6} {:>9.4} {:>9} {:>9.1}",
            r.representation, r.levels, r.phone_f1, tone, r.train_time_s
        );
    }
}

fn cmd_compare(g: &GlobalArgs, a: &CompareArgs) -> CliResult<()> {
    let mut spec = build_spec(g, &a.spec, "results")?;
    let mut reps = vec![Representation::Latent];
    for name in &a.quantisers {
        let rep = parse_representation(name, a.budget)?;
        if !reps.contains(&rep) {
            reps.push(rep);
        }
    }
    spec.representations = reps;
    validate(&spec)?;
    let corpus = load_corpus(g)?;
    let table = run_comparison(&spec, &corpus)?;
    let provenance = Provenance::new(&spec);
    let dir = out_dir(g, "results");
    create_dir(&dir)?;
    let csv = write_comparison(&dir, &table, &provenance)?;
    write_derived(&dir, &[csv, dir.join("comparison_timing.csv")], "comparison_long.csv")?;
    print_comparison(&table);
    echo_provenance(&provenance);
    Ok(())
}

fn cmd_sweep(g: &GlobalArgs, a: &SweepArgs) -> CliResult<()> {
    let mut spec = build_spec(g, &a.spec, "results")?;
    if let Some(grid) = &a.grid {
        spec.sweep_grid = grid.clone();
    }
    validate(&spec)?;
    let corpus = load_corpus(g)?;
    let table = run_codebook_sweep(&spec, &corpus)?;
    let provenance = Provenance::new(&spec);
    let dir = out_dir(g, "results");
    create_dir(&dir)?;
    let csv = write_sweep(&dir, &table, &provenance)?;
    write_derived(&dir, &[csv], "sweep_long.csv")?;
    for r in &table.rows {
        match &r.skipped {
            Some(reason) => println!("K={:<5} {:<6} skipped: {reason}", r.k, r.variant.as_str()),
            None => println!(
                "K={:<5} {:<6} phone {:.4} tone {}",
                r.k,
                r.variant.as_str(),
                r.phone_f1.unwrap_or(f64::NAN),
                r.tone_f1.map_or_else(|| "n/a".into(), |t| format!("{t:.4}"))
            ),
        }
    }
    echo_provenance(&provenance);
    Ok(())
}

fn cmd_residual(g: &GlobalArgs, a: &ResidualArgs) -> CliResult<()> {
    let mut spec = build_spec(g, &a.spec, "results")?;
    if let Some(grid) = &a.grid {
        spec.residual_grid = grid.clone();
    }
    if let Some(k) = a.residual_k {
        spec.residual_k = k;
    }
    validate(&spec)?;
    let corpus = load_corpus(g)?;
    let table = run_residual_analysis(&spec, &corpus)?;
    let provenance = Provenance::new(&spec);
    let dir = out_dir(g, "results");
    create_dir(&dir)?;
    let csv = write_residual(&dir, &table, &provenance)?;
    write_derived(&dir, &[csv], "residual_long.csv")?;
    for r in &table.rows {
        println!(
            "K_phone={:<4} L{} {:<5} {:.4} (latent {:.4})",
            r.k_phone,
            r.level,
            r.task.as_str(),
            r.f1,
            r.latent_f1
        );
    }
    echo_provenance(&provenance);
    Ok(())
}

fn cmd_report(g: &GlobalArgs, a: &ReportArgs) -> CliResult<()> {
    let inputs = a.inputs.iter().map(|p| parse_input(p)).collect::<CliResult<Vec<_>>>()?;
    let text = match a.format {
        ReportFormat::Md => render_markdown(&inputs),
        ReportFormat::Csv => render_long_csv(&inputs),
    };
    match &g.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_text(path, &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
