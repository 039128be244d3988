//! Experiment driver: the matched-budget quantiser comparison, the codebook
//! size sweep, and the per-level residual analysis, each emitted as CSV.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, NeuralCodec};
use crate::data::{Corpus, Split, SplitView, Stage};
use crate::error::{Error, Result};
use crate::probe::{run_probe, Labels, ProbeConfig, ProbeData, ProbeKind, ProbeOutcome};
use crate::quantise::{
    fit_classic, fit_mean_pooled, fit_residual, quantise_split, Granularity, QuantisedSequence,
    Quantiser, QuantiserKind, ResidualVariant,
};
use crate::rng::derive_seed;

/// One row of the comparison: the continuous latents, a K-means quantiser,
/// or a neural codec with its per-level code counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Representation {
    Latent,
    KMeans(QuantiserKind),
    Codec(Vec<usize>),
}

impl Representation {
    /// The default comparison set at a total budget of 500 codes.
    pub fn defaults() -> Vec<Representation> {
        [
            "latent",
            "classic-500",
            "vq-500",
            "rvq-250x2",
            "rvq-125x4",
            "mean-pooled-500",
            "svc-250x2",
            "residual-frame-50+450",
            "residual-segmental-50+450",
        ]
        .iter()
        .map(|s| s.parse().expect("valid default"))
        .collect()
    }

    /// Resolves a short family name against a total budget: `classic`,
    /// `mean-pooled`, `vq` take the whole budget, `svc` and `rvq2` split it
    /// in two, `rvq4` in four, and the residual families give 50 codes to
    /// the phone level. Full names such as `rvq-125x4` are accepted as is.
    pub fn parse_with_budget(name: &str, budget: usize) -> Result<Representation> {
        let bad = || Error::InvalidConfig(format!("budget {budget} cannot be split for {name:?}"));
        let rep = match name {
            "latent" => Representation::Latent,
            "classic" => Representation::KMeans(QuantiserKind::ClassicKMeans { k: budget }),
            "mean-pooled" => Representation::KMeans(QuantiserKind::MeanPooledKMeans { k: budget }),
            "vq" => Representation::Codec(vec![budget]),
            "rvq2" | "svc" => {
                if budget % 2 != 0 {
                    return Err(bad());
                }
                if name == "svc" {
                    Representation::KMeans(QuantiserKind::Svc {
                        k_frame: budget / 2,
                        k_segment: budget / 2,
                    })
                } else {
                    Representation::Codec(vec![budget / 2; 2])
                }
            }
            "rvq4" => {
                if budget % 4 != 0 {
                    return Err(bad());
                }
                Representation::Codec(vec![budget / 4; 4])
            }
            "residual-frame" | "residual-segmental" => {
                if budget <= 50 {
                    return Err(bad());
                }
                let (k_phone, k_residual) = (50, budget - 50);
                Representation::KMeans(if name == "residual-frame" {
                    QuantiserKind::ResidualFrame { k_phone, k_residual }
                } else {
                    QuantiserKind::ResidualSegmental { k_phone, k_residual }
                })
            }
            other => other.parse()?,
        };
        Ok(rep)
    }

    pub fn levels(&self) -> usize {
        match self {
            Representation::Latent => 0,
            Representation::KMeans(k) => k.level_sizes().len(),
            Representation::Codec(k) => k.len(),
        }
    }

    pub fn granularity(&self) -> Granularity {
        match self {
            Representation::KMeans(k) => k.granularity(),
            _ => Granularity::Frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Representation::Latent => Ok(()),
            Representation::KMeans(k) => k.validate(),
            Representation::Codec(k) => {
                if k.is_empty() || k.contains(&0) {
                    Err(Error::InvalidConfig(format!("{self}: codec levels need codes")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn join_sizes(k: &[usize]) -> String {
    k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("+")
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Representation::Latent => write!(f, "latent"),
            Representation::KMeans(kind) => match *kind {
                QuantiserKind::ClassicKMeans { k } => write!(f, "classic-{k}"),
                QuantiserKind::MeanPooledKMeans { k } => write!(f, "mean-pooled-{k}"),
                QuantiserKind::Svc { k_frame, k_segment } if k_frame == k_segment => {
                    write!(f, "svc-{k_frame}x2")
                }
                QuantiserKind::Svc { k_frame, k_segment } => write!(f, "svc-{k_frame}+{k_segment}"),
                QuantiserKind::ResidualFrame { k_phone, k_residual } => {
                    write!(f, "residual-frame-{k_phone}+{k_residual}")
                }
                QuantiserKind::ResidualSegmental { k_phone, k_residual } => {
                    write!(f, "residual-segmental-{k_phone}+{k_residual}")
                }
            },
            Representation::Codec(k) if k.len() == 1 => write!(f, "vq-{}", k[0]),
            Representation::Codec(k) if k.iter().all(|v| *v == k[0]) => {
                write!(f, "rvq-{}x{}", k[0], k.len())
            }
            Representation::Codec(k) => write!(f, "rvq-{}", join_sizes(k)),
        }
    }
}

fn parse_count(s: &str, whole: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::InvalidConfig(format!("unknown representation {whole:?}")))
}

/// `a+b` or `axN`.
fn parse_levels(s: &str, whole: &str) -> Result<Vec<usize>> {
    if let Some((k, n)) = s.split_once('x') {
        let k = parse_count(k, whole)?;
        let n = parse_count(n, whole)?;
        return Ok(vec![k; n]);
    }
    s.split('+').map(|p| parse_count(p, whole)).collect()
}

fn parse_pair(s: &str, whole: &str) -> Result<(usize, usize)> {
    match parse_levels(s, whole)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::InvalidConfig(format!("{whole:?} needs exactly two levels"))),
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rep = if s == "latent" {
            Representation::Latent
        } else if let Some(rest) = s.strip_prefix("classic-") {
            Representation::KMeans(QuantiserKind::ClassicKMeans { k: parse_count(rest, s)? })
        } else if let Some(rest) = s.strip_prefix("mean-pooled-") {
            Representation::KMeans(QuantiserKind::MeanPooledKMeans { k: parse_count(rest, s)? })
        } else if let Some(rest) = s.strip_prefix("svc-") {
            let (k_frame, k_segment) = parse_pair(rest, s)?;
            Representation::KMeans(QuantiserKind::Svc { k_frame, k_segment })
        } else if let Some(rest) = s.strip_prefix("residual-frame-") {
            let (k_phone, k_residual) = parse_pair(rest, s)?;
            Representation::KMeans(QuantiserKind::ResidualFrame { k_phone, k_residual })
        } else if let Some(rest) = s.strip_prefix("residual-segmental-") {
            let (k_phone, k_residual) = parse_pair(rest, s)?;
            Representation::KMeans(QuantiserKind::ResidualSegmental { k_phone, k_residual })
        } else if let Some(rest) = s.strip_prefix("vq-") {
            Representation::Codec(vec![parse_count(rest, s)?])
        } else if let Some(rest) = s.strip_prefix("rvq-") {
            Representation::Codec(parse_levels(rest, s)?)
        } else {
            return Err(Error::InvalidConfig(format!("unknown representation {s:?}")));
        };
        rep.validate()?;
        Ok(rep)
    }
}

impl TryFrom<String> for Representation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Representation> for String {
    fn from(r: Representation) -> String {
        r.to_string()
    }
}

/// Everything an experiment run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub manifest: Option<PathBuf>,
    pub representations: Vec<Representation>,
    pub recurrent_probe: ProbeConfig,
    pub logistic_probe: ProbeConfig,
    /// Codec settings; dimensions and code counts are filled in per run.
    pub codec: CodecConfig,
    pub sweep_grid: Vec<usize>,
    pub residual_grid: Vec<usize>,
    pub residual_k: usize,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            manifest: None,
            representations: Representation::defaults(),
            recurrent_probe: ProbeConfig::recurrent(),
            logistic_probe: ProbeConfig::logistic(),
            codec: CodecConfig::default(),
            sweep_grid: vec![50, 100, 200, 500, 1000],
            residual_grid: vec![10, 25, 50, 100],
            residual_k: 450,
            output_dir: None,
            seed: 42,
        }
    }
}

fn check_grid(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} is empty")));
    }
    if grid.contains(&0) {
        return Err(Error::InvalidConfig(format!("{name} values must be positive")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("{name} must be strictly ascending")));
    }
    Ok(())
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.representations.contains(&Representation::Latent) {
            return Err(Error::InvalidConfig(
                "the continuous latent baseline must be among the representations".into(),
            ));
        }
        for r in &self.representations {
            r.validate()?;
        }
        check_grid("sweep grid", &self.sweep_grid)?;
        check_grid("residual grid", &self.residual_grid)?;
        if self.residual_k == 0 {
            return Err(Error::InvalidConfig("residual_k must be positive".into()));
        }
        self.recurrent_probe.validate()?;
        self.logistic_probe.validate()?;
        Ok(())
    }

    /// SHA-256 of the spec's JSON serialisation (fields in declaration
    /// order, no whitespace). The output directory is left out so the same
    /// experiment written to two places hashes the same.
    pub fn hash(&self) -> String {
        let canonical = ExperimentSpec {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("spec serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ExperimentSpec = serde_json::from_str(&text)?;
        Ok(spec)
    }

    fn probe_config(&self, g: Granularity, seed: u64) -> ProbeConfig {
        let base = match ProbeKind::for_granularity(g) {
            ProbeKind::Recurrent => &self.recurrent_probe,
            ProbeKind::Logistic => &self.logistic_probe,
        };
        base.clone().with_seed(seed)
    }
}

/// Seed, spec hash and tool version attached to every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub spec_hash: String,
}

impl Provenance {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Provenance {
            tool: "tonequant".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: spec.seed,
            spec_hash: spec.hash(),
        }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn comment_lines(&self) -> String {
        format!(
            "# {} {}\n# seed={}\n# spec_sha256={}\n",
            self.tool, self.version, self.seed, self.spec_hash
        )
    }
}

/// Stable per-name seed so adding or reordering representations leaves the
/// others' results unchanged.
pub fn seed_for(spec_seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    derive_seed(spec_seed, u64::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub representation: String,
    pub levels: usize,
    pub phone_f1: f64,
    /// `None` when the corpus has no tone contrast to probe.
    pub tone_f1: Option<f64>,
    pub train_time_s: f64,
    pub eval_segments: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, representation: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.representation == representation)
    }
}

/// The three splits of a corpus viewed for fitting, selection and
/// evaluation, plus the label inventories.
pub struct Splits<'a> {
    pub train: SplitView<'a>,
    pub val: SplitView<'a>,
    pub test: SplitView<'a>,
    pub labels: Labels,
}

impl<'a> Splits<'a> {
    pub fn new(corpus: &'a Corpus) -> Result<Self> {
        let train = corpus.view(Stage::Fit, Split::Train)?;
        let val = corpus.view(Stage::Select, Split::Validation)?;
        let test = corpus.view(Stage::Evaluate, Split::Test)?;
        for (view, name) in [(&train, "train"), (&val, "validation"), (&test, "test")] {
            if view.utterances.is_empty() {
                return Err(Error::Manifest(format!("the {name} split is empty")));
            }
        }
        let labels = Labels::from_utterances(
            train
                .utterances
                .iter()
                .chain(&val.utterances)
                .chain(&test.utterances)
                .copied(),
        );
        Ok(Splits {
            train,
            val,
            test,
            labels,
        })
    }

    fn quantised(&self, q: &dyn Quantiser) -> Result<[Vec<QuantisedSequence>; 3]> {
        Ok([
            quantise_split(q, &self.train)?,
            quantise_split(q, &self.val)?,
            quantise_split(q, &self.test)?,
        ])
    }

    fn probe_data(&self, seqs: &[Vec<QuantisedSequence>; 3], level: Option<usize>) -> Result<[ProbeData; 3]> {
        Ok([
            ProbeData::from_quantised(&seqs[0], &self.train.utterances, level, &self.labels)?,
            ProbeData::from_quantised(&seqs[1], &self.val.utterances, level, &self.labels)?,
            ProbeData::from_quantised(&seqs[2], &self.test.utterances, level, &self.labels)?,
        ])
    }

    fn continuous(&self, pooled: bool) -> Result<[ProbeData; 3]> {
        let make = |v: &SplitView<'_>| {
            if pooled {
                ProbeData::continuous_pooled(&v.utterances, &self.labels)
            } else {
                ProbeData::continuous_sequences(&v.utterances, &self.labels)
            }
        };
        Ok([make(&self.train)?, make(&self.val)?, make(&self.test)?])
    }

    fn probe(&self, config: &ProbeConfig, name: &str, data: &[ProbeData; 3]) -> Result<ProbeOutcome> {
        run_probe(config, name, &self.labels, &data[0], &data[1], &data[2])
    }
}

fn outcome_row(name: String, levels: usize, outcome: &ProbeOutcome, started: Instant) -> ResultRow {
    ResultRow {
        representation: name,
        levels,
        phone_f1: outcome.phone.weighted_f1,
        tone_f1: outcome.tone.as_ref().map(|t| t.weighted_f1),
        train_time_s: started.elapsed().as_secs_f64(),
        eval_segments: outcome.phone.num_eval_segments,
    }
}

/// A representation after fitting on the training split.
pub enum FittedModel {
    Latent,
    KMeans {
        kind: QuantiserKind,
        quantiser: Box<dyn Quantiser>,
    },
    Codec(NeuralCodec),
}

impl FittedModel {
    pub fn quantiser(&self) -> Option<&dyn Quantiser> {
        match self {
            FittedModel::Latent => None,
            FittedModel::KMeans { quantiser, .. } => Some(quantiser.as_ref()),
            FittedModel::Codec(codec) => Some(codec),
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.quantiser().map_or(Granularity::Frame, |q| q.granularity())
    }
}

/// Fits one representation on the training split, using validation data
/// only for codec early stopping.
pub fn fit_representation(spec: &ExperimentSpec, splits: &Splits<'_>, rep: &Representation) -> Result<FittedModel> {
    let name = rep.to_string();
    let seed = derive_seed(seed_for(spec.seed, &name), 0);
    let fitted = match rep {
        Representation::Latent => Ok(FittedModel::Latent),
        Representation::KMeans(kind) => kind.fit(&splits.train, seed).map(|quantiser| FittedModel::KMeans {
            kind: *kind,
            quantiser,
        }),
        Representation::Codec(levels) => {
            let dim = splits.train.utterances[0].features.dim();
            let config = CodecConfig {
                input_dim: dim,
                code_dim: dim,
                codes_per_level: levels.clone(),
                seed,
                ..spec.codec.clone()
            };
            NeuralCodec::fit(&splits.train, &splits.val, &config).map(FittedModel::Codec)
        }
    };
    fitted.map_err(|e| e.in_representation(&name))
}

/// Quantises every split with a fitted model and trains and evaluates the
/// probe matching its granularity. Continuous latents go to the probe as is.
pub fn probe_model(spec: &ExperimentSpec, splits: &Splits<'_>, name: &str, model: &FittedModel) -> Result<ProbeOutcome> {
    let run = || -> Result<ProbeOutcome> {
        let cfg = spec.probe_config(model.granularity(), derive_seed(seed_for(spec.seed, name), 1));
        let data = match model.quantiser() {
            None => splits.continuous(false)?,
            Some(q) => splits.probe_data(&splits.quantised(q)?, None)?,
        };
        splits.probe(&cfg, name, &data)
    };
    run().map_err(|e| e.in_representation(name))
}

/// Fits, quantises and probes one representation.
pub fn evaluate_representation(
    spec: &ExperimentSpec,
    splits: &Splits<'_>,
    rep: &Representation,
) -> Result<(ResultRow, ProbeOutcome)> {
    let name = rep.to_string();
    let started = Instant::now();
    let model = fit_representation(spec, splits, rep)?;
    let outcome = probe_model(spec, splits, &name, &model)?;
    log::info!(
        "{name}: phone {:.4} tone {:?} ({:.1}s)",
        outcome.phone.weighted_f1,
        outcome.tone.as_ref().map(|t| t.weighted_f1),
        started.elapsed().as_secs_f64()
    );
    Ok((outcome_row(name, rep.levels(), &outcome, started), outcome))
}

/// Every representation of the spec: fit on train, quantise all splits,
/// probe with validation early stopping, evaluate on test.
pub fn run_comparison(spec: &ExperimentSpec, corpus: &Corpus) -> Result<ResultTable> {
    spec.validate()?;
    let splits = Splits::new(corpus)?;
    let mut rows = Vec::with_capacity(spec.representations.len());
    for rep in &spec.representations {
        rows.push(evaluate_representation(spec, &splits, rep)?.0);
    }
    Ok(ResultTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariant {
    Frame,
    Pooled,
}

impl SweepVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariant::Frame => "frame",
            SweepVariant::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub variant: SweepVariant,
    pub phone_f1: Option<f64>,
    pub tone_f1: Option<f64>,
    /// Why the point was skipped, if it was.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, k: usize, variant: SweepVariant) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.variant == variant)
    }
}

/// Frame-level and pooled K-means at every K of the grid. Grid points with
/// more codes than training items are recorded as skipped.
pub fn run_codebook_sweep(spec: &ExperimentSpec, corpus: &Corpus) -> Result<SweepTable> {
    spec.validate()?;
    let splits = Splits::new(corpus)?;
    let train_frames = splits.train.num_frames();
    let train_segments = splits.train.vowel_segments().len();
    let mut rows = Vec::new();
    for &k in &spec.sweep_grid {
        for variant in [SweepVariant::Frame, SweepVariant::Pooled] {
            let (available, rep) = match variant {
                SweepVariant::Frame => (train_frames, QuantiserKind::ClassicKMeans { k }),
                SweepVariant::Pooled => (train_segments, QuantiserKind::MeanPooledKMeans { k }),
            };
            if k > available {
                rows.push(SweepRow {
                    k,
                    variant,
                    phone_f1: None,
                    tone_f1: None,
                    skipped: Some(format!("K={k} exceeds {available} training items")),
                });
                continue;
            }
            let name = Representation::KMeans(rep).to_string();
            let seed = seed_for(spec.seed, &name);
            let q: Box<dyn Quantiser> = match variant {
                SweepVariant::Frame => Box::new(fit_classic(&splits.train, k, derive_seed(seed, 0))?),
                SweepVariant::Pooled => Box::new(fit_mean_pooled(&splits.train, k, derive_seed(seed, 0))?),
            };
            let run = || -> Result<ProbeOutcome> {
                let data = splits.probe_data(&splits.quantised(q.as_ref())?, None)?;
                let cfg = spec.probe_config(rep.granularity(), derive_seed(seed, 1));
                splits.probe(&cfg, &name, &data)
            };
            let outcome = run().map_err(|e| e.in_representation(&name))?;
            log::info!("sweep {name}: phone {:.4}", outcome.phone.weighted_f1);
            rows.push(SweepRow {
                k,
                variant,
                phone_f1: Some(outcome.phone.weighted_f1),
                tone_f1: outcome.tone.as_ref().map(|t| t.weighted_f1),
                skipped: None,
            });
        }
    }
    Ok(SweepTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub k_phone: usize,
    pub level: usize,
    pub task: crate::probe::Task,
    pub f1: f64,
    /// Same probe on mean-pooled continuous latents.
    pub latent_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    pub rows: Vec<ResidualRow>,
}

impl ResidualTable {
    pub fn get(&self, k_phone: usize, level: usize, task: crate::probe::Task) -> Option<&ResidualRow> {
        self.rows
            .iter()
            .find(|r| r.k_phone == k_phone && r.level == level && r.task == task)
    }
}

/// Segmental residual K-means at every phone-level size of the grid, probed
/// at level 1 (phone centroid) and level 2 (phone plus residual centroid).
pub fn run_residual_analysis(spec: &ExperimentSpec, corpus: &Corpus) -> Result<ResidualTable> {
    use crate::probe::Task;
    spec.validate()?;
    let splits = Splits::new(corpus)?;
    let base_seed = seed_for(spec.seed, "residual-analysis");
    let latent_cfg = spec.probe_config(Granularity::Segment, derive_seed(base_seed, 0));
    let latent = splits
        .probe(&latent_cfg, "latent-pooled", &splits.continuous(true)?)
        .map_err(|e| e.in_representation("latent-pooled"))?;
    let latent_f1 = |task: Task| match task {
        Task::Phone => latent.phone.weighted_f1,
        Task::Tone => latent.tone.as_ref().map_or(f64::NAN, |t| t.weighted_f1),
    };
    let mut rows = Vec::new();
    for &k_phone in &spec.residual_grid {
        let name = format!("residual-segmental-{k_phone}+{}", spec.residual_k);
        let seed = seed_for(spec.seed, &name);
        let run = || -> Result<Vec<ResidualRow>> {
            let q = fit_residual(
                &splits.train,
                k_phone,
                spec.residual_k,
                ResidualVariant::Segmental,
                false,
                derive_seed(seed, 0),
            )?;
            let seqs = splits.quantised(&q)?;
            let mut out = Vec::new();
            for level in 1..=2 {
                let data = splits.probe_data(&seqs, Some(level))?;
                let cfg = spec.probe_config(Granularity::Segment, derive_seed(seed, level as u64));
                let outcome = splits.probe(&cfg, &format!("{name}/L{level}"), &data)?;
                for task in Task::ALL {
                    let f1 = match task {
                        Task::Phone => outcome.phone.weighted_f1,
                        Task::Tone => outcome.tone.as_ref().map_or(f64::NAN, |t| t.weighted_f1),
                    };
                    out.push(ResidualRow {
                        k_phone,
                        level,
                        task,
                        f1,
                        latent_f1: latent_f1(task),
                    });
                }
            }
            Ok(out)
        };
        rows.extend(run().map_err(|e| e.in_representation(&name))?);
    }
    Ok(ResidualTable { rows })
}

fn fmt_f1(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => String::new(),
    }
}

fn write_csv(path: &Path, provenance: &Provenance, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut out = provenance.comment_lines().into_bytes();
    out.extend(body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const COMPARISON_HEADER: [&str; 5] = ["representation", "levels", "phone_f1", "tone_f1", "eval_segments"];
pub const SWEEP_HEADER: [&str; 5] = ["k", "variant", "phone_f1", "tone_f1", "status"];
pub const RESIDUAL_HEADER: [&str; 5] = ["k_phone", "level", "task", "f1", "latent_f1"];

/// `comparison.csv` (deterministic) and `comparison_timing.csv` (wall
/// clock, differs between runs).
pub fn write_comparison(dir: &Path, table: &ResultTable, provenance: &Provenance) -> Result<PathBuf> {
    let path = dir.join("comparison.csv");
    let rows = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.representation.clone(),
                r.levels.to_string(),
                fmt_f1(Some(r.phone_f1)),
                fmt_f1(r.tone_f1),
                r.eval_segments.to_string(),
            ]
        })
        .collect();
    write_csv(&path, provenance, &COMPARISON_HEADER, rows)?;
    let timing = table
        .rows
        .iter()
        .map(|r| vec![r.representation.clone(), format!("{:.3}", r.train_time_s)])
        .collect();
    write_csv(&dir.join("comparison_timing.csv"), provenance, &["representation", "train_time_s"], timing)?;
    Ok(path)
}

pub fn write_sweep(dir: &Path, table: &SweepTable, provenance: &Provenance) -> Result<PathBuf> {
    let path = dir.join("sweep.csv");
    let rows = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.variant.as_str().to_string(),
                fmt_f1(r.phone_f1),
                fmt_f1(r.tone_f1),
                match &r.skipped {
                    Some(reason) => format!("skipped: {reason}"),
                    None => "ok".into(),
                },
            ]
        })
        .collect();
    write_csv(&path, provenance, &SWEEP_HEADER, rows)?;
    Ok(path)
}

pub fn write_residual(dir: &Path, table: &ResidualTable, provenance: &Provenance) -> Result<PathBuf> {
    let path = dir.join("residual.csv");
    let rows = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k_phone.to_string(),
                format!("L{}", r.level),
                r.task.as_str().to_string(),
                fmt_f1(Some(r.f1)),
                fmt_f1(Some(r.latent_f1)),
            ]
        })
        .collect();
    write_csv(&path, provenance, &RESIDUAL_HEADER, rows)?;
    Ok(path)
}
