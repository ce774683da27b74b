//! Command-line entry point and the experiment drivers behind it.
//!
//! Exit codes: 0 success, 1 oracle or runtime failure, 2 usage or
//! configuration error. Every command writes its artifacts and a `run.json`
//! provenance record under `--out`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_json, write_json, Error, Result};
use crate::eval::{self, FrocResult, LesionAnnotation, Metrics, RocResult, SlideLabel};
use crate::geometry::{GeometryConfig, ScanGeometry};
use crate::oracle::compare_with_patchwise;
use crate::pipeline::PipelineConfig;
use crate::postproc::{self, Detection, PostConfig};
use crate::preproc::{tissue_mask, TissueMask, DEFAULT_MASK_LEVEL};
use crate::reconstruct::{scan_slide, ProbabilityMap};
use crate::scorer::{ConstantScorer, ConvNetSpec, Network, Scorer};
use crate::slide_io::{RegionSource, SlidePyramid};
use crate::synthgen::{
    generate_benchmark, generate_slide, BenchmarkConfig, BenchmarkManifest, RecipeConfig,
    SlideEntry, SlideRecipe,
};
use crate::training::{
    hnm_rounds, mine_hard_negatives, sample_patches_per_slide, train_from, PatchSample,
    RoundReport, TrainConfig, TrainingSlide,
};

/// Largest dense-versus-patchwise deviation the oracle accepts.
pub const ORACLE_TOLERANCE: f64 = 1e-5;
/// Default inference window, in output cells per side.
pub const DEFAULT_TILE_CELLS: usize = 64;

/// Geometry for `scorer` with the default window size.
pub fn default_geometry<F: Scorer + ?Sized>(scorer: &F, alpha: usize) -> GeometryConfig {
    GeometryConfig {
        patch_side: scorer.receptive_field(),
        net_stride: scorer.total_stride(),
        dense_coeff: alpha,
        infer_side: scorer.receptive_field() + DEFAULT_TILE_CELLS * scorer.total_stride(),
    }
}

fn geometry_for<F: Scorer + ?Sized>(
    scorer: &F,
    alpha: usize,
    infer_side: Option<usize>,
) -> Result<ScanGeometry> {
    let mut g = default_geometry(scorer, alpha);
    if let Some(s) = infer_side {
        g.infer_side = s;
    }
    ScanGeometry::from_config(g)
}

/// A slide opened for training or evaluation, with its mask.
pub struct LoadedSlide {
    pub source: Box<dyn RegionSource>,
    pub annotation: LesionAnnotation,
    pub mask: TissueMask,
}

impl LoadedSlide {
    pub fn new(
        source: Box<dyn RegionSource>,
        annotation: LesionAnnotation,
        mask_level: usize,
    ) -> Result<Self> {
        if annotation.slide_id != source.slide_id() {
            return Err(Error::Manifest(format!(
                "annotation for {} paired with slide {}",
                annotation.slide_id,
                source.slide_id()
            )));
        }
        let mask = tissue_mask(source.as_ref(), mask_level)?;
        Ok(LoadedSlide { source, annotation, mask })
    }

    pub fn label(&self) -> SlideLabel {
        self.annotation.slide_label()
    }
}

/// Opens the slides of a manifest split; paths are relative to `root`.
pub fn open_entries(root: &Path, entries: &[SlideEntry], mask_level: usize) -> Result<Vec<LoadedSlide>> {
    entries
        .iter()
        .map(|e| {
            let slide = SlidePyramid::open(&root.join(&e.slide_dir))?;
            let ann = LesionAnnotation::load(&root.join(&e.annotation))?;
            LoadedSlide::new(Box::new(slide), ann, mask_level)
        })
        .collect()
}

pub fn training_view(slides: &[LoadedSlide]) -> Vec<TrainingSlide<'_>> {
    slides
        .iter()
        .map(|s| TrainingSlide {
            source: s.source.as_ref(),
            annotation: s.annotation.clone(),
            mask: s.mask.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SlideOutcome {
    pub slide_id: String,
    pub label: SlideLabel,
    pub score: f32,
    pub detections: Vec<Detection>,
    pub rois_scanned: usize,
    pub conv_macs: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub froc: FrocResult,
    /// `None` when the slides hold a single class.
    pub roc: Option<RocResult>,
    pub slides: Vec<SlideOutcome>,
}

/// Scans, post-processes and scores every slide.
pub fn evaluate_scorer<F: Scorer + ?Sized>(
    scorer: &F,
    slides: &[LoadedSlide],
    geometry: &ScanGeometry,
    post: &PostConfig,
    pipeline: &PipelineConfig,
) -> Result<Evaluation> {
    let mut outcomes = Vec::with_capacity(slides.len());
    for s in slides {
        let (map, stats) = scan_slide(s.source.as_ref(), geometry, scorer, Some(&s.mask), pipeline)?;
        outcomes.push(SlideOutcome {
            slide_id: map.slide_id.clone(),
            label: s.label(),
            score: postproc::slide_score(&map),
            detections: postproc::detect(&map, post),
            rois_scanned: stats.rois_scanned,
            conv_macs: stats.conv_macs,
            seconds: stats.elapsed.as_secs_f64(),
        });
    }
    let detections: BTreeMap<String, Vec<Detection>> = outcomes
        .iter()
        .map(|o| (o.slide_id.clone(), o.detections.clone()))
        .collect();
    let annotations: Vec<LesionAnnotation> = slides.iter().map(|s| s.annotation.clone()).collect();
    let froc = eval::froc(&detections, &annotations)?;
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score as f64).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| o.label == SlideLabel::Tumor).collect();
    let roc = match eval::roc(&scores, &labels) {
        Ok(r) => Some(r),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation { froc, roc, slides: outcomes })
}

/// Settings of the end-to-end ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub net: ConvNetSpec,
    /// Inference window side; `None` uses [`DEFAULT_TILE_CELLS`].
    pub infer_side: Option<usize>,
    pub alphas: Vec<usize>,
    /// Dense coefficient used when mining false positives.
    pub mine_alpha: usize,
    pub seeds: Vec<u64>,
    /// Tumor patches per tumor slide.
    pub n_pos: usize,
    /// Normal patches per slide.
    pub n_neg: usize,
    pub train: TrainConfig,
    /// Give the baseline as many extra epochs, on its own samples, as the
    /// mined variant gets for fine-tuning.
    pub matched_baseline: bool,
    pub post: PostConfig,
    pub mask_level: usize,
    pub pipeline: PipelineConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            net: ConvNetSpec::toy(),
            infer_side: None,
            alphas: vec![1, 2],
            mine_alpha: 1,
            seeds: (0..5).collect(),
            n_pos: 150,
            n_neg: 100,
            train: TrainConfig::default(),
            matched_baseline: true,
            post: PostConfig::default(),
            mask_level: DEFAULT_MASK_LEVEL,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: String,
    pub hnm: bool,
    pub alpha: usize,
    pub froc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub variants: Vec<VariantScore>,
    pub rounds: Vec<RoundReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub seeds: Vec<SeedOutcome>,
    /// Per-variant mean over seeds.
    pub mean: Vec<VariantScore>,
    pub seconds: f64,
}

impl AblationReport {
    pub fn mean_of(&self, hnm: bool, alpha: usize) -> Option<&VariantScore> {
        self.mean.iter().find(|v| v.hnm == hnm && v.alpha == alpha)
    }
}

fn variant_name(hnm: bool, alpha: usize) -> String {
    format!("{}_alpha{alpha}", if hnm { "hnm" } else { "no_hnm" })
}

fn sample_counts(slides: &[LoadedSlide], n_pos: usize, n_neg: usize) -> Vec<(usize, usize)> {
    slides
        .iter()
        .map(|s| match s.label() {
            SlideLabel::Tumor => (n_pos, n_neg),
            SlideLabel::Normal => (0, n_neg),
        })
        .collect()
}

/// Trains with and without hard negative mining for every seed and
/// evaluates both networks on the test slides at every dense coefficient.
pub fn run_ablation(
    train: &[LoadedSlide],
    test: &[LoadedSlide],
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    if cfg.alphas.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one alpha and one seed".into()));
    }
    if cfg.train.hnm_rounds == 0 {
        return Err(Error::Config("ablation needs hnm_rounds >= 1".into()));
    }
    let start = Instant::now();
    let (rf, stride) = cfg.net.net_geometry()?;
    let probe = ConstantScorer { probability: 0.0, receptive_field: rf, total_stride: stride };
    let mine_geometry = geometry_for(&probe, cfg.mine_alpha, cfg.infer_side)?;
    let geometries: Vec<ScanGeometry> = cfg
        .alphas
        .iter()
        .map(|&a| geometry_for(&probe, a, cfg.infer_side))
        .collect::<Result<_>>()?;
    let views = training_view(train);
    let counts = sample_counts(train, cfg.n_pos, cfg.n_neg);

    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let tcfg = TrainConfig { seed, ..cfg.train.clone() };
        let initial = sample_patches_per_slide(&views, &counts, rf, seed)?;
        let mut baseline: Option<Network<f32>> = None;
        let (mined_net, rounds) = hnm_rounds(
            initial.clone(),
            &views,
            &cfg.net,
            &mine_geometry,
            &tcfg,
            &cfg.pipeline,
            |round, net| {
                if round == 0 {
                    baseline = Some(net.clone());
                }
                Ok(None)
            },
        )?;
        let mut baseline = baseline.expect("round 0 always reports");
        if cfg.matched_baseline {
            let extra = tcfg.hnm_epochs * tcfg.hnm_rounds;
            if extra > 0 {
                train_from(&mut baseline, &views[..], &initial, &tcfg, extra, tcfg.epochs, &cfg.pipeline)?;
            }
        }
        let mut variants = Vec::new();
        for (g, &alpha) in geometries.iter().zip(&cfg.alphas) {
            for (hnm, net) in [(false, &baseline), (true, &mined_net)] {
                let ev = evaluate_scorer(net, test, g, &cfg.post, &cfg.pipeline)?;
                let auc = ev.roc.as_ref().map_or(f64::NAN, |r| r.auc);
                log::info!("seed {seed} {}: froc {:.4} auc {:.4}", variant_name(hnm, alpha), ev.froc.score, auc);
                variants.push(VariantScore {
                    variant: variant_name(hnm, alpha),
                    hnm,
                    alpha,
                    froc: ev.froc.score,
                    auc,
                });
            }
        }
        outcomes.push(SeedOutcome { seed, variants, rounds, seconds: t0.elapsed().as_secs_f64() });
    }
    let n = outcomes.len() as f64;
    let mean = outcomes[0]
        .variants
        .iter()
        .enumerate()
        .map(|(k, v)| VariantScore {
            froc: outcomes.iter().map(|o| o.variants[k].froc).sum::<f64>() / n,
            auc: outcomes.iter().map(|o| o.variants[k].auc).sum::<f64>() / n,
            ..v.clone()
        })
        .collect();
    Ok(AblationReport {
        config: cfg.clone(),
        seeds: outcomes,
        mean,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Config file of the `train` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    /// Benchmark manifest; its training split is used.
    pub manifest: PathBuf,
    pub net: ConvNetSpec,
    pub train: TrainConfig,
    pub n_pos: usize,
    pub n_neg: usize,
    pub infer_side: Option<usize>,
    pub mine_alpha: usize,
    pub mask_level: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let a = AblationConfig::default();
        TrainRunConfig {
            manifest: PathBuf::from(crate::synthgen::BENCHMARK_FILE),
            net: a.net,
            train: a.train,
            n_pos: a.n_pos,
            n_neg: a.n_neg,
            infer_side: None,
            mine_alpha: a.mine_alpha,
            mask_level: a.mask_level,
        }
    }
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Parser, Debug)]
#[command(name = "densescan", version, about = "Dense whole-slide probability maps from a fully convolutional scorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Directory receiving every artifact of the run.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Consume pipeline results in submission order.
    #[arg(long)]
    pub deterministic: bool,
    /// Producer threads.
    #[arg(long, default_value_t = 1)]
    pub producers: usize,
    /// Bound on items in flight.
    #[arg(long, default_value_t = 4)]
    pub queue: usize,
    /// Log progress (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl Common {
    fn pipeline(&self) -> Result<PipelineConfig> {
        PipelineConfig::new(self.producers, self.queue, self.deterministic)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate one slide from a recipe, or a whole benchmark.
    Gen {
        /// Slide recipe JSON; without it a benchmark is generated.
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// Benchmark config JSON.
        #[arg(long, conflicts_with = "recipe")]
        config: Option<PathBuf>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        /// Level-0 side of generated slides.
        #[arg(long)]
        side: Option<usize>,
        /// One random tumor slide at the large preset size.
        #[arg(long, conflicts_with_all = ["recipe", "config"])]
        large: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compute and export the tissue mask of a slide.
    Mask {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MASK_LEVEL)]
        level: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the scorer on a benchmark's training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hnm_rounds: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Harvest false positives from the normal training slides.
    Mine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long, default_value_t = 200)]
        cap: usize,
        #[arg(long, default_value_t = 1)]
        alpha: usize,
        #[arg(long)]
        infer_side: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Mask, scan and write the probability map of one slide.
    Scan {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Geometry JSON; defaults follow the network.
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<usize>,
        #[arg(long)]
        infer_side: Option<usize>,
        /// Scan every ROI instead of tissue only.
        #[arg(long)]
        no_mask: bool,
        #[arg(long, default_value_t = DEFAULT_MASK_LEVEL)]
        mask_level: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Turn probability maps into detections and slide scores.
    Post {
        #[arg(long, num_args = 1.., required = true)]
        pmap: Vec<PathBuf>,
        #[arg(long, default_value_t = postproc::DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = postproc::DEFAULT_OPEN_RADIUS)]
        open_radius: usize,
        #[command(flatten)]
        common: Common,
    },
    /// FROC and ROC of detections against annotations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Slide scores CSV; defaults to the best detection per slide.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Benchmark manifest whose test split supplies the annotations.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Annotation JSON files.
        #[arg(long, num_args = 1.., conflicts_with = "manifest")]
        annotations: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end ablation: with and without mining, at each dense coefficient.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use seeds 0..N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare a dense map against brute-force patch scoring.
    Oracle {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long, required_unless_present = "constant")]
        weights: Option<PathBuf>,
        /// Use a scorer returning this probability everywhere.
        #[arg(long, conflicts_with = "weights")]
        constant: Option<f32>,
        /// Map to check; scanned on the fly when absent.
        #[arg(long)]
        pmap: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<usize>,
        #[arg(long)]
        infer_side: Option<usize>,
        /// Check every `step`-th cell per axis.
        #[arg(long, default_value_t = 1)]
        step: usize,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Mask { common, .. }
            | Command::Train { common, .. }
            | Command::Mine { common, .. }
            | Command::Scan { common, .. }
            | Command::Post { common, .. }
            | Command::Eval { common, .. }
            | Command::Bench { common, .. }
            | Command::Oracle { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Mask { .. } => "mask",
            Command::Train { .. } => "train",
            Command::Mine { .. } => "mine",
            Command::Scan { .. } => "scan",
            Command::Post { .. } => "post",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Oracle { .. } => "oracle",
        }
    }

    fn config_file(&self) -> Option<&Path> {
        match self {
            Command::Gen { recipe, config, .. } => recipe.as_deref().or(config.as_deref()),
            Command::Train { config, .. } | Command::Bench { config: Some(config), .. } => Some(config),
            Command::Scan { geometry, .. } | Command::Oracle { geometry, .. } => geometry.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    deterministic: bool,
    producers: usize,
    queue: usize,
    config_sha256: Option<String>,
    version: &'a str,
}

/// What a successful command concluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    OracleFailed,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.command.common().verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli.command, argv) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::OracleFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn write_provenance(cmd: &Command, args: Vec<String>) -> Result<()> {
    let c = cmd.common();
    let config_sha256 = match cmd.config_file() {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Some(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
        }
        None => None,
    };
    let record = Provenance {
        command: cmd.name(),
        args,
        seed: c.seed,
        deterministic: c.deterministic,
        producers: c.producers,
        queue: c.queue,
        config_sha256,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&c.out.join("run.json"), &record)
}

fn load_network(path: &Path) -> Result<Network<f32>> {
    if !path.is_file() {
        return Err(Error::Config(format!("weights file {} does not exist", path.display())));
    }
    Network::<f32>::load(path)
}

fn resolve_geometry<F: Scorer + ?Sized>(
    scorer: &F,
    file: Option<&Path>,
    alpha: Option<usize>,
    infer_side: Option<usize>,
) -> Result<ScanGeometry> {
    let mut g = match file {
        Some(p) => read_json::<GeometryConfig>(p)?,
        None => default_geometry(scorer, 1),
    };
    if let Some(a) = alpha {
        g.dense_coeff = a;
    }
    if let Some(s) = infer_side {
        g.infer_side = s;
    }
    let g = ScanGeometry::from_config(g)?;
    if g.patch_side != scorer.receptive_field() || g.net_stride != scorer.total_stride() {
        return Err(Error::Config(format!(
            "geometry (patch {}, stride {}) does not match the scorer (receptive field {}, stride {})",
            g.patch_side,
            g.net_stride,
            scorer.receptive_field(),
            scorer.total_stride()
        )));
    }
    Ok(g)
}

#[derive(Debug, Serialize)]
struct ScanReport {
    slide_id: String,
    geometry: GeometryConfig,
    map_height: usize,
    map_width: usize,
    covered_cells: usize,
    rois_total: usize,
    rois_scanned: usize,
    forward_passes: u64,
    conv_macs: u64,
    mask_seconds: f64,
    scan_seconds: f64,
    pipeline: crate::pipeline::ThroughputReport,
}

fn parse_scores_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format { path: path.to_path_buf(), msg: format!("line {}: expected slide_id,score", n + 1) };
        let (id, s) = line.split_once(',').ok_or_else(bad)?;
        out.insert(id.to_string(), s.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok(out)
}

fn execute(cmd: &Command, args: Vec<String>) -> Result<Outcome> {
    let common = cmd.common();
    let pipeline = common.pipeline()?;
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_provenance(cmd, args)?;
    match cmd {
        Command::Gen { recipe, config, n_train, n_test, side, large, .. } => {
            if let Some(path) = recipe {
                let recipe: SlideRecipe = read_json(path)?;
                let entry = generate_slide(&recipe, out)?;
                println!("wrote slide {} to {}", entry.slide_id, out.join(&entry.slide_dir).display());
            } else if *large {
                let cfg = RecipeConfig::large();
                let recipe = SlideRecipe::random("large_000", common.seed, true, &cfg)?;
                let entry = generate_slide(&recipe, out)?;
                println!("wrote slide {} to {}", entry.slide_id, out.join(&entry.slide_dir).display());
            } else {
                let mut cfg: BenchmarkConfig = match config {
                    Some(p) => read_json(p)?,
                    None => BenchmarkConfig { seed: common.seed, ..Default::default() },
                };
                if let Some(n) = n_train {
                    cfg.n_train = *n;
                }
                if let Some(n) = n_test {
                    cfg.n_test = *n;
                }
                if let Some(s) = side {
                    cfg.recipe.side = *s;
                }
                let m = generate_benchmark(&cfg, out, &pipeline)?;
                println!("wrote {} training and {} test slides to {}", m.train.len(), m.test.len(), out.display());
            }
        }
        Command::Mask { slide, level, .. } => {
            let s = SlidePyramid::open(slide)?;
            let mask = tissue_mask(&s, *level)?;
            mask.export(out)?;
            println!(
                "mask level {} ({}x{}), threshold {:?}, tissue fraction {:.4}",
                mask.level,
                mask.height,
                mask.width,
                mask.threshold,
                mask.tissue_fraction()
            );
        }
        Command::Train { config, hnm_rounds: rounds, .. } => {
            let mut cfg: TrainRunConfig = read_json(config)?;
            cfg.train.seed = common.seed;
            if let Some(r) = rounds {
                cfg.train.hnm_rounds = *r;
            }
            cfg.train.validate()?;
            let manifest_path = if cfg.manifest.is_relative() {
                manifest_root(config).join(&cfg.manifest)
            } else {
                cfg.manifest.clone()
            };
            let manifest = BenchmarkManifest::load(&manifest_path)?;
            let slides = open_entries(&manifest_root(&manifest_path), &manifest.train, cfg.mask_level)?;
            let views = training_view(&slides);
            let (rf, stride) = cfg.net.net_geometry()?;
            let probe = ConstantScorer { probability: 0.0, receptive_field: rf, total_stride: stride };
            let geometry = geometry_for(&probe, cfg.mine_alpha, cfg.infer_side)?;
            let counts = sample_counts(&slides, cfg.n_pos, cfg.n_neg);
            let initial = sample_patches_per_slide(&views, &counts, rf, common.seed)?;
            write_json(&out.join("samples.json"), &initial)?;
            let (net, reports) =
                hnm_rounds(initial, &views, &cfg.net, &geometry, &cfg.train, &pipeline, |_, _| Ok(None))?;
            net.save(&out.join("weights.fcnw"))?;
            write_json(&out.join("train_report.json"), &reports)?;
            let last = reports.iter().rev().find_map(|r| r.train.as_ref());
            println!(
                "trained {} rounds, final loss {:.4}",
                reports.len(),
                last.and_then(|t| t.loss_curve.last()).copied().unwrap_or(f64::NAN)
            );
        }
        Command::Mine { manifest, weights, threshold, cap, alpha, infer_side, .. } => {
            let net = load_network(weights)?;
            let m = BenchmarkManifest::load(manifest)?;
            let slides = open_entries(&manifest_root(manifest), &m.train, DEFAULT_MASK_LEVEL)?;
            let views = training_view(&slides);
            let normal: Vec<usize> = (0..slides.len()).filter(|&i| slides[i].label() == SlideLabel::Normal).collect();
            let g = geometry_for(&net, *alpha, *infer_side)?;
            let mined: Vec<PatchSample> = mine_hard_negatives(&net, &views, &normal, &g, *threshold, *cap, &pipeline)?;
            write_json(&out.join("mined.json"), &mined)?;
            println!("mined {} hard negatives from {} normal slides", mined.len(), normal.len());
        }
        Command::Scan { slide, weights, geometry, alpha, infer_side, no_mask, mask_level, .. } => {
            let net = load_network(weights)?;
            let g = resolve_geometry(&net, geometry.as_deref(), *alpha, *infer_side)?;
            let s = SlidePyramid::open(slide)?;
            let t0 = Instant::now();
            let mask = if *no_mask { None } else { Some(tissue_mask(&s, *mask_level)?) };
            let mask_seconds = t0.elapsed().as_secs_f64();
            let (map, stats) = scan_slide(&s, &g, &net, mask.as_ref(), &pipeline)?;
            map.save(&out.join(format!("{}.pmap", map.slide_id)))?;
            let report = ScanReport {
                slide_id: map.slide_id.clone(),
                geometry: g.config(),
                map_height: map.height,
                map_width: map.width,
                covered_cells: map.covered_count(),
                rois_total: stats.rois_total,
                rois_scanned: stats.rois_scanned,
                forward_passes: stats.forward_passes,
                conv_macs: stats.conv_macs,
                mask_seconds,
                scan_seconds: stats.elapsed.as_secs_f64(),
                pipeline: stats.pipeline.throughput_report(),
            };
            write_json(&out.join("scan.json"), &report)?;
            println!(
                "{}: {}x{} map, {}/{} ROIs, {:.2} s",
                report.slide_id, map.height, map.width, stats.rois_scanned, stats.rois_total, report.scan_seconds
            );
        }
        Command::Post { pmap, threshold, open_radius, .. } => {
            let cfg = PostConfig { threshold: *threshold, open_radius: *open_radius };
            let mut dets: Vec<(String, Detection)> = Vec::new();
            let mut scores: Vec<(String, f32)> = Vec::new();
            for p in pmap {
                let map = ProbabilityMap::load(p)?;
                for d in postproc::detect(&map, &cfg) {
                    dets.push((map.slide_id.clone(), d));
                }
                scores.push((map.slide_id.clone(), postproc::slide_score(&map)));
            }
            postproc::write_detections_csv(&out.join("detections.csv"), dets.iter().map(|(id, d)| (id.as_str(), d)))?;
            postproc::write_slide_scores_csv(&out.join("slide_scores.csv"), scores.iter().map(|(id, s)| (id.as_str(), *s)))?;
            println!("{} detections over {} slides", dets.len(), scores.len());
        }
        Command::Eval { detections, scores, manifest, annotations, .. } => {
            let anns: Vec<LesionAnnotation> = match manifest {
                Some(m) => {
                    let bm = BenchmarkManifest::load(m)?;
                    let root = manifest_root(m);
                    bm.test.iter().map(|e| LesionAnnotation::load(&root.join(&e.annotation))).collect::<Result<_>>()?
                }
                None if !annotations.is_empty() => {
                    annotations.iter().map(|p| LesionAnnotation::load(p)).collect::<Result<_>>()?
                }
                None => return Err(Error::Config("eval needs --manifest or --annotations".into())),
            };
            let mut by_slide: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
            for (id, d) in postproc::read_detections_csv(detections)? {
                by_slide.entry(id).or_default().push(d);
            }
            let froc = eval::froc(&by_slide, &anns)?;
            let slide_scores: BTreeMap<String, f64> = match scores {
                Some(p) => parse_scores_csv(p)?,
                None => by_slide
                    .iter()
                    .map(|(id, ds)| (id.clone(), ds.iter().map(|d| d.score as f64).fold(0.0, f64::max)))
                    .collect(),
            };
            let s: Vec<f64> = anns.iter().map(|a| slide_scores.get(&a.slide_id).copied().unwrap_or(0.0)).collect();
            let l: Vec<bool> = anns.iter().map(|a| a.slide_label() == SlideLabel::Tumor).collect();
            let roc = match eval::roc(&s, &l) {
                Ok(r) => Some(r),
                Err(Error::SingleClass) => None,
                Err(e) => return Err(e),
            };
            eval::export_froc(&froc, out, "froc")?;
            if let Some(r) = &roc {
                eval::export_roc(r, out, "roc")?;
            }
            let metrics = Metrics {
                froc: froc.score,
                auc: roc.as_ref().map(|r| r.auc),
                per_rate_sensitivities: froc.rate_sensitivities.clone(),
                lesions: froc.lesions,
                slides: froc.slides,
            };
            write_json(&out.join("metrics.json"), &metrics)?;
            println!("FROC {:.4}, AUC {}", metrics.froc, metrics.auc.map_or("n/a".into(), |a| format!("{a:.4}")));
        }
        Command::Bench { manifest, config, seeds, .. } => {
            let mut cfg: AblationConfig = match config {
                Some(p) => read_json(p)?,
                None => AblationConfig::default(),
            };
            cfg.pipeline = pipeline;
            if let Some(n) = seeds {
                cfg.seeds = (0..*n).map(|s| s + common.seed).collect();
            }
            let m = BenchmarkManifest::load(manifest)?;
            let root = manifest_root(manifest);
            let train = open_entries(&root, &m.train, cfg.mask_level)?;
            let test = open_entries(&root, &m.test, cfg.mask_level)?;
            let report = run_ablation(&train, &test, &cfg)?;
            write_json(&out.join("ablation.json"), &report)?;
            for v in &report.mean {
                println!("{:<14} froc {:.4}  auc {:.4}", v.variant, v.froc, v.auc);
            }
        }
        Command::Oracle { slide, weights, constant, pmap, geometry, alpha, infer_side, step, .. } => {
            let s = SlidePyramid::open(slide)?;
            let scorer: Box<dyn Scorer> = match (weights, constant) {
                (Some(w), _) => Box::new(load_network(w)?),
                (None, Some(p)) => Box::new(ConstantScorer {
                    probability: *p,
                    receptive_field: GeometryConfig::TOY.patch_side,
                    total_stride: GeometryConfig::TOY.net_stride,
                }),
                (None, None) => return Err(Error::Config("oracle needs --weights or --constant".into())),
            };
            let g = resolve_geometry(scorer.as_ref(), geometry.as_deref(), *alpha, *infer_side)?;
            let map = match pmap {
                Some(p) => ProbabilityMap::load(p)?,
                None => scan_slide(&s, &g, scorer.as_ref(), None, &pipeline)?.0,
            };
            if map.dense_stride != g.dense_stride || map.patch_side != g.patch_side {
                return Err(Error::Config(format!(
                    "map has stride {} and patch {}, geometry has {} and {}",
                    map.dense_stride, map.patch_side, g.dense_stride, g.patch_side
                )));
            }
            let report = compare_with_patchwise(&map, &s, &g, scorer.as_ref(), (*step).max(1))?;
            write_json(&out.join("oracle.json"), &report)?;
            println!(
                "max |dense - patchwise| = {:e} over {} cells",
                report.max_abs_deviation, report.cells_checked
            );
            if report.max_abs_deviation > ORACLE_TOLERANCE {
                eprintln!("deviation exceeds {ORACLE_TOLERANCE:e}");
                return Ok(Outcome::OracleFailed);
            }
        }
    }
    Ok(Outcome::Success)
}
