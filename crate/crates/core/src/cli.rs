//! The `samurai` command line: `preprocess`, `retrieve`, `evaluate`, `synth`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{self, load_scene, scan_dataset, Manifest, ScanOptions};
use crate::embedding::load_embeddings;
use crate::mask::{self, render_silhouette, Connectivity, MaskKey, PreprocessParams, PreprocessReport};
use crate::metrics::{evaluate, EvalOptions};
use crate::results::{read_results_csv, read_truth_csv, write_results_csv};
use crate::retrieval::{retrieve_all, Catalog, RetrievalParams, Strategy, VoteWeights, DEFAULT_K, DEFAULT_M};
use crate::synth::{self, SynthConfig, CATALOG_FILE};
use crate::Error;

pub const CROP_FILE: &str = "crop.png";
pub const SILHOUETTE_FILE: &str = "silhouette.png";
pub const PREPROCESS_FILE: &str = "preprocess.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "samurai", version, about = "Shape-aware multimodal retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop every scene to its padded mask region and render its silhouette.
    Preprocess(PreprocessArgs),
    /// Rank the catalog for every scene and write a results CSV.
    Retrieve(RetrieveArgs),
    /// Score a results CSV against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a dataset with planted ground truth.
    Synth(SynthArgs),
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_color(s: &str) -> Result<[u8; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<u8>().map_err(|e| format!("bad channel {p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts.try_into().map_err(|_| format!("expected R,G,B, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_color, default_value = "135,206,235")]
    pub mask_color: [u8; 3],
    #[arg(long, default_value_t = mask::DEFAULT_PADDING)]
    pub pad: u32,
    #[arg(long, default_value_t = Connectivity::Eight)]
    pub connectivity: Connectivity,
    #[arg(long, default_value_t = 0)]
    pub tolerance: u8,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// Skip malformed dataset entries instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, default_value = dataset::DEFAULT_SCENE_IMAGE)]
    pub scene_image_name: String,
    #[arg(long, default_value = dataset::DEFAULT_OBJECT_IMAGE)]
    pub object_image_name: String,
}

impl ScanArgs {
    fn options(&self) -> ScanOptions {
        ScanOptions {
            scene_image_name: self.scene_image_name.clone(),
            object_image_name: self.object_image_name.clone(),
            lenient: self.lenient,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Dataset root, synth output directory, or catalog JSON. Defaults to
    /// every id found in the embedding file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value = "1,1,2,2")]
    pub weights: VoteWeights,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Adversarial {
    TextDecoys,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long)]
    pub objects: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub adversarial: Option<Adversarial>,
    /// Norm of the noise added to planted queries.
    #[arg(long, default_value_t = synth::DEFAULT_NOISE)]
    pub noise: f32,
    /// Also write a scenes/ + objects/ raster layout.
    #[arg(long)]
    pub rasters: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(&args).map(|_| ()),
        Command::Retrieve(args) => cmd_retrieve(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Error> {
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invariant(format!("cannot build worker pool: {e}")))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, bytes).map_err(Error::io(path))
}

#[derive(Debug, Serialize)]
struct PreprocessSummary<'a> {
    scenes: usize,
    objects: usize,
    params: PreprocessParams,
    manifest: &'a Manifest,
}

/// Runs preprocessing for every scene and returns the per-scene reports.
pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<Vec<PreprocessReport>, Error> {
    let params = PreprocessParams {
        key: MaskKey::new(args.mask_color, args.tolerance),
        padding: args.pad,
        connectivity: args.connectivity,
    };
    let manifest = scan_dataset(&args.root, &args.scan.options())?;
    let outputs = pool(args.workers)?.install(|| {
        manifest
            .scenes
            .par_iter()
            .map(|entry| {
                let (raster, _) = load_scene(entry)?;
                mask::preprocess(&entry.scene_id, &raster, &params).map_err(|source| Error::Mask {
                    scene_id: entry.scene_id.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;

    let mut reports = Vec::with_capacity(outputs.len());
    for (query, report) in outputs {
        let dir = args.out.join(&query.scene_id);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        query.crop_rgb.save(dir.join(CROP_FILE))?;
        render_silhouette(&query.refined_mask).save(dir.join(SILHOUETTE_FILE))?;
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_file(&dir.join(PREPROCESS_FILE), json)?;
        reports.push(report);
    }

    let summary = PreprocessSummary {
        scenes: manifest.scenes.len(),
        objects: manifest.objects.len(),
        params,
        manifest: &manifest,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&args.out.join(MANIFEST_FILE), json)?;
    println!(
        "preprocessed {} scenes ({} objects) into {}",
        manifest.scenes.len(),
        manifest.objects.len(),
        args.out.display()
    );
    Ok(reports)
}

/// Resolves `--manifest`: a dataset root, a directory holding `catalog.json`,
/// or a catalog JSON file.
pub fn resolve_catalog(path: &Path, scan: &ScanOptions) -> Result<Catalog, Error> {
    let read_catalog = |p: &Path| -> Result<Catalog, Error> {
        let text = fs::read_to_string(p).map_err(Error::io(p))?;
        serde_json::from_str::<Catalog>(&text)
            .map(|c| Catalog::new(c.scenes, c.objects))
            .map_err(|e| Error::Config(format!("{} is not a catalog file: {e}", p.display())))
    };
    if path.is_file() {
        return read_catalog(path);
    }
    if path.join(dataset::SCENES_DIR).is_dir() && path.join(dataset::OBJECTS_DIR).is_dir() {
        return Ok(Catalog::from_manifest(&scan_dataset(path, scan)?));
    }
    if path.join(CATALOG_FILE).is_file() {
        return read_catalog(&path.join(CATALOG_FILE));
    }
    Err(Error::Config(format!(
        "{} is neither a dataset root nor contains {CATALOG_FILE}",
        path.display()
    )))
}

pub fn cmd_retrieve(args: &RetrieveArgs) -> Result<(), Error> {
    let params = RetrievalParams {
        k: args.k,
        m: args.m,
        weights: args.weights,
    };
    params.validate()?;
    if args.workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let store = load_embeddings(&args.embeddings)?;
    let catalog = match &args.manifest {
        Some(path) => resolve_catalog(path, &args.scan.options())?,
        None => Catalog::from_store(&store),
    };
    tracing::info!(
        strategy = %args.strategy,
        scenes = catalog.scenes.len(),
        objects = catalog.objects.len(),
        workers = args.workers,
        "retrieving"
    );
    let lists = retrieve_all(&catalog, &store, &params, args.strategy, args.workers)?;
    let depth = params.k.min(catalog.objects.len());
    for list in &lists {
        if list.len() != depth {
            return Err(Error::Invariant(format!(
                "{}: expected {depth} entries, got {}",
                list.scene_id,
                list.len()
            )));
        }
        list.check_invariants(depth).map_err(Error::Invariant)?;
    }
    let file = fs::File::create(&args.out).map_err(Error::io(&args.out))?;
    write_results_csv(BufWriter::new(file), &lists)?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let results = read_results_csv(fs::File::open(&args.results).map_err(Error::io(&args.results))?)?;
    let truth = read_truth_csv(fs::File::open(&args.truth).map_err(Error::io(&args.truth))?)?;
    let report = evaluate(&results, &truth, EvalOptions { lenient: args.lenient })?;
    write_file(&args.out, report.to_json())?;
    println!(
        "R@1 {:.4}  R@5 {:.4}  R@10 {:.4}  MRR {:.4}  ({} queries)",
        report.recall_at_1, report.recall_at_5, report.recall_at_10, report.mrr, report.num_queries
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        scenes: args.scenes,
        objects: args.objects,
        dim: args.dim,
        seed: args.seed,
        noise: args.noise,
        adversarial: args.adversarial == Some(Adversarial::TextDecoys),
        ..Default::default()
    };
    let data = synth::generate(&cfg)?;
    synth::write_dataset(&args.out, &data)?;
    if args.rasters {
        synth::write_rasters(&args.out, &data, args.seed)?;
    }
    println!(
        "wrote {} scenes, {} objects (dim {}) to {}",
        data.catalog.scenes.len(),
        data.catalog.objects.len(),
        args.dim,
        args.out.display()
    );
    Ok(())
}
