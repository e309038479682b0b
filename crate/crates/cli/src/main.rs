use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crowdnet_core::augment::{build_training_set, mean_pixel};
use crowdnet_core::density::{generate_density_map, DensityMap, DEFAULT_SIGMA};
use crowdnet_core::io::{self, ConfigFile};
use crowdnet_core::model::{build_network, predict_density, receptive_field, Network, NetworkConfig, Preset};
use crowdnet_core::train::{evaluate_mae, kfold_split, synth_dataset, train_with, EvalSample, FoldPlan, SynthConfig};

/// Crowd counting with a dual-branch density network.
///
/// A dataset is a directory of `<id>.pgm` images with `<id>.json`
/// annotations (`{"image": "<id>", "points": [[x, y], ...]}`).
#[derive(Parser)]
#[command(name = "crowdnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-truth density map (DMAP) from an annotation file.
    Gt(GtArgs),
    /// Generate a synthetic crowd dataset.
    Synth(SynthArgs),
    /// Cut a dataset into a multi-scale patch manifest.
    Augment(AugmentArgs),
    /// Write a k-fold split of a dataset as JSON.
    Split(SplitArgs),
    /// Train a network on a patch manifest.
    Train(TrainArgs),
    /// Predict the density map and count for one image.
    Predict(PredictArgs),
    /// Mean absolute count error over a set of images.
    Eval(EvalArgs),
    /// Render a density map as a grayscale heatmap.
    Render(RenderArgs),
    /// Print per-layer receptive fields of the deep branch.
    Rf(RfArgs),
}

#[derive(Args)]
struct GtArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Image whose size bounds the map.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    image: Option<PathBuf>,
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    images: usize,
    #[arg(long, default_value_t = 20)]
    min_count: usize,
    #[arg(long, default_value_t = 200)]
    max_count: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long)]
    seed: Option<u64>,
}

/// Which images of a dataset to use.
#[derive(Args)]
struct Selection {
    #[arg(long)]
    data: PathBuf,
    /// Fold plan written by `split`; requires `--fold`.
    #[arg(long, requires = "fold")]
    plan: Option<PathBuf>,
    #[arg(long, requires = "plan")]
    fold: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    /// With a plan, the training side of the fold is used.
    #[command(flatten)]
    selection: Selection,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    blob: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    blob: PathBuf,
    /// Output weights; the run configuration goes to `<out>.config.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Validation images; with a plan, the validation side of the fold.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, requires_all = ["val_data", "fold"])]
    plan: Option<PathBuf>,
    #[arg(long, requires = "plan")]
    fold: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Defaults to `<weights>.config.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// With a plan, the validation side of the fold is used.
    #[command(flatten)]
    selection: Selection,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    density: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RfArgs {
    #[arg(long, value_enum, default_value = "paper")]
    preset: PresetArg,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Paper,
    Toy,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Toy => Preset::Toy,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gt(a) => gt(a),
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
        Command::Rf(a) => rf(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let mut cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    cfg.apply_seed_env()?;
    Ok(cfg)
}

/// Explicit flag, then `CROWDNET_SEED`, then `fallback`.
fn pick_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => io::seed_from_env()?.unwrap_or(fallback),
    })
}

fn sidecar_path(weights: &Path) -> PathBuf {
    let mut name = weights.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

fn warn_clamped(id: &str, moved: usize) {
    if moved > 0 {
        eprintln!("warning: {id}: {moved} annotation points outside the image were clamped");
    }
}

/// Every `<id>.json` in `dir` (sorted) paired with `<id>.pgm`.
fn load_dataset(dir: &Path) -> Result<Vec<EvalSample>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        bail!("{} contains no annotation files", dir.display());
    }
    paths
        .iter()
        .map(|json| {
            let pgm = json.with_extension("pgm");
            let image = io::read_pgm(&pgm).with_context(|| pgm.display().to_string())?;
            let bytes = fs::read(json).with_context(|| json.display().to_string())?;
            let (annotations, moved) = io::parse_annotations_for(&bytes, image.width, image.height)
                .with_context(|| json.display().to_string())?;
            warn_clamped(&annotations.image_id, moved);
            Ok(EvalSample { image, annotations })
        })
        .collect()
}

fn select(samples: Vec<EvalSample>, ids: &[String]) -> Result<Vec<EvalSample>> {
    let picked: Vec<EvalSample> = samples
        .into_iter()
        .filter(|s| ids.contains(&s.annotations.image_id))
        .collect();
    if picked.len() != ids.len() {
        bail!("fold lists {} images but only {} were found in the dataset", ids.len(), picked.len());
    }
    Ok(picked)
}

fn read_plan(path: &Path) -> Result<FoldPlan> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| format!("{}: not a fold plan", path.display()))
}

enum Side {
    Training,
    Validation,
}

fn selected_samples(sel: &Selection, side: Side) -> Result<Vec<EvalSample>> {
    let all = load_dataset(&sel.data)?;
    match (&sel.plan, sel.fold) {
        (Some(plan), Some(fold)) => {
            let plan = read_plan(plan)?;
            let ids = match side {
                Side::Training => plan.training(fold)?,
                Side::Validation => plan.validation(fold)?.to_vec(),
            };
            select(all, &ids)
        }
        _ => Ok(all),
    }
}

fn gt(a: GtArgs) -> Result<()> {
    let (width, height) = match (&a.image, a.width, a.height) {
        (Some(path), _, _) => {
            let img = io::read_pgm(path).with_context(|| path.display().to_string())?;
            (img.width, img.height)
        }
        (None, Some(w), Some(h)) => (w, h),
        _ => bail!("give either --image or both --width and --height"),
    };
    let bytes = fs::read(&a.annotations).with_context(|| a.annotations.display().to_string())?;
    let (set, moved) = io::parse_annotations_for(&bytes, width, height)?;
    warn_clamped(&set.image_id, moved);
    let map = generate_density_map(&set.points, width, height, a.sigma)?;
    io::write_density(&a.out, &map)?;
    println!("{:.4}", map.sum());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        images: a.images,
        min_count: a.min_count,
        max_count: a.max_count,
        width: a.width,
        height: a.height,
        seed: pick_seed(a.seed, 0)?,
        ..SynthConfig::default()
    };
    let samples = synth_dataset(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    for s in &samples {
        let id = &s.annotations.image_id;
        io::write_pgm(a.out_dir.join(format!("{id}.pgm")), &s.image)?;
        io::write_annotations(a.out_dir.join(format!("{id}.json")), &s.annotations)?;
    }
    println!("{} images written to {}", samples.len(), a.out_dir.display());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let ids: Vec<String> = load_dataset(&a.data)?
        .into_iter()
        .map(|s| s.annotations.image_id)
        .collect();
    let plan = kfold_split(&ids, a.k, pick_seed(a.seed, 0)?)?;
    fs::write(&a.out, serde_json::to_string_pretty(&plan)?)?;
    let sizes: Vec<String> = plan.folds.iter().map(|f| f.len().to_string()).collect();
    println!("{} folds of sizes {}", plan.k, sizes.join(","));
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let samples: Vec<_> = selected_samples(&a.selection, Side::Training)?
        .into_iter()
        .map(|s| (s.image, s.annotations))
        .collect();
    let records = build_training_set(&samples, cfg.dataset.sigma, &cfg.augmentation)?;
    let lines = BufWriter::new(File::create(&a.manifest).with_context(|| a.manifest.display().to_string())?);
    let blob = BufWriter::new(File::create(&a.blob).with_context(|| a.blob.display().to_string())?);
    io::write_manifest(&records, lines, blob)?;
    println!("{} patches from {} images", records.len(), samples.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.training.iterations = n;
    }
    if let Some(b) = a.batch_size {
        cfg.training.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.training.lr = lr;
    }
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;

    let blob = fs::read(&a.blob).with_context(|| a.blob.display().to_string())?;
    let lines = BufReader::new(File::open(&a.manifest).with_context(|| a.manifest.display().to_string())?);
    let records = io::read_manifest(lines, &blob)?;
    let mean = cfg.dataset.mean_pixel.unwrap_or_else(|| mean_pixel(&records));
    cfg.dataset.mean_pixel = Some(mean);
    cfg.network.mean_pixel = mean;

    let validation = match &a.val_data {
        Some(dir) => {
            let sel = Selection {
                data: dir.clone(),
                plan: a.plan.clone(),
                fold: a.fold,
            };
            Some(selected_samples(&sel, Side::Validation)?)
        }
        None => None,
    };

    let net = build_network(&cfg.network, cfg.training.seed)?;
    eprintln!(
        "training on {} patches, {} parameters, {} iterations",
        records.len(),
        net.parameter_count(),
        cfg.training.iterations
    );
    let outcome = train_with(net, &records, &cfg.training, validation.as_deref(), |row| match row.val_mae {
        Some(mae) => eprintln!("iter {:>6}  loss {:.6}  val MAE {:.3}", row.iteration, row.train_loss, mae),
        None => eprintln!("iter {:>6}  loss {:.6}", row.iteration, row.train_loss),
    })?;
    let net = match outcome.best {
        Some(best) => {
            eprintln!("keeping iteration {} (val MAE {:.3})", best.iteration, best.mae);
            best.network
        }
        None => outcome.network,
    };
    io::write_weights(&a.out, &net)?;
    fs::write(sidecar_path(&a.out), cfg.to_json())?;
    if let Some(path) = &a.log {
        io::write_train_log(BufWriter::new(File::create(path)?), &outcome.log)?;
    }
    Ok(())
}

fn load_network(weights: &Path, config: Option<&Path>) -> Result<Network> {
    let sidecar = sidecar_path(weights);
    let path = config.unwrap_or(&sidecar);
    let cfg = ConfigFile::load(path).with_context(|| format!("network configuration {}", path.display()))?;
    let mut net = build_network(&cfg.network, 0)?;
    io::read_weights_into(weights, &mut net).with_context(|| weights.display().to_string())?;
    Ok(net)
}

fn predict(a: PredictArgs) -> Result<()> {
    let net = load_network(&a.weights, a.config.as_deref())?;
    let image = io::read_pgm(&a.image).with_context(|| a.image.display().to_string())?;
    let density = DensityMap::from_tensor(&predict_density(&net, &image.to_tensor())?);
    if let Some(out) = &a.out {
        io::write_density(out, &density)?;
    }
    println!("{:.4}", density.sum());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = load_network(&a.weights, a.config.as_deref())?;
    let samples = selected_samples(&a.selection, Side::Validation)?;
    let result = evaluate_mae(&net, &samples)?;
    if let Some(path) = &a.csv {
        io::write_eval_rows(BufWriter::new(File::create(path)?), &result.rows)?;
    }
    println!("{:.4}", result.mae);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let map = io::read_density(&a.density).with_context(|| a.density.display().to_string())?;
    io::write_pgm(&a.out, &io::render_heatmap(&map))?;
    Ok(())
}

fn rf(a: RfArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => ConfigFile::load(path)?.network,
        None => NetworkConfig::for_preset(a.preset.into()),
    };
    let modified = cfg.deep_layer_specs();
    let original = cfg.original_vgg_specs();
    let rf_mod = receptive_field(&modified.iter().map(|(_, s)| *s).collect::<Vec<_>>());
    let rf_orig = receptive_field(&original.iter().map(|(_, s)| *s).collect::<Vec<_>>());
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<16} {:>6} {:>5} {:>12} {:>10}", "layer", "rf", "jump", "original_rf", "orig_jump")?;
    for (((name, _), (r, j)), (ro, jo)) in modified.iter().zip(&rf_mod).zip(&rf_orig) {
        if name.contains(".relu") {
            continue;
        }
        writeln!(out, "{name:<16} {r:>6} {j:>5} {ro:>12} {jo:>10}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar_path(Path::new("out/w.cnwt")), PathBuf::from("out/w.cnwt.config.json"));
    }
}
