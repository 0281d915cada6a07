//! Command-line workflows: `synth`, `train`, `encode`, `search`, `eval`.
//! Each command is a thin deterministic wrapper over the library modules;
//! every output file is byte-reproducible given fixed seeds and inputs.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{apply_config, bits_to_m, load_config_file, HyperParams};
use crate::error::{Error, Result};
use crate::eval::MetricRecord;
use crate::search::LutMode;

#[derive(Parser, Debug)]
#[command(
    name = "sphq",
    version,
    about = "Spherical multi-codebook quantization for inner-product search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate synthetic labeled features (class centers on the sphere plus Gaussian noise)
    Synth(SynthArgs),
    /// Train embedder, centers, codebooks and codes from features and labels
    Train(TrainArgs),
    /// Encode a feature file into compact codes with a trained model
    Encode(EncodeArgs),
    /// Query coded databases by approximate maximum inner product
    Search(SearchArgs),
    /// Score search results against labels (AP, MAP, precision-recall)
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of points
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Number of classes (>= 2)
    #[arg(long, default_value_t = 10)]
    pub classes: u32,
    /// Feature dimensionality
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Gaussian noise scale around each class center
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output feature file
    #[arg(long)]
    pub features_out: PathBuf,
    /// Output label file
    #[arg(long)]
    pub labels_out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HyperFlags {
    /// Quantization loss weight
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Center loss weight
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Discriminative loss weight
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Center learning rate in (0, 1]
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Subindices perturbed per local-search restart
    #[arg(long)]
    pub k_perturb: Option<usize>,
    /// Number of codebooks
    #[arg(long)]
    pub m: Option<usize>,
    /// Codewords per codebook (<= 256)
    #[arg(long)]
    pub h: Option<usize>,
    /// Embedding dimensionality
    #[arg(long)]
    pub p: Option<usize>,
    /// Code length in bits; with codebook size h this fixes m = bits / log2(h)
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs_per_round: Option<usize>,
    /// Alternation rounds
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Local-search restarts per encoded point
    #[arg(long)]
    pub sls_rounds: Option<usize>,
    /// ICM passes per local search
    #[arg(long)]
    pub icm_iters: Option<usize>,
    /// Proximal ridge on the codebook normal matrix
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Nonzero budget for sparse codebooks (entries of C)
    #[arg(long)]
    pub sparsity_eps: Option<usize>,
    /// Early-stop threshold on relative total-loss improvement
    #[arg(long)]
    pub stop_threshold: Option<f64>,
}

impl HyperFlags {
    /// Overlay explicit flags on top of `hp`; flags win over config values.
    fn overlay(&self, hp: &mut HyperParams) -> Result<()> {
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(hp.alpha, self.alpha);
        set!(hp.lambda, self.lambda);
        set!(hp.gamma, self.gamma);
        set!(hp.zeta, self.zeta);
        set!(hp.k_perturb, self.k_perturb);
        set!(hp.m, self.m);
        set!(hp.h, self.h);
        set!(hp.p, self.p);
        set!(hp.sgd.learning_rate, self.learning_rate);
        set!(hp.sgd.momentum, self.momentum);
        set!(hp.sgd.weight_decay, self.weight_decay);
        set!(hp.sgd.batch_size, self.batch_size);
        set!(hp.sgd.epochs_per_round, self.epochs_per_round);
        set!(hp.rounds, self.rounds);
        set!(hp.sls_rounds, self.sls_rounds);
        set!(hp.icm_iters, self.icm_iters);
        set!(hp.ridge, self.ridge);
        if self.sparsity_eps.is_some() {
            hp.sparsity_eps = self.sparsity_eps;
        }
        if self.stop_threshold.is_some() {
            hp.stop_threshold = self.stop_threshold;
        }
        if let Some(bits) = self.bits {
            let m = bits_to_m(bits, hp.h)?;
            if let Some(explicit) = self.m {
                if explicit != m {
                    return Err(Error::Invalid(format!(
                        "--bits {bits} with h = {} implies m = {m}, but --m {explicit} was given",
                        hp.h
                    )));
                }
            }
            hp.m = m;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory receiving the trained artifacts
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Config file with `key = value` hyper-parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap worker threads for encoding
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Directory with trained artifacts
    #[arg(long)]
    pub artifacts: PathBuf,
    /// Labels of the encoded points; required unless --cross-domain or gamma = 0
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop the center-dependent encoding term (for classes unseen in training)
    #[arg(long)]
    pub cross_domain: bool,
    /// Config file overriding the stored model hyper-parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub artifacts: PathBuf,
    /// Code file of the database
    #[arg(long)]
    pub codes: PathBuf,
    /// Results per query
    #[arg(short, long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Build lookup tables from sparse codeword lists
    #[arg(long)]
    pub sparse_lut: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Search results CSV
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub query_labels: PathBuf,
    #[arg(long)]
    pub db_labels: PathBuf,
    /// Code file of the database, for the bit-rate annotation
    #[arg(long)]
    pub codes: PathBuf,
    /// Evaluation cutoff R for AP/MAP
    #[arg(long)]
    pub r: usize,
    /// Metrics CSV output
    #[arg(long)]
    pub metrics_out: PathBuf,
    /// Metrics JSON output
    #[arg(long)]
    pub json_out: PathBuf,
    /// Optional averaged precision-recall curve CSV
    #[arg(long)]
    pub pr_out: Option<PathBuf>,
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // ignore failure if a global pool already exists (repeated calls in tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Encode(args) => run_encode(args),
        Command::Search(args) => run_search(args),
        Command::Eval(args) => run_eval(args),
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let (features, labels) = crate::synth::generate(&crate::synth::SynthOptions {
        n: args.n,
        classes: args.classes,
        dim: args.dim,
        noise: args.noise,
        seed: args.seed,
    })?;
    crate::io::save_features(&features, &args.features_out)?;
    crate::io::save_labels(&labels, &args.labels_out)?;
    log::info!(
        "wrote {} points of dim {} across {} classes",
        args.n,
        args.dim,
        args.classes
    );
    Ok(())
}

fn resolve_hyper(
    base: HyperParams,
    config: Option<&PathBuf>,
    flags: Option<&HyperFlags>,
) -> Result<HyperParams> {
    let mut hp = base;
    if let Some(path) = config {
        let entries = load_config_file(path)?;
        apply_config(&mut hp, &entries)?;
    }
    if let Some(flags) = flags {
        flags.overlay(&mut hp)?;
    }
    hp.validate()?;
    Ok(hp)
}

fn run_train(args: TrainArgs) -> Result<()> {
    init_threads(args.threads);
    let hp = resolve_hyper(
        HyperParams::default(),
        args.config.as_ref(),
        Some(&args.hyper),
    )?;
    let features = crate::io::load_features(&args.features)?;
    let labels = crate::io::load_labels(&args.labels)?;
    let outcome = crate::trainer::fit(&features, &labels, &hp, args.seed)?;
    crate::trainer::save_artifacts(&args.out_dir, &outcome, &hp)?;
    if let Some(last) = outcome.trace.last() {
        log::info!(
            "trained {} rounds, final total loss {:.6}",
            outcome.trace.len(),
            last.total
        );
    }
    println!("trained model saved to {}", args.out_dir.display());
    Ok(())
}

fn run_encode(args: EncodeArgs) -> Result<()> {
    init_threads(args.threads);
    let artifacts = crate::trainer::load_artifacts(&args.artifacts)?;
    let hp = resolve_hyper(artifacts.hp.clone(), args.config.as_ref(), None)?;
    let features = crate::io::load_features(&args.features)?;
    let labels = match &args.labels {
        Some(path) => Some(crate::io::load_labels(path)?),
        None => None,
    };
    let codes = crate::trainer::encode_database(
        &features,
        &artifacts.params,
        &artifacts.codebooks,
        Some(&artifacts.centers),
        labels.as_ref(),
        &hp,
        args.cross_domain,
        args.seed,
    )?;
    crate::io::save_codes(&codes, &args.out)?;
    let z = artifacts.params.embed_all(&features)?;
    let report = crate::eval::quantization_report(&z, &artifacts.codebooks, &codes)?;
    log::info!(
        "encoded {} points: mse {:.6}, mean reconstruction norm {:.6}",
        codes.n(),
        report.mean_squared_error,
        report.mean_reconstruction_norm
    );
    println!("codes written to {}", args.out.display());
    Ok(())
}

fn run_search(args: SearchArgs) -> Result<()> {
    init_threads(args.threads);
    let artifacts = crate::trainer::load_artifacts(&args.artifacts)?;
    let queries = crate::io::load_features(&args.queries)?;
    let codes = crate::io::load_codes(&args.codes)?;
    let sparse;
    let mode = if args.sparse_lut {
        sparse = crate::search::SparseCodebooks::from_dense(&artifacts.codebooks);
        LutMode::Sparse(&sparse)
    } else {
        LutMode::Dense(&artifacts.codebooks)
    };
    let results = crate::search::search_all(&queries, &artifacts.params, &mode, &codes, args.k)?;
    crate::search::write_results_csv(&results, &args.out)?;
    println!("results written to {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.results).map_err(|e| Error::io(&args.results, e))?;
    let results = crate::search::parse_results_csv(&text)?;
    let query_labels = crate::io::load_labels(&args.query_labels)?;
    let db_labels = crate::io::load_labels(&args.db_labels)?;
    let codes = crate::io::load_codes(&args.codes)?;
    if results.len() != query_labels.n() {
        return Err(Error::shape(
            "results vs query labels",
            format!("{} queries", query_labels.n()),
            format!("{}", results.len()),
        ));
    }
    if args.r == 0 {
        return Err(Error::Invalid("evaluation cutoff r must be >= 1".into()));
    }
    let rankings: Vec<Vec<u64>> = results
        .iter()
        .map(|r| r.iter().map(|&(id, _)| id).collect())
        .collect();
    let map = crate::eval::map_at(&rankings, query_labels.labels(), &db_labels, args.r)?;
    let bits = codes.m() * (codes.h() as f64).log2().round() as usize;
    let records = vec![MetricRecord {
        name: format!("map@{}", args.r),
        value: map,
        r: args.r,
        bits,
    }];
    crate::eval::write_metrics(&records, &args.metrics_out, &args.json_out)?;
    if let Some(pr_path) = &args.pr_out {
        let relevants: Vec<_> = query_labels
            .labels()
            .iter()
            .map(|&y| crate::eval::relevant_by_label(&db_labels, y))
            .collect();
        let curve = crate::eval::mean_precision_recall(&rankings, &relevants)?;
        std::fs::write(pr_path, crate::eval::pr_points_to_csv(&curve))
            .map_err(|e| Error::io(pr_path, e))?;
    }
    println!("map@{} = {map}", args.r);
    Ok(())
}
