use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cmvc_core::buffer::PairStrategy;
use cmvc_core::fusion::RunConfig;
use cmvc_core::harness::verify::{self, VerifyKind, VerifyParams};
use cmvc_core::harness::{load_config, load_inputs, run_ablation, run_cfp_trace, run_pipeline, Run, Variant};
use cmvc_core::view::{generate_synthetic_stream, write_labels, write_matrix_csv, SyntheticSpec};
use cmvc_core::{Error, Result};

fn defaults_help() -> String {
    let json = serde_json::to_string_pretty(&RunConfig::default()).expect("default config serializes");
    format!(
        "Config files are JSON; omitted fields take these defaults:\n{json}\n\n\
         `synthetic` takes {{\"n\", \"k\", \"views\", \"dims\", \"separation\", \
         \"noise_level\", \"corrupted_views\", \"seed\"}}.\n\
         Exit status: 0 ok, 2 config error, 3 data error, 4 invariant violation or failed verifier."
    )
}

#[derive(Parser)]
#[command(name = "cmvc", version, about = "Continual multi-view clustering", after_long_help = defaults_help())]
struct Cli {
    /// Worker threads for independent trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse the views in order and write the report.
    Run(RunArgs),
    /// Run one ablation variant (FSF, IMVC, G, S, K, RS) or `all`.
    Ablate(RunArgs),
    /// Prefix trace with per-view single-view scores.
    Cfp(RunArgs),
    /// Randomized check of one solver guarantee.
    Verify(VerifyArgs),
    /// Write a synthetic view stream as CSV files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// View CSV files in arrival order; omit to use the config's synthetic stream.
    #[arg(long = "views", num_args = 1..)]
    views: Vec<PathBuf>,
    /// One integer label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Pair strategy for `run`/`cfp`; ablation variant or `all` for `ablate`.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// mean_bound, std_bound, cs_bound, procrustes, monotone or stiefel.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Random candidates per instance for the search-based checks.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(short = 'r', long)]
    r: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(short = 'n', long)]
    n: Option<usize>,
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Also write the outcome as verify_<kind>.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Config whose `synthetic` section is used; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
    #[arg(short = 'n', long)]
    n: Option<usize>,
    #[arg(short = 'k', long)]
    k: Option<usize>,
    #[arg(long = "num-views")]
    num_views: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// 1-based indices of views to corrupt.
    #[arg(long, value_delimiter = ',')]
    corrupted: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CMVC_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Cfp(a) => cmd_cfp(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config_for(a: &RunArgs, strategy_is_pairs: bool) -> Result<RunConfig> {
    let mut config = match &a.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
        if let Some(s) = config.synthetic.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(lambda) = a.lambda {
        config.lambda = lambda;
        config.lambda_grid = false;
    }
    if strategy_is_pairs {
        if let Some(s) = &a.strategy {
            config.strategy = s.parse::<PairStrategy>()?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_run(run: &Run, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    run.report.write_to(dir)?;
    run.state.buffer.write(dir.join("buffer.txt"))?;
    write_matrix_csv(dir.join("consensus.csv"), run.state.consensus.values())?;
    if let Some(m) = run.report.final_metrics() {
        println!(
            "{} views={} acc={:.4} nmi={:.4} purity={:.4} -> {}",
            run.report.variant,
            run.report.views,
            m.acc,
            m.nmi,
            m.purity,
            dir.display()
        );
    } else {
        println!("{} views={} -> {}", run.report.variant, run.report.views, dir.display());
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let config = config_for(a, true)?;
    let inputs = load_inputs(&config, &a.views, a.labels.as_deref())?;
    write_run(&run_pipeline(&config, &inputs)?, &a.out)
}

fn cmd_cfp(a: &RunArgs) -> Result<()> {
    let config = config_for(a, true)?;
    let inputs = load_inputs(&config, &a.views, a.labels.as_deref())?;
    write_run(&run_cfp_trace(&config, &inputs)?, &a.out)
}

fn cmd_ablate(a: &RunArgs) -> Result<()> {
    let config = config_for(a, false)?;
    let requested = a.strategy.as_deref().unwrap_or("all");
    let variants: Vec<Variant> = if requested.eq_ignore_ascii_case("all") {
        Variant::ALL.to_vec()
    } else {
        vec![requested.parse()?]
    };
    let inputs = load_inputs(&config, &a.views, a.labels.as_deref())?;
    if variants.len() == 1 {
        return write_run(&run_ablation(&config, &inputs, variants[0])?, &a.out);
    }
    let runs: Vec<Run> = variants
        .par_iter()
        .map(|&v| run_ablation(&config, &inputs, v))
        .collect::<Result<_>>()?;
    create_dir(&a.out)?;
    let mut summary = String::from("variant,acc,nmi,purity,selection_digest\n");
    for run in &runs {
        write_run(run, &a.out.join(&run.report.variant))?;
        let m = run.report.final_metrics();
        let digest = run.report.prefixes.last().map_or("", |p| p.selection_digest.as_str());
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            run.report.variant,
            m.map_or(f64::NAN, |m| m.acc),
            m.map_or(f64::NAN, |m| m.nmi),
            m.map_or(f64::NAN, |m| m.purity),
            digest
        ));
    }
    let path = a.out.join("ablation.csv");
    fs::write(&path, summary).map_err(|e| Error::Io { path, source: e })
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let kind: VerifyKind = a.kind.parse()?;
    let params = VerifyParams {
        seed: a.seed,
        instances: a.instances,
        trials: a.trials,
        samples: a.samples,
        r: a.r,
        delta: a.delta,
        n: a.n,
        k: a.k,
    };
    let outcome = verify::run(kind, &params)?;
    let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    println!("{json}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join(format!("verify_{kind}.json"));
        fs::write(&path, format!("{json}\n")).map_err(|e| Error::Io { path, source: e })?;
    }
    if outcome.passed {
        Ok(())
    } else {
        Err(Error::Invariant(format!("{kind}: {}", outcome.detail)))
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => load_config(p)?.synthetic,
        None => None,
    };
    let mut spec = base.unwrap_or_else(|| SyntheticSpec::clean(300, 3, 3, 10.0, 0));
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(k) = a.k {
        spec.k = k;
        spec.dims = vec![k.max(2) * 3];
    }
    if let Some(v) = a.num_views {
        spec.views = v;
        if spec.dims.len() > 1 {
            spec.dims.truncate(1);
        }
    }
    if let Some(s) = a.separation {
        spec.separation = s;
    }
    if let Some(noise) = a.noise {
        spec.noise_level = noise;
    }
    if !a.corrupted.is_empty() {
        spec.corrupted_views = a.corrupted.iter().copied().collect();
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let (views, labels) = generate_synthetic_stream(&spec)?;
    create_dir(&a.out)?;
    for v in &views {
        write_matrix_csv(a.out.join(format!("view_{}.csv", v.view_index)), &v.data)?;
    }
    write_labels(a.out.join("labels.txt"), &labels)?;
    println!("wrote {} views (n={}, k={}) to {}", views.len(), spec.n, spec.k, a.out.display());
    Ok(())
}
