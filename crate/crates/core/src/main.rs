use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gmm_feedback::channel::{read_dataset, write_dataset};
use gmm_feedback::codebooks::{extract_directions, write_cov_codebook, write_dir_codebook};
use gmm_feedback::error::{Error, Result};
use gmm_feedback::gmm::{read_model, write_model, GmmModel};
use gmm_feedback::harness::output::{eccdf_path, read_records, results_path, write_eccdf};
use gmm_feedback::harness::{self, sigma2_of, Datasets, ExperimentConfig, Metric, Mode};
use gmm_feedback::par::{with_threads, Execution};

#[derive(Parser, Debug)]
#[command(name = "gmmfb", version, about = "GMM-based limited feedback experiments for FDD MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Comma-separated method labels; overrides the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and store the training and evaluation datasets.
    Generate,
    /// Fit the GMM on the training set.
    Fit,
    /// Build the codebooks used by the configured methods.
    Codebook,
    /// Run the experiment and write the result CSV files.
    Run,
    /// Summarize existing result files and rebuild their cCDF tables.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::validation("--config", "this subcommand needs a configuration file"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.method.is_empty() {
        cfg.methods = cli.method.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_path(out: &Path) -> PathBuf {
    out.join("train.bin")
}

fn eval_path(out: &Path) -> PathBuf {
    out.join("eval.bin")
}

fn model_path(out: &Path) -> PathBuf {
    out.join("gmm.bin")
}

/// Stored datasets if present, otherwise freshly generated ones.
fn datasets(cfg: &ExperimentConfig, out: &Path) -> Result<Datasets> {
    if train_path(out).exists() && eval_path(out).exists() {
        return Ok(Datasets {
            train: read_dataset(&train_path(out))?,
            eval: read_dataset(&eval_path(out))?,
        });
    }
    harness::prepare_data(cfg, Execution::default())
}

fn model(cfg: &ExperimentConfig, data: &Datasets, out: &Path) -> Result<GmmModel> {
    if model_path(out).exists() {
        return read_model(&model_path(out));
    }
    harness::fit_model(cfg, &data.train, Execution::default())
}

fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = harness::prepare_data(cfg, Execution::default())?;
    write_dataset(&data.train, &train_path(out))?;
    write_dataset(&data.eval, &eval_path(out))?;
    println!("wrote {} training and {} evaluation channels to {}", data.train.len(), data.eval.len(), out.display());
    Ok(())
}

fn fit(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = datasets(cfg, out)?;
    let m = harness::fit_model(cfg, &data.train, Execution::default())?;
    write_model(&m, &model_path(out))?;
    let ll = m.log_likelihood_dataset(&data.train)? / data.train.len() as f64;
    println!(
        "fitted K = {} components ({} parameters), mean log-likelihood {ll:.4}, wrote {}",
        m.n_components(),
        m.parameter_count(),
        model_path(out).display()
    );
    Ok(())
}

fn codebook(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = datasets(cfg, out)?;
    let methods = harness::selected_methods(cfg)?;
    let labels: Vec<String> = methods.iter().map(|m| m.label()).collect();
    let uses = |prefix: &str| labels.iter().any(|l| l.starts_with(prefix));
    let exec = Execution::default();
    let mut written = Vec::new();
    match cfg.mode {
        Mode::P2p => {
            let gmm = if uses("gmm_") { Some(model(cfg, &data, out)?) } else { None };
            for &snr in &cfg.snr_db {
                let sigma2 = sigma2_of(snr);
                if uses("lloyd_") {
                    let p = out.join(format!("lloyd_{snr}dB.bin"));
                    write_cov_codebook(&harness::lloyd_cov_codebook(cfg, &data.train, sigma2, exec)?, &p)?;
                    written.push(p);
                }
                if let Some(m) = &gmm {
                    let p = out.join(format!("gmm_{snr}dB.bin"));
                    write_cov_codebook(&harness::gmm_cov_codebook(m, &data.train, sigma2, exec)?, &p)?;
                    written.push(p);
                }
            }
        }
        Mode::Mu => {
            let design = sigma2_of(cfg.codebook_design_snr_db);
            let nrx = cfg.scenario.nrx;
            if uses("lloyd_") {
                let p = out.join("lloyd_dir.bin");
                let cb = harness::lloyd_cov_codebook(cfg, &data.train, design, exec)?;
                write_dir_codebook(&extract_directions(&cb, nrx)?, &p)?;
                written.push(p);
            }
            if labels.iter().any(|l| l == "gmm_h" || l == "gmm_y") {
                let p = out.join("gmm_dir.bin");
                let cb = harness::gmm_cov_codebook(&model(cfg, &data, out)?, &data.train, design, exec)?;
                write_dir_codebook(&extract_directions(&cb, nrx)?, &p)?;
                written.push(p);
            }
            if uses("random_") {
                let p = out.join("random_dir.bin");
                write_dir_codebook(&harness::random_codebook(cfg)?, &p)?;
                written.push(p);
            }
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_summary(records: &[harness::Record]) {
    println!("{:<16} {:>8} {:>7} {:>10} {:>10}", "method", "snr_db", "n", "mean", "std_err");
    for s in harness::summarize(records) {
        println!("{:<16} {:>8} {:>7} {:>10.4} {:>10.4}", s.method, s.snr_db, s.count, s.mean, s.std_err);
    }
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let result = harness::run_experiment(cfg)?;
    let files = harness::write_outputs(&result, out)?;
    print_summary(&result.records);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let mut found = false;
    for metric in [Metric::Nse, Metric::SumRate] {
        let path = results_path(out, metric);
        if !path.exists() {
            continue;
        }
        found = true;
        let records = read_records(&path)?;
        println!("{}", path.display());
        print_summary(&records);
        write_eccdf(&eccdf_path(out, metric), &records)?;
    }
    if !found {
        return Err(Error::validation("--out", format!("no results_<metric>.csv in {}", out.display())));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::Report = cli.command {
        return report(&cli.out);
    }
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Generate => generate(&cfg, &cli.out),
        Command::Fit => fit(&cfg, &cli.out),
        Command::Codebook => codebook(&cfg, &cli.out),
        Command::Run => run(&cfg, &cli.out),
        Command::Report => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.threads, || execute(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation { .. } | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
