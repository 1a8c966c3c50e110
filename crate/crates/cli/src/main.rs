use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use distvote::sim::{run_experiment, write_outputs, SimConfig, Summary};

mod report;

#[derive(Parser)]
#[command(name = "distvote", version, about = "Federated backdoor-defence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its outputs.
    Run(RunArgs),
    /// Run a grid over non-IID degree, malicious fraction and auxiliary set size.
    Sweep(SweepArgs),
    /// Summarise one or more rounds.csv files.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    config: PathBuf,
    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings, applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Repeat with consecutive seeds and also write their mean.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Non-IID degrees.
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// Fractions of clients that are malicious (the lowest client ids).
    #[arg(long, value_delimiter = ',')]
    malicious_fraction: Vec<f64>,
    /// Auxiliary set sizes.
    #[arg(long, value_delimiter = ',')]
    aux_size: Vec<usize>,
    /// Seeds per grid point, starting at the base seed.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// rounds.csv files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Average over this many final rounds.
    #[arg(long, default_value_t = 5)]
    tail: usize,
}

fn load(common: &Common) -> Result<SimConfig> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg = SimConfig::from_text(&text)?;
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_one(cfg: &SimConfig, dir: &Path) -> Result<Summary> {
    let mut cfg = cfg.clone();
    cfg.output_dir = dir.to_path_buf();
    let res = run_experiment(&cfg)?;
    write_outputs(&res, dir)?;
    Ok(res.summary)
}

fn print_summary(s: &Summary) {
    println!(
        "seed {}  {} / {}  accuracy {:.4}  asr {:.4}{}",
        s.seed,
        s.aggregator,
        s.attack,
        s.final_accuracy,
        s.final_asr,
        if s.final_asr_defined { "" } else { " (undefined)" },
    );
}

#[derive(serde::Serialize)]
struct MeanSummary {
    seeds: Vec<u64>,
    final_accuracy: f64,
    final_asr: f64,
    mean_malicious_trust: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_summary(runs: &[Summary]) -> MeanSummary {
    MeanSummary {
        seeds: runs.iter().map(|s| s.seed).collect(),
        final_accuracy: mean_of(runs.iter().map(|s| s.final_accuracy)).unwrap_or(0.0),
        final_asr: mean_of(runs.iter().map(|s| s.final_asr)).unwrap_or(0.0),
        mean_malicious_trust: mean_of(runs.iter().filter_map(|s| s.mean_malicious_trust)),
    }
}

fn run(args: RunArgs) -> Result<()> {
    if args.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let cfg = load(&args.common)?;
    let base = cfg.output_dir.clone();
    if args.repeat == 1 {
        let s = run_one(&cfg, &base)?;
        print_summary(&s);
        println!("outputs in {}", base.display());
        return Ok(());
    }
    let mut runs = Vec::new();
    for k in 0..args.repeat {
        let mut c = cfg.clone();
        c.seed = cfg.seed + k;
        let s = run_one(&c, &base.join(format!("seed{}", c.seed)))?;
        print_summary(&s);
        runs.push(s);
    }
    let mean = mean_summary(&runs);
    std::fs::write(base.join("mean_summary.json"), serde_json::to_string_pretty(&mean)? + "\n")?;
    println!("mean accuracy {:.4}  mean asr {:.4}", mean.final_accuracy, mean.final_asr);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let ps = if args.p.is_empty() { vec![cfg.noniid_p] } else { args.p.clone() };
    let current_fraction = cfg.malicious.len() as f64 / cfg.clients as f64;
    let fracs = if args.malicious_fraction.is_empty() {
        vec![current_fraction]
    } else {
        args.malicious_fraction.clone()
    };
    let auxes = if args.aux_size.is_empty() { vec![cfg.aux_size] } else { args.aux_size.clone() };
    let base = cfg.output_dir.clone();
    std::fs::create_dir_all(&base)?;
    let mut table = String::from("p,malicious_fraction,aux_size,seed,final_accuracy,final_asr,mean_malicious_trust,mean_honest_trust,dir\n");
    for &p in &ps {
        for &f in &fracs {
            if !(0.0..=1.0).contains(&f) {
                bail!("malicious fraction {f} outside [0, 1]");
            }
            for &aux in &auxes {
                for k in 0..args.repeat {
                    let mut c = cfg.clone();
                    c.noniid_p = p;
                    c.malicious = (0..(f * c.clients as f64).round() as usize).collect();
                    c.aux_size = aux;
                    c.seed = cfg.seed + k;
                    c.validate().with_context(|| format!("grid point p={p} fraction={f} aux={aux}"))?;
                    let name = format!("p{p}_m{f}_aux{aux}_seed{}", c.seed);
                    let s = run_one(&c, &base.join(&name))?;
                    print_summary(&s);
                    table.push_str(&format!(
                        "{p},{f},{aux},{},{:.6},{:.6},{},{},{name}\n",
                        c.seed,
                        s.final_accuracy,
                        s.final_asr,
                        s.mean_malicious_trust.map_or(String::new(), |x| format!("{x:.6}")),
                        s.mean_honest_trust.map_or(String::new(), |x| format!("{x:.6}")),
                    ));
                }
            }
        }
    }
    let path = base.join("sweep.csv");
    std::fs::write(&path, table)?;
    println!("grid written to {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => {
            let rows = a
                .files
                .iter()
                .map(|f| report::summarize_file(f, a.tail))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", report::render(&rows));
            Ok(())
        }
    }
}
