//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or I/O
//! problems, 3 numeric failures.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::effects::{flag_significant_bins, EffectReport};
use crate::error::{Error, Result};
use crate::inference::{empirical_pvalues, qvalues, NullReference, NullSource};
use crate::io::{
    format_pvalues, format_results, parse_external_scores, parse_results, read_counts_tsv, read_external_totals,
    read_to_string, result_rows, write_text, PValueRow,
};
use crate::pipeline::{analyze_batch_with_totals, batch_permutation_null, control_null};
use crate::simulate::{auc, run_design, DesignGrid};
use crate::types::AnalysisConfig;

#[derive(Debug, Parser)]
#[command(
    name = "msdiff",
    version,
    about = "Multi-scale differential analysis of binned counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Analysis configuration as JSON; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Analyse shift 0 only.
    #[arg(long)]
    no_ti: bool,
    /// Leave the region-total term out of log Λ.
    #[arg(long)]
    no_total: bool,
    /// Significance multiplier for effect-curve bins.
    #[arg(long)]
    z: Option<f64>,
}

#[derive(Debug, Args)]
struct Input {
    /// Counts table.
    #[arg(long)]
    counts: PathBuf,
    /// Sum every k adjacent bins before analysis.
    #[arg(long, default_value_t = 1)]
    rebin: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every region: region_id, log_lambda, status.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        common: Common,
        /// Region-total statistics (region_id, log_fc, se, loglik_ratio).
        #[arg(long)]
        external_totals: Option<PathBuf>,
        /// Also write effect curves as JSON.
        #[arg(long)]
        effects: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Null statistics, one per line: label permutations of every region,
    /// or with `--permutations 0` the regions themselves as a
    /// control-versus-control reference.
    Null {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 99)]
        permutations: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Empirical p-values and q-values for an `analyze` table.
    Pvalues {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        null: PathBuf,
        /// λ used to estimate the null proportion.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a simulation design grid and report AUC per cell.
    Simulate {
        #[arg(long)]
        grid: PathBuf,
        /// Scores of other methods on the same design (cell, method,
        /// score, label) to report alongside.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Re-emit effect curves from an `analyze --effects` file.
    Effects {
        #[arg(long)]
        effects: PathBuf,
        /// Regions to emit (default: all).
        #[arg(long)]
        region: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long)]
        z: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<AnalysisConfig> {
    let mut cfg: AnalysisConfig = match &common.config {
        Some(p) => serde_json::from_str(&read_to_string(p)?)?,
        None => AnalysisConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.rng_seed = s;
    }
    if common.no_ti {
        cfg.ti_enabled = false;
    }
    if common.no_total {
        cfg.include_total = false;
    }
    if let Some(z) = common.z {
        cfg.z_threshold = z;
    }
    cfg.check()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze {
            input,
            common,
            external_totals,
            effects,
            out,
        } => {
            let cfg = load_config(&common)?;
            let batch = read_counts_tsv(&input.counts, input.rebin)?;
            let totals = match &external_totals {
                Some(p) => read_external_totals(p)?,
                None => Default::default(),
            };
            let outcomes = with_threads(common.threads, || analyze_batch_with_totals(&batch, &cfg, &totals))?;
            emit(out.as_deref(), &format_results(&result_rows(&outcomes)))?;
            if let Some(path) = effects {
                let reports: Vec<EffectReport> = outcomes
                    .iter()
                    .zip(&batch.regions)
                    .filter_map(|(o, m)| {
                        o.result.as_ref().ok().map(|r| EffectReport {
                            region_id: r.region_id.clone(),
                            bin_width: m.bin_width,
                            curve: r.curve.clone(),
                            significant: r.significant.clone(),
                        })
                    })
                    .collect();
                write_text(&path, &serde_json::to_string_pretty(&reports)?)?;
            }
            Ok(())
        }
        Command::Null {
            input,
            common,
            permutations,
            out,
        } => {
            let cfg = load_config(&common)?;
            let batch = read_counts_tsv(&input.counts, input.rebin)?;
            let null = with_threads(common.threads, || {
                if permutations == 0 {
                    control_null(&batch, &cfg)
                } else {
                    batch_permutation_null(&batch, &cfg, permutations, cfg.rng_seed)
                }
            })??;
            emit(out.as_deref(), &null.to_text())
        }
        Command::Pvalues {
            results,
            null,
            lambda,
            out,
        } => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::InvalidInput("lambda must lie in (0, 1)".into()));
            }
            let rows = parse_results(&read_to_string(&results)?)?;
            let null = NullReference::read(&null, NullSource::Permutation)?;
            if null.is_empty() {
                return Err(Error::EmptyNull);
            }
            let ok: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_ok()).collect();
            let stats: Vec<f64> = ok.iter().map(|&i| rows[i].log_lambda).collect();
            let p = empirical_pvalues(&stats, &null)?;
            let q = qvalues(&p, lambda)?;
            let mut table: Vec<PValueRow> = rows
                .iter()
                .map(|r| PValueRow {
                    region_id: r.region_id.clone(),
                    log_lambda: r.log_lambda,
                    p_value: f64::NAN,
                    q_value: f64::NAN,
                })
                .collect();
            for (k, &i) in ok.iter().enumerate() {
                table[i].p_value = p[k];
                table[i].q_value = q[k];
            }
            emit(out.as_deref(), &format_pvalues(&table))
        }
        Command::Simulate {
            grid,
            scores,
            common,
            out,
        } => {
            let cfg = load_config(&common)?;
            let mut design: DesignGrid = serde_json::from_str(&read_to_string(&grid)?)?;
            if let Some(s) = common.seed {
                design.seed = s;
            }
            let external = match &scores {
                Some(p) => parse_external_scores(&read_to_string(p)?)?,
                None => Default::default(),
            };
            let cells = with_threads(common.threads, || run_design(&design, &cfg))??;
            let mut text = String::from("cell\tsample_size\tdepth\tmethod\tauc\tn_scored\tn_failed\n");
            for (i, c) in cells.iter().enumerate() {
                let auc = c.auc().unwrap_or(f64::NAN);
                text.push_str(&format!(
                    "{}\t{}\t{:.16e}\tmultiscale\t{:.16e}\t{}\t{}\n",
                    i + 1,
                    c.cell.sample_size,
                    c.cell.depth,
                    auc,
                    c.scores.len(),
                    c.failures
                ));
            }
            for ((cell, method), scored) in &external {
                let c = cells.get(cell - 1).ok_or_else(|| {
                    Error::InvalidInput(format!("scores refer to cell {cell}, design has {}", cells.len()))
                })?;
                text.push_str(&format!(
                    "{cell}\t{}\t{:.16e}\t{method}\t{:.16e}\t{}\t0\n",
                    c.cell.sample_size,
                    c.cell.depth,
                    auc(scored)?,
                    scored.len()
                ));
            }
            emit(out.as_deref(), &text)
        }
        Command::Effects {
            effects,
            region,
            format,
            z,
            out,
        } => {
            let mut reports: Vec<EffectReport> = serde_json::from_str(&read_to_string(&effects)?)?;
            if !region.is_empty() {
                if let Some(missing) = region.iter().find(|r| !reports.iter().any(|e| &e.region_id == *r)) {
                    return Err(Error::InvalidInput(format!(
                        "region {missing} not found in {}",
                        effects.display()
                    )));
                }
                reports.retain(|r| region.contains(&r.region_id));
            }
            if let Some(z) = z {
                if !(z > 0.0) {
                    return Err(Error::InvalidInput("z must be positive".into()));
                }
                for r in &mut reports {
                    r.significant = flag_significant_bins(&r.curve, z);
                }
            }
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&reports)?,
                Format::Tsv => {
                    let mut t = String::from("region_id\tbin\tmean\tsd\tsignificant\n");
                    for r in &reports {
                        let flags = r.significant.bin_flags(r.curve.n_bins());
                        for b in 0..r.curve.n_bins() {
                            t.push_str(&format!(
                                "{}\t{}\t{:.16e}\t{:.16e}\t{}\n",
                                r.region_id,
                                b + 1,
                                r.curve.mean[b],
                                r.curve.sd[b],
                                flags[b]
                            ));
                        }
                    }
                    t
                }
            };
            emit(out.as_deref(), &text)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
