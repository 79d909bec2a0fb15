use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use poolscreen::adaptive::{DncOptions, Repooling, ScheduleModel};
use poolscreen::groupcode::{self, DecodeFlag};
use poolscreen::harness::{self, ExperimentSpec, Method};
use poolscreen::testbed::TestModel;
use poolscreen::theory::{entropy_bound, expected_total_tests, Prevalence, TheoryParams};
use poolscreen::Error;

mod exit {
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const MISMATCH: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(
    name = "poolscreen",
    version,
    about = "Pooled infection testing toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    /// JSON
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dnc,
    Gc,
    Individual,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dnc => Method::DivideConquer,
            MethodArg::Gc => Method::GroupCoding,
            MethodArg::Individual => Method::Individual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RepoolArg {
    InOrder,
    Shuffled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Clustered,
    Independent,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form pool size, redundancy, information bound and expected cost.
    Bounds {
        /// Prevalence values; repeat the flag or separate with commas.
        #[arg(
            long = "f",
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        f: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a group-coding plan (design file).
    Plan {
        #[arg(long)]
        n: usize,
        #[arg(long = "f", allow_hyphen_values = true)]
        f: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo simulation of one method.
    Simulate {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long = "f", allow_hyphen_values = true)]
        f: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// False-negative rate of a single pooled test.
        #[arg(long = "fn-rate", default_value_t = 0.0, allow_hyphen_values = true)]
        fn_rate: f64,
        /// False-positive rate of a single pooled test.
        #[arg(long = "fp-rate", default_value_t = 0.0, allow_hyphen_values = true)]
        fp_rate: f64,
        /// Retest first-pass positives individually (group coding).
        #[arg(long, overrides_with = "no_retest")]
        retest: bool,
        #[arg(long = "no-retest", overrides_with = "retest")]
        no_retest: bool,
        #[arg(long, value_enum, default_value_t = RepoolArg::InOrder)]
        repool: RepoolArg,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Clustered)]
        schedule: ScheduleArg,
        /// Re-estimate prevalence from observed positive pools each round.
        #[arg(long)]
        reestimate: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode lab results against a design file.
    Decode {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Individual retest outcomes, `subject_id,0|1` per line.
        #[arg(long)]
        confirm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Both methods at f = 1e-2 and 1e-3 with a perfect test.
    Reference {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible { .. } => exit::INFEASIBLE,
            Error::GroupMismatch(_) | Error::LengthMismatch { .. } => exit::MISMATCH,
            Error::Io(_) => exit::IO,
            _ => exit::USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: exit::IO,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: exit::USAGE,
        message: message.into(),
    }
}

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_input(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure {
        code: exit::IO,
        message: format!("{}: {e}", path.display()),
    })
}

fn show(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map_or_else(|| "-".to_string(), |p| p.display().to_string())
}

fn echo(config: &[(&str, String)]) {
    let parts: Vec<String> = config.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("# {}", parts.join(" "));
}

fn cmd_bounds(f: &[f64], n: u64, format: Format, out: Option<PathBuf>) -> Result<(), Failure> {
    echo(&[
        ("command", "bounds".into()),
        ("f", format!("{f:?}")),
        ("n", n.to_string()),
        ("format", format!("{format:?}").to_lowercase()),
        ("out", show(&out)),
    ]);
    let params = f
        .iter()
        .map(|&x| Prevalence::new(x).map(TheoryParams::new))
        .collect::<Result<Vec<_>, _>>()?;
    for t in &params {
        if t.is_degenerate() {
            eprintln!(
                "warning: f = {}: pooling does not help (m = {}, expected cost {:.3} per subject)",
                t.f, t.m, t.expected_cost
            );
        }
    }

    let mut w = open_output(out.as_deref())?;
    match format {
        Format::Csv => {
            writeln!(
                w,
                "f,n,entropy_per_subject,entropy_bits,m_exact,m,k_exact,k,cost_first_pass,cost_with_retest,tests_first_pass,tests_with_retest"
            )?;
            for t in &params {
                writeln!(
                    w,
                    "{},{},{:.6},{:.3},{:.4},{},{:.4},{},{:.6},{:.6},{:.1},{:.1}",
                    t.f,
                    n,
                    t.bits_per_subject,
                    entropy_bound(t.f, n),
                    t.m_exact,
                    t.m,
                    t.k_exact,
                    t.k,
                    t.first_pass_cost,
                    t.expected_cost,
                    expected_total_tests(t.f, t.m, t.k, n, false),
                    expected_total_tests(t.f, t.m, t.k, n, true),
                )?;
            }
        }
        Format::Text => {
            let json = serde_json::to_string_pretty(&params).map_err(|e| usage(e.to_string()))?;
            writeln!(w, "{json}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_plan(n: usize, f: f64, seed: u64, out: Option<PathBuf>) -> Result<(), Failure> {
    echo(&[
        ("command", "plan".into()),
        ("n", n.to_string()),
        ("f", f.to_string()),
        ("seed", seed.to_string()),
        ("out", show(&out)),
    ]);
    let f = Prevalence::new(f)?;
    let design = groupcode::build_design(n, f, seed)?;
    let t = TheoryParams::new(f);
    let mut w = open_output(out.as_deref())?;
    groupcode::write_design(&design, &mut w)?;
    w.flush()?;
    drop(w);
    let summary = format!(
        "n_groups = {}, k = {}, m = {}, expected cost = {:.4} first pass / {:.4} with retest",
        design.n_groups, design.k, t.m, t.first_pass_cost, t.expected_cost
    );
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    method: MethodArg,
    f: f64,
    n: usize,
    trials: usize,
    seed: u64,
    fn_rate: f64,
    fp_rate: f64,
    with_retest: bool,
    repool: RepoolArg,
    schedule: ScheduleArg,
    reestimate: bool,
    format: Format,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    echo(&[
        ("command", "simulate".into()),
        ("method", Method::from(method).to_string()),
        ("f", f.to_string()),
        ("n", n.to_string()),
        ("trials", trials.to_string()),
        ("seed", seed.to_string()),
        ("fn_rate", fn_rate.to_string()),
        ("fp_rate", fp_rate.to_string()),
        ("retest", with_retest.to_string()),
        ("repool", format!("{repool:?}").to_lowercase()),
        ("schedule", format!("{schedule:?}").to_lowercase()),
        ("reestimate", reestimate.to_string()),
        ("format", format!("{format:?}").to_lowercase()),
        ("out", show(&out)),
    ]);
    let spec = ExperimentSpec {
        n,
        f: Prevalence::new(f)?,
        method: method.into(),
        model: TestModel::new(fn_rate, fp_rate)?,
        with_retest,
        trials,
        base_seed: seed,
        dnc: DncOptions {
            repooling: match repool {
                RepoolArg::InOrder => Repooling::InOrder,
                RepoolArg::Shuffled => Repooling::Shuffled,
            },
            reestimate,
        },
        schedule_model: match schedule {
            ScheduleArg::Clustered => ScheduleModel::Clustered,
            ScheduleArg::Independent => ScheduleModel::Independent,
        },
    };
    let agg = harness::run_experiment(&spec)?;

    let mut w = open_output(out.as_deref())?;
    match format {
        Format::Csv => agg.write_csv(&mut w)?,
        Format::Text => writeln!(w, "{}", agg.summary_json())?,
    }
    w.flush()?;

    eprintln!(
        "cost = {:.4} +- {:.4} (sd), theory {:.4}, information bound {:.4}; false positives {:.1}, false negatives {:.1}",
        agg.mean_cost,
        agg.cost_stddev,
        agg.theory_cost,
        agg.entropy_cost,
        agg.mean_false_positives,
        agg.mean_false_negatives
    );
    Ok(())
}

fn cmd_decode(
    design: PathBuf,
    results: PathBuf,
    confirm: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    echo(&[
        ("command", "decode".into()),
        ("design", design.display().to_string()),
        ("results", results.display().to_string()),
        ("confirm", show(&confirm)),
        ("out", show(&out)),
    ]);
    let design = groupcode::read_design(open_input(&design)?)?;
    let results = groupcode::read_results(open_input(&results)?, design.n_groups)?;
    let positives = groupcode::decode(&design, &results)?;

    let mut rows: Vec<(usize, DecodeFlag)> = positives
        .iter()
        .map(|&s| (s, DecodeFlag::FirstPass))
        .collect();
    if let Some(path) = confirm {
        for (subject, positive) in groupcode::read_subject_results(open_input(&path)?)? {
            let row = rows.binary_search_by_key(&subject, |r| r.0).map_err(|_| {
                Failure::from(Error::GroupMismatch(format!(
                    "retest lists subject {subject}, which is not a first-pass positive"
                )))
            })?;
            if positive {
                rows[row].1 = DecodeFlag::Confirmed;
            }
        }
    }

    let mut w = open_output(out.as_deref())?;
    groupcode::write_decode_output(&rows, &mut w)?;
    w.flush()?;
    eprintln!(
        "{} first-pass positives out of {} subjects",
        positives.len(),
        design.n
    );
    Ok(())
}

fn cmd_reference(n: usize, trials: usize, seed: u64, format: Format) -> Result<(), Failure> {
    echo(&[
        ("command", "reference".into()),
        ("n", n.to_string()),
        ("trials", trials.to_string()),
        ("seed", seed.to_string()),
        ("format", format!("{format:?}").to_lowercase()),
    ]);
    if trials == 0 {
        return Err(usage("need at least one trial"));
    }
    let report = harness::reference_report(n, trials, seed)?;
    match format {
        Format::Text => print!("{report}"),
        Format::Csv => {
            println!("f,infected,dnc_iterations,dnc_m_sequence,dnc_tests,dnc_cost,gc_m,gc_k,gc_false_positives,gc_first_pass_tests,gc_total_tests,gc_first_pass_cost,gc_total_cost,min_cost");
            for r in &report.rows {
                let seq: Vec<String> = r.dnc_m_sequence.iter().map(|m| m.to_string()).collect();
                let gc = match &r.group_coding {
                    Some(g) => format!(
                        "{},{},{},{},{},{},{}",
                        g.m,
                        g.k,
                        g.mean_false_positives,
                        g.n_groups,
                        g.mean_total_tests,
                        g.first_pass_cost,
                        g.total_cost
                    ),
                    None => ",,,,,,".to_string(),
                };
                println!(
                    "{},{},{},{},{},{},{},{}",
                    r.f,
                    r.mean_infected,
                    r.dnc_iterations,
                    seq.join(" "),
                    r.dnc_mean_tests,
                    r.dnc_cost,
                    gc,
                    r.entropy_cost
                );
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bounds { f, n, format, out } => cmd_bounds(&f, n, format, out),
        Command::Plan { n, f, seed, out } => cmd_plan(n, f, seed, out),
        Command::Simulate {
            method,
            f,
            n,
            trials,
            seed,
            fn_rate,
            fp_rate,
            retest: _,
            no_retest,
            repool,
            schedule,
            reestimate,
            format,
            out,
        } => cmd_simulate(
            method, f, n, trials, seed, fn_rate, fp_rate, !no_retest, repool, schedule, reestimate,
            format, out,
        ),
        Command::Decode {
            design,
            results,
            confirm,
            out,
        } => cmd_decode(design, results, confirm, out),
        Command::Reference {
            n,
            trials,
            seed,
            format,
        } => cmd_reference(n, trials, seed, format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
