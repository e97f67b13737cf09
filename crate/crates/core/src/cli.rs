//! `srcf` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration / input error, 3 numerical failure.
//! Every error prints exactly one stderr line `<class>: <message>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{MethodChoice, ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{run_example1_sweep, run_performance_profile, run_table1};
use crate::likelihood::ScoreResult;
use crate::report::{self, fmt_float, Format, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "srcf",
    version,
    about = "Log-likelihood and score evaluation for linear Gaussian state-space models"
)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the negative log-likelihood and its gradient.
    Score,
    /// Simulate a measurement record.
    Simulate,
    /// Run one of the numerical experiments and write its reports.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Example1Sweep,
    Table1,
    PerfProfile,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Sqrt,
    Conventional,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Example1,
    Example3,
    Custom,
}

/// Flags mirror config keys; a flag overrides the file value.
#[derive(Debug, Args)]
struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    delta_list: Option<Vec<f64>>,
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    theta: Option<Vec<f64>>,
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    theta_true: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, global = true)]
    model_file: Option<std::path::PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    delta_t: Option<f64>,
    #[arg(long, global = true)]
    freeze: bool,
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    #[arg(long, global = true)]
    data_file: Option<std::path::PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau_true: Option<f64>,
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    tau_grid: Option<Vec<f64>>,
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    z1: Option<Vec<f64>>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    mu_max: Option<f64>,
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.out {
            c.out = Some(v);
        }
        if let Some(v) = self.format {
            c.format = match v {
                FormatArg::Csv => Format::Csv,
                FormatArg::Md => Format::Md,
            };
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.method {
            c.method = match v {
                MethodArg::Sqrt => MethodChoice::Sqrt,
                MethodArg::Conventional => MethodChoice::Conventional,
                MethodArg::Both => MethodChoice::Both,
            };
        }
        if let Some(v) = self.model {
            c.model = match v {
                ModelArg::Example1 => ModelKind::Example1,
                ModelArg::Example3 => ModelKind::Example3,
                ModelArg::Custom => ModelKind::Custom,
            };
        }
        if self.freeze {
            c.freeze = true;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v.into();
                }
            )*};
        }
        take!(delta_list, theta, theta_true, model_file, data_file, tau_grid);
        take!(delta, delta_t, n_steps, tau_true, z1, mu_max);
        c.validate()?;
        Ok(c)
    }
}

/// Entry point used by the binary: parse `args`, run, and return the exit
/// code. Normal output goes to `stdout`, the one-line diagnostic to `stderr`.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "config: {}", line.trim_start_matches("error: "));
            return EXIT_CONFIG;
        }
    };
    match run(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}: {}", e.class(), single_line(&e.to_string()));
            exit_code(&e)
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        "numerical" => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    report::write_file(&dir.join("effective_config.json"), &cfg.to_json())
}

fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    let mut cfg = cli.flags.resolve()?;
    match cli.command {
        Command::Score => cmd_score(&mut cfg, stdout),
        Command::Simulate => cmd_simulate(&mut cfg, stdout),
        Command::Experiment { which } => cmd_experiment(&mut cfg, which, stdout),
    }
}

fn score_table(rows: &[(&str, &ScoreResult)], p: usize) -> Table {
    let mut headers = vec!["method".to_string(), "loglik".to_string()];
    headers.extend((1..=p).map(|i| format!("gradient_{i}")));
    headers.push("failed_step".into());
    let mut t = Table::new(headers);
    for (name, r) in rows {
        let mut cells = vec![name.to_string(), fmt_float(r.loglik)];
        cells.extend(r.gradient.iter().map(|g| fmt_float(*g)));
        cells.push(
            r.failure
                .as_ref()
                .map_or(String::new(), |f| f.step.to_string()),
        );
        t.push(cells);
    }
    t
}

fn cmd_score(cfg: &mut RunConfig, stdout: &mut dyn Write) -> Result<i32> {
    let spec = cfg.build_model()?;
    let theta = cfg.theta_for(spec.as_ref())?;
    let data = cfg.data_for(spec.as_ref())?;
    cfg.theta = Some(theta.clone());

    let methods = cfg.method.methods();
    let results = methods
        .iter()
        .map(|m| m.score(spec.as_ref(), &theta, &data))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = methods
        .iter()
        .map(|m| m.name())
        .zip(results.iter())
        .collect();
    let table = score_table(&rows, theta.len()).render(cfg.format)?;
    emit(stdout, &table)?;
    if let Some(dir) = &cfg.out {
        report::write_file(
            &dir.join(format!("score.{}", cfg.format.extension())),
            &table,
        )?;
        echo_config(cfg, dir)?;
    }
    match methods.iter().zip(&results).find(|(_, r)| r.failed()) {
        Some((m, r)) => {
            let e = r.clone().into_result().unwrap_err();
            Err(match e {
                Error::StepFailure { step, message } => Error::StepFailure {
                    step,
                    message: format!("{}: {message}", m.name()),
                },
                other => other,
            })
        }
        None => Ok(EXIT_OK),
    }
}

fn cmd_simulate(cfg: &mut RunConfig, stdout: &mut dyn Write) -> Result<i32> {
    let spec = cfg.build_model()?;
    let theta_true = cfg.theta_true_for(spec.as_ref())?;
    cfg.theta_true = Some(theta_true.clone());
    cfg.data_file = None;
    let traj = crate::model::simulate(spec.as_ref(), &theta_true, cfg.n_steps, cfg.seed)?;
    let dims = spec.dims();

    let mut headers = vec!["k".to_string()];
    headers.extend((1..=dims.m).map(|i| format!("z_{i}")));
    headers.extend((1..=dims.n).map(|i| format!("x_{i}")));
    let mut t = Table::new(headers);
    let states = traj.x.as_deref().unwrap_or_default();
    for (k, z) in traj.z.iter().enumerate() {
        let mut cells = vec![(k + 1).to_string()];
        cells.extend(z.iter().map(|v| fmt_float(*v)));
        if let Some(x) = states.get(k) {
            cells.extend(x.iter().map(|v| fmt_float(*v)));
        }
        t.push(cells);
    }
    let text = t.render(cfg.format)?;
    match &cfg.out {
        Some(dir) => {
            let path = dir.join(format!("trajectory.{}", cfg.format.extension()));
            report::write_file(&path, &text)?;
            echo_config(cfg, dir)?;
            emit(
                stdout,
                &format!(
                    "simulated {} steps of {} -> {}\n",
                    traj.len(),
                    spec.name(),
                    path.display()
                ),
            )?;
        }
        None => emit(stdout, &text)?,
    }
    Ok(EXIT_OK)
}

fn cmd_experiment(cfg: &mut RunConfig, which: Experiment, stdout: &mut dyn Write) -> Result<i32> {
    let methods = cfg.method.methods();
    let (table, summary, write): (
        Table,
        String,
        Box<dyn Fn(&Path, Format) -> Result<Vec<std::path::PathBuf>>>,
    ) = match which {
        Experiment::Example1Sweep => {
            let sc = cfg.example1_sweep();
            cfg.tau_grid = Some(sc.tau_grid.clone());
            let curve = run_example1_sweep(&sc, &methods)?;
            let minima: Vec<String> = (0..methods.len())
                .map(|a| {
                    let at = curve
                        .argmin(a)
                        .map_or("none".to_string(), |j| fmt_float(curve.tau[j]));
                    format!("{} argmin tau={at}", methods[a].name())
                })
                .collect();
            let summary = format!(
                "example1-sweep: {} grid points; {}",
                curve.tau.len(),
                minima.join("; ")
            );
            let table = report::sweep_table(&curve);
            (
                table,
                summary,
                Box::new(move |dir, f| report::emit_sweep(&curve, f, dir)),
            )
        }
        Experiment::Table1 => {
            let tc = cfg.table1()?;
            cfg.delta_list = Some(tc.deltas.clone());
            cfg.theta = Some(vec![tc.theta]);
            let rows = run_table1(&tc)?;
            let failed = rows.iter().filter(|r| r.conventional.failed).count();
            let summary = format!(
                "table1: {} rows; conventional failed on {failed}",
                rows.len()
            );
            let table = report::table1_table(&rows);
            (
                table,
                summary,
                Box::new(move |dir, f| report::emit_table1(&rows, f, dir)),
            )
        }
        Experiment::PerfProfile => {
            let pc = cfg.perf_profile()?;
            cfg.delta_list = Some(pc.deltas.clone());
            cfg.theta = Some(vec![pc.theta]);
            let profile = run_performance_profile(&pc, &methods)?;
            let parts: Vec<String> = (0..profile.algorithms.len())
                .map(|a| {
                    let full = profile.mu_full(a).map_or("inf".to_string(), fmt_float);
                    format!(
                        "{} phi(1)={} mu_full={full}",
                        profile.algorithms[a],
                        fmt_float(profile.phi(a, 1.0))
                    )
                })
                .collect();
            let summary = format!(
                "perf-profile: {} problems; {}",
                profile.problems.len(),
                parts.join("; ")
            );
            let table = report::profile_table(&profile);
            (
                table,
                summary,
                Box::new(move |dir, f| report::emit_profile(&profile, f, dir)),
            )
        }
    };
    match &cfg.out {
        Some(dir) => {
            write(dir, cfg.format)?;
            echo_config(cfg, dir)?;
        }
        None => emit(stdout, &table.render(cfg.format)?)?,
    }
    emit(stdout, &format!("{summary}\n"))?;
    Ok(EXIT_OK)
}
