//! `incontext`: command-line driver for the measure-theoretic transformer toolkit.

mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use incontext::counterexample::{discontinuity_scan, CounterexampleMap};
use incontext::derivative::{extract_g, IdentityMeasureMap, InducedMeasureMap, MeasureMap, DEFAULT_EPS};
use incontext::flow::{depth_limit_error, euler_flow, rk4_flow, DepthFamily, StackVelocity};
use incontext::io;
use incontext::stack::{forward_measure, forward_tokens, LayerStack};
use incontext::transport::{w1_extended, w1_matching};
use incontext::{DiscreteMeasure, Error};
use ndarray::Array1;

#[derive(Parser)]
#[command(name = "incontext", version, about = "Transformers as in-context maps on discrete measures")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Euler,
    Rk4,
}

#[derive(Subcommand)]
enum Command {
    /// Wasserstein-1 distance between two measures.
    W1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Allow unequal masses: W1 of the normalized measures plus the mass difference.
        #[arg(long)]
        extended: bool,
        /// Write the optimal coupling (of the normalized measures with --extended).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Push a measure through a layer stack.
    Forward {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a layer stack to a token sequence, keeping token order.
    ForwardTokens {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the particle flow driven by a stack's layer velocities on [0, 1].
    Flow {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        measure: PathBuf,
        /// Number of time steps.
        #[arg(long = "T", default_value_t = 64)]
        steps: usize,
        #[arg(long, value_enum, default_value = "rk4")]
        integrator: IntegratorArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance between T-layer stacks and the continuous-depth flow.
    DepthLimit {
        /// One layer: {"attention": {...}, "mlp": {...}}.
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        measure: PathBuf,
        #[arg(long = "Ts", value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
        depths: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover G(mu, x) from a black-box measure map by finite differences.
    ExtractG {
        /// identity, counterexample, or stack:<path>
        #[arg(long)]
        map: String,
        #[arg(long)]
        measure: PathBuf,
        /// Comma-separated query point.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
    },
    /// Scan the two oscillating families of the discontinuous counterexample.
    Counterexample {
        #[arg(long, default_value_t = 20)]
        mmax: usize,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite at reduced sizes.
    SelfTest {
        /// Flip the sign of the 1D W1 inside the suite to check that it notices.
        #[arg(long, hide = true)]
        mutate_w1_sign: bool,
    },
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure, Error> {
    io::measure_from_json(&io::read_text(path)?)
}

fn read_stack(path: &Path) -> Result<LayerStack, Error> {
    io::stack_from_json(&io::read_text(path)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Error> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn parse_point(text: &str) -> Result<Array1<f64>, Error> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad coordinate {s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Array1::from)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::W1 { a, b, extended, plan } => {
            let (mu, nu) = (read_measure(&a)?, read_measure(&b)?);
            let value = if extended { w1_extended(&mu, &nu)? } else { w1_matching(&mu, &nu)?.cost };
            println!("{value}");
            if let Some(path) = plan {
                let coupling =
                    if extended { w1_matching(&mu.normalized(), &nu.normalized())? } else { w1_matching(&mu, &nu)? };
                io::write_text(&path, &io::plan_to_json(&coupling)?)?;
            }
        }
        Command::Forward { stack, measure, out } => {
            let image = forward_measure(&read_stack(&stack)?, &read_measure(&measure)?)?;
            io::write_text(&out, &io::measure_to_json(&image)?)?;
        }
        Command::ForwardTokens { stack, tokens, out } => {
            let seq = io::tokens_from_json(&io::read_text(&tokens)?)?;
            let image = forward_tokens(&read_stack(&stack)?, &seq)?;
            io::write_text(&out, &io::tokens_to_json(&image)?)?;
        }
        Command::Flow { stack, measure, steps, integrator, out } => {
            if steps == 0 {
                return Err(Error::InvalidParameters("--T must be positive".into()));
            }
            let v = StackVelocity::new(&read_stack(&stack)?)?;
            let mu = read_measure(&measure)?;
            let traj = match integrator {
                IntegratorArg::Euler => euler_flow(&v, &mu, steps)?,
                IntegratorArg::Rk4 => rk4_flow(&v, &mu, steps)?,
            };
            let mut w = csv_writer(&out)?;
            let mut header = vec!["t".to_string(), "atom_index".to_string()];
            header.extend((1..=mu.dim()).map(|i| format!("x_{i}")));
            header.push("weight".into());
            w.write_record(&header).map_err(csv_err)?;
            for (t, state) in traj.times.iter().zip(&traj.states) {
                for (i, (p, a)) in state.atoms().enumerate() {
                    let mut row = vec![t.to_string(), i.to_string()];
                    row.extend(p.iter().map(|v| v.to_string()));
                    row.push(a.to_string());
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
            w.flush().map_err(csv_err)?;
        }
        Command::DepthLimit { base, measure, depths, out } => {
            let mu = read_measure(&measure)?;
            let layer = io::layer_from_json(&io::read_text(&base)?, mu.dim())?;
            let family = DepthFamily::new(layer.attention, layer.mlp)?;
            let mut w = csv_writer(&out)?;
            w.write_record(["T", "error"]).map_err(csv_err)?;
            for t in depths {
                let err = depth_limit_error(&family, &mu, t)?;
                w.write_record([t.to_string(), err.to_string()]).map_err(csv_err)?;
            }
            w.flush().map_err(csv_err)?;
        }
        Command::ExtractG { map, measure, x, eps } => {
            let mu = read_measure(&measure)?;
            let x = parse_point(&x)?;
            let f: Box<dyn MeasureMap> = match map.as_str() {
                "identity" => Box::new(IdentityMeasureMap { dim: mu.dim() }),
                "counterexample" => Box::new(CounterexampleMap),
                other => match other.strip_prefix("stack:") {
                    Some(path) => Box::new(InducedMeasureMap(std::sync::Arc::new(read_stack(Path::new(path))?))),
                    None => return Err(Error::Format(format!("unknown map {other:?}"))),
                },
            };
            let g = extract_g(f.as_ref(), &mu, x.view(), eps)?;
            println!("g = {}", join(g.value.iter().copied()));
            println!("eps = {}", g.eps);
        }
        Command::Counterexample { mmax, eps, out } => {
            let rows = discontinuity_scan(mmax, eps)?;
            let mut w = csv_writer(&out)?;
            w.write_record(["family", "m", "eps", "w1_to_delta2", "g_value_closed_form", "g_value_extracted"])
                .map_err(csv_err)?;
            for r in rows {
                w.write_record([
                    r.family.name().to_string(),
                    r.m.to_string(),
                    r.eps.to_string(),
                    r.w1_to_delta2.to_string(),
                    r.closed_form.to_string(),
                    r.extracted.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(csv_err)?;
        }
        Command::SelfTest { mutate_w1_sign } => {
            let ok = selftest::run(cli.seed, mutate_w1_sign);
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Unreadable or malformed input is a usage problem; everything else is a
/// domain error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
