use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fuseplan_core::optimizer::{solve_p1, solve_p2, sweep, Constraint, PlanResult};
use fuseplan_core::report::{self, ExportedSetting};
use fuseplan_core::{build_graph, parse_model, FusionGraph, NetworkModel};

mod verify;

const EXIT_INPUT: u8 = 1;
const EXIT_NO_SOLUTION: u8 = 2;

#[derive(Parser)]
#[command(
    name = "fuseplan",
    version,
    about = "Plan multi-stage layer fusion for CNN inference under RAM and compute limits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single constraint.
    Plan {
        model: PathBuf,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[arg(long, value_enum, default_value_t = PlanFormat::Json)]
        format: PlanFormat,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve a grid of constraints and print a table with baseline rows.
    Sweep {
        model: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = TableFormat::Md)]
        format: TableFormat,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the planner against the exhaustive oracle and the reference executor.
    Verify {
        #[arg(required_unless_present = "random", conflicts_with = "random")]
        model: Option<PathBuf>,
        /// Number of random chains to check.
        #[arg(long)]
        random: Option<u64>,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        /// First seed of the random corpus.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        element_bytes: Option<u32>,
    },
    /// Write the chosen fusion setting as JSON.
    Export {
        model: PathBuf,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConstraintArgs {
    /// Minimize peak RAM with overhead factor at most F (`inf` for none).
    #[arg(long, value_name = "F")]
    p1: Option<String>,
    /// Minimize MACs with peak RAM at most P, e.g. `64kB` (`inf` for none).
    #[arg(long, value_name = "P")]
    p2: Option<String>,
}

impl ConstraintArgs {
    fn parse(&self) -> Result<Constraint> {
        Ok(match (&self.p1, &self.p2) {
            (Some(f), _) => Constraint::MaxOverheadFactor(report::parse_factor_limit(f)?),
            (_, Some(p)) => Constraint::MaxPeakRam(report::parse_ram_limit(p)?),
            _ => unreachable!("clap enforces one constraint"),
        })
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct GridArgs {
    /// Comma-separated overhead caps, e.g. `1.1,1.3,inf`.
    #[arg(long, value_name = "LIST")]
    p1_grid: Option<String>,
    /// Comma-separated RAM caps, e.g. `16kB,32kB,64kB`.
    #[arg(long, value_name = "LIST")]
    p2_grid: Option<String>,
}

#[derive(Args)]
struct CommonArgs {
    /// Override the model's bytes per tensor element.
    #[arg(long)]
    element_bytes: Option<u32>,
    /// Write the annotated fusion graph as JSON.
    #[arg(long, value_name = "PATH")]
    graph_dump: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanFormat {
    Json,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Md,
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Plan {
            model,
            constraint,
            format,
            common,
        } => {
            let constraint = constraint.parse()?;
            let (model, graph) = load(&model, &common)?;
            let result = solve(&graph, constraint);
            match format {
                PlanFormat::Json => {
                    let doc = report::plan_json(&model.name, &constraint, result.as_ref());
                    println!("{}", serde_json::to_string_pretty(&doc)?);
                }
                PlanFormat::Md => print!(
                    "{}",
                    report::render_plan_markdown(&model.name, &constraint, result.as_ref())
                ),
            }
            if result.is_none() {
                eprintln!(
                    "no solution satisfies {}",
                    report::constraint_label(&constraint)
                );
                return Ok(EXIT_NO_SOLUTION);
            }
            Ok(0)
        }
        Command::Sweep {
            model,
            grid,
            format,
            common,
        } => {
            let constraints = match (&grid.p1_grid, &grid.p2_grid) {
                (Some(g), _) => report::parse_grid(g, true)?,
                (_, Some(g)) => report::parse_grid(g, false)?,
                _ => unreachable!("clap enforces one grid"),
            };
            let (model, graph) = load(&model, &common)?;
            let rows = report::sweep_rows(&graph, &sweep(&graph, &constraints))?;
            match format {
                TableFormat::Md => print!("{}", report::render_markdown(&model.name, &rows)),
                TableFormat::Csv => print!("{}", report::render_csv(&rows)),
                TableFormat::Json => println!("{}", report::render_json(&model.name, &rows)),
            }
            Ok(0)
        }
        Command::Verify {
            model,
            random,
            depth,
            seed,
            element_bytes,
        } => match (model, random) {
            (Some(path), _) => {
                let model = load_model(&path, element_bytes)?;
                verify::verify_model(&model)
            }
            (None, Some(count)) => verify::verify_random(count, depth, seed),
            (None, None) => unreachable!("clap requires a model or --random"),
        },
        Command::Export {
            model,
            constraint,
            out,
            common,
        } => {
            let constraint = constraint.parse()?;
            let (model, graph) = load(&model, &common)?;
            let Some(result) = solve(&graph, constraint) else {
                eprintln!(
                    "no solution satisfies {}",
                    report::constraint_label(&constraint)
                );
                return Ok(EXIT_NO_SOLUTION);
            };
            let doc = ExportedSetting::new(&model.name, &result);
            let text = serde_json::to_string_pretty(&doc)? + "\n";
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            Ok(0)
        }
    }
}

fn solve(graph: &FusionGraph, constraint: Constraint) -> Option<PlanResult> {
    match constraint {
        Constraint::MaxOverheadFactor(f) => solve_p1(graph, f),
        Constraint::MaxPeakRam(p) => solve_p2(graph, p),
    }
}

fn load_model(path: &Path, element_bytes: Option<u32>) -> Result<NetworkModel> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model = parse_model(&text).with_context(|| format!("parsing {}", path.display()))?;
    match element_bytes {
        None => Ok(model),
        Some(eb) => Ok(NetworkModel::new(
            model.name,
            model.input_shape,
            model.layers,
            eb,
        )?),
    }
}

fn load(path: &Path, common: &CommonArgs) -> Result<(NetworkModel, FusionGraph)> {
    let model = load_model(path, common.element_bytes)?;
    let graph = build_graph(&model)?;
    if let Some(dump) = &common.graph_dump {
        let text = serde_json::to_string_pretty(&graph.to_json())? + "\n";
        std::fs::write(dump, text).with_context(|| format!("writing {}", dump.display()))?;
    }
    Ok((model, graph))
}
