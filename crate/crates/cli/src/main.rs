use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use effhrnet::analysis::{
    check_report, format_records, format_table, graph_document, model_costs, published_cost,
    scaling_table, CostCheck, CostReport,
};
use effhrnet::decoder::{decode, decode_multiscale, DecodeParams, ScaleOutput};
use effhrnet::fixture_io::{read_tensor, write_poses, write_tensor};
use effhrnet::network::{build_network, infer};
use effhrnet::scaling::{config_for_phi, extrapolated_config, ScaleConfig, MAX_PHI, MIN_PHI};
use effhrnet::Error;

mod selftest;

const EXIT_USAGE: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_SHAPE: u8 = 4;

#[derive(Parser)]
#[command(name = "effhrnet", version, about = "Scaled pose network: configs, costs, inference and decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Table,
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Print the scaling configuration for one model.
    Describe {
        #[arg(long, allow_hyphen_values = true)]
        phi: i32,
        /// Allow phi outside -4..=0 using the closed-form rules.
        #[arg(long)]
        extrapolate: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        /// Also write the compiled layer graph with per-node costs as JSON.
        #[arg(long, value_name = "PATH")]
        graph_out: Option<PathBuf>,
    },
    /// Parameter and operation counts.
    Costs {
        #[arg(long, allow_hyphen_values = true, conflicts_with = "all", required_unless_present = "all")]
        phi: Option<i32>,
        #[arg(long)]
        all: bool,
        /// Compare against published totals; exit 3 on any breach.
        #[arg(long)]
        check: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Seeded forward pass on a tensor file.
    Infer {
        #[arg(long, allow_hyphen_values = true)]
        phi: i32,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First head output: 17 heatmaps then 17 tags at 1/4 resolution.
        #[arg(long, value_name = "PATH")]
        out_first_head: PathBuf,
        /// Refined heatmaps at 1/2 resolution.
        #[arg(long, value_name = "PATH")]
        out_heatmaps: PathBuf,
        /// Run at a different input size (multiple of 32).
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Group head outputs into poses.
    Decode {
        #[arg(long, allow_hyphen_values = true)]
        phi: i32,
        /// First head tensor; repeat once per scale with --multiscale.
        #[arg(long, value_name = "PATH", required = true)]
        first_head: Vec<PathBuf>,
        /// Refined heatmap tensor; one per --first-head.
        #[arg(long, value_name = "PATH", required = true)]
        heatmaps: Vec<PathBuf>,
        #[arg(long)]
        multiscale: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        params: DecodeArgs,
    },
    /// Run the kernel, scaling and decoding self-checks.
    Selftest,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = DecodeParams::default().nms_window)]
    nms_window: usize,
    #[arg(long, default_value_t = DecodeParams::default().top_k)]
    top_k: usize,
    #[arg(long, default_value_t = DecodeParams::default().threshold)]
    threshold: f32,
    #[arg(long, default_value_t = DecodeParams::default().tag_threshold)]
    tag_threshold: f32,
    /// Disable the quarter-pixel peak refinement.
    #[arg(long)]
    no_refine: bool,
}

impl DecodeArgs {
    fn params(&self) -> DecodeParams {
        DecodeParams {
            nms_window: self.nms_window,
            top_k: self.top_k,
            threshold: self.threshold,
            tag_threshold: self.tag_threshold,
            refine: !self.no_refine,
        }
    }
}

enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn config(phi: i32, extrapolate: bool, resolution: Option<usize>) -> Result<ScaleConfig, Failure> {
    if !extrapolate && !(MIN_PHI..=MAX_PHI).contains(&phi) {
        return Err(usage(format!("phi {phi} outside {MIN_PHI}..={MAX_PHI} (pass --extrapolate to go beyond)")));
    }
    let cfg = if extrapolate { extrapolated_config(phi) } else { config_for_phi(phi) };
    let cfg = cfg.map_err(|e| usage(e.to_string()))?;
    match resolution {
        Some(r) => cfg.with_resolution(r).map_err(|e| usage(e.to_string())),
        None => Ok(cfg),
    }
}

fn describe(phi: i32, extrapolate: bool, format: Format, graph_out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = config(phi, extrapolate, None)?;
    match format {
        Format::Records => print!("{}", format_records(std::slice::from_ref(&cfg))),
        Format::Table => {
            let w = cfg.branch_widths;
            let m = cfg.stage_repeats;
            println!(
                "{:<6} {:>6} {:>8} {:>18} {:>10} {:>5} {:>8}",
                "model", "input", "backbone", "branch widths", "blocks", "tags", "heatmaps"
            );
            println!(
                "{:<6} {:>6} {:>8} {:>18} {:>10} {:>5} {:>8}",
                cfg.model_name(),
                cfg.input_resolution,
                format!("B{}", cfg.phi),
                format!("{}, {}, {}, {}", w[0], w[1], w[2], w[3]),
                format!("{}, {}, {}", m[0], m[1], m[2]),
                cfg.tag_size,
                cfg.heatmap_size
            );
            let b = cfg.backbone;
            println!(
                "backbone multipliers: depth {:.4}, width {:.4}, resolution {:.4}",
                b.depth_mult, b.width_mult, b.resolution_mult
            );
        }
    }
    if let Some(path) = graph_out {
        let doc = graph_document(&build_network(&cfg)?.graph()?)?;
        std::fs::write(path, serde_json::to_string_pretty(&doc).expect("plain data") + "\n").map_err(Error::from)?;
    }
    Ok(())
}

fn costs(phi: Option<i32>, format: Format, check: bool) -> Result<(), Failure> {
    let reports: Vec<CostReport> = match phi {
        Some(p) => {
            config(p, false, None)?;
            vec![model_costs(p)?]
        }
        None => scaling_table()?,
    };
    match format {
        Format::Table => print!("{}", format_table(&reports)),
        Format::Records => print!("{}", format_records(&reports)),
    }
    if check {
        let checks: Vec<CostCheck> = reports
            .iter()
            .filter_map(|r| published_cost(r.phi).map(|t| check_report(r, &t)))
            .collect();
        for c in &checks {
            println!(
                "check {}: params {:+.1}%, MACs {:+.1}%, 2xMACs {:+.1}% -> {}",
                c.model_name,
                100.0 * c.params_rel_err,
                100.0 * c.macs_rel_err,
                100.0 * c.flops_2x_rel_err,
                if c.passed() { "ok" } else { "OUT OF TOLERANCE" }
            );
        }
        let offenders: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.model_name.as_str()).collect();
        if !offenders.is_empty() {
            return Err(Failure::Check(format!("tolerance breach: {}", offenders.join(", "))));
        }
    }
    Ok(())
}

fn run_infer(
    phi: i32,
    input: PathBuf,
    seed: u64,
    out_first: PathBuf,
    out_heatmaps: PathBuf,
    resolution: Option<usize>,
) -> Result<(), Failure> {
    let cfg = config(phi, false, resolution)?;
    let image = read_tensor(&input)?;
    let (first, refined) = infer(&cfg, &image, seed)?;
    write_tensor(&first, &out_first)?;
    write_tensor(&refined, &out_heatmaps)?;
    println!("first head {:?} -> {}", first.dims(), out_first.display());
    println!("heatmaps {:?} -> {}", refined.dims(), out_heatmaps.display());
    Ok(())
}

fn run_decode(
    phi: i32,
    first_head: Vec<PathBuf>,
    heatmaps: Vec<PathBuf>,
    multiscale: bool,
    out: PathBuf,
    resolution: Option<usize>,
    params: DecodeParams,
) -> Result<(), Failure> {
    let cfg = config(phi, false, resolution)?;
    if first_head.len() != heatmaps.len() {
        return Err(usage(format!(
            "{} --first-head but {} --heatmaps",
            first_head.len(),
            heatmaps.len()
        )));
    }
    if !multiscale && first_head.len() != 1 {
        return Err(usage("several scales given; pass --multiscale"));
    }
    if params.nms_window % 2 == 0 || !(0.0..=1.0).contains(&params.threshold) {
        return Err(usage("--nms-window must be odd and --threshold within [0, 1]"));
    }
    let poses = if multiscale {
        let scales = first_head
            .iter()
            .zip(&heatmaps)
            .map(|(f, h)| {
                Ok(ScaleOutput {
                    first_head: read_tensor(f)?,
                    refined_heatmaps: read_tensor(h)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        decode_multiscale(&scales, &cfg, &params)?
    } else {
        decode(&read_tensor(&first_head[0])?, &read_tensor(&heatmaps[0])?, &cfg, &params)?
    };
    write_poses(&poses, &out)?;
    println!("persons: {}", poses.len());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape { .. } | Error::Format { .. } | Error::Parse { .. } | Error::KeypointOutOfBounds { .. } => EXIT_SHAPE,
        Error::Config(_) | Error::UnsupportedPhi { .. } => EXIT_USAGE,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Describe {
            phi,
            extrapolate,
            format,
            graph_out,
        } => describe(phi, extrapolate, format, graph_out),
        Command::Costs { phi, all: _, check, format } => costs(phi, format, check),
        Command::Infer {
            phi,
            input,
            seed,
            out_first_head,
            out_heatmaps,
            resolution,
        } => run_infer(phi, input, seed, out_first_head, out_heatmaps, resolution),
        Command::Decode {
            phi,
            first_head,
            heatmaps,
            multiscale,
            out,
            resolution,
            params,
        } => run_decode(phi, first_head, heatmaps, multiscale, out, resolution, params.params()),
        Command::Selftest => {
            if selftest::run() {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::ValueValidation, msg).exit(),
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
