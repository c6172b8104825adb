use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use repscope::cam::TrainConfig;
use repscope::patterns::{AnalysisConfig, FractionMode};
use repscope::rdm::CorrelationMethod;
use repscope::report::driver::{self, CamRequest, StatsQuery};
use repscope::stats::{Scope, DEFAULT_RESPONSE_BINS};
use repscope::Result;

#[derive(Parser)]
#[command(
    name = "repscope",
    version,
    about = "Activity patterns, RDMs and CAMs for convolutional networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every manifest image through a network and save the tap outputs.
    Forward {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build response vectors, class thresholds and activity patterns.
    Patterns {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value = "top")]
        mode: FractionMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a selectivity or sparsity histogram as TSV.
    Stats(StatsArgs),
    /// Build, rank-transform, correlate or embed RDMs.
    Rdm {
        #[command(subcommand)]
        command: RdmCommand,
    },
    /// Split each class into confidence-ranked groups and write one manifest
    /// per group.
    Subsets {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        confidences: PathBuf,
        #[arg(long, default_value_t = 12)]
        groups: usize,
        #[arg(long, default_value_t = 12)]
        per_group: usize,
        /// Accept classes smaller than groups x per-group.
        #[arg(long)]
        allow_short: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train GAP classifier heads and write per-layer predictions.
    TrainHeads {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Repeatable; defaults to every tap layer.
        #[arg(long)]
        layer: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        grad_tol: f64,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write class activation maps for one image.
    Cam {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        heads: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long)]
        layer: String,
        /// Map this class instead of the top-k predictions.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Also blend each map over the input image.
        #[arg(long)]
        overlay: bool,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a 2-d tensor file (an RDM, a CAM grid) as a PPM heatmap.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        zoom: usize,
        /// Min-max normalize before coloring instead of clamping to [0, 1].
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("query").required(true).args(["per_image", "per_neuron", "neuron"])))]
struct StatsArgs {
    #[arg(long)]
    patterns: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    layer: String,
    /// Activated neurons per image.
    #[arg(long)]
    per_image: bool,
    /// Activating images per neuron.
    #[arg(long)]
    per_neuron: bool,
    /// Response histogram of this neuron; needs --class.
    #[arg(long, requires = "class")]
    neuron: Option<usize>,
    /// Restrict to one class.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RESPONSE_BINS)]
    bins: usize,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RdmCommand {
    /// RDM of one layer's activity patterns.
    Build {
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        layer: String,
        /// Restrict and order images by this manifest (e.g. a subset).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Rank-transform before saving.
        #[arg(long)]
        rank: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank-transform a saved RDM.
    Rank {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation table between RDMs.
    Corr {
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "pearson")]
        method: CorrelationMethod,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classical MDS of RDMs under 1 - correlation.
    Mds {
        #[arg(long, num_args = 3.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "pearson")]
        method: CorrelationMethod,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward { net, manifest, out } => {
            let n = driver::forward(&net, &manifest, &out)?;
            println!("{n} traces written to {}", out.display());
        }
        Command::Patterns {
            traces,
            manifest,
            fraction,
            mode,
            out,
        } => {
            let cfg = AnalysisConfig {
                fraction,
                mode,
                ..Default::default()
            };
            let layers = driver::patterns(&traces, &manifest, &cfg, &out)?;
            println!("patterns for {} written to {}", layers.join(", "), out.display());
        }
        Command::Stats(a) => {
            let scope = a.class.map_or(Scope::All, Scope::Class);
            let query = match (a.per_image, a.per_neuron, a.neuron) {
                (true, _, _) => StatsQuery::PerImage,
                (_, true, _) => StatsQuery::PerNeuron,
                (_, _, Some(neuron)) => StatsQuery::Neuron {
                    neuron,
                    class_id: a.class.expect("clap enforces --class"),
                    n_bins: a.bins,
                },
                _ => unreachable!("clap enforces one query"),
            };
            let tsv = driver::stats(&a.patterns, &a.manifest, &a.layer, query, scope)?.to_tsv();
            match a.out {
                Some(p) => std::fs::write(&p, tsv).map_err(|e| repscope::Error::Io { path: p, source: e })?,
                None => print!("{tsv}"),
            }
        }
        Command::Rdm { command } => match command {
            RdmCommand::Build {
                patterns,
                manifest,
                layer,
                images,
                rank,
                out,
            } => {
                let r = driver::rdm_build(&patterns, &manifest, &layer, images.as_deref(), rank, &out)?;
                println!("{}x{} RDM written to {}", r.len(), r.len(), out.display());
            }
            RdmCommand::Rank { input, out } => {
                driver::rdm_rank(&input, &out)?;
            }
            RdmCommand::Corr { inputs, method, out } => {
                driver::rdm_corr(&inputs, method, &out)?;
            }
            RdmCommand::Mds {
                inputs,
                method,
                dim,
                out,
            } => {
                let fit = driver::rdm_mds(&inputs, method, dim, &out)?;
                println!("fit correlation {fit:.6}");
            }
        },
        Command::Subsets {
            manifest,
            confidences,
            groups,
            per_group,
            allow_short,
            out,
        } => {
            let paths = driver::subsets(&manifest, &confidences, groups, per_group, allow_short, &out)?;
            println!("{} subset manifests written to {}", paths.len(), out.display());
        }
        Command::TrainHeads {
            traces,
            manifest,
            layer,
            lr,
            l2,
            max_iters,
            grad_tol,
            topk,
            out,
        } => {
            let cfg = TrainConfig {
                learning_rate: lr,
                l2,
                max_iters,
                grad_tol,
            };
            let summary = driver::train_heads(&traces, &manifest, &layer, &cfg, topk, &out)?;
            for (layer, acc) in summary.accuracy {
                println!("{layer}\t{acc:.4}");
            }
        }
        Command::Cam {
            traces,
            heads,
            manifest,
            image,
            layer,
            class,
            topk,
            overlay,
            alpha,
            out,
        } => {
            let req = CamRequest {
                image_id: image,
                layer,
                class_id: class,
                topk,
                overlay: overlay.then_some(alpha),
            };
            for p in driver::cam(&traces, &heads, &manifest, &req, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Render {
            input,
            zoom,
            normalize,
            out,
        } => driver::render(&input, zoom, normalize, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = driver::init_thread_pool().and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
