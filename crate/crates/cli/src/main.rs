use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::{BaselineInputs, BaselineKind, Classify, CmdResult};
use config::{Config, Overrides};

#[derive(Parser, Debug)]
#[command(name = "locmap")]
#[command(about = "Build location maps and trajectories from a corpus of narratives")]
#[command(version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Chat-completions endpoint URL
    #[arg(long, global = true)]
    endpoint: Option<String>,

    #[arg(long, global = true)]
    model_id: Option<String>,

    /// Maximum number of requests in flight
    #[arg(long, global = true)]
    concurrency: Option<usize>,

    /// Prompt wording: holocaust or lake_district
    #[arg(long, global = true)]
    profile: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Serve model responses only from this store
    #[arg(long, global = true)]
    replay_dir: Option<PathBuf>,

    /// Store fresh model responses here
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    d_max: Option<f64>,

    #[arg(long, global = true)]
    type_penalty: Option<f64>,

    #[arg(long, global = true)]
    graph_cap: Option<f64>,

    /// Hide map nodes with a lower degree
    #[arg(long, global = true)]
    min_degree: Option<usize>,

    /// Keep transitions seen in at least this many documents
    #[arg(long, global = true)]
    min_docs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract a location graph and a trajectory from every document
    Extract {
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Merge per-document graphs into one sparsified map
    Merge {
        /// Directory written by `extract`
        extract_dir: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// JSON list of name groups that must be merged
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Proofed alias dictionary to use instead of asking the model
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Rename extracted trajectories onto a merged map
    Trajectories {
        extract_dir: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        aliases: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Score trajectories against reference sequences
    Evaluate {
        pred_dir: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// deterministic or model
        #[arg(long)]
        alignment: Option<String>,
    },
    /// Score a map's edges against a reference map
    EvaluateMap {
        map: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Gazetteer CSV used to normalize the map and, without --reference,
        /// to build the reference
        #[arg(long)]
        gis: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Build a reference map from a gazetteer CSV
    Refmap {
        gis: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Attach each child to a random parent instead of the nearest
        #[arg(long)]
        random: bool,
    },
    /// Produce baseline trajectories
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// JSON object mapping phrases to entity labels
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        /// Length of random trajectories; defaults to the reference length
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Pairwise trajectory distances over a map
    Similarity {
        map: PathBuf,
        traj_dir: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// weighted_edit or dtw
        #[arg(long)]
        measure: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Count transitions shared by several documents
    Transitions {
        traj_dir: PathBuf,
        /// Map used to look up location types for the filter
        #[arg(long)]
        map: Option<PathBuf>,
        /// none, holocaust, or comma-separated type labels
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Export a map, optionally with one trajectory drawn over it
    Visualize {
        map: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// dot, graphml or json
        #[arg(long)]
        format: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run every stage
    Pipeline {
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
}

fn load_config(global: &GlobalArgs) -> CmdResult<Config> {
    let mut cfg = match &global.config {
        Some(path) => Config::load(path).config()?,
        None => Config::default(),
    };
    cfg.apply(Overrides {
        endpoint: global.endpoint.clone(),
        model_id: global.model_id.clone(),
        concurrency: global.concurrency,
        profile: global.profile.clone(),
        seed: global.seed,
        replay_dir: global.replay_dir.clone(),
        cache_dir: global.cache_dir.clone(),
        d_max: global.d_max,
        type_penalty: global.type_penalty,
        graph_cap: global.graph_cap,
        min_degree: global.min_degree,
        min_docs: global.min_docs,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Evaluate { alignment: Some(a), .. } => cfg.evaluation.alignment = a.clone(),
        Command::Similarity { measure, top_k, .. } => {
            if let Some(m) = measure {
                cfg.similarity.measure = m.clone();
            }
            if let Some(k) = top_k {
                cfg.similarity.top_k = *k;
            }
        }
        Command::Visualize { format: Some(f), .. } => cfg.viz.format = f.clone(),
        _ => {}
    }
    cfg.validate().config()?;

    match cli.command {
        Command::Extract { corpus, out } => commands::extract(&cfg, &corpus, &out).map(drop),
        Command::Merge { extract_dir, out, overrides, aliases } => {
            commands::merge(&cfg, &extract_dir, &out, overrides.as_deref(), aliases.as_deref()).map(drop)
        }
        Command::Trajectories { extract_dir, map, aliases, out } => {
            let map = commands::load_map(&map)?;
            let aliases = commands::load_aliases(&aliases)?;
            commands::trajectories(&extract_dir, &map, &aliases, &out).map(drop)
        }
        Command::Evaluate { pred_dir, refs, out, .. } => {
            let preds = commands::read_trajectories(&pred_dir)?;
            let refs = commands::read_refs(&refs)?;
            commands::evaluate(&cfg, &preds, &refs, &out).map(drop)
        }
        Command::EvaluateMap { map, reference, gis, out } => {
            commands::evaluate_map(&map, reference.as_deref(), gis.as_deref(), out.as_deref())
        }
        Command::Refmap { gis, out, random } => commands::refmap(&gis, &out, random.then_some(cfg.seed)),
        Command::Baseline { kind, refs, map, corpus, gazetteer, length, out } => {
            let inputs = BaselineInputs {
                refs: refs.as_deref(),
                map: map.as_deref(),
                corpus: corpus.as_deref(),
                gazetteer: gazetteer.as_deref(),
                length,
            };
            commands::baseline(&cfg, kind, inputs, &out)
        }
        Command::Similarity { map, traj_dir, out, .. } => {
            let map = commands::load_map(&map)?;
            let trajs = commands::read_trajectories(&traj_dir)?;
            commands::similarity(&cfg, &map, &trajs, &out)
        }
        Command::Transitions { traj_dir, map, filter, out } => {
            let map = map.as_deref().map(commands::load_map).transpose()?;
            let trajs = commands::read_trajectories(&traj_dir)?;
            commands::transitions(&cfg, &trajs, map.as_ref(), filter.as_deref(), &out)
        }
        Command::Visualize { map, trajectory, out, .. } => {
            let map = commands::load_map(&map)?;
            let trajectory = trajectory.as_deref().map(commands::load_trajectory).transpose()?;
            commands::visualize(&map, trajectory.as_ref(), cfg.viz_format().config()?, cfg.viz.min_degree, &out)
        }
        Command::Pipeline { corpus, out, refs, aliases } => {
            commands::pipeline(&cfg, &corpus, &out, refs.as_deref(), aliases.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(fail) => {
            eprintln!("error: {fail}");
            ExitCode::from(fail.code)
        }
    }
}
