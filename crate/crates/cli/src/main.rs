use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spgp::autodiff::gradcheck::check_param_gradients;
use spgp::graph::{parse_native, parse_tudataset, write_native, Dataset, Graph, Label};
use spgp::model::{evaluate, prepare_graph, train, SpgpModel, TrainConfig};
use spgp::pooling::{complexity_report, ComplexityMethod};
use spgp::structure::{
    extract_all, read_cache, structure_stats_with_prototypes, write_cache, PrototypeKind, PrototypeSet,
};
use spgp::synth::{diversity_csv, diversity_experiment, gen_er, planted_motif_task, GenSpec, GraphModel};

#[derive(Parser)]
#[command(name = "spgp", version, about = "Structure-prototype guided graph pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct SeedArg {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Extract structure prototypes and write a cache file.
    Preprocess {
        /// TUDataset directory or native dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "bcc,clique")]
        kinds: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Cross-validated training; writes the checkpoint of the best fold.
    Train {
        /// TOML or JSON configuration; missing fields take default values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated fold indices (all folds when omitted).
        #[arg(long)]
        folds: Option<String>,
        /// Where to write the JSON run report (stdout when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Score spread of prototype and k-hop scorers on rewired regular graphs.
    Diversity {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        degree: usize,
        #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
        fractions: String,
        #[arg(long, default_value_t = 100)]
        graphs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Operation and space counts of both scoring methods.
    Complexity {
        /// Comma-separated node counts.
        #[arg(long, default_value = "100,1000,10000,100000")]
        n_range: String,
        #[arg(long, default_value_t = 64)]
        dim: u64,
        #[arg(long, default_value_t = 2)]
        kinds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write the planted-motif dataset in the native format.
    MotifTask {
        #[arg(long, default_value_t = 200)]
        graphs: usize,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Compare model gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        trials: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = if path.is_dir() {
        parse_tudataset(path)
    } else {
        parse_native(path)
    };
    ds.with_context(|| format!("reading dataset {}", path.display()))
}

fn load_cache(path: Option<&Path>, dataset: &Dataset) -> Result<Option<Vec<Vec<PrototypeSet>>>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let (_, protos) = read_cache(path).with_context(|| format!("reading cache {}", path.display()))?;
    if protos.len() != dataset.len() {
        bail!("cache has {} graphs, dataset has {}", protos.len(), dataset.len());
    }
    Ok(Some(protos))
}

fn parse_kinds(s: &str) -> Result<Vec<PrototypeKind>> {
    let mut kinds: Vec<PrototypeKind> = s.split(',').map(str::parse).collect::<spgp::Result<_>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| anyhow::anyhow!("invalid {what} `{x}`")))
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).context("parsing JSON config")?
    } else {
        toml::from_str(&text).context("parsing TOML config")?
    };
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gradcheck(trials: u64, step: f64, tolerance: f64, seed: u64) -> Result<bool> {
    let mut all_ok = true;
    for trial in 0..trials {
        let s = seed.wrapping_add(trial);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = rng.gen_range(8..14);
        let background = gen_er(n, 4.0, s)?;
        let x = ndarray::Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let graph = Graph::new(n, background.edges(), x, Label::Class(0))?;
        let config = TrainConfig {
            hidden_dim: 4,
            pooling_ratio: 0.7,
            ..TrainConfig::default()
        };
        let prepared = prepare_graph(&graph, &extract_all(&graph, &config.prototype_kinds), &config.prototype_kinds)?;
        let (model, params) = SpgpModel::new(&config, prepared.features.ncols(), 2, s)?;
        let report = check_param_gradients(&params, step, |t, p| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            model.forward(t, p, &prepared, false, &mut r)?.softmax_cross_entropy(&[0])
        })?;
        let ok = report.max_rel_err <= tolerance;
        all_ok &= ok;
        println!(
            "trial {trial} seed {s}: max relative error {:.3e} {}",
            report.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Preprocess { data, kinds, out, .. } => {
            let dataset = load_dataset(&data)?;
            let kinds = parse_kinds(&kinds)?;
            let (stats, protos) = structure_stats_with_prototypes(&dataset, &kinds)?;
            write_cache(&out, &kinds, &protos)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train {
            config,
            data,
            cache,
            out,
            folds,
            report,
            seed,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let dataset = load_dataset(&data)?;
            let protos = load_cache(cache.as_deref(), &dataset)?;
            let folds = folds.map(|f| parse_list::<usize>(&f, "fold")).transpose()?;
            let (run, trained) = train(&config, &dataset, protos.as_deref(), folds.as_deref())?;
            let best = trained
                .iter()
                .max_by(|a, b| a.report.val_metric.total_cmp(&b.report.val_metric).then(b.report.fold.cmp(&a.report.fold)))
                .context("no folds were trained")?;
            best.model.save(&best.params, &out)?;
            let mut text = serde_json::to_string_pretty(&run)?;
            text.push('\n');
            emit(report.as_deref(), &text)?;
            eprintln!(
                "mean {:.4} +- {:.4} over {} folds; checkpoint of fold {} written to {}",
                run.mean,
                run.std,
                run.folds.len(),
                best.report.fold,
                out.display()
            );
        }
        Command::Eval { ckpt, data, cache, .. } => {
            let (model, params) = SpgpModel::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let dataset = load_dataset(&data)?;
            let protos = load_cache(cache.as_deref(), &dataset)?;
            let eval = evaluate(&model, &params, &dataset, protos.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Diversity {
            n,
            degree,
            fractions,
            graphs,
            out,
            seed,
        } => {
            let fractions = parse_list::<f64>(&fractions, "fraction")?;
            let spec = GenSpec {
                model: GraphModel::Regular,
                n,
                param: degree as f64,
                seed: seed.seed,
            };
            let results = diversity_experiment(spec, &fractions, graphs, seed.seed)?;
            emit(out.as_deref(), &diversity_csv(&results))?;
        }
        Command::Complexity {
            n_range,
            dim,
            kinds,
            out,
            ..
        } => {
            let mut csv = String::from("n,method,operations,space\n");
            for n in parse_list::<u64>(&n_range, "node count")? {
                for (name, method) in [
                    ("spgp", ComplexityMethod::Spgp),
                    ("structure_learning", ComplexityMethod::StructureLearning),
                ] {
                    let (ops, space) = complexity_report(n, dim, kinds, method)?;
                    let _ = writeln!(csv, "{n},{name},{ops},{space}");
                }
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::MotifTask { graphs, n, out, seed } => {
            let dataset = planted_motif_task(graphs, n, seed.seed)?;
            write_native(&dataset, &out)?;
        }
        Command::Gradcheck {
            trials,
            step,
            tolerance,
            seed,
        } => return gradcheck(trials, step, tolerance, seed.seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
