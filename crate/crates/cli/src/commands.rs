use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mosaic_core::config::{load_config, Config};
use mosaic_core::dataio::{
    load_model, load_pool, load_tcep, pool_manifest, read_pair_file, save_model, save_pool,
};
use mosaic_core::experiment::{pseudo_benchmark, run_artificial, run_tcep};
use mosaic_core::indep::DindepKind;
use mosaic_core::infer::{infer_rule1, infer_rule2, infer_thresholded, DirectionDecision};
use mosaic_core::mosaic::{decide_all, decide_new_pair, random_training, TesseraPool};
use mosaic_core::rng::derive_seed;
use mosaic_core::synth::{check_rank, export_pairs, generate_pairs};
use mosaic_core::tcl::fit_tessera;
use mosaic_core::{CausalPair, Error, Result, Verdict};

use crate::{Cli, Command, DatasetArgs, Global};

pub const EXIT_OK: u8 = 0;
pub const EXIT_UNDECIDED: u8 = 2;

const POOL_FILE: &str = "pool.bin";

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Cause(_) => EXIT_OK,
        Verdict::Inconclusive => EXIT_UNDECIDED,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn out_dir(g: &Global) -> Result<Option<PathBuf>> {
    let Some(dir) = &g.out else { return Ok(None) };
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(Some(dir.clone()))
}

fn parse_measure(s: &str) -> Result<DindepKind> {
    match s {
        "dcor" => Ok(DindepKind::DcorComplement),
        "hsic" => Ok(DindepKind::HsicPValue),
        _ => Err(Error::Usage(format!("unknown measure {s:?}; use dcor or hsic"))),
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    if let Some(j) = g.jobs {
        if j == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    let mut cfg = match &g.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
        cfg.ensemble.seed = seed;
    }
    match &cli.command {
        Command::Gen { pairs } => gen(&cfg, g, *pairs),
        Command::Train { data } => train(&cfg, g, data),
        Command::Infer {
            data,
            model,
            pool,
            rule,
            measure,
        } => infer(&cfg, g, data, model.as_deref(), pool.as_deref(), rule, measure),
        Command::ExperimentArtificial => experiment_artificial(&cfg, g),
        Command::ExperimentTcep(d) => experiment_tcep(&cfg, g, d),
        Command::Ensemble(d) => ensemble(&cfg, g, d),
    }
}

fn gen(cfg: &Config, g: &Global, n: usize) -> Result<u8> {
    if n == 0 {
        return Err(Error::Usage("--pairs must be at least 1".into()));
    }
    let seed = g.seed.unwrap_or(0);
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("pairs"));
    let (mixing_seed, source_seed) = (derive_seed(seed, &[0]), derive_seed(seed, &[1]));
    let net = cfg.synth.mixing(mixing_seed)?;
    let spec = cfg.synth.sources(n, source_seed);
    if n >= 3 && !check_rank(&spec) {
        warn!("source scales fail the rank condition; the pairs are not analyzable together");
    }
    let pairs: Vec<CausalPair> = generate_pairs(&net, &spec, cfg.synth.n_per_pair, derive_seed(seed, &[2]))?
        .iter()
        .map(|p| p.to_causal_pair())
        .collect();
    export_pairs(&dir, &pairs, &spec.scales, mixing_seed, source_seed)?;
    println!("wrote {n} pairs to {}", dir.display());
    Ok(EXIT_OK)
}

fn train(cfg: &Config, g: &Global, data: &Path) -> Result<u8> {
    let ds = load_tcep(data)?;
    let aligned = ds
        .pairs()
        .iter()
        .map(CausalPair::aligned)
        .collect::<Result<Vec<_>>>()?;
    info!("training on {} pairs", aligned.len());
    let model = fit_tessera("model", &aligned, &cfg.mlp, &cfg.train)?;
    let path = g.out.clone().unwrap_or_else(|| PathBuf::from("model.bin"));
    save_model(&path, &model)?;
    println!("train_accuracy\t{:.6}", model.train_accuracy());
    println!("model\t{}", path.display());
    Ok(EXIT_OK)
}

/// Decision of a single model on one pair.
pub fn model_decision(
    model: &mosaic_core::tcl::TclModel,
    pair: &CausalPair,
    rule: &str,
    measure: DindepKind,
    alpha: f64,
) -> Result<DirectionDecision> {
    let c = model.hica_both(&pair.points)?;
    match rule {
        "rule1" => infer_rule1(&c, measure),
        "rule2" => infer_rule2(&pair.points, &c, measure),
        "thresholded" => infer_thresholded(&pair.points, &c, alpha),
        _ => Err(Error::Usage(format!("unknown rule {rule:?}; use rule1, rule2 or thresholded"))),
    }
}

fn infer(
    cfg: &Config,
    g: &Global,
    data: &Path,
    model: Option<&Path>,
    pool: Option<&Path>,
    rule: &str,
    measure: &str,
) -> Result<u8> {
    let pair = read_pair_file(data)?;
    pair.validate()?;
    let (line, verdict) = if let Some(path) = model {
        let model = load_model(path)?;
        let d = model_decision(&model, &pair, rule, parse_measure(measure)?, cfg.experiment.alpha)?;
        (d.results_line(&pair.id), d.verdict)
    } else {
        let path = pool.expect("clap requires --model or --pool");
        let pool = load_pool(path)?;
        let e = &cfg.ensemble;
        let s = decide_new_pair(&pool, &pair.id, &pair.points, e.thre_t, e.thre_v, e.scoring, e.measure)?;
        if s.empty_pool {
            warn!("no model passes the thresholds for this pair");
        }
        (
            format!("{}\tmosaic\t{}\t{:.6}\ttesserae={}", s.pair_id, s.verdict, s.score, s.tesserae.len()),
            s.verdict,
        )
    };
    println!("{line}");
    if let Some(out) = &g.out {
        write(out, &format!("{line}\n"))?;
    }
    Ok(verdict_code(verdict))
}

fn experiment_artificial(cfg: &Config, g: &Global) -> Result<u8> {
    let seed = g.seed.unwrap_or(0);
    let report = run_artificial(&cfg.synth, &cfg.mlp, &cfg.train, &cfg.experiment, seed, &cfg.to_toml())?;
    print!("{}", report.render());
    if let Some(dir) = out_dir(g)? {
        write(&dir.join("report.tsv"), &report.render())?;
        write(&dir.join("plot.tsv"), &report.plot_data())?;
    }
    Ok(EXIT_OK)
}

struct Dataset {
    pairs: Vec<CausalPair>,
    hash: Option<String>,
    excluded: usize,
}

fn dataset(cfg: &Config, d: &DatasetArgs) -> Result<Dataset> {
    if let Some(n) = d.pseudo {
        let pairs = pseudo_benchmark(&cfg.synth, n, n.div_ceil(4), cfg.ensemble.seed)?;
        return Ok(Dataset {
            pairs,
            hash: None,
            excluded: 0,
        });
    }
    let Some(dir) = &d.dir else {
        return Err(Error::Usage(
            "no benchmark directory given. Download the cause-effect pairs collection, unpack it so that \
             pairmeta.txt and pair0001.txt ... share one directory, and pass that directory; \
             or run on a synthetic stand-in with --pseudo 12"
                .into(),
        ));
    };
    let ds = load_tcep(dir)?;
    info!("{} pairs, {} multivariate excluded, sha256 {}", ds.records.len(), ds.excluded(), ds.sha256);
    Ok(Dataset {
        pairs: ds.pairs(),
        excluded: ds.excluded(),
        hash: Some(ds.sha256),
    })
}

fn save_pool_files(dir: &Path, pool: &TesseraPool) -> Result<()> {
    save_pool(&dir.join(POOL_FILE), pool)?;
    write(&dir.join("manifest.tsv"), &pool_manifest(pool, POOL_FILE))
}

fn experiment_tcep(cfg: &Config, g: &Global, d: &DatasetArgs) -> Result<u8> {
    let ds = dataset(cfg, d)?;
    let (report, pool) = run_tcep(&ds.pairs, &cfg.ensemble, ds.hash, ds.excluded, &cfg.to_toml())?;
    print!("{}", report.render(&pool));
    if let Some(dir) = out_dir(g)? {
        write(&dir.join("report.tsv"), &report.render(&pool))?;
        save_pool_files(&dir, &pool)?;
    }
    Ok(EXIT_OK)
}

fn ensemble(cfg: &Config, g: &Global, d: &DatasetArgs) -> Result<u8> {
    let ds = dataset(cfg, d)?;
    let e = &cfg.ensemble;
    let entries = random_training(&ds.pairs, e)?;
    let pool = TesseraPool::evaluate(&ds.pairs, entries, e.measure)?;
    let mut text = String::from("pair_id\ttruth\tdecision\tscore\ttesserae\n");
    for (k, s) in decide_all(&pool, e.thre_t, e.thre_v, e.scoring).iter().enumerate() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\n",
            s.pair_id,
            pool.truth[k],
            s.verdict,
            s.score,
            s.tesserae.len()
        ));
    }
    print!("{text}");
    if let Some(dir) = out_dir(g)? {
        write(&dir.join("decisions.tsv"), &text)?;
        save_pool_files(&dir, &pool)?;
    }
    Ok(EXIT_OK)
}
