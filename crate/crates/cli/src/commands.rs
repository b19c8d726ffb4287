use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use memxfer::fgat::{self, check_pool_excludes, FgatModel};
use memxfer::graph::{load_events, write_events_csv, TemporalGraph};
use memxfer::metrics::{format_mean_std, MetricsReport};
use memxfer::numerics::Optimizer;
use memxfer::synth::{generate_pair, generate_pool, SynthConfig};
use memxfer::tgn::TgnCheckpoint;
use memxfer::transfer::{
    pretrain_source, run_variant, Sources, Splits, TransferConfig, Variant, VariantRun,
};
use memxfer::transform::{save_transformed, transform as build_transform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::args::{
    GenerateArgs, PlotArgs, SweepArgs, TrainFgatArgs, TrainTgnArgs, TransferArgs, TransformArgs,
};
use crate::config::{parse_floats, parse_seeds, parse_split, Config};
use crate::{write_json, CliError, RunDir};

fn write_csv_graph(g: &TemporalGraph, path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_events_csv(g, std::io::BufWriter::new(file))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn generate(a: &GenerateArgs, config: &Config, run: &mut RunDir) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: a.seed.unwrap_or(config.synth.seed),
        signature_strength: a
            .signature_strength
            .unwrap_or(config.synth.signature_strength),
        ..config.synth.clone()
    };
    let pair = generate_pair(&cfg)?;
    let pool = generate_pool(&cfg, a.pool_size.unwrap_or(config.pool_size.0))?;
    create_dir(&a.out_dir.join("pool"))?;
    write_csv_graph(&pair.source, &a.out_dir.join("source.csv"))?;
    write_csv_graph(&pair.target, &a.out_dir.join("target.csv"))?;
    for g in &pool {
        write_csv_graph(g, &a.out_dir.join("pool").join(format!("{}.csv", g.name())))?;
    }
    write_json(&a.out_dir.join("communities.json"), &pair.mapping)?;
    run.log(&format!(
        "source: {} users, {} items, {} events; target: {} users, {} items, {} events; pool: {} graphs",
        pair.source.n_users(),
        pair.source.n_items(),
        pair.source.len(),
        pair.target.n_users(),
        pair.target.n_items(),
        pair.target.len(),
        pool.len()
    ));
    Ok(())
}

pub fn transform(a: &TransformArgs, run: &mut RunDir) -> Result<(), CliError> {
    let mut g = load_events(&a.input)?;
    if a.min_user_deg > 0 || a.min_item_deg > 0 {
        let before = (g.n_users(), g.n_items(), g.len());
        g = g.filter_min_degree(a.min_user_deg, a.min_item_deg)?;
        run.log(&format!(
            "degree filter kept {}/{} users, {}/{} items, {}/{} events",
            g.n_users(),
            before.0,
            g.n_items(),
            before.1,
            g.len(),
            before.2
        ));
    }
    let tg = build_transform(&g)?;
    save_transformed(&tg, &a.output)?;
    println!(
        "nodes {} (users {}, items {}, features {}); static edges {}; feature edges {}",
        tg.n_nodes(),
        tg.n_users(),
        tg.n_items(),
        tg.n_features(),
        tg.static_graph.n_edges(),
        tg.n_feature_edges()
    );
    run.log(&format!("wrote {}", a.output.display()));
    Ok(())
}

fn prefix(g: TemporalGraph, fraction: f64) -> Result<TemporalGraph, CliError> {
    if fraction == 1.0 {
        Ok(g)
    } else {
        Ok(g.scarcity_subsample(fraction)?)
    }
}

fn write_losses(run: &RunDir, losses: &[f64]) -> Result<PathBuf, CliError> {
    let path = run.join("losses.csv");
    let mut text = String::from("epoch,loss\n");
    for (k, l) in losses.iter().enumerate() {
        text.push_str(&format!("{},{l:.8}\n", k + 1));
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn train_tgn(a: &TrainTgnArgs, config: &Config, run: &mut RunDir) -> Result<(), CliError> {
    let g = prefix(load_events(&a.graph)?, a.train_fraction)?;
    run.log(&format!("training on {} events of {}", g.len(), g.name()));
    let (ckpt, losses) = pretrain_source(&g, &config.tgn, a.epochs, a.seed)?;
    ckpt.save(&a.out)?;
    write_losses(run, &losses)?;
    if let Some(last) = losses.last() {
        run.log(&format!(
            "final loss {last:.4} after {} epochs",
            losses.len()
        ));
    }
    run.log(&format!("wrote {}", a.out.display()));
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn train_fgat(a: &TrainFgatArgs, config: &Config, run: &mut RunDir) -> Result<(), CliError> {
    let files = csv_files(&a.pool)?;
    if files.is_empty() {
        return Err(CliError::Invalid(format!(
            "no event files in {}",
            a.pool.display()
        )));
    }
    let pool = files
        .iter()
        .map(|p| {
            build_transform(&prefix(load_events(p)?, a.train_fraction)?).map_err(CliError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let excluded: Vec<&str> = a.exclude.iter().map(String::as_str).collect();
    check_pool_excludes(&pool, &excluded)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut model = FgatModel::for_pool(config.fgat.clone(), &pool, &mut rng)?;
    let mut opt = Optimizer::new(model.config.optimizer, model.config.lr);
    run.log(&format!(
        "training on a pool of {} graphs for {} epochs",
        pool.len(),
        a.epochs
    ));
    let losses = fgat::train_fgat(&mut model, &mut opt, &pool, a.epochs, &mut rng)?;
    model.save(&a.out)?;
    write_losses(run, &losses)?;
    if let Some(last) = losses.last() {
        run.log(&format!("final loss {last:.4}"));
    }
    run.log(&format!("wrote {}", a.out.display()));
    Ok(())
}

struct Loaded {
    tgn: Option<TgnCheckpoint>,
    fgat: Option<FgatModel>,
}

impl Loaded {
    fn sources(&self) -> Sources<'_> {
        Sources {
            tgn: self.tgn.as_ref(),
            fgat: self.fgat.as_ref(),
        }
    }
}

/// Loads the checkpoints the variants need, warning about unused ones.
fn load_sources(
    variants: &[Variant],
    src: Option<&Path>,
    fgat: Option<&Path>,
    run: &mut RunDir,
) -> Result<Loaded, CliError> {
    let need_tgn = variants.iter().any(|&v| v != Variant::Nt);
    let need_fgat = variants.contains(&Variant::Mintt);
    let tgn = match (need_tgn, src) {
        (true, Some(p)) => Some(TgnCheckpoint::load(p)?),
        (true, None) => return Err(CliError::Invalid("weight transfer needs --src-ckpt".into())),
        (false, Some(_)) => {
            run.log("warning: nt trains from scratch and ignores --src-ckpt");
            None
        }
        (false, None) => None,
    };
    let fgat = match (need_fgat, fgat) {
        (true, Some(p)) => Some(FgatModel::load(p)?),
        (true, None) => return Err(CliError::Invalid("mintt needs --fgat-ckpt".into())),
        (false, Some(_)) => {
            run.log("warning: only mintt uses --fgat-ckpt; ignoring it");
            None
        }
        (false, None) => None,
    };
    Ok(Loaded { tgn, fgat })
}

#[derive(Serialize)]
struct TransferReport<'a> {
    variant: &'a str,
    seed: u64,
    losses: &'a [f64],
    val: &'a MetricsReport,
    test: &'a MetricsReport,
}

fn report(r: &VariantRun, seed: u64) -> TransferReport<'_> {
    TransferReport {
        variant: r.variant.label(),
        seed,
        losses: &r.losses,
        val: &r.val,
        test: &r.test,
    }
}

fn summary_line(label: &str, runs: &[&MetricsReport]) -> String {
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> String {
        let v: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            "-".into()
        } else {
            format_mean_std(&v)
        }
    };
    format!(
        "{label}: AP {} | AUC {} | MRR {} | Recall@20 {}",
        col(&|r| Some(r.ap)),
        col(&|r| Some(r.auc)),
        col(&|r| r.mrr),
        col(&|r| r.recall_at_k)
    )
}

pub fn transfer(a: &TransferArgs, config: &Config, run: &mut RunDir) -> Result<(), CliError> {
    let variant: Variant = a.variant.parse()?;
    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![a.seed],
    };
    let loaded = load_sources(
        &[variant],
        a.src_ckpt.as_deref(),
        a.fgat_ckpt.as_deref(),
        run,
    )?;
    let target = load_events(&a.target)?;
    let splits = Splits::new(&target, parse_split(&a.split)?)?;
    let cfg: TransferConfig = config.transfer(a.nt_epochs, a.ft_epochs);
    let mut runs = Vec::with_capacity(seeds.len());
    println!("{}", MetricsReport::CSV_HEADER);
    for &seed in &seeds {
        let r = run_variant(variant, loaded.sources(), &splits, &cfg, seed)?;
        println!("{}", r.test.csv_row());
        if let Some(m) = &r.mapping {
            run.write_json(&format!("mapping-seed{seed}.json"), m)?;
        }
        runs.push((seed, r));
    }
    let tests: Vec<&MetricsReport> = runs.iter().map(|(_, r)| &r.test).collect();
    if seeds.len() > 1 {
        run.log(&summary_line(variant.label(), &tests));
    }
    let body = if runs.len() == 1 {
        json!(report(&runs[0].1, runs[0].0))
    } else {
        json!(runs.iter().map(|(s, r)| report(r, *s)).collect::<Vec<_>>())
    };
    let out = a.out.clone().unwrap_or_else(|| run.join("report.json"));
    write_json(&out, &body)?;
    run.log(&format!("wrote {}", out.display()));
    Ok(())
}

/// Header of the sweep CSV.
pub const SWEEP_HEADER: &str = "variant,fraction,seed,ap,auc,mrr,recall@20";

pub fn sweep(a: &SweepArgs, config: &Config, run: &mut RunDir) -> Result<(), CliError> {
    let fractions = parse_floats(&a.fractions)?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
        return Err(CliError::Invalid(format!(
            "training fraction {f} not in (0, 0.5]"
        )));
    }
    let variants = a
        .variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = parse_seeds(&a.seeds)?;
    let loaded = load_sources(
        &variants,
        a.src_ckpt.as_deref(),
        a.fgat_ckpt.as_deref(),
        run,
    )?;
    let target = load_events(&a.target)?;
    let cfg = config.transfer(a.nt_epochs, a.ft_epochs);
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
    let mut rows = vec![SWEEP_HEADER.to_string()];
    let mut grouped: BTreeMap<(Variant, String), Vec<MetricsReport>> = BTreeMap::new();
    for &seed in &seeds {
        for &f in &fractions {
            let splits = Splits::scarcity(&target, f)?;
            for &v in &variants {
                let r = run_variant(v, loaded.sources(), &splits, &cfg, seed)?;
                let t = &r.test;
                rows.push(format!(
                    "{},{f},{seed},{:.6},{:.6},{},{}",
                    v.label(),
                    t.ap,
                    t.auc,
                    opt(t.mrr),
                    opt(t.recall_at_k)
                ));
                grouped.entry((v, format!("{f}"))).or_default().push(r.test);
            }
        }
    }
    for ((v, f), reports) in &grouped {
        let refs: Vec<&MetricsReport> = reports.iter().collect();
        run.log(&summary_line(&format!("{} @ {f}", v.label()), &refs));
    }
    let out = a.out.clone().unwrap_or_else(|| run.join("sweep.csv"));
    fs::write(&out, rows.join("\n") + "\n").map_err(|e| CliError::io(&out, e))?;
    run.log(&format!(
        "wrote {} rows to {}",
        rows.len() - 1,
        out.display()
    ));
    Ok(())
}

/// Wide per-fraction table of mean and sample std of one metric, one column
/// pair per variant, fractions in descending order.
pub fn plot_csv(a: &PlotArgs, run: &mut RunDir) -> Result<(), CliError> {
    let mut rdr = csv::Reader::from_path(&a.input).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(&a.input, io),
        other => CliError::Invalid(format!("{}: {other:?}", a.input.display())),
    })?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Invalid(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Invalid(format!(
                "column {name:?} missing from {}",
                a.input.display()
            ))
        })
    };
    let (vi, fi, mi) = (col("variant")?, col("fraction")?, col(&a.metric)?);
    let mut variants: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut fractions: Vec<(f64, String)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Invalid(e.to_string()))?;
        let (v, f, m) = (&rec[vi], &rec[fi], &rec[mi]);
        if m.is_empty() {
            continue;
        }
        let x: f64 = m
            .parse()
            .map_err(|_| CliError::Invalid(format!("bad {} value {m:?}", a.metric)))?;
        let fv: f64 = f
            .parse()
            .map_err(|_| CliError::Invalid(format!("bad fraction {f:?}")))?;
        if !variants.iter().any(|s| s == v) {
            variants.push(v.to_string());
        }
        if !fractions.iter().any(|(_, s)| s == f) {
            fractions.push((fv, f.to_string()));
        }
        cells
            .entry((v.to_string(), f.to_string()))
            .or_default()
            .push(x);
    }
    fractions.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = String::from("fraction");
    for v in &variants {
        out.push_str(&format!(",{v}_mean,{v}_std"));
    }
    out.push('\n');
    for (_, f) in &fractions {
        out.push_str(f);
        for v in &variants {
            match cells.get(&(v.clone(), f.clone())) {
                Some(xs) => {
                    let (m, s) = memxfer::metrics::mean_std(xs);
                    out.push_str(&format!(",{m:.6},{s:.6}"));
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    fs::write(&a.out, out).map_err(|e| CliError::io(&a.out, e))?;
    run.log(&format!(
        "wrote {} curves over {} fractions to {}",
        variants.len(),
        fractions.len(),
        a.out.display()
    ));
    Ok(())
}
