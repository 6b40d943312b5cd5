//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use kgcn_core::graph::{
    community_features, complete_graph, cycle_graph, estimate_curvature, gen_balanced_tree, gen_geometric_graph,
    gen_sbm, load_graph, make_split, make_split_fixed, path_graph, star_graph, write_edges, write_features,
    write_labels, GeometricKind, Graph,
};
use kgcn_core::manifold::set_add_sign_fault;
use kgcn_core::model::{Family, ModelConfig};
use kgcn_core::train::{kappa_sweep, linspace, train_distortion, train_nodeclass, RunMetrics};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{resolve, Task};
use crate::output::{ensure_dir, write_atomic, write_json, MetricsFile};
use crate::selftest::{run_all, SuiteReport};
use crate::{
    Command, CurvatureArgs, DistortionArgs, GraphKind, NodeclassArgs, SelftestArgs, SelftestFailed, SweepArgs,
    SynthArgs,
};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Distortion(a) => distortion(&a),
        Command::Nodeclass(a) => nodeclass(&a),
        Command::Curvature(a) => curvature(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Selftest(a) => selftest(&a),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| UsageError(format!("missing required flag --{flag}")).into())
}

fn geometric_radius(kind: GeometricKind, n: usize, mean_degree: f64) -> Result<f64> {
    let others = n.saturating_sub(1) as f64;
    if !(mean_degree > 0.0 && mean_degree < others) {
        return Err(UsageError(format!("mean degree {mean_degree} must lie in (0, {others})")).into());
    }
    Ok(match kind {
        GeometricKind::Sphere => (1.0 - 2.0 * mean_degree / others).acos(),
        GeometricKind::Torus => (mean_degree / (std::f64::consts::PI * others)).sqrt(),
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let g = match a.kind {
        GraphKind::Tree => gen_balanced_tree(a.depth, a.branching),
        GraphKind::Path => path_graph(a.n),
        GraphKind::Cycle => cycle_graph(a.n),
        GraphKind::Complete => complete_graph(a.n),
        GraphKind::Star => star_graph(a.n),
        GraphKind::Torus | GraphKind::Sphere => {
            let kind = if a.kind == GraphKind::Torus { GeometricKind::Torus } else { GeometricKind::Sphere };
            let radius = match (a.radius, a.mean_degree) {
                (Some(r), _) => r,
                (None, Some(d)) => geometric_radius(kind, a.n, d)?,
                (None, None) => return Err(UsageError("geometric graphs need --radius or --mean-degree".into()).into()),
            };
            gen_geometric_graph(kind, a.n, radius, &mut rng)
        }
        GraphKind::Sbm => {
            let g = gen_sbm(&a.sizes, a.p_in, a.p_out, &mut rng);
            let labels = g.labels().context("block model without labels")?.to_vec();
            let x = community_features(&labels, a.feature_dim, a.noise, &mut rng);
            g.with_features(x)?
        }
    };
    ensure_dir(&a.out)?;
    write_atomic(&a.out.join("edges.tsv"), write_edges(&g).as_bytes())?;
    if let Some(x) = g.features() {
        write_atomic(&a.out.join("features.csv"), write_features(x).as_bytes())?;
    }
    if let Some(l) = g.labels() {
        write_atomic(&a.out.join("labels.csv"), write_labels(l).as_bytes())?;
    }
    println!("{} nodes, {} edges -> {}", g.n(), g.num_edges(), a.out.display());
    Ok(())
}

/// Writes `metrics.json` and `history.csv`; the history lives only in the CSV.
fn write_run(out: &Path, cfg: &ModelConfig, mut m: RunMetrics, started: Instant) -> Result<RunMetrics> {
    ensure_dir(out)?;
    write_atomic(&out.join("history.csv"), m.history_csv().as_bytes())?;
    let history = std::mem::take(&mut m.history);
    let file = MetricsFile {
        config: cfg,
        metrics: &m,
        kappas: &m.final_kappas,
        seed: cfg.seed,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("metrics.json"), &file)?;
    m.history = history;
    Ok(m)
}

fn distortion(a: &DistortionArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(Task::Distortion, &a.model, Family::Hyperbolic)?;
    let edges = required(&a.edges, "edges")?;
    let out = required(&a.out, "out")?;
    let g = load_graph(edges, None, None)?;
    let m = train_distortion(&g, &cfg)?;
    let m = write_run(out, &cfg, m, started)?;
    println!(
        "min distortion {:.6} at epoch {}, kappas {:?}",
        m.best_distortion.unwrap_or(f64::NAN),
        m.best_epoch,
        m.final_kappas
    );
    Ok(())
}

fn nodeclass(a: &NodeclassArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(Task::Nodeclass, &a.model, Family::Hyperbolic)?;
    let edges = required(&a.edges, "edges")?;
    let out = required(&a.out, "out")?;
    let g = load_graph(edges, Some(&a.features), Some(&a.labels))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.split_seed);
    let split = match a.train_count {
        Some(t) => make_split_fixed(&g, a.n_known, t, a.early_stop, &mut rng)?,
        None => make_split(&g, a.n_known, a.per_label, a.early_stop, &mut rng)?,
    };
    let m = train_nodeclass(&g, &split, &cfg)?;
    ensure_dir(out)?;
    write_json(&out.join("split.json"), &split)?;
    let m = write_run(out, &cfg, m, started)?;
    println!(
        "test accuracy {:.4} (early stop at epoch {}), kappas {:?}",
        m.test_accuracy.unwrap_or(f64::NAN),
        m.best_epoch,
        m.final_kappas
    );
    Ok(())
}

#[derive(Serialize)]
struct CurvatureReport<'a> {
    kappa_hat: f64,
    iters: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi: Option<&'a [Option<f64>]>,
}

fn curvature(a: &CurvatureArgs) -> Result<()> {
    let g: Graph = load_graph(&a.edges, None, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let est = estimate_curvature(&g, a.iters, &mut rng)?;
    let summary = CurvatureReport { kappa_hat: est.kappa_hat, iters: a.iters, seed: a.seed, psi: None };
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_json(&out.join("curvature.json"), &CurvatureReport { psi: Some(&est.psi), ..summary })?;
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(Task::Distortion, &a.model, Family::Euclidean)?;
    let edges = required(&a.edges, "edges")?;
    let out = required(&a.out, "out")?;
    if !(a.kappa_min.is_finite() && a.kappa_max.is_finite() && a.kappa_min <= a.kappa_max) || a.steps == 0 {
        return Err(UsageError("the curvature grid needs finite --kappa-min <= --kappa-max and --steps > 0".into()).into());
    }
    let g = load_graph(edges, None, None)?;
    let grid = linspace(a.kappa_min, a.kappa_max, a.steps);
    let rows = kappa_sweep(&g, &cfg, &grid)?;
    let mut csv = String::from("kappa,min_distortion\n");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.kappa, r.min_distortion));
    }
    ensure_dir(out)?;
    write_atomic(&out.join("sweep.csv"), csv.as_bytes())?;
    let file = MetricsFile {
        config: &cfg,
        metrics: &rows,
        kappas: &grid,
        seed: cfg.seed,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("metrics.json"), &file)?;
    for r in &rows {
        println!("kappa {:>10.4}  min distortion {:.6}", r.kappa, r.min_distortion);
    }
    Ok(())
}

#[derive(Serialize)]
struct SelftestConfig {
    inject_fault: bool,
}

fn selftest(a: &SelftestArgs) -> Result<()> {
    let started = Instant::now();
    set_add_sign_fault(a.inject_fault);
    let results = run_all(a.seed);
    set_add_sign_fault(false);
    let mut failed = 0;
    for (suite, took) in &results {
        println!(
            "{:<10} {:>3} passed {:>3} failed  {:>8.3} s",
            suite.name,
            suite.passed(),
            suite.failed(),
            took.as_secs_f64()
        );
        for c in suite.checks.iter().filter(|c| !c.passed()) {
            let why = c.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default();
            let at = c.worst.as_deref().map(|w| format!(" at {w}")).unwrap_or_default();
            println!("  FAIL {}: max error {:e} > {:e}{at}{why}", c.name, c.max_error, c.tolerance);
        }
        failed += suite.failed();
    }
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let reports: Vec<&SuiteReport> = results.iter().map(|(r, _)| r).collect();
        let file = MetricsFile {
            config: &SelftestConfig { inject_fault: a.inject_fault },
            metrics: &reports,
            kappas: &[],
            seed: a.seed,
            runtime_s: started.elapsed().as_secs_f64(),
        };
        write_json(&out.join("selftest.json"), &file)?;
    }
    if failed > 0 {
        return Err(SelftestFailed(failed).into());
    }
    println!("all checks passed");
    Ok(())
}

/// Reads a metrics file and drops the run time, the one field that is allowed
/// to differ between identical invocations.
pub fn metrics_without_runtime(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("runtime_s");
    }
    Ok(v)
}
