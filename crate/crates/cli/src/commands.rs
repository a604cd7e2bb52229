use std::path::{Path, PathBuf};

use serde::Serialize;
use trace_core::conformal::CalibrationResult;
use trace_core::data::write_csv;
use trace_core::experiments::{
    ablate_budget, assemble_report, build_banks, calibrate_method, discretization_check,
    emit_report, evaluate_seed, prepare_data, run_benchmark, score_function,
    threshold_stability_check, train_models, ExperimentConfig, MuSpec, ReportFormat, RunReport,
    SeedBanks, SeedModels, SeedResult, DEFAULT_BUDGET_GRID, DEFAULT_M_GRID, DEFAULT_THRESHOLD_GRID,
};
use trace_core::scoring::{write_scores_csv, ScoreRow};
use trace_core::{Error, Result};

use crate::Global;

pub fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if g.full_scale {
        cfg = cfg.full_scale();
    }
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn seed_dir(cfg: &ExperimentConfig, kind: &str, seed: u64) -> PathBuf {
    cfg.out_dir.join(kind).join(format!("seed{seed}"))
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.out_dir.join("data");
    mkdir(&dir)?;
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        let stem = format!("{}_seed{seed}", cfg.dataset.name());
        let csv = dir.join(format!("{stem}.csv"));
        write_csv(&data.data, &csv)?;
        write_json(
            &dir.join(format!("{stem}.meta.json")),
            &data.data.metadata(Some(seed), Some(data.split.seed)),
        )?;
        println!("{}", csv.display());
    }
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        let models = train_models(
            cfg,
            seed,
            &data.train,
            &cfg.methods,
            cfg.volume.test_points > 0,
        )?;
        let dir = seed_dir(cfg, "models", seed);
        let mut paths = models.save(&dir)?;
        paths.extend(build_banks(cfg, seed, data.train.y_dim())?.save(&dir)?);
        for p in paths {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn load_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedModels, SeedBanks)> {
    let dir = seed_dir(cfg, "models", seed);
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "no trained models in {}; run `train` first",
            dir.display()
        )));
    }
    Ok((SeedModels::load(&dir)?, SeedBanks::load(&dir)?))
}

pub fn calibrate(cfg: &ExperimentConfig) -> Result<()> {
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        let (models, banks) = load_seed(cfg, seed)?;
        let dir = seed_dir(cfg, "calibration", seed);
        mkdir(&dir)?;
        for &kind in &cfg.methods {
            let f = score_function(kind, &models, &banks, cfg, seed)?;
            let (scores, cal) = calibrate_method(&f, &data, cfg.alpha)?;
            let rows: Vec<ScoreRow> = scores
                .iter()
                .zip(&data.split.calibration)
                .map(|(&value, &point_id)| ScoreRow {
                    point_id,
                    score_kind: kind,
                    value,
                })
                .collect();
            write_scores_csv(&dir.join(format!("{kind}_scores.csv")), &rows)?;
            let path = dir.join(format!("{kind}.json"));
            write_json(&path, &cal)?;
            println!("{} threshold {}", path.display(), cal.threshold.value());
        }
    }
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.out_dir.join("eval");
    mkdir(&dir)?;
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        let (models, banks) = load_seed(cfg, seed)?;
        let (results, masks) = evaluate_seed(cfg, &data, &models, &banks)?;
        for r in &results {
            let saved = seed_dir(cfg, "calibration", seed).join(format!("{}.json", r.method));
            if saved.exists() {
                let cal: CalibrationResult = read_json(&saved)?;
                if cal.threshold != r.threshold {
                    return Err(Error::Schema(format!(
                        "{} disagrees with the current models; rerun `calibrate`",
                        saved.display()
                    )));
                }
            }
            println!(
                "seed {seed} {:<12} coverage {:6.2}%  volume {}",
                r.method.name(),
                r.coverage,
                r.volume.map_or("-".into(), |v| format!("{v:.4}"))
            );
        }
        write_json(&dir.join(format!("seed{seed}.json")), &results)?;
        if !masks.is_empty() {
            let mask_dir = dir.join("masks");
            mkdir(&mask_dir)?;
            for m in masks {
                let base = format!("seed{}_{}_{}", m.seed, m.method, m.point_id);
                for (ext, body) in [("csv", m.mask.to_csv()), ("pgm", m.mask.to_pgm())] {
                    let path = mask_dir.join(format!("{base}.{ext}"));
                    std::fs::write(&path, body).map_err(|e| Error::Io { path, source: e })?;
                }
            }
        }
    }
    Ok(())
}

fn print_report(report: &RunReport) {
    println!("{:<14} {:>16} {:>22}", "method", "coverage (%)", "volume");
    for row in &report.summary {
        let vol = match (row.volume, row.volume_std) {
            (Some(v), Some(s)) => format!("{v:.4} ± {s:.4}"),
            _ => "-".into(),
        };
        println!(
            "{:<14} {:>7.2} ± {:<6.2} {:>22}",
            row.method.name(),
            row.coverage,
            row.coverage_std.unwrap_or(0.0),
            vol
        );
    }
    if !report.failed_seeds.is_empty() {
        println!("failed seeds (excluded): {:?}", report.failed_seeds);
    }
}

pub fn report(cfg: &ExperimentConfig, run: bool) -> Result<()> {
    let report = if run {
        run_benchmark(cfg)?
    } else {
        let dir = cfg.out_dir.join("eval");
        let mut raw: Vec<SeedResult> = Vec::new();
        for &seed in &cfg.seeds {
            let path = dir.join(format!("seed{seed}.json"));
            if !path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "missing {}; run `eval` first or pass --run",
                    path.display()
                )));
            }
            let rows: Vec<SeedResult> = read_json(&path)?;
            raw.extend(rows.into_iter().filter(|r| cfg.methods.contains(&r.method)));
        }
        assemble_report(cfg, raw, Vec::new(), Vec::new())
    };
    let out = cfg.out_dir.join("reports");
    let mut paths = emit_report(&report, ReportFormat::Csv, &out)?;
    paths.extend(emit_report(&report, ReportFormat::Json, &out)?);
    print_report(&report);
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn parse_grid(spec: &[String]) -> Result<Vec<(usize, usize)>> {
    spec.iter()
        .map(|s| {
            let (t, r) = s
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::InvalidArgument(format!("grid entry {s:?} is not TxR")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("grid entry {s:?} is not TxR")))
            };
            Ok((num(t)?, num(r)?))
        })
        .collect()
}

pub fn ablate(cfg: &ExperimentConfig, grid: Option<&[String]>) -> Result<()> {
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => DEFAULT_BUDGET_GRID.to_vec(),
    };
    let rep = ablate_budget(cfg, &grid)?;
    let dir = cfg.out_dir.join("ablation");
    let stem = format!("{}_{}_ablation", rep.dataset, rep.score);
    write_json(&dir.join(format!("{stem}.json")), &rep)?;
    let path = dir.join(format!("{stem}.csv"));
    let csv_err = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for row in &rep.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "B", "score std", "threshold", "volume"
    );
    for r in &rep.rows {
        let vol = r.volume.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{:>6} {:>12.5e} {:>12.5} {:>12}",
            r.budget, r.score_std, r.threshold_mean, vol
        );
    }
    println!("log-log slope {:.4}", rep.slope);
    Ok(())
}

pub fn theory_check(cfg: &ExperimentConfig, skip_threshold: bool) -> Result<()> {
    let dir = cfg.out_dir.join("theory");
    let mut violations = Vec::new();
    for mu in [MuSpec::Sine, MuSpec::Linear] {
        let rows = discretization_check(mu, &DEFAULT_M_GRID)?;
        println!("discretization {mu:?}");
        for r in &rows {
            println!(
                "  m={:<3} error {:.6e}  bound {:.6e}  {}",
                r.m,
                r.error,
                r.bound,
                verdict(r.holds)
            );
            if !r.holds {
                violations.push(format!("discretization {mu:?} m={}", r.m));
            }
        }
        write_json(
            &dir.join(format!("discretization_{mu:?}.json").to_lowercase()),
            &rows,
        )?;
    }
    if !skip_threshold {
        let rows = threshold_stability_check(cfg, &DEFAULT_THRESHOLD_GRID)?;
        println!(
            "threshold stability ({}, C = {:.4e})",
            cfg.ablation.score, rows[0].c_hat
        );
        for r in &rows {
            println!(
                "  B={:<4} mean|q - q_ref| {:.4e}  bound {:.4e}  {}",
                r.budget,
                r.mean_abs_error,
                r.bound,
                verdict(r.holds)
            );
            if !r.holds {
                violations.push(format!("threshold B={}", r.budget));
            }
        }
        write_json(&dir.join("threshold.json"), &rows)?;
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "bound violated: {}",
            violations.join(", ")
        )))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}
