use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use cfshap::explain::fixtures::{audit_published, RowAuditStatus, PUBLISHED_ROWS};
use cfshap::explain::PUBLISHED_AUDIT_TOLERANCE;
use cfshap::shapley::{
    run_axiom_suite, run_axiom_suite_with_weight, shapley_exact, shapley_sampled, CountingGame, SuiteConfig,
    TableGame,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AuditSection, AxiomsSection, BenchSection};
use crate::{AuditArgs, AxiomsArgs, BenchArgs};

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

pub fn axioms(a: AxiomsArgs, cfg: &AxiomsSection) -> Result<bool> {
    let base = SuiteConfig::default();
    let config = SuiteConfig {
        games: a.games.or(cfg.games).unwrap_or(base.games),
        min_players: a.min_players.or(cfg.min_players).unwrap_or(base.min_players),
        max_players: a.max_players.or(cfg.max_players).unwrap_or(base.max_players),
        seed: a.seed.or(cfg.seed).unwrap_or(base.seed),
    };
    let started = Instant::now();
    let report = if a.inject_broken_weight {
        eprintln!("negative control: using 1/2^(m-1) in place of the Shapley coefficients");
        run_axiom_suite_with_weight(&config, |m, _| 1.0 / (1u64 << (m - 1)) as f64)?
    } else {
        run_axiom_suite(&config)?
    };
    println!(
        "{} games, players {}..={}, seed {}",
        report.games, config.min_players, config.max_players, config.seed
    );
    println!("efficiency  max residual {:.3e}  {}", report.max_efficiency, verdict(report.efficiency_ok()));
    println!("null player max |phi|     {:.3e}  {}", report.max_null, verdict(report.null_ok()));
    println!("symmetry    max gap       {:.3e}  {}", report.max_symmetry, verdict(report.symmetry_ok()));
    println!("linearity   max residual  {:.3e}  {}", report.max_linearity, verdict(report.linearity_ok()));
    eprintln!("elapsed {:.2?}", started.elapsed());
    Ok(report.passed())
}

fn parse_prediction(s: &str) -> Result<(usize, f64, f64)> {
    let (image, rest) = s.split_once('=').context("expected IMAGE=ORIGINAL:COUNTERFACTUAL")?;
    let (orig, cf) = rest.split_once(':').context("expected IMAGE=ORIGINAL:COUNTERFACTUAL")?;
    let image: usize = image.trim().parse().with_context(|| format!("bad image number in {s:?}"))?;
    ensure!(
        PUBLISHED_ROWS.iter().any(|r| r.image == image),
        "no published row for image {image}"
    );
    let orig: f64 = orig.trim().parse().with_context(|| format!("bad original prediction in {s:?}"))?;
    let cf: f64 = cf.trim().parse().with_context(|| format!("bad counterfactual prediction in {s:?}"))?;
    Ok((image, orig, cf))
}

pub fn audit(a: AuditArgs, cfg: &AuditSection) -> Result<bool> {
    let tolerance = a.tolerance.or(cfg.tolerance).unwrap_or(PUBLISHED_AUDIT_TOLERANCE);
    let overrides = a
        .predictions
        .iter()
        .map(|s| parse_prediction(s))
        .collect::<Result<Vec<_>>>()?;
    let audits = audit_published(tolerance, &overrides)?;
    println!("efficiency audit at tolerance {tolerance}");
    let mut all_ok = true;
    for (row, audit) in PUBLISHED_ROWS.iter().zip(&audits) {
        println!("image {}: {}", row.image, row.line());
        match &audit.status {
            RowAuditStatus::Audited(r) => {
                all_ok &= r.passed;
                println!(
                    "  sum {:+.4}  difference {:+.4}  residual {:.4}  {}",
                    r.sum,
                    r.difference,
                    r.residual,
                    if r.passed { "PASS" } else { "FAIL" }
                );
            }
            RowAuditStatus::PredictionsUnavailable { sum, feasible_originals } => {
                let range = match feasible_originals {
                    Some((lo, hi)) => format!("original prediction must lie in [{lo:.3}, {hi:.3}]"),
                    None => "no prediction pair in [0, 1] can satisfy it".to_string(),
                };
                println!("  sum {sum:+.4}  predictions unavailable (supply --predictions); {range}");
            }
        }
    }
    Ok(all_ok)
}

pub fn bench(a: BenchArgs, cfg: &BenchSection) -> Result<bool> {
    let min_players = a.min_players.or(cfg.min_players).unwrap_or(2);
    let max_players = a.max_players.or(cfg.max_players).unwrap_or(20);
    let ladder = a.ladder.or_else(|| cfg.ladder.clone()).unwrap_or_else(|| vec![10, 100, 1000, 10000]);
    let ladder_players = a.ladder_players.or(cfg.ladder_players).unwrap_or(10);
    let seeds = a.seeds.or(cfg.seeds).unwrap_or(10);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    if min_players == 0 || min_players > max_players || max_players > 20 {
        bail!("exact timing needs 1 <= min-players <= max-players <= 20");
    }
    ensure!((1..=20).contains(&ladder_players), "ladder-players must be in 1..=20");
    ensure!(!ladder.is_empty() && seeds > 0, "ladder and seeds must be non-empty");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    println!("exact enumeration");
    println!("{:>4} {:>10} {:>12}", "m", "calls", "time_ms");
    for m in min_players..=max_players {
        let mut game = CountingGame::new(TableGame::random(m, &mut rng)?);
        let started = Instant::now();
        shapley_exact(&mut game)?;
        let ms = started.elapsed().as_secs_f64() * 1e3;
        let expected = 1usize << m;
        ok &= game.calls() == expected;
        println!("{m:>4} {:>10} {ms:>12.3}", game.calls());
    }

    let mut game = TableGame::random(ladder_players, &mut rng)?;
    let exact = shapley_exact(&mut game)?.phi;
    println!("sampling error vs exact, m={ladder_players}, mean of max |error| over {seeds} seeds");
    println!("{:>12} {:>14}", "permutations", "mean_max_err");
    let mut previous = f64::INFINITY;
    for &perms in &ladder {
        let mut total = 0.0;
        for s in 0..seeds {
            let est = shapley_sampled(&mut game, perms, seed.wrapping_add(s))?;
            let err = est
                .phi
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            total += err;
        }
        let mean = total / seeds as f64;
        println!("{perms:>12} {mean:>14.6}");
        if mean > previous {
            ok = false;
        }
        previous = mean;
    }
    if !ok {
        println!("check failed: call counts differ from 2^m or error did not decrease along the ladder");
    }
    Ok(ok)
}
