use std::fmt::Write as _;
use std::io;

use anyhow::{bail, ensure, Context, Result};
use cfshap::explain::{default_names, explain_with, render_explanation, ExplainOptions, ExplanationRequest, RenderFormat};
use cfshap::numerics::Vector;
use cfshap::oracle::{serve as serve_lines, ComposedOracle, Oracle, SyntheticOracle, WireClient};
use cfshap::shapley::Method;
use cfshap::shift::{eval_shift_predictor, sample_latent, shift_train_with, Faithfulness, ShiftPredictor, TrainingConfig};
use cfshap::world::{world_create, SyntheticWorld};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{check_output, ExplainSection, TrainSection, WorldSection};
use crate::{ExplainArgs, ServeArgs, TrainArgs, WorldArgs};

/// Seed of the held-out set used for the post-training report.
const EVAL_SEED: u64 = 12345;

pub fn world(a: WorldArgs, cfg: &WorldSection) -> Result<()> {
    let d = a.latent_dim.or(cfg.latent_dim).unwrap_or(16);
    let n = a.image_dim.or(cfg.image_dim).unwrap_or(32);
    let m = a.num_attrs.or(cfg.num_attrs).unwrap_or(5);
    let seed = a.seed.or(cfg.seed).unwrap_or(7);
    ensure!(m >= 1 && m <= d, "need 1 <= num-attrs <= latent-dim, got m={m}, d={d}");
    ensure!(d <= n, "need latent-dim <= image-dim, got d={d}, n={n}");
    let out = check_output(&a.out)?;

    let (world, truth) = world_create(d, n, m, seed)?;
    world.save(&out).with_context(|| format!("writing {}", out.display()))?;
    println!("world d={d} n={n} m={m} seed={seed}");
    println!("target-relevant attributes: {:?}", truth.relevant);
    for (i, u) in truth.directions.iter().enumerate() {
        let role = if truth.is_relevant(i) { "relevant" } else { "null" };
        println!("  attr{i}: latent direction norm {:.6} ({role})", u.norm());
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn parse_faithfulness(s: &str) -> Result<Faithfulness> {
    match s {
        "squared-norm" | "squared_norm" => Ok(Faithfulness::SquaredNorm),
        "norm" => Ok(Faithfulness::Norm),
        other => bail!("unknown faithfulness term {other:?}; use squared-norm or norm"),
    }
}

pub fn train(a: TrainArgs, cfg: &TrainSection) -> Result<()> {
    let world = SyntheticWorld::load(&a.world).with_context(|| format!("loading world {}", a.world.display()))?;
    let out = check_output(&a.out)?;
    let log_path = a.log.as_deref().map(check_output).transpose()?;
    let base = TrainingConfig::default();
    let faithfulness = match a.faithfulness.as_deref().or(cfg.faithfulness.as_deref()) {
        Some(s) => parse_faithfulness(s)?,
        None => base.faithfulness,
    };
    let config = TrainingConfig {
        gamma: a.gamma.or(cfg.gamma).unwrap_or(base.gamma),
        faithfulness,
        epochs: a.epochs.or(cfg.epochs).unwrap_or(base.epochs),
        steps_per_epoch: a.steps_per_epoch.or(cfg.steps_per_epoch).unwrap_or(base.steps_per_epoch),
        batch_size: a.batch_size.or(cfg.batch_size).unwrap_or(base.batch_size),
        learning_rate: a.learning_rate.or(cfg.learning_rate).unwrap_or(base.learning_rate),
        final_lr_fraction: a.final_lr_fraction.or(cfg.final_lr_fraction).unwrap_or(base.final_lr_fraction),
        p_cond: a.p_cond.or(cfg.p_cond).unwrap_or(base.p_cond),
        seed: a.seed.or(cfg.seed).unwrap_or(base.seed),
        hidden: a.hidden.or_else(|| cfg.hidden.clone()).unwrap_or(base.hidden),
    };
    config.validate()?;
    let eval_samples = a.eval_samples.or(cfg.eval_samples).unwrap_or(500);

    eprintln!(
        "training: gamma={} epochs={} steps/epoch={} batch={} lr={} seed={}",
        config.gamma, config.epochs, config.steps_per_epoch, config.batch_size, config.learning_rate, config.seed
    );
    let last = config.epochs.saturating_sub(1);
    let (predictor, log) = shift_train_with(&world, &config, |e| {
        if e.epoch % 10 == 0 || e.epoch == last {
            eprintln!(
                "epoch {:>4}  L_a {:.6}  L_f {:.6}",
                e.epoch, e.mean_attribute_loss, e.mean_faithfulness_loss
            );
        }
    })?;
    predictor.save(&out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {}", out.display());

    if let Some(path) = log_path {
        let mut text = String::from("epoch,attribute_loss,faithfulness_loss\n");
        for e in &log.epochs {
            let _ = writeln!(text, "{},{},{}", e.epoch, e.mean_attribute_loss, e.mean_faithfulness_loss);
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }

    if eval_samples > 0 {
        let m = eval_shift_predictor(&world, &predictor, eval_samples, EVAL_SEED)?;
        println!(
            "flip agreement {:.4}  mean shift norm {:.4}  empty-spec drift mean {:.4} max {:.4}  ({} samples)",
            m.flip_agreement, m.mean_shift_norm, m.mean_empty_drift, m.max_empty_drift, m.samples
        );
    }
    Ok(())
}

struct ExplainPlan {
    z_seed: u64,
    z_file: Option<std::path::PathBuf>,
    direction: String,
    names: Option<Vec<String>>,
    method: Method,
    options: ExplainOptions,
}

fn run_explain<O: Oracle + ?Sized>(oracle: &mut O, plan: &ExplainPlan) -> Result<cfshap::explain::Explanation> {
    let desc = oracle.descriptor()?;
    let z = match &plan.z_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let z: Vector = serde_json::from_str(&text).with_context(|| format!("parsing z from {}", path.display()))?;
            z
        }
        None => sample_latent(desc.latent_dim, &mut ChaCha8Rng::seed_from_u64(plan.z_seed)),
    };
    ensure!(
        z.len() == desc.latent_dim,
        "z has length {}, oracle latent dimension is {}",
        z.len(),
        desc.latent_dim
    );
    let grand = plan.direction.parse()?;
    let names = plan.names.clone().unwrap_or_else(|| default_names(desc.num_attrs));
    let request = ExplanationRequest::new(z, grand, names, plan.method.clone())?;
    Ok(explain_with(&request, oracle, plan.options)?)
}

pub fn explain(a: ExplainArgs, cfg: &ExplainSection) -> Result<()> {
    let out = a.out.as_deref().map(check_output).transpose()?;
    let csv_out = a.csv.as_deref().map(check_output).transpose()?;
    let direction = a
        .direction
        .or_else(|| cfg.direction.clone())
        .context("--direction is required (e.g. \"+1,-1,+1,-1,+1\")")?;
    let method = match a.method.as_deref().or(cfg.method.as_deref()).unwrap_or("exact") {
        "exact" => Method::Exact,
        "sampled" => Method::Sampled {
            permutations: a.permutations.or(cfg.permutations).unwrap_or(1000),
            seed: a.permutation_seed.or(cfg.permutation_seed).unwrap_or(0),
        },
        other => bail!("unknown method {other:?}; use exact or sampled"),
    };
    let plan = ExplainPlan {
        z_seed: a.z_seed.or(cfg.z_seed).unwrap_or(0),
        z_file: a.z_file,
        direction,
        names: a.names.or_else(|| cfg.names.clone()),
        method,
        options: ExplainOptions {
            use_cache: !a.no_cache && cfg.cache.unwrap_or(true),
        },
    };
    let shift = a
        .shift
        .as_ref()
        .map(|p| ShiftPredictor::load(p).with_context(|| format!("loading shift predictor {}", p.display())))
        .transpose()?;

    let explanation = match (a.world, a.oracle_cmd) {
        (Some(world_path), _) => {
            let world = SyntheticWorld::load(&world_path)
                .with_context(|| format!("loading world {}", world_path.display()))?;
            let mut oracle = SyntheticOracle::new(world, shift)?;
            run_explain(&mut oracle, &plan)?
        }
        (None, Some(cmd)) => {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().context("--oracle-cmd is empty")?;
            let args: Vec<String> = parts.collect();
            let mut client = WireClient::spawn(&program, &args).with_context(|| format!("starting {program}"))?;
            let result = match shift {
                Some(s) => run_explain(&mut ComposedOracle::new(&mut client, s)?, &plan),
                None => run_explain(&mut client, &plan),
            };
            client.shutdown()?;
            result?
        }
        (None, None) => bail!("one of --world or --oracle-cmd is required"),
    };

    print!("{}", render_explanation(&explanation, RenderFormat::Table)?);
    if let Some(path) = out {
        std::fs::write(&path, render_explanation(&explanation, RenderFormat::Json)?)
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    if let Some(path) = csv_out {
        std::fs::write(&path, render_explanation(&explanation, RenderFormat::Csv)?)
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let world = SyntheticWorld::load(&a.world).with_context(|| format!("loading world {}", a.world.display()))?;
    let shift = a
        .shift
        .as_ref()
        .map(|p| ShiftPredictor::load(p).with_context(|| format!("loading shift predictor {}", p.display())))
        .transpose()?;
    let mut oracle = SyntheticOracle::new(world, shift)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_lines(&mut oracle, stdin.lock(), stdout.lock())?;
    Ok(())
}
