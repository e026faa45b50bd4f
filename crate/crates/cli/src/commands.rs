use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ehpc_core::datagen::{
    generate_training_set, normalize_features, read_dataset, split_train_validation, write_dataset, metadata_path,
    Dataset, NormalizationStats,
};
use ehpc_core::envsim::ConfigFile;
use ehpc_core::mdp::{build_mdp, quantize_channel, quantize_harvest, MdpGrids, MdpPolicy};
use ehpc_core::neuralnet::{self, build_architecture, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};
use ehpc_core::policyeval::{evaluate_policy, generate_report, DnnPolicy, GreedyPolicy, Policy, PolicyReport, Sweep, ZeroPolicy};
use ehpc_core::SystemConfig;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{Baseline, EvalArgs, GenDataArgs, MdpSolveArgs, OptimizerArg, ReportArgs, SweepArg, SystemArgs, TrainArgs};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl SystemArgs {
    /// Resolves defaults < config file < flags.
    fn resolve(&self, manifest: &mut RunManifest) -> Result<SystemConfig> {
        let file = match &self.config {
            Some(path) => {
                manifest.config_path = Some(path.clone());
                manifest.input(path)?;
                ConfigFile::load(path)?
            }
            None => ConfigFile::default(),
        };
        let flags = ConfigFile {
            k: self.k,
            b_max: self.b_max,
            p_max: self.p_max,
            harvest_mean: self.harvest_mean,
            harvest_var: self.harvest_var,
            b_init: self.b_init,
            seed: self.seed,
        };
        let config = file.merged_with(&flags).resolve()?;
        manifest.config = Some(config.clone());
        Ok(config)
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut manifest = RunManifest::start("gen-data");
    let config = args.system.resolve(&mut manifest)?;
    manifest.seeds.insert("dataset", config.seed);
    manifest.parameters = json!({ "episodes": args.episodes, "horizon": args.horizon });
    log::info!("solving {} offline instances of {} slots", args.episodes, args.horizon);
    let dataset = generate_training_set(&config, args.episodes, args.horizon, config.seed)?;
    write_dataset(&dataset, &args.out)?;
    manifest.output(&args.out)?;
    manifest.output(&metadata_path(&args.out))?;
    log::info!("wrote {} points to {}", dataset.len(), args.out.display());
    manifest.finish(&args.out)?;
    Ok(())
}

fn normalized(train: &Dataset, val: &Dataset, enabled: bool) -> Result<(Dataset, Dataset, NormalizationStats)> {
    if enabled {
        return Ok(normalize_features(train, val)?);
    }
    let width = train.points.first().map(|p| p.features.len()).unwrap_or(3 * train.k);
    Ok((train.clone(), val.clone(), NormalizationStats::identity(width)))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train");
    manifest.seeds.insert("train", args.seed);
    let data_hash = manifest.input(&args.data)?;
    let data = read_dataset(&args.data)?;
    if data.is_empty() {
        bail!("{} contains no points", args.data.display());
    }
    let (train_raw, val_raw) = match &args.val {
        Some(path) => {
            manifest.input(path)?;
            let val = read_dataset(path)?;
            if val.k != data.k {
                bail!("validation set has k = {}, training set k = {}", val.k, data.k);
            }
            (data, val)
        }
        None => {
            let n_val = args.val_size.unwrap_or_else(|| (data.len() / 5).max(1));
            split_train_validation(&data, n_val, args.seed)?
        }
    };
    let (train_set, val_set, stats) = normalized(&train_raw, &val_raw, !args.no_normalize)?;

    let architecture = build_architecture(train_set.k, args.hidden_layers as usize)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => neuralnet::Optimizer::Adam,
            OptimizerArg::Sgd => neuralnet::Optimizer::Sgd,
        },
        patience: args.patience,
        grad_clip: args.grad_clip,
        seed: args.seed,
    };
    manifest.parameters = json!({
        "train_points": train_set.len(),
        "validation_points": val_set.len(),
        "architecture": architecture.sizes,
        "normalize": !args.no_normalize,
        "train_config": config,
    });
    log::info!(
        "training {} hidden layers on {} points ({} validation)",
        architecture.hidden_count(),
        train_set.len(),
        val_set.len()
    );
    let outcome = neuralnet::train(&train_set, &val_set, &architecture, &config)?;

    let curves_path = with_suffix(&args.out, ".curves.csv");
    write(&curves_path, &outcome.curves.to_csv())?;
    manifest.output(&curves_path)?;
    if let Err(e) = outcome.check() {
        manifest.finish(&args.out)?;
        return Err(e.into());
    }
    let checkpoint = Checkpoint {
        params: outcome.params,
        normalization: stats,
        train_config: Some(config),
        dataset_hash: Some(data_hash),
    };
    save_checkpoint(&checkpoint, &args.out)?;
    manifest.output(&args.out)?;
    log::info!(
        "best validation loss {:.6e} at epoch {}",
        outcome.best_validation_loss,
        outcome.best_epoch
    );
    manifest.finish(&args.out)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    let config = args.system.resolve(&mut manifest)?;
    manifest.seeds.insert("eval", config.seed);
    manifest.parameters = json!({ "slots": args.slots, "strict": args.strict });
    let policy: Box<dyn Policy> = match (&args.checkpoint, &args.mdp_policy, args.baseline) {
        (Some(path), _, _) => {
            manifest.input(path)?;
            Box::new(DnnPolicy::new(load_checkpoint(path)?, config.k)?)
        }
        (_, Some(path), _) => {
            manifest.input(path)?;
            if config.k != 1 {
                bail!("an MDP policy controls a single node, config has k = {}", config.k);
            }
            Box::new(MdpPolicy::load(path)?)
        }
        (_, _, Some(Baseline::Greedy)) => Box::new(GreedyPolicy { p_max: config.p_max }),
        (_, _, Some(Baseline::Zero)) => Box::new(ZeroPolicy),
        _ => bail!("choose one of --checkpoint, --mdp-policy or --baseline"),
    };
    log::info!("evaluating {} over {} slots", policy.describe(), args.slots);
    let report = evaluate_policy(policy.as_ref(), &config, args.slots, config.seed, args.strict)?;
    write(&args.out, &serde_json::to_string_pretty(&report)?)?;
    let csv_path = with_suffix(&args.out, ".csv");
    write(&csv_path, &format!("{}\n{}\n", PolicyReport::csv_header(), report.csv_row()))?;
    manifest.output(&args.out)?;
    manifest.output(&csv_path)?;
    log::info!(
        "{}: {:.4} nats/slot, offline {:.4}, {:.2}%",
        report.policy,
        report.policy_rps,
        report.offline_rps,
        report.ratio
    );
    manifest.finish(&args.out)?;
    Ok(())
}

pub fn mdp_solve(args: MdpSolveArgs) -> Result<()> {
    let mut manifest = RunManifest::start("mdp-solve");
    let mut system = args.system.clone();
    system.k = Some(system.k.unwrap_or(1));
    let config = system.resolve(&mut manifest)?;
    let grids = MdpGrids {
        battery_step: args.battery_step,
        power_step: args.power_step,
        harvest: quantize_harvest(config.harvest_mean, config.harvest_var, args.harvest_levels)?,
        channel: quantize_channel(args.channel_levels)?,
    };
    manifest.parameters = json!({ "grids": grids, "tol": args.tol });
    let mdp = build_mdp(&config, &grids)?;
    log::info!("value iteration over {} states", mdp.num_states());
    let policy = mdp.solve(args.tol)?;
    policy.save(&args.out)?;
    let csv_path = with_suffix(&args.out, ".csv");
    write(&csv_path, &policy.to_csv())?;
    manifest.output(&args.out)?;
    manifest.output(&csv_path)?;
    log::info!("model gain {:.6} nats/slot", policy.gain);
    manifest.finish(&args.out)?;
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut manifest = RunManifest::start("report");
    let mut reports = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        manifest.input(path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: PolicyReport =
            serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))?;
        reports.push(report);
    }
    let sweep = match args.sweep {
        SweepArg::M => Sweep::Mean,
        SweepArg::V => Sweep::Variance,
    };
    generate_report(&reports, sweep, &args.out)?;
    manifest.output(&args.out)?;
    manifest.finish(&args.out)?;
    Ok(())
}
