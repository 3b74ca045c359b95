//! One function per subcommand. Each writes its artifacts into the run
//! directory and records the headline numbers in the summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use homarl::approx_gap::{fit_deepsets_sweep, median_sup_error, width_needed, write_sweep};
use homarl::bounds::calculators::{
    CONSTANT_NOTE, MODEL_BASED_GEN_FORMULA, MODEL_BASED_SUBOPT_FORMULA, MODEL_FREE_GEN_FORMULA,
    MODEL_FREE_SUBOPT_FORMULA,
};
use homarl::bounds::verify::{falsify_all, write_report};
use homarl::bounds::{
    gen_bound_model_based, gen_bound_model_free, prescribed_bellman_budget, prescribed_radius, subopt_bound_model_based,
    subopt_bound_model_free,
};
use homarl::env::EnvConfig;
use homarl::model_based::{
    fit_ensemble, median_by_size, mle_consistency_probe, pessimistic_policy, write_planner_log, write_probe, RolloutTask,
    SyntheticTask,
};
use homarl::model_free::{episode_returns, initial_bank, train, write_log, EvalSummary};
use homarl::networks::{read_checkpoint, write_checkpoint, Checkpoint, JointPolicy};
use homarl::offline::{collect as collect_dataset, Dataset};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run_dir::RunDir;

type CmdResult = Result<(), CliError>;

fn flush(mut w: impl Write) -> CmdResult {
    w.flush()?;
    Ok(())
}

pub fn collect(cfg: &RunConfig, run: &mut RunDir) -> CmdResult {
    let ds = &cfg.dataset;
    let data = collect_dataset(&cfg.env, ds.behavior, ds.episodes, ds.gamma, cfg.seed, ds.subsample)?;
    let path = run.file("dataset.bin");
    data.write(&path)?;
    if ds.export_csv {
        let mut w = run.writer("dataset.csv")?;
        data.export_csv(&mut w)?;
        flush(w)?;
    }
    run.record("dataset", path.display());
    run.record("behavior", data.meta.behavior.clone());
    run.record("episodes", data.meta.episodes);
    run.record("transitions", data.len());
    run.record("checksum", data.checksum());
    Ok(())
}

fn load_dataset(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<(PathBuf, Dataset), CliError> {
    let path = flag
        .or_else(|| cfg.dataset.path.clone())
        .ok_or_else(|| CliError::MissingInput("no dataset given; pass --dataset or set dataset.path".into()))?;
    if !path.is_file() {
        return Err(CliError::MissingInput(format!("dataset {} does not exist", path.display())));
    }
    let data = Dataset::read(&path)?;
    data.require_nonempty()?;
    Ok((path, data))
}

/// The environment the dataset was collected in, with the configured physics.
fn env_of(cfg: &RunConfig, data: &Dataset) -> EnvConfig {
    EnvConfig { agents: data.meta.agents, landmarks: data.meta.landmarks, ..cfg.env }
}

fn write_returns(run: &RunDir, returns: &[f64]) -> CmdResult {
    let mut w = run.writer("returns.csv")?;
    writeln!(w, "episode,return")?;
    for (i, r) in returns.iter().enumerate() {
        writeln!(w, "{i},{r}")?;
    }
    flush(w)
}

/// Evaluation episodes use a stream disjoint from training and collection.
fn eval_seed(seed: u64) -> u64 {
    seed ^ 0xe7a1_5eed
}

fn evaluate_into<P: JointPolicy + ?Sized>(cfg: &RunConfig, env: &EnvConfig, policy: &P, run: &mut RunDir) -> CmdResult {
    let returns = episode_returns(policy, env, cfg.eval.episodes, cfg.eval.horizon, eval_seed(cfg.seed))?;
    write_returns(run, &returns)?;
    let s = EvalSummary::from_returns(&returns);
    run.record("eval_episodes", s.episodes);
    run.record("eval_mean_return", s.mean);
    run.record("eval_std_return", s.std);
    Ok(())
}

pub fn train_mf(cfg: &RunConfig, dataset: Option<PathBuf>, run: &mut RunDir) -> CmdResult {
    let (path, data) = load_dataset(cfg, dataset)?;
    run.record("dataset", path.display());
    run.record("architecture", cfg.network.architecture);
    let out = train(&data, &cfg.train_mf, cfg.network.architecture)?;
    let mut w = run.writer("train_log.csv")?;
    write_log(&mut w, &out.log)?;
    flush(w)?;
    write_checkpoint(&run.file("critic.ckpt"), &out.critic.checkpoint(), out.critic.budget())?;
    write_checkpoint(&run.file("policy.ckpt"), &Checkpoint::Policy(out.policy.clone()), None)?;
    if let Some(last) = out.log.last() {
        run.record("final_value", last.value);
        run.record("final_bellman_loss", last.bellman_loss);
    }
    run.record("v_max", out.v_max);
    evaluate_into(cfg, &env_of(cfg, &data), &out.policy, run)
}

pub fn train_mb(cfg: &RunConfig, dataset: Option<PathBuf>, run: &mut RunDir) -> CmdResult {
    let (path, data) = load_dataset(cfg, dataset)?;
    run.record("dataset", path.display());
    let mb = &cfg.train_mb;
    mb.validate()?;
    let ensemble = fit_ensemble(&data, mb)?;
    let initial = initial_bank(data.meta.agents, data.meta.landmarks, mb.initial_states, cfg.seed)?;
    let out = pessimistic_policy(&ensemble, &data, RolloutTask::Navigation, &initial, mb)?;
    let mut w = run.writer("planner_log.csv")?;
    write_planner_log(&mut w, &out.log)?;
    flush(w)?;
    let mut w = run.writer("ensemble.csv")?;
    writeln!(w, "member,loss,mean_sq_tv,inside")?;
    for (k, (loss, region)) in ensemble.losses.iter().zip(&out.regions).enumerate() {
        writeln!(w, "{k},{loss},{},{}", region.mean_sq_tv, region.inside)?;
    }
    flush(w)?;
    write_checkpoint(&run.file("policy.ckpt"), &Checkpoint::Policy(out.policy.clone()), None)?;
    run.record("mle_member", ensemble.mle_index);
    run.record("zeta", out.zeta);
    run.record("members_kept", format!("{}/{}", out.kept.len(), ensemble.models.len()));
    if let Some(last) = out.log.last() {
        run.record("final_pessimistic_value", last.pessimistic_value);
    }
    evaluate_into(cfg, &env_of(cfg, &data), &out.policy, run)
}

pub fn eval(cfg: &RunConfig, policy: Option<PathBuf>, run: &mut RunDir) -> CmdResult {
    match policy {
        Some(path) => {
            let net = match read_policy(&path)? {
                Checkpoint::Policy(net) => net,
                other => {
                    return Err(CliError::Format(format!(
                        "{} holds a {:?} checkpoint, not a policy",
                        path.display(),
                        other.kind()
                    )))
                }
            };
            run.record("policy", path.display());
            evaluate_into(cfg, &cfg.env, &net, run)
        }
        None => {
            run.record("policy", cfg.dataset.behavior.id());
            evaluate_into(cfg, &cfg.env, &cfg.dataset.behavior, run)
        }
    }
}

fn read_policy(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(read_checkpoint(path)?)
}

pub fn verify_bounds(cfg: &RunConfig, trials: Option<usize>, run: &mut RunDir) -> CmdResult {
    let trials = trials.unwrap_or(cfg.bounds.trials);
    if trials == 0 {
        return Err(CliError::Schema("trials must be positive".into()));
    }
    let reports = falsify_all(trials, cfg.seed)?;
    let mut w = run.writer("bounds_report.csv")?;
    write_report(&mut w, &reports)?;
    flush(w)?;
    let mut total = 0;
    for r in &reports {
        run.record(r.proposition, format!("violations {} / {}, max ratio {:.6}", r.violations, r.trials, r.max_ratio));
        total += r.violations;
    }
    run.record("violations", total);
    if total > 0 {
        return Err(CliError::BoundViolated(format!("{total} bound violations found")));
    }
    Ok(())
}

pub fn bounds_calc(cfg: &RunConfig, run: &mut RunDir) -> CmdResult {
    let inp = &cfg.bounds.inputs;
    inp.validate()?;
    let rows = [
        ("model_free_generalization", MODEL_FREE_GEN_FORMULA, gen_bound_model_free(inp)?),
        ("model_based_generalization", MODEL_BASED_GEN_FORMULA, gen_bound_model_based(inp)?),
        ("model_free_suboptimality", MODEL_FREE_SUBOPT_FORMULA, subopt_bound_model_free(inp)?),
        ("model_based_suboptimality", MODEL_BASED_SUBOPT_FORMULA, subopt_bound_model_based(inp)?),
    ];
    let mut w = run.writer("bounds.csv")?;
    writeln!(w, "quantity,value")?;
    for (name, formula, value) in rows {
        println!("# {name}: {formula}");
        run.record(name, value);
        writeln!(w, "{name},{value}")?;
    }
    for (name, value) in
        [("bellman_budget", prescribed_bellman_budget(inp)?), ("confidence_radius", prescribed_radius(inp)?)]
    {
        run.record(name, value);
        writeln!(w, "{name},{value}")?;
    }
    flush(w)?;
    run.record("note", CONSTANT_NOTE);
    Ok(())
}

pub fn approx_gap(cfg: &RunConfig, xi: f64, run: &mut RunDir) -> CmdResult {
    if xi.is_nan() || xi <= 0.0 {
        return Err(CliError::Schema(format!("xi {xi} must be positive")));
    }
    let gap = &cfg.approx_gap;
    gap.validate()?;
    let rows = fit_deepsets_sweep(gap)?;
    let mut w = run.writer("sweep.csv")?;
    write_sweep(&mut w, &rows)?;
    flush(w)?;
    run.record("xi", xi);
    for &d in &gap.dims {
        let curve: Vec<String> =
            median_sup_error(&rows, d).iter().map(|(w, e)| format!("{w}:{e:.4e}")).collect();
        run.record(&format!("median_sup_error_d{d}"), curve.join(" "));
        let needed = width_needed(&rows, d, xi).map_or("none".to_string(), |w| w.to_string());
        run.record(&format!("width_needed_d{d}"), needed);
    }
    Ok(())
}

pub fn mle_probe(cfg: &RunConfig, run: &mut RunDir) -> CmdResult {
    let p = &cfg.mle_probe;
    p.dynamics.validate()?;
    p.fit.validate()?;
    let task = SyntheticTask::random(&p.dynamics, p.agents, p.state_dim, p.n_actions, p.sigma, p.task_seed)?;
    let seeds: Vec<u64> = p.seeds.iter().map(|s| s.wrapping_add(cfg.seed)).collect();
    let rows = mle_consistency_probe(&task, &p.sizes, &seeds, &p.fit, p.eval_points)?;
    let mut w = run.writer("probe.csv")?;
    write_probe(&mut w, &rows)?;
    flush(w)?;
    let medians = median_by_size(&rows, &p.sizes);
    for (n, m) in &medians {
        run.record(&format!("median_mean_sq_tv_n{n}"), m);
    }
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    run.record("strictly_decreasing", decreasing);
    Ok(())
}
