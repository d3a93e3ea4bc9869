//! Training harness: wires the simulator, dynamics learning, pessimistic
//! model selection, SAC updates, and episode-end data exchange into one
//! reproducible run.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use pessim_drive_core::agent::{
    actor_update, critic_update, mix_batches, q_bound_violations, temperature_update, AgentNets,
    R_MAX,
};
use pessim_drive_core::comms::{build_graph, exchange, min_clique_cover, ExchangeRecord};
use pessim_drive_core::dynamics::{
    fit_mle, rollout, ConstraintSpec, DynamicsModel, FitConfig, ReplayBuffer, Transition,
};
use pessim_drive_core::pessimism::{run_pgd, PgdConfig};
use pessim_drive_core::traffic::{
    assemble_observation, cav_indices, reset, step_world, utility, OBS_DIM,
};
use pessim_drive_core::{CoreError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Algorithm, ExperimentConfig};

/// Mixes run-level identifiers into independent RNG streams (splitmix-style).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x1234_5678);
    for &p in parts {
        z ^= p.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(31);
        z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 29;
    }
    z
}

/// Paths and summary numbers produced by one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub utilities: Vec<f64>,
    pub overhead: Vec<ExchangeRecord>,
    pub utility_csv: PathBuf,
    pub training_csv: PathBuf,
    pub overhead_csv: PathBuf,
    pub pgd_csv: PathBuf,
    pub manifest: PathBuf,
}

struct Artifacts {
    out_dir: PathBuf,
    utility: String,
    training: String,
    overhead_rows: String,
    pgd: String,
}

impl Artifacts {
    fn new(out_dir: PathBuf) -> Self {
        Self {
            out_dir,
            utility: String::from("config,seed,episode,utility\n"),
            training: String::from(
                "config,seed,episode,step,agent,critic_loss,actor_loss,temperature,q_violations\n",
            ),
            overhead_rows: String::from("config,seed,d,episode,transitions_tx,chi_bar\n"),
            pgd: String::from("config,seed,episode,step,agent,iter,objective,feasible,kl\n"),
        }
    }

    /// Writes whatever has been accumulated; used on both success and abort
    /// so partial artifacts survive failures.
    fn flush(&self) -> Result<(PathBuf, PathBuf, PathBuf, PathBuf)> {
        fs::create_dir_all(&self.out_dir)?;
        let u = self.out_dir.join("utility.csv");
        let t = self.out_dir.join("training_log.csv");
        let o = self.out_dir.join("overhead.csv");
        let p = self.out_dir.join("pgd_trace.csv");
        fs::write(&u, &self.utility)?;
        fs::write(&t, &self.training)?;
        fs::write(&o, &self.overhead_rows)?;
        fs::write(&p, &self.pgd)?;
        Ok((u, t, o, p))
    }
}

struct AgentRuntime {
    nets: AgentNets,
    model_buf: ReplayBuffer,
    mle: Option<DynamicsModel>,
    spec: Option<ConstraintSpec>,
    selected: Option<DynamicsModel>,
}

/// Executes the configured experiment end to end and writes all artifacts
/// into `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let hash = cfg.hash();
    let manifest_path = cfg.out_dir.join("manifest.txt");
    fs::write(
        &manifest_path,
        format!("{}seed={}\nhash={}\n", cfg.canonical_text(), cfg.seed, hash),
    )?;

    let mut artifacts = Artifacts::new(cfg.out_dir.clone());
    let result = run_inner(cfg, &hash, &mut artifacts);
    let (u, t, o, p) = artifacts.flush()?;
    let (utilities, overhead) = result?;
    Ok(RunArtifacts {
        out_dir: cfg.out_dir.clone(),
        utilities,
        overhead,
        utility_csv: u,
        training_csv: t,
        overhead_csv: o,
        pgd_csv: p,
        manifest: manifest_path,
    })
}

fn run_inner(
    cfg: &ExperimentConfig,
    hash: &str,
    art: &mut Artifacts,
) -> Result<(Vec<f64>, Vec<ExchangeRecord>)> {
    let traffic_cfg = cfg.traffic();
    let n = cfg.n_cavs;
    let mut agents: Vec<AgentRuntime> = (0..n)
        .map(|k| {
            Ok(AgentRuntime {
                nets: AgentNets::new(
                    OBS_DIM,
                    1,
                    &cfg.hidden_agent,
                    0.0,
                    cfg.v_max,
                    derive_seed(cfg.seed, &[k as u64, 1]),
                )?,
                model_buf: ReplayBuffer::new(cfg.model_capacity),
                mle: None,
                spec: None,
                selected: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut real: Vec<ReplayBuffer> = (0..n).map(|_| ReplayBuffer::new(cfg.real_capacity)).collect();

    let mut utilities = Vec::with_capacity(cfg.episodes);
    let mut overhead_records = Vec::new();

    for ep in 0..cfg.episodes as u32 {
        // model refit at episode start, once the buffer can feed it
        if ep >= 1 && cfg.algo != Algorithm::SacOnly {
            for (k, agent) in agents.iter_mut().enumerate() {
                if real[k].len() < cfg.minibatch.max(2) {
                    continue;
                }
                let fit = FitConfig {
                    hidden: cfg.hidden_model.clone(),
                    train_steps: cfg.mle_steps,
                    minibatch: cfg.minibatch,
                    lr: cfg.lr_model,
                    seed: derive_seed(cfg.seed, &[k as u64, ep as u64, 2]),
                };
                let mle = fit_mle(&real[k], &fit)?;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[k as u64, ep as u64, 3]));
                let anchor = real[k].sample(cfg.batch.min(real[k].len()), &mut rng);
                agent.spec = Some(ConstraintSpec::new(mle.clone(), anchor, cfg.xi)?);
                agent.selected = Some(mle.clone());
                agent.mle = Some(mle);
            }
        }

        let mut world = reset(&traffic_cfg, derive_seed(cfg.seed, &[ep as u64, 4]))?;
        let cavs = cav_indices(&world);
        let mut features: Vec<Vec<f64>> = cavs
            .iter()
            .map(|&vi| assemble_observation(&world, vi).features(&traffic_cfg))
            .collect();
        let mut act_rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|k| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[k as u64, ep as u64, 5])))
            .collect();
        let mut speeds_per_step: Vec<Vec<f64>> = Vec::with_capacity(cfg.horizon);

        for t in 0..cfg.horizon as u32 {
            let actions: Vec<f64> = if ep == 0 {
                // initial episode: uniform random target velocities
                agents
                    .iter()
                    .enumerate()
                    .map(|(k, _)| {
                        use rand::Rng;
                        act_rngs[k].gen_range(0.0..cfg.v_max)
                    })
                    .collect()
            } else {
                agents
                    .iter()
                    .enumerate()
                    .map(|(k, a)| Ok(a.nets.act(&features[k], false, &mut act_rngs[k])?[0]))
                    .collect::<Result<_>>()?
            };
            let outcome = step_world(&mut world, &actions)?;
            speeds_per_step.push(outcome.observations.iter().map(|o| o.v).collect());
            let next_features: Vec<Vec<f64>> = outcome
                .observations
                .iter()
                .map(|o| o.features(&traffic_cfg))
                .collect();
            for k in 0..n {
                real[k].push(Transition {
                    s: features[k].clone(),
                    a: vec![actions[k]],
                    r: outcome.rewards[k],
                    s_next: next_features[k].clone(),
                    episode_id: ep,
                    step_id: t,
                    source_agent: k as u32 + 1,
                });
            }
            features = next_features;

            if ep >= 1 && t as usize % cfg.update_every == 0 {
                update_agents(cfg, hash, art, &mut agents, &real, ep, t)?;
            }
            if outcome.done {
                break;
            }
        }

        let u = utility(&speeds_per_step, cfg.dt, cfg.horizon);
        let _ = writeln!(art.utility, "{hash},{},{ep},{u:.9}", cfg.seed);
        utilities.push(u);

        // episode-end exchange over the current neighbor graph
        let graph = build_graph(&world, cfg.d);
        let tx = exchange(&mut real, &graph, ep)?;
        let cover = min_clique_cover(&graph);
        let record = ExchangeRecord {
            d: cfg.d,
            episode: ep,
            transitions_tx: tx,
            chi_bar: cover.size(),
        };
        let _ = writeln!(
            art.overhead_rows,
            "{hash},{},{},{},{},{}",
            cfg.seed, record.d, record.episode, record.transitions_tx, record.chi_bar
        );
        overhead_records.push(record);
    }
    Ok((utilities, overhead_records))
}

fn update_agents(
    cfg: &ExperimentConfig,
    hash: &str,
    art: &mut Artifacts,
    agents: &mut [AgentRuntime],
    real: &[ReplayBuffer],
    ep: u32,
    t: u32,
) -> Result<()> {
    for (k, agent) in agents.iter_mut().enumerate() {
        if real[k].is_empty() {
            continue;
        }
        let base = derive_seed(cfg.seed, &[k as u64, ep as u64, t as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, &[6]));
        if cfg.algo != Algorithm::SacOnly {
            if let (Some(spec), Some(_)) = (&agent.spec, &agent.mle) {
                let starts: Vec<Vec<f64>> = real[k]
                    .sample(cfg.rollout_starts, &mut rng)
                    .into_iter()
                    .map(|tr| tr.s)
                    .collect();
                if !starts.is_empty() {
                    if cfg.algo == Algorithm::MaPmbrl {
                        let pgd_cfg = PgdConfig {
                            step_size: cfg.lr_pgd,
                            max_iters: cfg.pgd_iters,
                            horizon: cfg.rollout_len,
                            gamma: cfg.gamma,
                            mode: cfg.pgd_mode,
                            seed: derive_seed(base, &[7]),
                        };
                        let (selected, trace) = run_pgd(spec, &agent.nets, &starts, &pgd_cfg)?;
                        for (i, c) in trace.candidates.iter().enumerate() {
                            let _ = writeln!(
                                art.pgd,
                                "{hash},{},{ep},{t},{k},{},{:.9e},{},{:.9e}",
                                cfg.seed,
                                i + 1,
                                c.objective,
                                c.feasible,
                                c.kl
                            );
                        }
                        agent.selected = Some(selected);
                    }
                    let model = agent.selected.as_ref().unwrap();
                    let nets = &agent.nets;
                    let (synthetic, _stats) = rollout(
                        model,
                        |s, r| {
                            nets.act(s, false, r)
                                .unwrap_or_else(|_| vec![cfg.v_max / 2.0])
                        },
                        &starts,
                        cfg.rollout_len,
                        k as u32 + 1,
                        derive_seed(base, &[8]),
                    )?;
                    for tr in synthetic {
                        agent.model_buf.push(tr);
                    }
                }
            }
        }

        let batch = mix_batches(
            &real[k],
            &agent.model_buf,
            cfg.ratio,
            cfg.minibatch,
            &mut rng,
        )?;
        if batch.is_empty() {
            continue;
        }
        let critic_loss =
            critic_update(&mut agent.nets, &batch, cfg.gamma, cfg.lr_critic, derive_seed(base, &[9]))?;
        let states: Vec<Vec<f64>> = batch.iter().map(|tr| tr.s.clone()).collect();
        let actor_loss =
            actor_update(&mut agent.nets, &states, cfg.lr_actor, derive_seed(base, &[10]))?;
        let temp =
            temperature_update(&mut agent.nets, &states, cfg.lr_temp, derive_seed(base, &[11]))?;
        if !critic_loss.is_finite() || !actor_loss.is_finite() || !temp.is_finite() {
            return Err(CoreError::NonFinite("agent update diverged"));
        }
        let violations = q_bound_violations(&agent.nets, &batch, R_MAX, cfg.gamma, 0.1)?;
        let _ = writeln!(
            art.training,
            "{hash},{},{ep},{t},{k},{critic_loss:.6e},{actor_loss:.6e},{temp:.6e},{violations}",
            cfg.seed
        );
    }
    Ok(())
}
