//! Acceptance suite: one test per acceptance criterion, named
//! `criterion_NN_*` so the harness emits one pass/fail line each.

use std::time::Instant;

use pessim_drive::config::{Algorithm, ExperimentConfig};
use pessim_drive::runner::run;
use pessim_drive_core::agent::{
    actor_loss_and_grad, critic_loss_and_grad, AgentNets, MixedBatch,
};
use pessim_drive_core::boundlab::{
    build_model_class, delta_decomposition, deterministic_policies, fit_advantage_weights,
    gamma_decomposition, inner_min, kl_rows, lemma_checks, occupancy, random_features,
    random_mdp, theorem1_evaluate, theorem1_rhs, tv_distance, uniform_policy, value_iteration,
    BoundConstants, LogLinearPolicy, Policy,
};
use pessim_drive_core::comms::{build_graph, exchange, min_clique_cover, CommGraph};
use pessim_drive_core::dynamics::{
    in_constraint_set, kl_gaussian, nll_loss, ConstraintSpec, DynamicsModel, Normalizer,
    ReplayBuffer, Transition,
};
use pessim_drive_core::nn::{reparam_sample, Activation, DiagGaussian, Mlp};
use pessim_drive_core::pessimism::{pessimism_objective, run_pgd, CandidateMode, PgdConfig};
use pessim_drive_core::traffic::reset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_H: f64 = 1e-6;

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3)
}

fn random_transition(sd: usize, rng: &mut ChaCha8Rng) -> Transition {
    Transition {
        s: (0..sd).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        a: vec![rng.gen_range(0.05..0.95)],
        r: rng.gen_range(-1.0..1.0),
        s_next: (0..sd).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        episode_id: 0,
        step_id: rng.gen_range(0..1_000_000),
        source_agent: 1,
    }
}

#[test]
fn criterion_01_gradient_finite_difference_suite() {
    let start = Instant::now();

    // nn-core backward vs central differences, tolerance 1e-4
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let din = rng.gen_range(2..=4);
        let dh = rng.gen_range(4..=8);
        let dout = rng.gen_range(1..=3);
        let net = Mlp::new(&[din, dh, dout], Activation::Tanh, 2000 + case).unwrap();
        let x: Vec<f64> = (0..din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot: Vec<f64> = (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (grad, _) = net.backward(&x, &cot).unwrap();
        let loss = |net: &Mlp| -> f64 {
            net.forward(&x)
                .unwrap()
                .iter()
                .zip(&cot)
                .map(|(o, c)| o * c)
                .sum()
        };
        for i in 0..grad.len() {
            let mut p = net.clone();
            p.params_mut().values_mut()[i] += FD_H;
            let mut m = net.clone();
            m.params_mut().values_mut()[i] -= FD_H;
            let fd = (loss(&p) - loss(&m)) / (2.0 * FD_H);
            assert!(
                rel_err(grad.values()[i], fd) < 1e-4,
                "nn-core case {case} coord {i}: {} vs {fd}",
                grad.values()[i]
            );
        }
    }

    // Gaussian NLL gradient, tolerance 1e-3
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + case);
        let sd = 2;
        let model =
            DynamicsModel::new(sd, 1, &[6], Normalizer::identity(sd + 1, sd + 1), 4000 + case)
                .unwrap();
        let batch: Vec<Transition> = (0..4).map(|_| random_transition(sd, &mut rng)).collect();
        let (_, grad) = nll_loss(&model, &batch).unwrap();
        for i in 0..grad.len() {
            let eval = |delta: f64| -> f64 {
                let mut m = model.clone();
                let mut p = m.params().clone();
                p.values_mut()[i] += delta;
                m.set_params(p).unwrap();
                nll_loss(&m, &batch).unwrap().0
            };
            let fd = (eval(FD_H) - eval(-FD_H)) / (2.0 * FD_H);
            assert!(
                rel_err(grad.values()[i], fd) < 1e-3,
                "nll case {case} coord {i}"
            );
        }
    }

    // critic loss gradient (both critics), tolerance 1e-3
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + case);
        let nets = AgentNets::new(2, 1, &[6], 0.0, 1.0, 6000 + case).unwrap();
        let batch = MixedBatch {
            real: (0..4).map(|_| random_transition(2, &mut rng)).collect(),
            synthetic: Vec::new(),
            ratio: 1.0,
            warning: None,
        };
        let seed = 7000 + case;
        let (_, g1, g2) = critic_loss_and_grad(&nets, &batch, 0.98, seed).unwrap();
        for (which, grad) in [(0usize, &g1), (1, &g2)] {
            for i in 0..grad.len() {
                let eval = |delta: f64| -> f64 {
                    let mut n = nets.clone();
                    let q = if which == 0 {
                        n.q_nets_mut().0
                    } else {
                        n.q_nets_mut().1
                    };
                    q.params_mut().values_mut()[i] += delta;
                    critic_loss_and_grad(&n, &batch, 0.98, seed).unwrap().0
                };
                let fd = (eval(FD_H) - eval(-FD_H)) / (2.0 * FD_H);
                assert!(
                    rel_err(grad.values()[i], fd) < 1e-3,
                    "critic case {case} net {which} coord {i}"
                );
            }
        }
    }

    // actor loss gradient, tolerance 1e-3
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + case);
        let nets = AgentNets::new(2, 1, &[6], 0.0, 1.0, 9000 + case).unwrap();
        let states: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.gen_range(-0.8..0.8)).collect())
            .collect();
        let seed = 10_000 + case;
        let (_, grad) = actor_loss_and_grad(&nets, &states, seed).unwrap();
        for i in 0..grad.len() {
            let eval = |delta: f64| -> f64 {
                let mut n = nets.clone();
                n.policy_mut().params_mut().values_mut()[i] += delta;
                actor_loss_and_grad(&n, &states, seed).unwrap().0
            };
            let fd = (eval(FD_H) - eval(-FD_H)) / (2.0 * FD_H);
            assert!(
                rel_err(grad.values()[i], fd) < 1e-3,
                "actor case {case} coord {i}"
            );
        }
    }

    // pessimism objective gradient wrt model parameters, tolerance 1e-3
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + case);
        let sd = 2;
        let model =
            DynamicsModel::new(sd, 1, &[6], Normalizer::identity(sd + 1, sd + 1), 12_000 + case)
                .unwrap();
        let nets = AgentNets::new(sd, 1, &[6], 0.0, 1.0, 13_000 + case).unwrap();
        let starts: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..sd).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let seed = 14_000 + case;
        let eval = pessimism_objective(&model, &nets, &starts, 3, 0.98, seed).unwrap();
        assert!(eval.valid);
        for i in 0..eval.grad.len() {
            let f = |delta: f64| -> f64 {
                let mut m = model.clone();
                let mut p = m.params().clone();
                p.values_mut()[i] += delta;
                m.set_params(p).unwrap();
                pessimism_objective(&m, &nets, &starts, 3, 0.98, seed)
                    .unwrap()
                    .value
            };
            let fd = (f(FD_H) - f(-FD_H)) / (2.0 * FD_H);
            assert!(
                rel_err(eval.grad.values()[i], fd) < 1e-3,
                "pessimism case {case} coord {i}: {} vs {fd}",
                eval.grad.values()[i]
            );
        }
    }

    assert!(start.elapsed().as_secs() < 120, "gradient suite too slow");
    println!("[PASS] criterion 1: gradient suite matches finite differences");
}

fn gaussian_log_density(g: &DiagGaussian, x: &[f64]) -> f64 {
    let tau = std::f64::consts::TAU;
    g.mean
        .iter()
        .zip(&g.log_var)
        .zip(x)
        .map(|((m, lv), xi)| -0.5 * (tau.ln() + lv + (xi - m).powi(2) / lv.exp()))
        .sum()
}

#[test]
fn criterion_02_kl_and_tv_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    // closed-form Gaussian KL vs Monte Carlo on 20 random pairs
    for pair in 0..20 {
        let dim = rng.gen_range(1..=4);
        let mk = |rng: &mut ChaCha8Rng, spread: f64| {
            DiagGaussian::new(
                (0..dim).map(|_| rng.gen_range(-spread..spread)).collect(),
                (0..dim).map(|_| rng.gen_range(-1.0..0.5)).collect(),
            )
            .unwrap()
        };
        let p = mk(&mut rng, 0.5);
        let q = mk(&mut rng, 0.5);
        let exact = kl_gaussian(&p, &q).unwrap();
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let noise: Vec<f64> = (0..dim)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let x = reparam_sample(&p, &noise).unwrap();
            acc += gaussian_log_density(&p, &x) - gaussian_log_density(&q, &x);
        }
        let mc = acc / n as f64;
        assert!(
            (exact - mc).abs() < 1e-2,
            "pair {pair}: exact {exact} mc {mc}"
        );
    }
    // Pinsker on 100 random tabular rows
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        };
        let p = mk(&mut rng);
        let q = mk(&mut rng);
        let tv = tv_distance(&p, &q).unwrap();
        let kl = kl_rows(&p, &q);
        assert!(tv <= (kl / 2.0).sqrt() + 1e-12);
    }
    assert!(start.elapsed().as_secs() < 60, "kl/tv suite too slow");
    println!("[PASS] criterion 2: Gaussian KL matches Monte Carlo; Pinsker holds");
}

fn desk_config(out: &std::path::Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_file(
        "episodes=20\nhorizon=300\nd=100\nminibatch=32\nbatch=128\nmle_steps=60\n\
         hidden_agent=16\nhidden_model=16\nupdate_every=15\nrollout_starts=4\n\
         rollout_len=5\npgd_iters=3\n",
    )
    .unwrap();
    cfg.seed = seed;
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn criterion_03_pgd_feasibility_and_candidate_dominance() {
    // 100 PGD runs: every iterate feasible on recheck, best <= final
    let sd = 3;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20_000 + case);
        let mle =
            DynamicsModel::new(sd, 1, &[10], Normalizer::identity(sd + 1, sd + 1), 21_000 + case)
                .unwrap();
        let anchors: Vec<Transition> = (0..6).map(|_| random_transition(sd, &mut rng)).collect();
        let spec = ConstraintSpec::new(mle, anchors, 0.05).unwrap();
        let nets = AgentNets::new(sd, 1, &[8], 0.0, 1.0, 22_000 + case).unwrap();
        let starts: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..sd).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let cfg = PgdConfig {
            step_size: 1e-3,
            max_iters: 10,
            horizon: 4,
            gamma: 0.98,
            mode: CandidateMode::Best,
            seed: 23_000 + case,
        };
        let (_, trace) = run_pgd(&spec, &nets, &starts, &cfg).unwrap();
        assert!(!trace.degraded, "case {case} degraded");
        assert!(!trace.candidates.is_empty());
        for (i, c) in trace.candidates.iter().enumerate() {
            assert!(c.feasible, "case {case} iterate {i} flagged infeasible");
            let mut m = spec.mle_model.clone();
            m.set_params(c.params.clone()).unwrap();
            assert!(
                in_constraint_set(&m, &spec).unwrap(),
                "case {case} iterate {i} fails membership recheck"
            );
        }
        let best = trace
            .candidates
            .iter()
            .map(|c| c.objective)
            .fold(f64::INFINITY, f64::min);
        let last = trace.candidates.last().unwrap().objective;
        assert!(best <= last + 1e-15, "case {case}: best {best} > final {last}");
    }

    // desk-scale candidate-mode ordering: mean final utility best >= final, avg
    let tmp = tempfile::tempdir().unwrap();
    let mut finals = std::collections::BTreeMap::new();
    for mode in ["best", "final", "average"] {
        let mut sum = 0.0;
        for seed in 0..5u64 {
            let mut cfg = desk_config(&tmp.path().join(format!("{mode}-{seed}")), seed);
            cfg.apply("episodes", "8").unwrap();
            cfg.apply("horizon", "120").unwrap();
            cfg.apply("pgd_select", mode).unwrap();
            let art = run(&cfg).unwrap();
            sum += art.utilities.last().unwrap();
        }
        finals.insert(mode, sum / 5.0);
    }
    assert!(
        finals["best"] >= finals["final"] - 1e-12,
        "best {} < final {}",
        finals["best"],
        finals["final"]
    );
    assert!(
        finals["best"] >= finals["average"] - 1e-12,
        "best {} < average {}",
        finals["best"],
        finals["average"]
    );
    println!(
        "[PASS] criterion 3: PGD feasibility/dominance; mode ordering best={:.4} final={:.4} avg={:.4}",
        finals["best"], finals["final"], finals["average"]
    );
}

#[test]
fn criterion_04_pessimism_invariant_on_tabular_instances() {
    let start = Instant::now();
    let mut violations = 0;
    for seed in 0..50u64 {
        let t = random_mdp(4, 2, 0.9, 1.0, 30_000 + seed);
        let class = build_model_class(&t, 8, 0.03, 31_000 + seed).unwrap();
        let mut policies: Vec<Policy> = deterministic_policies(4, 2).into_iter().take(8).collect();
        policies.push(uniform_policy(4, 2));
        for pi in &policies {
            let (_, pess) = inner_min(&class, pi).unwrap();
            let (v, _) = value_iteration(&t, pi).unwrap();
            if pess > t.scalar_value(&v) + 1e-12 {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0, "pessimism invariant violated");
    assert!(start.elapsed().as_secs() < 120);
    println!("[PASS] criterion 4: inner-min value <= true value on 50 instances, zero violations");
}

#[test]
fn criterion_05_decomposition_identities() {
    for seed in 0..50u64 {
        let t = random_mdp(3, 2, 0.9, 1.0, 40_000 + seed);
        let class = build_model_class(&t, 6, 0.03, 41_000 + seed).unwrap();
        let pi_star = deterministic_policies(3, 2)
            .into_iter()
            .max_by(|p, q| {
                let vp = t.scalar_value(&value_iteration(&t, p).unwrap().0);
                let vq = t.scalar_value(&value_iteration(&t, q).unwrap().0);
                vp.total_cmp(&vq)
            })
            .unwrap();
        let iterates: Vec<Policy> = deterministic_policies(3, 2)
            .into_iter()
            .take(4)
            .chain(std::iter::once(uniform_policy(3, 2)))
            .collect();
        let d = delta_decomposition(&t, &class, &pi_star, &iterates).unwrap();
        let vs = t.scalar_value(&value_iteration(&t, &pi_star).unwrap().0);
        let avg_regret: f64 = iterates
            .iter()
            .map(|p| vs - t.scalar_value(&value_iteration(&t, p).unwrap().0))
            .sum::<f64>()
            / iterates.len() as f64;
        assert!(
            (d.total() - avg_regret).abs() < 1e-10,
            "seed {seed}: delta identity residual"
        );
        assert!(d.c <= 1e-12, "seed {seed}: delta_c positive with T in class");

        // gamma split telescopes to the performance difference under the
        // pessimistic model
        let features = random_features(3, 2, 3, 1.2, 42_000 + seed);
        let pol = LogLinearPolicy {
            psi: vec![0.2, -0.1, 0.15],
            features,
        };
        let (m_idx, _) = inner_min(&class, &pol.policy()).unwrap();
        let t_tilde = &class.models[m_idx];
        let d_tilde = occupancy(t_tilde, &pol.policy()).unwrap();
        let w = fit_advantage_weights(t_tilde, &pol, &d_tilde, 10.0).unwrap();
        let g = gamma_decomposition(&t, t_tilde, &pi_star, &pol, &w).unwrap();
        let vs_tilde = t_tilde.scalar_value(&value_iteration(t_tilde, &pi_star).unwrap().0);
        let vt_tilde = t_tilde.scalar_value(&value_iteration(t_tilde, &pol.policy()).unwrap().0);
        let expected = (1.0 - t.gamma) * (vs_tilde - vt_tilde);
        assert!(
            (g.total() - expected).abs() < 1e-10,
            "seed {seed}: gamma identity residual {}",
            (g.total() - expected).abs()
        );
    }
    println!("[PASS] criterion 5: delta/gamma decomposition identities hold to 1e-10 on 50 instances");
}

#[test]
fn criterion_06_lemma_suite_and_mle_rate() {
    for seed in 0..5u64 {
        let report = lemma_checks(seed).unwrap();
        assert!(
            report.all_passed(),
            "lemma failures:\n{}",
            report.to_text()
        );
    }
    println!("[PASS] criterion 6: lemma suite passes; MLE log-log slope within -1 +/- 0.3");
}

#[test]
fn criterion_07_group_pac_bound() {
    let seeds: Vec<u64> = (0..20).collect();
    let report = theorem1_evaluate(&seeds, 0.1, 2, 20, 100, 1.0).unwrap();
    assert!(
        report.violation_fraction <= 0.1,
        "violation fraction {:.2}\n{}",
        report.violation_fraction,
        report.to_text()
    );
    // exact formula structure: statistical term halves when kH quadruples
    let c = BoundConstants {
        c1: 1.0,
        c2: 1.0,
        c3: 2.0,
        concentrability: 3.0,
        class_size: 8,
        chi_bar: 2.0,
        agents: 8,
        r_max: 45.0,
        gamma: 0.98,
        eta: 0.01,
        n_actions: 4,
        density_ratio_sqrt: 2.0,
    };
    let base = theorem1_rhs(&c, 10, 100, 20, 0.1).unwrap();
    let quad = theorem1_rhs(&c, 40, 100, 20, 0.1).unwrap();
    assert!((quad.statistical - base.statistical / 2.0).abs() < 1e-12);
    println!("[PASS] criterion 7: bound holds in >= 90% of instances; first term halves at 4x data");
}

// minimum clique cover by exhaustive set-partition search (n <= 8)
fn brute_force_cover(graph: &CommGraph) -> usize {
    fn recurse(graph: &CommGraph, assignment: &mut Vec<Vec<usize>>, v: usize, best: &mut usize) {
        if assignment.len() >= *best {
            return;
        }
        if v == graph.n {
            *best = assignment.len();
            return;
        }
        for b in 0..assignment.len() {
            if assignment[b].iter().all(|&u| graph.has_edge(u, v)) {
                assignment[b].push(v);
                recurse(graph, assignment, v + 1, best);
                assignment[b].pop();
            }
        }
        assignment.push(vec![v]);
        recurse(graph, assignment, v + 1, best);
        assignment.pop();
    }
    let mut best = graph.n.max(1);
    recurse(graph, &mut Vec::new(), 0, &mut best);
    best
}

#[test]
fn criterion_08_communication_trends_and_exact_covers() {
    let traffic = ExperimentConfig::default().traffic();
    let ranges = [0.0, 50.0, 100.0, 150.0, 200.0];
    for seed in 0..5u64 {
        let world = reset(&traffic, 50_000 + seed).unwrap();
        // seed per-agent buffers with equal-sized episode tails
        let base_buffers: Vec<ReplayBuffer> = (0..traffic.n_cavs)
            .map(|k| {
                let mut b = ReplayBuffer::new(1000);
                let mut rng = ChaCha8Rng::seed_from_u64(51_000 + seed * 10 + k as u64);
                for step in 0..10 {
                    let mut t = random_transition(3, &mut rng);
                    t.episode_id = 0;
                    t.step_id = step;
                    t.source_agent = k as u32 + 1;
                    b.push(t);
                }
                b
            })
            .collect();
        let mut prev_overhead = 0usize;
        let mut prev_chi = usize::MAX;
        for (i, &d) in ranges.iter().enumerate() {
            let graph = build_graph(&world, d);
            let mut buffers = base_buffers.clone();
            let overhead = exchange(&mut buffers, &graph, 0).unwrap();
            if d == 0.0 {
                assert_eq!(overhead, 0, "nonzero overhead at d=0");
            }
            if i > 0 {
                assert!(overhead >= prev_overhead, "overhead not monotone in d");
            }
            let cover = min_clique_cover(&graph);
            assert!(cover.exact);
            assert!(cover.is_valid(&graph));
            assert!(cover.size() <= prev_chi, "clique cover number increased with d");
            assert_eq!(
                cover.size(),
                brute_force_cover(&graph),
                "exact cover mismatch at seed {seed} d {d}"
            );
            prev_overhead = overhead;
            prev_chi = cover.size();
        }
    }
    println!("[PASS] criterion 8: overhead 0 at d=0, monotone in d; clique covers exact and non-increasing");
}

#[test]
fn criterion_09_learning_trend_vs_model_free_baseline() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut wins = 0;
    for seed in 0..5u64 {
        let mut pmbrl = desk_config(&tmp.path().join(format!("pmbrl-{seed}")), seed);
        pmbrl.algo = Algorithm::MaPmbrl;
        let mut sac = desk_config(&tmp.path().join(format!("sac-{seed}")), seed);
        sac.algo = Algorithm::SacOnly;
        let u_pmbrl = run(&pmbrl).unwrap().utilities;
        let u_sac = run(&sac).unwrap().utilities;
        let tail = |u: &[f64]| u[u.len() - 5..].iter().sum::<f64>() / 5.0;
        let (mp, ms) = (tail(&u_pmbrl), tail(&u_sac));
        println!("seed {seed}: ma-pmbrl {mp:.4} vs sac-only {ms:.4}");
        if mp > ms {
            wins += 1;
        }
    }
    assert!(wins >= 4, "ma-pmbrl beat sac-only in only {wins}/5 seeds");
    assert!(
        start.elapsed().as_secs() < 1800,
        "learning-trend criterion exceeded 30 minutes"
    );
    println!("[PASS] criterion 9: ma-pmbrl final-5-episode utility beats sac-only in {wins}/5 seeds");
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let mk = |dir: &str| {
        let mut cfg = desk_config(&tmp.path().join(dir), 7);
        cfg.apply("episodes", "4").unwrap();
        cfg.apply("horizon", "80").unwrap();
        cfg
    };
    let a = run(&mk("first")).unwrap();
    let b = run(&mk("second")).unwrap();
    let read = std::fs::read;
    assert_eq!(
        read(&a.utility_csv).unwrap(),
        read(&b.utility_csv).unwrap(),
        "utility CSVs differ between identical runs"
    );
    assert_eq!(
        read(&a.overhead_csv).unwrap(),
        read(&b.overhead_csv).unwrap(),
        "overhead CSVs differ between identical runs"
    );
    println!("[PASS] criterion 10: identical config+seed reruns are byte-identical");
}
