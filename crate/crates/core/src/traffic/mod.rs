//! Deterministic figure-eight single-lane traffic microsimulation.
//!
//! The track is two tangent circles of equal radius with a combined
//! centerline length of `track_length` (480 m by default); vehicles traverse
//! the full loop and conflict where the circles touch. Controlled vehicles
//! track a target velocity through bounded proportional acceleration;
//! human-driven vehicles follow the Intelligent Driver Model.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CoreError, Result};

pub const VEHICLE_LENGTH: f64 = 5.0;
/// Extra spacing required between vehicles at reset.
pub const RESET_MARGIN: f64 = 2.0;
/// Half-width of the conflict window around the crossing, per branch.
pub const CROSSING_HALF_WINDOW: f64 = 5.0;
/// Number of observation features fed to the learners.
pub const OBS_DIM: usize = 8;

// IDM car-following parameters for the human-driven vehicles.
const IDM_DESIRED_SPEED: f64 = 13.89;
const IDM_HEADWAY: f64 = 1.5;
const IDM_MAX_ACCEL: f64 = 2.0;
const IDM_COMFORT_DECEL: f64 = 3.0;
const IDM_JAM_DISTANCE: f64 = 2.0;

// proportional speed tracking for the controlled vehicles
const CAV_GAIN: f64 = 2.0;
const CAV_ACCEL_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Cav,
    Hv,
}

#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: u32,
    pub kind: Kind,
    /// Meters along the loop, in `[0, track_length)`.
    pub arc: f64,
    /// m/s in `[0, v_max]`.
    pub speed: f64,
}

#[derive(Debug, Clone)]
pub struct TrafficConfig {
    pub n_cavs: usize,
    pub n_hvs: usize,
    pub dt: f64,
    pub horizon: usize,
    pub v_max: f64,
    pub sensor_range: f64,
    pub l_safe: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub track_length: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            n_cavs: 8,
            n_hvs: 6,
            dt: 0.1,
            horizon: 1500,
            v_max: 13.89,
            sensor_range: 75.0,
            l_safe: 5.0,
            lambda: 0.85,
            zeta: 7.5,
            track_length: 480.0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cavs == 0 {
            return Err(CoreError::Config("need at least one controlled vehicle".into()));
        }
        if !(4..=12).contains(&self.n_hvs) {
            return Err(CoreError::Config(format!(
                "human-driven vehicle count {} outside [4, 12]",
                self.n_hvs
            )));
        }
        let n = self.n_cavs + self.n_hvs;
        let needed = n as f64 * (VEHICLE_LENGTH + RESET_MARGIN);
        if needed > self.track_length {
            return Err(CoreError::Config(format!(
                "{n} vehicles need {needed:.1} m but the loop is {:.1} m",
                self.track_length
            )));
        }
        if self.dt <= 0.0 || self.horizon == 0 || self.v_max <= 0.0 {
            return Err(CoreError::Config("dt, horizon, v_max must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a `key=value` scenario file ( `#` comments and blank lines
/// allowed).
pub fn parse_scenario(text: &str) -> Result<TrafficConfig> {
    let mut cfg = TrafficConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(CoreError::Parse {
            line: lineno + 1,
            msg: "expected key=value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |msg: String| CoreError::Parse {
            line: lineno + 1,
            msg,
        };
        macro_rules! num {
            () => {
                value.parse().map_err(|e| bad(format!("{key}: {e}")))?
            };
        }
        match key {
            "n_cavs" => cfg.n_cavs = num!(),
            "n_hvs" => cfg.n_hvs = num!(),
            "dt" => cfg.dt = num!(),
            "horizon" => cfg.horizon = num!(),
            "v_max" => cfg.v_max = num!(),
            "sensor_range" => cfg.sensor_range = num!(),
            "l_safe" => cfg.l_safe = num!(),
            "lambda" => cfg.lambda = num!(),
            "zeta" => cfg.zeta = num!(),
            "track_length" => cfg.track_length = num!(),
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub cfg: TrafficConfig,
    pub vehicles: Vec<VehicleState>,
    pub time_step: usize,
    pub seed: u64,
    pub collision: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Observation {
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub v_ahead: f64,
    pub l_ahead: f64,
    pub v_behind: f64,
    pub l_behind: f64,
    pub b: bool,
}

impl Observation {
    /// Fixed-scale feature vector for the learners; every entry lies in
    /// `[-1, 1]` given the Table-of-parameters ranges.
    pub fn features(&self, cfg: &TrafficConfig) -> Vec<f64> {
        let r = cfg.track_length / 2.0 / (2.0 * std::f64::consts::PI);
        vec![
            self.v / cfg.v_max,
            self.x / (2.0 * r),
            self.y / r,
            self.v_ahead / cfg.v_max,
            self.l_ahead / cfg.sensor_range,
            self.v_behind / cfg.v_max,
            self.l_behind / cfg.sensor_range,
            if self.b { 1.0 } else { 0.0 },
        ]
    }
}

/// Planar position of an arc coordinate on the figure-eight.
pub fn position_xy(arc: f64, track_length: f64) -> (f64, f64) {
    let half = track_length / 2.0;
    let r = half / (2.0 * std::f64::consts::PI);
    if arc < half {
        let th = arc / r;
        (-r + r * th.cos(), r * th.sin())
    } else {
        let th = (arc - half) / r;
        (r - r * th.cos(), -r * th.sin())
    }
}

fn wrap(arc: f64, l: f64) -> f64 {
    arc.rem_euclid(l)
}

fn circular_distance(a: f64, b: f64, l: f64) -> f64 {
    let d = (a - b).rem_euclid(l);
    d.min(l - d)
}

/// Places vehicles with spacing >= length + 2 m at zero speed,
/// deterministically per seed.
pub fn reset(cfg: &TrafficConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_cavs + cfg.n_hvs;
    let min_spacing = VEHICLE_LENGTH + RESET_MARGIN;
    let slack = cfg.track_length - n as f64 * min_spacing;
    // random extra gaps proportional to uniform draws
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let wsum: f64 = weights.iter().sum::<f64>().max(1e-12);
    let offset = rng.gen_range(0.0..cfg.track_length);
    let mut kinds: Vec<Kind> = (0..n)
        .map(|i| if i < cfg.n_cavs { Kind::Cav } else { Kind::Hv })
        .collect();
    kinds.shuffle(&mut rng);
    let mut vehicles = Vec::with_capacity(n);
    let mut arc = offset;
    let mut next_cav_id = 1;
    let mut next_hv_id = cfg.n_cavs as u32 + 1;
    for i in 0..n {
        let id = match kinds[i] {
            Kind::Cav => {
                let id = next_cav_id;
                next_cav_id += 1;
                id
            }
            Kind::Hv => {
                let id = next_hv_id;
                next_hv_id += 1;
                id
            }
        };
        vehicles.push(VehicleState {
            id,
            kind: kinds[i],
            arc: wrap(arc, cfg.track_length),
            speed: 0.0,
        });
        arc += min_spacing + slack * weights[i] / wsum;
    }
    Ok(WorldState {
        cfg: cfg.clone(),
        vehicles,
        time_step: 0,
        seed,
        collision: false,
    })
}

/// Nearest leader and follower of vehicle `idx` along the loop: (speed,
/// center-to-center arc gap minus one vehicle length), uncapped.
fn neighbors(world: &WorldState, idx: usize) -> (Option<(f64, f64)>, Option<(f64, f64)>) {
    let l = world.cfg.track_length;
    let me = &world.vehicles[idx];
    let mut ahead: Option<(f64, f64)> = None;
    let mut behind: Option<(f64, f64)> = None;
    for (j, v) in world.vehicles.iter().enumerate() {
        if j == idx {
            continue;
        }
        let da = (v.arc - me.arc).rem_euclid(l);
        let db = (me.arc - v.arc).rem_euclid(l);
        if ahead.map_or(true, |(_, g)| da - VEHICLE_LENGTH < g) {
            ahead = Some((v.speed, da - VEHICLE_LENGTH));
        }
        if behind.map_or(true, |(_, g)| db - VEHICLE_LENGTH < g) {
            behind = Some((v.speed, db - VEHICLE_LENGTH));
        }
    }
    (ahead, behind)
}

/// Observation of one controlled vehicle: nearest neighbors within the
/// sensor range, absent neighbors encoded as (v=0, l=sensor_range).
pub fn assemble_observation(world: &WorldState, vehicle_idx: usize) -> Observation {
    let cfg = &world.cfg;
    let me = &world.vehicles[vehicle_idx];
    let (x, y) = position_xy(me.arc, cfg.track_length);
    let (ahead, behind) = neighbors(world, vehicle_idx);
    let encode = |n: Option<(f64, f64)>| match n {
        Some((v, gap)) if gap <= cfg.sensor_range => (v, gap.max(0.0)),
        _ => (0.0, cfg.sensor_range),
    };
    let (v_ahead, l_ahead) = encode(ahead);
    let (v_behind, l_behind) = encode(behind);
    let raw_min_gap = [ahead, behind]
        .iter()
        .flatten()
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    Observation {
        v: me.speed,
        x,
        y,
        v_ahead,
        l_ahead,
        v_behind,
        l_behind,
        b: raw_min_gap < cfg.l_safe,
    }
}

/// IDM acceleration for a human-driven vehicle, clamped to
/// `[-comfort_decel, max_accel]`.
pub fn hv_controller(world: &WorldState, vehicle_idx: usize) -> f64 {
    let me = &world.vehicles[vehicle_idx];
    let (ahead, _) = neighbors(world, vehicle_idx);
    let free = 1.0 - (me.speed / IDM_DESIRED_SPEED).powi(4);
    let a = match ahead {
        Some((v_lead, gap)) => {
            let s = gap.max(0.1);
            let dv = me.speed - v_lead;
            let s_star = IDM_JAM_DISTANCE
                + me.speed * IDM_HEADWAY
                + me.speed * dv / (2.0 * (IDM_MAX_ACCEL * IDM_COMFORT_DECEL).sqrt());
            IDM_MAX_ACCEL * (free - (s_star.max(0.0) / s).powi(2))
        }
        None => IDM_MAX_ACCEL * free,
    };
    a.clamp(-IDM_COMFORT_DECEL, IDM_MAX_ACCEL)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub observations: Vec<Observation>,
    pub done: bool,
    /// True when any action had to be clamped into the velocity range.
    pub clamped: bool,
}

/// Indices of controlled vehicles ordered by id.
pub fn cav_indices(world: &WorldState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..world.vehicles.len())
        .filter(|&i| world.vehicles[i].kind == Kind::Cav)
        .collect();
    idx.sort_by_key(|&i| world.vehicles[i].id);
    idx
}

fn crossing_conflict(world: &WorldState) -> bool {
    let l = world.cfg.track_length;
    let half = l / 2.0;
    let mut zone0 = false;
    let mut zone_half = false;
    for v in &world.vehicles {
        if circular_distance(v.arc, 0.0, l) <= CROSSING_HALF_WINDOW {
            zone0 = true;
        }
        if circular_distance(v.arc, half, l) <= CROSSING_HALF_WINDOW {
            zone_half = true;
        }
    }
    zone0 && zone_half
}

fn any_rear_end_collision(world: &WorldState) -> bool {
    let l = world.cfg.track_length;
    let n = world.vehicles.len();
    if n < 2 {
        return false;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| world.vehicles[a].arc.total_cmp(&world.vehicles[b].arc));
    for k in 0..n {
        let i = order[k];
        let j = order[(k + 1) % n];
        let gap = (world.vehicles[j].arc - world.vehicles[i].arc).rem_euclid(l) - VEHICLE_LENGTH;
        if gap <= 0.0 {
            return true;
        }
    }
    false
}

/// Advances the world by one step: one target velocity per controlled
/// vehicle (ordered by id). Returns per-CAV rewards and observations from
/// the post-step world.
pub fn step_world(world: &mut WorldState, cav_actions: &[f64]) -> Result<StepOutcome> {
    let cavs = cav_indices(world);
    if cav_actions.len() != cavs.len() {
        return Err(CoreError::Shape {
            expected: cavs.len(),
            got: cav_actions.len(),
            context: "cav actions",
        });
    }
    if world.collision || world.time_step >= world.cfg.horizon {
        return Err(CoreError::Argument("step on a finished episode".into()));
    }
    let cfg = world.cfg.clone();
    let mut clamped = false;
    let mut accels = vec![0.0; world.vehicles.len()];
    for (slot, &vi) in cavs.iter().enumerate() {
        let mut target = cav_actions[slot];
        if !(0.0..=cfg.v_max).contains(&target) {
            target = target.clamp(0.0, cfg.v_max);
            clamped = true;
        }
        let v = world.vehicles[vi].speed;
        accels[vi] = (CAV_GAIN * (target - v)).clamp(-CAV_ACCEL_LIMIT, CAV_ACCEL_LIMIT);
    }
    for i in 0..world.vehicles.len() {
        if world.vehicles[i].kind == Kind::Hv {
            accels[i] = hv_controller(world, i);
        }
    }
    for (i, v) in world.vehicles.iter_mut().enumerate() {
        v.speed = (v.speed + accels[i] * cfg.dt).clamp(0.0, cfg.v_max);
        v.arc = wrap(v.arc + v.speed * cfg.dt, cfg.track_length);
    }
    world.time_step += 1;
    world.collision = any_rear_end_collision(world) || crossing_conflict(world);
    let done = world.collision || world.time_step >= cfg.horizon;

    let mut rewards = Vec::with_capacity(cavs.len());
    let mut observations = Vec::with_capacity(cavs.len());
    for &vi in &cavs {
        let obs = assemble_observation(world, vi);
        let mut r = obs.v + cfg.lambda * (obs.v_ahead + obs.v_behind)
            - if obs.b { cfg.zeta } else { 0.0 };
        r = r.clamp(-crate::agent::R_MAX, crate::agent::R_MAX);
        rewards.push(r);
        observations.push(obs);
    }
    Ok(StepOutcome {
        rewards,
        observations,
        done,
        clamped,
    })
}

/// Mean per-step travel distance per controlled vehicle, normalized by the
/// maximum episode length: `(1/(H*I)) sum_i sum_t v dt`.
pub fn utility(speeds_per_step: &[Vec<f64>], dt: f64, horizon: usize) -> f64 {
    if speeds_per_step.is_empty() {
        return 0.0;
    }
    let i = speeds_per_step[0].len();
    if i == 0 || horizon == 0 {
        return 0.0;
    }
    let total: f64 = speeds_per_step
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v * dt)
        .sum();
    total / (horizon as f64 * i as f64)
}

/// Accumulates trajectory rows `t,vehicle,kind,arc,x,y,v,b,reward` over an
/// episode.
#[derive(Debug, Default)]
pub struct TrajectoryLogger {
    rows: String,
}

impl TrajectoryLogger {
    pub fn new() -> Self {
        Self {
            rows: String::from("t,vehicle,kind,arc,x,y,v,b,reward\n"),
        }
    }

    pub fn record(&mut self, world: &WorldState, rewards: &[f64], obs: &[Observation]) {
        let cavs = cav_indices(world);
        for v in &world.vehicles {
            let (x, y) = position_xy(v.arc, world.cfg.track_length);
            let (kind, b, reward) = match v.kind {
                Kind::Cav => {
                    let slot = cavs
                        .iter()
                        .position(|&i| world.vehicles[i].id == v.id)
                        .unwrap();
                    (
                        "cav",
                        obs.get(slot).map_or(false, |o| o.b),
                        rewards.get(slot).copied().unwrap_or(0.0),
                    )
                }
                Kind::Hv => ("hv", false, 0.0),
            };
            let _ = writeln!(
                self.rows,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
                world.time_step, v.id, kind, v.arc, x, y, v.speed, b as u8, reward
            );
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.rows)?;
        Ok(())
    }

    pub fn contents(&self) -> &str {
        &self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lone_cav_world(speed: f64) -> WorldState {
        WorldState {
            cfg: TrafficConfig::default(),
            vehicles: vec![VehicleState {
                id: 1,
                kind: Kind::Cav,
                arc: 100.0,
                speed,
            }],
            time_step: 0,
            seed: 0,
            collision: false,
        }
    }

    #[test]
    fn reset_places_all_vehicles_with_min_spacing() {
        let cfg = TrafficConfig::default();
        let w = reset(&cfg, 3).unwrap();
        assert_eq!(w.vehicles.len(), 14);
        assert_eq!(cav_indices(&w).len(), 8);
        let l = cfg.track_length;
        let mut arcs: Vec<f64> = w.vehicles.iter().map(|v| v.arc).collect();
        arcs.sort_by(f64::total_cmp);
        for k in 0..arcs.len() {
            let gap = (arcs[(k + 1) % arcs.len()] - arcs[k]).rem_euclid(l);
            assert!(gap >= VEHICLE_LENGTH + RESET_MARGIN - 1e-9, "gap {gap}");
        }
        assert!(w.vehicles.iter().all(|v| v.speed == 0.0));
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let cfg = TrafficConfig::default();
        let a = reset(&cfg, 7).unwrap();
        let b = reset(&cfg, 7).unwrap();
        for (u, v) in a.vehicles.iter().zip(&b.vehicles) {
            assert_eq!(u.id, v.id);
            assert_eq!(u.arc, v.arc);
        }
        let c = reset(&cfg, 8).unwrap();
        assert!(a.vehicles.iter().zip(&c.vehicles).any(|(u, v)| u.arc != v.arc));
    }

    #[test]
    fn reset_rejects_out_of_range_hv_count() {
        let cfg = TrafficConfig {
            n_hvs: 13,
            ..Default::default()
        };
        assert!(matches!(reset(&cfg, 0), Err(CoreError::Config(_))));
    }

    #[test]
    fn reset_rejects_overfull_loop() {
        let cfg = TrafficConfig {
            n_cavs: 40,
            n_hvs: 12,
            track_length: 100.0,
            ..Default::default()
        };
        assert!(matches!(reset(&cfg, 0), Err(CoreError::Config(_))));
    }

    #[test]
    fn solitary_vehicle_observation_uses_absence_encoding() {
        let w = lone_cav_world(10.0);
        let o = assemble_observation(&w, 0);
        assert_eq!((o.v_ahead, o.l_ahead, o.v_behind, o.l_behind), (0.0, 75.0, 0.0, 75.0));
        assert!(!o.b);
    }

    #[test]
    fn isolated_cav_reward_equals_speed() {
        let mut w = lone_cav_world(10.0);
        let out = step_world(&mut w, &[10.0]).unwrap();
        assert!((out.rewards[0] - w.vehicles[0].speed).abs() < 1e-12);
        assert!(!out.observations[0].b);
    }

    #[test]
    fn zero_target_from_rest_stays_put_with_zero_reward() {
        let mut w = lone_cav_world(0.0);
        let arc0 = w.vehicles[0].arc;
        let out = step_world(&mut w, &[0.0]).unwrap();
        assert_eq!(w.vehicles[0].arc, arc0);
        assert_eq!(out.rewards[0], 0.0);
    }

    #[test]
    fn close_pair_triggers_emergency_penalty() {
        let mut w = lone_cav_world(5.0);
        w.vehicles.push(VehicleState {
            id: 2,
            kind: Kind::Cav,
            arc: 100.0 + VEHICLE_LENGTH + 3.0, // gap 3 m < l_safe
            speed: 5.0,
        });
        let out = step_world(&mut w, &[5.0, 5.0]).unwrap();
        let o = &out.observations[0];
        assert!(o.b);
        let expected = o.v + 0.85 * (o.v_ahead + o.v_behind) - 7.5;
        assert!((out.rewards[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn reward_decomposition_property() {
        // r - v - lambda (v_a + v_e) is exactly 0 or -zeta
        let cfg = TrafficConfig::default();
        let mut w = reset(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let actions: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..13.89)).collect();
            let out = step_world(&mut w, &actions).unwrap();
            for (r, o) in out.rewards.iter().zip(&out.observations) {
                let resid = r - o.v - cfg.lambda * (o.v_ahead + o.v_behind);
                assert!(
                    resid.abs() < 1e-9 || (resid + cfg.zeta).abs() < 1e-9,
                    "resid {resid}"
                );
            }
            if out.done {
                break;
            }
        }
    }

    #[test]
    fn observation_matches_brute_force_neighbor_scan() {
        let cfg = TrafficConfig::default();
        let w = reset(&cfg, 21).unwrap();
        let l = cfg.track_length;
        for i in 0..w.vehicles.len() {
            let o = assemble_observation(&w, i);
            // brute force: smallest positive arc distances
            let me = &w.vehicles[i];
            let mut best_ahead = f64::INFINITY;
            let mut best_behind = f64::INFINITY;
            let mut va = 0.0;
            let mut vb = 0.0;
            for (j, v) in w.vehicles.iter().enumerate() {
                if j == i {
                    continue;
                }
                let da = (v.arc - me.arc).rem_euclid(l) - VEHICLE_LENGTH;
                let db = (me.arc - v.arc).rem_euclid(l) - VEHICLE_LENGTH;
                if da < best_ahead {
                    best_ahead = da;
                    va = v.speed;
                }
                if db < best_behind {
                    best_behind = db;
                    vb = v.speed;
                }
            }
            let (ea, ela) = if best_ahead <= cfg.sensor_range {
                (va, best_ahead.max(0.0))
            } else {
                (0.0, cfg.sensor_range)
            };
            let (eb, elb) = if best_behind <= cfg.sensor_range {
                (vb, best_behind.max(0.0))
            } else {
                (0.0, cfg.sensor_range)
            };
            assert_eq!((o.v_ahead, o.l_ahead), (ea, ela));
            assert_eq!((o.v_behind, o.l_behind), (eb, elb));
        }
    }

    #[test]
    fn two_vehicle_ring_gaps_are_complementary() {
        let cfg = TrafficConfig {
            track_length: 100.0,
            ..Default::default()
        };
        let mk = |arc| VehicleState {
            id: 0,
            kind: Kind::Cav,
            arc,
            speed: 3.0,
        };
        let w = WorldState {
            cfg: cfg.clone(),
            vehicles: vec![
                VehicleState { id: 1, ..mk(10.0) },
                VehicleState { id: 2, ..mk(40.0) },
            ],
            time_step: 0,
            seed: 0,
            collision: false,
        };
        let o1 = assemble_observation(&w, 0);
        let o2 = assemble_observation(&w, 1);
        // each sees the other both ahead and behind; gaps sum to
        // loop length - 2 * vehicle length
        assert!((o1.l_ahead + o2.l_ahead - (100.0 - 2.0 * VEHICLE_LENGTH)).abs() < 1e-9);
        assert!((o1.l_ahead - o2.l_behind).abs() < 1e-9);
    }

    #[test]
    fn idm_free_road_near_equilibrium() {
        let mut w = lone_cav_world(IDM_DESIRED_SPEED);
        w.vehicles[0].kind = Kind::Hv;
        let a = hv_controller(&w, 0);
        assert!(a.abs() < 0.25, "a {a}");
    }

    #[test]
    fn idm_brakes_hard_at_jam_distance() {
        let mut w = lone_cav_world(10.0);
        w.vehicles[0].kind = Kind::Hv;
        w.vehicles.push(VehicleState {
            id: 2,
            kind: Kind::Hv,
            arc: 100.0 + VEHICLE_LENGTH + IDM_JAM_DISTANCE,
            speed: 0.0,
        });
        let a = hv_controller(&w, 0);
        assert!(a <= -2.0, "a {a}");
    }

    #[test]
    fn idm_accelerates_from_rest_on_open_road() {
        let mut w = lone_cav_world(0.0);
        w.vehicles[0].kind = Kind::Hv;
        let a = hv_controller(&w, 0);
        assert!((a - IDM_MAX_ACCEL).abs() < 0.1, "a {a}");
    }

    #[test]
    fn crossing_conflict_between_branches_ends_episode() {
        let cfg = TrafficConfig::default();
        let half = cfg.track_length / 2.0;
        let mut w = WorldState {
            cfg,
            vehicles: vec![
                VehicleState {
                    id: 1,
                    kind: Kind::Cav,
                    arc: 2.0, // within 5 m of the crossing on branch one
                    speed: 5.0,
                },
                VehicleState {
                    id: 2,
                    kind: Kind::Cav,
                    arc: half - 2.0, // within 5 m of the crossing on branch two
                    speed: 5.0,
                },
            ],
            time_step: 0,
            seed: 0,
            collision: false,
        };
        let out = step_world(&mut w, &[5.0, 5.0]).unwrap();
        assert!(w.collision);
        assert!(out.done);
    }

    #[test]
    fn episode_terminates_at_horizon_without_collision() {
        let mut w = lone_cav_world(0.0);
        w.cfg.horizon = 5;
        let mut done = false;
        for t in 0..5 {
            let out = step_world(&mut w, &[0.0]).unwrap();
            done = out.done;
            assert_eq!(done, t == 4);
        }
        assert!(done && !w.collision);
        assert!(step_world(&mut w, &[0.0]).is_err());
    }

    #[test]
    fn trajectories_are_deterministic() {
        let cfg = TrafficConfig::default();
        let run = || {
            let mut w = reset(&cfg, 31).unwrap();
            let mut log = TrajectoryLogger::new();
            let mut rng = ChaCha8Rng::seed_from_u64(32);
            for _ in 0..50 {
                let actions: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..13.89)).collect();
                let out = step_world(&mut w, &actions).unwrap();
                log.record(&w, &out.rewards, &out.observations);
                if out.done {
                    break;
                }
            }
            log.contents().to_string()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn no_silent_pass_through() {
        // follower driven into the leader: collision declared before the
        // ordering can invert
        let cfg = TrafficConfig::default();
        let mut w = WorldState {
            cfg,
            vehicles: vec![
                VehicleState {
                    id: 1,
                    kind: Kind::Cav,
                    arc: 100.0,
                    speed: 13.0,
                },
                VehicleState {
                    id: 2,
                    kind: Kind::Cav,
                    arc: 112.0,
                    speed: 0.0,
                },
            ],
            time_step: 0,
            seed: 0,
            collision: false,
        };
        let mut last_gap = 7.0;
        for _ in 0..40 {
            let out = step_world(&mut w, &[13.89, 0.0]);
            let out = match out {
                Ok(o) => o,
                Err(_) => break, // finished episode
            };
            let gap =
                (w.vehicles[1].arc - w.vehicles[0].arc).rem_euclid(480.0) - VEHICLE_LENGTH;
            if out.done {
                assert!(w.collision);
                assert!(gap <= 0.0 || gap < last_gap);
                return;
            }
            assert!(gap > 0.0, "gap {gap} without collision");
            last_gap = gap;
        }
        panic!("collision never declared");
    }

    #[test]
    fn utility_matches_hand_values_and_resummation() {
        // constant 10 m/s for all steps: utility = 10 * 0.1 = 1.0
        let speeds: Vec<Vec<f64>> = (0..1500).map(|_| vec![10.0; 8]).collect();
        assert!((utility(&speeds, 0.1, 1500) - 1.0).abs() < 1e-12);
        let still: Vec<Vec<f64>> = (0..1500).map(|_| vec![0.0; 8]).collect();
        assert_eq!(utility(&still, 0.1, 1500), 0.0);
        // mixed trace equals brute-force re-summation
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mixed: Vec<Vec<f64>> = (0..700)
            .map(|_| (0..8).map(|_| rng.gen_range(0.0..13.89)).collect())
            .collect();
        let mut total = 0.0;
        for row in &mixed {
            for v in row {
                total += v * 0.1;
            }
        }
        let expected = total / (1500.0 * 8.0);
        assert!((utility(&mixed, 0.1, 1500) - expected).abs() < 1e-12);
    }

    #[test]
    fn scenario_parse_round_trip_and_errors() {
        let text = "\
# scenario
n_cavs = 8
n_hvs = 6
dt = 0.1
horizon = 1500
v_max = 13.89
sensor_range = 75
l_safe = 5
lambda = 0.85
zeta = 7.5
track_length = 480
";
        let cfg = parse_scenario(text).unwrap();
        assert_eq!(cfg.n_cavs, 8);
        assert_eq!(cfg.horizon, 1500);
        assert!((cfg.lambda - 0.85).abs() < 1e-12);
        assert!(matches!(
            parse_scenario("bogus_key = 3"),
            Err(CoreError::Parse { .. })
        ));
        assert!(matches!(
            parse_scenario("n_cavs 8"),
            Err(CoreError::Parse { .. })
        ));
    }

    #[test]
    fn figure_eight_geometry_closes_and_crosses() {
        let l = 480.0;
        // both branch passes through the crossing map to the same point
        let (x0, y0) = position_xy(0.0, l);
        let (x1, y1) = position_xy(240.0, l);
        assert!(x0.abs() < 1e-9 && y0.abs() < 1e-9);
        assert!(x1.abs() < 1e-9 && y1.abs() < 1e-9);
        // arc length matches the geometry: quarter way around branch one is
        // a quarter circle
        let r = 240.0 / (2.0 * std::f64::consts::PI);
        let (xq, yq) = position_xy(60.0, l);
        assert!((xq - (-r)).abs() < 1e-9 && (yq - r).abs() < 1e-9);
        // continuity at the seam
        let (xa, ya) = position_xy(239.999, l);
        let (xb, yb) = position_xy(240.001, l);
        assert!(((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt() < 0.01);
    }
}
