//! Range-limited episode-end data exchange between controlled vehicles,
//! communication-overhead accounting, and exact minimum clique covers of the
//! communication graph.

use std::fmt::Write as _;

use crate::dynamics::ReplayBuffer;
use crate::traffic::{cav_indices, position_xy, WorldState};
use crate::{CoreError, Result};

/// Largest vertex count for which the clique cover search is exact.
pub const EXACT_COVER_LIMIT: usize = 16;

/// Symmetric communication graph over the controlled vehicles (vertex k is
/// the CAV with the (k+1)-th smallest id).
#[derive(Debug, Clone)]
pub struct CommGraph {
    pub n: usize,
    adj: Vec<Vec<bool>>,
    pub d: f64,
}

impl CommGraph {
    pub fn new(n: usize, d: f64) -> Self {
        Self {
            n,
            adj: vec![vec![false; n]; n],
            d,
        }
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i][j] = true;
            self.adj[j][i] = true;
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    pub fn edge_count(&self) -> usize {
        let mut c = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adj[i][j] {
                    c += 1;
                }
            }
        }
        c
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.adj[i][j]).collect()
    }

    /// Edge-list text snapshot, one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adj[i][j] {
                    let _ = writeln!(s, "{i} {j}");
                }
            }
        }
        s
    }
}

/// Builds the communication graph from planar Euclidean distances between
/// controlled vehicles at the episode's final world state.
pub fn build_graph(world: &WorldState, d: f64) -> CommGraph {
    let cavs = cav_indices(world);
    let pos: Vec<(f64, f64)> = cavs
        .iter()
        .map(|&i| position_xy(world.vehicles[i].arc, world.cfg.track_length))
        .collect();
    let mut g = CommGraph::new(cavs.len(), d);
    for i in 0..pos.len() {
        for j in (i + 1)..pos.len() {
            let dist = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
            if dist <= d {
                g.add_edge(i, j);
            }
        }
    }
    g
}

/// Episode-end exchange: every agent appends each neighbor's last-episode
/// transitions to its own buffer. Vertex k corresponds to `buffers[k]` and
/// agent id `k + 1`. Returns the overhead: transitions transmitted this
/// episode, counted once per receiving neighbor (duplicates rejected by the
/// buffer still count as transmitted).
pub fn exchange(
    buffers: &mut [ReplayBuffer],
    graph: &CommGraph,
    episode_id: u32,
) -> Result<usize> {
    if buffers.len() != graph.n {
        return Err(CoreError::Shape {
            expected: graph.n,
            got: buffers.len(),
            context: "exchange buffers",
        });
    }
    // seal all tails before mutating any buffer (exchange is a barrier)
    let tails: Vec<_> = (0..graph.n)
        .map(|k| buffers[k].episode_tail(episode_id, k as u32 + 1))
        .collect();
    let mut overhead = 0;
    for receiver in 0..graph.n {
        for sender in graph.neighbors(receiver) {
            overhead += tails[sender].len();
            for t in &tails[sender] {
                buffers[receiver].push(t.clone());
            }
        }
    }
    Ok(overhead)
}

/// Partition of the graph's vertices into cliques.
#[derive(Debug, Clone)]
pub struct CliqueCover {
    pub cliques: Vec<Vec<usize>>,
    /// False when the instance exceeded the exact search bound and a greedy
    /// cover was returned instead.
    pub exact: bool,
}

impl CliqueCover {
    pub fn size(&self) -> usize {
        self.cliques.len()
    }

    /// All-pairs adjacency check of every block plus partition validity.
    pub fn is_valid(&self, graph: &CommGraph) -> bool {
        let mut seen = vec![false; graph.n];
        for c in &self.cliques {
            for (i, &u) in c.iter().enumerate() {
                if u >= graph.n || std::mem::replace(&mut seen[u], true) {
                    return false;
                }
                for &v in &c[i + 1..] {
                    if !graph.has_edge(u, v) {
                        return false;
                    }
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Minimum clique cover, computed as a minimum proper coloring of the
/// complement graph by branch-and-bound (exact for n <= 16; greedy beyond,
/// flagged `exact = false`).
pub fn min_clique_cover(graph: &CommGraph) -> CliqueCover {
    let n = graph.n;
    if n == 0 {
        return CliqueCover {
            cliques: Vec::new(),
            exact: true,
        };
    }
    // complement adjacency: coloring classes of the complement are cliques
    // of the original graph
    let comp: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && !graph.has_edge(i, j)).collect())
        .collect();
    // order vertices by complement degree, descending (helps pruning)
    let mut order: Vec<usize> = (0..n).collect();
    let deg: Vec<usize> = (0..n)
        .map(|i| comp[i].iter().filter(|&&b| b).count())
        .collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]));

    // greedy coloring for the initial upper bound (and the fallback answer)
    let greedy = greedy_coloring(&comp, &order);
    if n > EXACT_COVER_LIMIT {
        return CliqueCover {
            cliques: classes_to_cliques(&greedy),
            exact: false,
        };
    }
    let mut best = greedy;
    let mut best_k = best.iter().map(|c| c + 1).max().unwrap_or(0);
    let mut colors = vec![usize::MAX; n];
    branch(&comp, &order, 0, 0, &mut colors, &mut best, &mut best_k);
    CliqueCover {
        cliques: classes_to_cliques(&best),
        exact: true,
    }
}

fn greedy_coloring(comp: &[Vec<bool>], order: &[usize]) -> Vec<usize> {
    let n = comp.len();
    let mut colors = vec![usize::MAX; n];
    for &v in order {
        let mut used = vec![false; n];
        for u in 0..n {
            if comp[v][u] && colors[u] != usize::MAX {
                used[colors[u]] = true;
            }
        }
        colors[v] = (0..n).find(|&c| !used[c]).unwrap();
    }
    colors
}

fn classes_to_cliques(colors: &[usize]) -> Vec<Vec<usize>> {
    let k = colors.iter().map(|c| c + 1).max().unwrap_or(0);
    let mut cliques = vec![Vec::new(); k];
    for (v, &c) in colors.iter().enumerate() {
        cliques[c].push(v);
    }
    cliques.retain(|c| !c.is_empty());
    cliques
}

fn branch(
    comp: &[Vec<bool>],
    order: &[usize],
    idx: usize,
    used_colors: usize,
    colors: &mut Vec<usize>,
    best: &mut Vec<usize>,
    best_k: &mut usize,
) {
    if used_colors >= *best_k {
        return; // cannot improve
    }
    if idx == order.len() {
        *best = colors.clone();
        *best_k = used_colors;
        return;
    }
    let v = order[idx];
    // try existing colors, then one new color
    for c in 0..=used_colors.min(*best_k - 1) {
        if c >= *best_k {
            break;
        }
        let conflict = (0..comp.len()).any(|u| comp[v][u] && colors[u] == c);
        if conflict {
            continue;
        }
        colors[v] = c;
        let next_used = used_colors.max(c + 1);
        branch(comp, order, idx + 1, next_used, colors, best, best_k);
        colors[v] = usize::MAX;
    }
}

/// One exchange event, as logged by the experiment harness.
#[derive(Debug, Clone)]
pub struct ExchangeRecord {
    pub d: f64,
    pub episode: u32,
    pub transitions_tx: usize,
    pub chi_bar: usize,
}

/// Mean per-episode transmitted-transition count per communication range,
/// sorted by d.
pub fn overhead_report(records: &[ExchangeRecord]) -> Vec<(f64, f64)> {
    let mut by_d: Vec<(f64, f64, usize)> = Vec::new();
    for r in records {
        match by_d.iter_mut().find(|(d, _, _)| *d == r.d) {
            Some((_, sum, count)) => {
                *sum += r.transitions_tx as f64;
                *count += 1;
            }
            None => by_d.push((r.d, r.transitions_tx as f64, 1)),
        }
    }
    by_d.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_d.into_iter().map(|(d, s, c)| (d, s / c as f64)).collect()
}

/// CSV rows `d,episode,transitions_tx,chi_bar`.
pub fn records_to_csv(records: &[ExchangeRecord]) -> String {
    let mut s = String::from("d,episode,transitions_tx,chi_bar\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.d, r.episode, r.transitions_tx, r.chi_bar);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Transition;
    use crate::traffic::{reset, TrafficConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(seed: u64) -> WorldState {
        reset(&TrafficConfig::default(), seed).unwrap()
    }

    fn tail_transition(agent: u32, episode: u32, step: u32) -> Transition {
        Transition {
            s: vec![agent as f64],
            a: vec![0.0],
            r: 0.0,
            s_next: vec![0.0],
            episode_id: episode,
            step_id: step,
            source_agent: agent,
        }
    }

    fn filled_buffers(n: usize, episode: u32, tail_len: u32) -> Vec<ReplayBuffer> {
        (0..n)
            .map(|k| {
                let mut b = ReplayBuffer::new(100_000);
                for t in 0..tail_len {
                    b.push(tail_transition(k as u32 + 1, episode, t));
                }
                b
            })
            .collect()
    }

    fn complete_graph(n: usize) -> CommGraph {
        let mut g = CommGraph::new(n, 1e9);
        for i in 0..n {
            for j in (i + 1)..n {
                g.add_edge(i, j);
            }
        }
        g
    }

    #[test]
    fn zero_range_graph_is_edgeless() {
        let g = build_graph(&world(1), 0.0);
        assert_eq!(g.n, 8);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn large_range_graph_is_complete() {
        // the loop fits inside a 200 m box, so d = 200 spans everything
        let g = build_graph(&world(2), 200.0);
        assert_eq!(g.edge_count(), 28);
    }

    #[test]
    fn graph_matches_pairwise_distance_oracle() {
        let w = world(3);
        for d in [10.0, 30.0, 60.0, 120.0] {
            let g = build_graph(&w, d);
            let cavs = cav_indices(&w);
            for i in 0..cavs.len() {
                for j in (i + 1)..cavs.len() {
                    let (xi, yi) =
                        position_xy(w.vehicles[cavs[i]].arc, w.cfg.track_length);
                    let (xj, yj) =
                        position_xy(w.vehicles[cavs[j]].arc, w.cfg.track_length);
                    let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                    assert_eq!(g.has_edge(i, j), dist <= d, "pair ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn edgeless_exchange_moves_nothing() {
        let mut buffers = filled_buffers(4, 0, 10);
        let g = CommGraph::new(4, 0.0);
        let overhead = exchange(&mut buffers, &g, 0).unwrap();
        assert_eq!(overhead, 0);
        for (k, b) in buffers.iter().enumerate() {
            assert_eq!(b.len(), 10);
            assert!(b.iter().all(|t| t.source_agent == k as u32 + 1));
        }
    }

    #[test]
    fn complete_exchange_overhead_matches_counting_formula() {
        let tail = 25;
        let mut buffers = filled_buffers(8, 0, tail);
        let g = complete_graph(8);
        let overhead = exchange(&mut buffers, &g, 0).unwrap();
        assert_eq!(overhead, 8 * 7 * tail as usize);
        for b in &buffers {
            assert_eq!(b.len(), 8 * tail as usize);
        }
    }

    #[test]
    fn path_graph_exchange_respects_topology() {
        // path 0 - 1 - 2: vertex 0 receives vertex 1's tail but not
        // vertex 2's
        let mut buffers = filled_buffers(3, 0, 5);
        let mut g = CommGraph::new(3, 50.0);
        g.add_edge(0, 1);
        g.add_edge(1, 2);
        exchange(&mut buffers, &g, 0).unwrap();
        let sources: Vec<u32> = buffers[0].iter().map(|t| t.source_agent).collect();
        assert!(sources.contains(&2));
        assert!(!sources.contains(&3));
        assert!(buffers[1].iter().any(|t| t.source_agent == 1));
        assert!(buffers[1].iter().any(|t| t.source_agent == 3));
    }

    #[test]
    fn exchange_is_idempotent_on_buffer_contents() {
        let mut buffers = filled_buffers(3, 0, 5);
        let g = complete_graph(3);
        exchange(&mut buffers, &g, 0).unwrap();
        let sizes: Vec<usize> = buffers.iter().map(|b| b.len()).collect();
        let overhead2 = exchange(&mut buffers, &g, 0).unwrap();
        // still transmitted (counted) but deduplicated on arrival
        assert_eq!(overhead2, 3 * 2 * 5);
        assert_eq!(sizes, buffers.iter().map(|b| b.len()).collect::<Vec<_>>());
    }

    #[test]
    fn clique_cover_known_cases() {
        assert_eq!(min_clique_cover(&complete_graph(8)).size(), 1);
        assert_eq!(min_clique_cover(&CommGraph::new(8, 0.0)).size(), 8);
        let mut p3 = CommGraph::new(3, 1.0);
        p3.add_edge(0, 1);
        p3.add_edge(1, 2);
        let cover = min_clique_cover(&p3);
        assert_eq!(cover.size(), 2);
        assert!(cover.is_valid(&p3));
    }

    /// Minimum clique partition size by brute force over all set partitions
    /// (restricted-growth strings), for n <= 8.
    fn brute_force_cover_size(g: &CommGraph) -> usize {
        fn rec(g: &CommGraph, v: usize, assignment: &mut Vec<usize>, best: &mut usize) {
            let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
            if k >= *best {
                return;
            }
            if v == g.n {
                *best = k;
                return;
            }
            for c in 0..=k {
                let ok = (0..v).all(|u| assignment[u] != c || g.has_edge(u, v));
                if ok {
                    assignment.push(c);
                    rec(g, v + 1, assignment, best);
                    assignment.pop();
                }
            }
        }
        let mut best = g.n + 1;
        rec(g, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn clique_cover_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let n = rng.gen_range(2..=8);
            let p = rng.gen_range(0.1..0.9);
            let mut g = CommGraph::new(n, 1.0);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(p) {
                        g.add_edge(i, j);
                    }
                }
            }
            let cover = min_clique_cover(&g);
            assert!(cover.exact);
            assert!(cover.is_valid(&g), "trial {trial}");
            assert_eq!(cover.size(), brute_force_cover_size(&g), "trial {trial}");
        }
    }

    #[test]
    fn monotonicity_in_range_and_cauchy_schwarz() {
        let mut buffers_cache: Vec<Vec<ReplayBuffer>> = Vec::new();
        for seed in 0..5u64 {
            let w = world(seed);
            let mut prev_edges = 0;
            let mut prev_chi = usize::MAX;
            let mut prev_overhead = 0;
            for d in [0.0, 50.0, 100.0, 150.0, 200.0] {
                let g = build_graph(&w, d);
                // subgraph monotonicity
                assert!(g.edge_count() >= prev_edges);
                prev_edges = g.edge_count();
                let cover = min_clique_cover(&g);
                assert!(cover.is_valid(&g));
                assert!(cover.size() <= prev_chi);
                prev_chi = cover.size();
                // Cauchy-Schwarz form of the clique relation
                let lhs: f64 = cover.cliques.iter().map(|c| (c.len() as f64).sqrt()).sum();
                let rhs = (cover.size() as f64 * g.n as f64).sqrt();
                assert!(lhs <= rhs + 1e-12);
                // overhead monotone in d on identical trajectories
                let mut buffers = filled_buffers(8, 0, 10);
                let overhead = exchange(&mut buffers, &g, 0).unwrap();
                assert!(overhead >= prev_overhead);
                prev_overhead = overhead;
                buffers_cache.push(buffers);
            }
        }
    }

    #[test]
    fn overhead_report_aggregates_means() {
        let records = vec![
            ExchangeRecord { d: 0.0, episode: 0, transitions_tx: 0, chi_bar: 8 },
            ExchangeRecord { d: 50.0, episode: 0, transitions_tx: 100, chi_bar: 5 },
            ExchangeRecord { d: 50.0, episode: 1, transitions_tx: 200, chi_bar: 5 },
            ExchangeRecord { d: 200.0, episode: 0, transitions_tx: 900, chi_bar: 1 },
        ];
        let table = overhead_report(&records);
        assert_eq!(table, vec![(0.0, 0.0), (50.0, 150.0), (200.0, 900.0)]);
        let csv = records_to_csv(&records);
        assert!(csv.starts_with("d,episode,transitions_tx,chi_bar\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
