//! RSRP maps over a macro grid and a tabular Q-learning handover policy that
//! trades handover count against serving RSRP.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{AntennaConfig, LinkKind};
use crate::error::SimError;
use crate::linklevel::bs_user_coupling;
use crate::scenario::{build_hex_layout, derive_rng, Environment, NetworkLayout, Position};
use crate::stats::CdfSummary;

/// Frozen per-gridpoint, per-cell RSRP at a fixed altitude. One shadowing
/// realization is drawn per (point, cell) link and never resampled, so the
/// map is a deterministic function of the seed.
#[derive(Debug, Clone)]
pub struct RsrpGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_m: f64,
    pub half_m: f64,
    pub altitude_m: f64,
    pub n_cells: usize,
    /// Row-major `[point * n_cells + cell]`.
    pub rsrp_dbm: Vec<f64>,
}

impl RsrpGrid {
    pub fn n_points(&self) -> usize {
        self.nx * self.ny
    }

    pub fn rsrp(&self, point: usize, cell: usize) -> f64 {
        self.rsrp_dbm[point * self.n_cells + cell]
    }

    /// Strongest cell at a gridpoint; ties break toward the lowest index.
    pub fn best_cell(&self, point: usize) -> usize {
        let row = &self.rsrp_dbm[point * self.n_cells..(point + 1) * self.n_cells];
        let mut best = 0;
        for (c, &r) in row.iter().enumerate() {
            if r > row[best] {
                best = c;
            }
        }
        best
    }

    /// Cells at a point ranked by RSRP, strongest first, truncated to `n`.
    pub fn top_cells(&self, point: usize, n: usize) -> Vec<usize> {
        let row = &self.rsrp_dbm[point * self.n_cells..(point + 1) * self.n_cells];
        let mut idx: Vec<usize> = (0..self.n_cells).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }

    pub fn point_index(&self, x: f64, y: f64) -> Option<usize> {
        let ix = ((x + self.half_m) / self.cell_size_m).floor();
        let iy = ((y + self.half_m) / self.cell_size_m).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some(iy as usize * self.nx + ix as usize)
    }

    /// Fraction of 4-neighborhood grid edges whose best cell differs.
    pub fn edge_change_fraction(&self) -> f64 {
        let best: Vec<usize> = (0..self.n_points()).map(|p| self.best_cell(p)).collect();
        let mut edges = 0usize;
        let mut changed = 0usize;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let p = iy * self.nx + ix;
                if ix + 1 < self.nx {
                    edges += 1;
                    changed += (best[p] != best[p + 1]) as usize;
                }
                if iy + 1 < self.ny {
                    edges += 1;
                    changed += (best[p] != best[p + self.nx]) as usize;
                }
            }
        }
        changed as f64 / edges.max(1) as f64
    }
}

/// Builds the frozen RSRP map: downlink through the fixed downtilted sector
/// beam, one large-scale draw per link.
pub fn build_rsrp_map(
    layout: &NetworkLayout,
    fc_hz: f64,
    altitude_m: f64,
    cell_size_m: f64,
    tx_power_dbm: f64,
    seed: u64,
) -> Result<RsrpGrid, SimError> {
    if cell_size_m <= 0.0 {
        return Err(SimError::Config("cell_size_m must be > 0".into()));
    }
    let half = (layout.region_area().sqrt() / 2.0).max(cell_size_m);
    let n = (2.0 * half / cell_size_m).ceil() as usize;
    let cells = layout.cells();
    let ant = AntennaConfig::sector_8v();
    let rsrp: Vec<f64> = (0..n * n)
        .into_par_iter()
        .flat_map_iter(|p| {
            let ix = p % n;
            let iy = p / n;
            let x = -half + (ix as f64 + 0.5) * cell_size_m;
            let y = -half + (iy as f64 + 0.5) * cell_size_m;
            let pos = Position::new(x, y, altitude_m);
            let cells = cells.clone();
            let layout = layout.clone();
            (0..cells.len()).map(move |c| {
                let mut rng = derive_rng(
                    seed.wrapping_add(0x6D0B_u64.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                    ((p as u64 + 1) << 32) | c as u64,
                );
                let kind = if altitude_m > 22.5 {
                    LinkKind::BsUav
                } else {
                    LinkKind::BsGue
                };
                let cp = bs_user_coupling(&layout, &cells[c], pos, kind, fc_hz, Environment::UMa, &mut rng)
                    .expect("valid geometry");
                tx_power_dbm - cp.xi_db() + cp.fixed_beam_gain_dbi(&ant)
            })
        })
        .collect();
    Ok(RsrpGrid {
        nx: n,
        ny: n,
        cell_size_m,
        half_m: half,
        altitude_m,
        n_cells: cells.len(),
        rsrp_dbm: rsrp,
    })
}

/// The macro mobility scenario: 1.5 km ISD, UAVs crossing at 50 m.
pub fn default_mobility_grid(seed: u64) -> Result<RsrpGrid, SimError> {
    let layout = build_hex_layout(1500.0, Environment::UMa)?;
    build_rsrp_map(&layout, 2.0e9, 50.0, 50.0, 46.0, seed)
}

/// The eight lattice directions a trajectory can head in. Keeping bearings
/// on the lattice makes the (point, direction) transition deterministic, so
/// tabular Q-learning converges instead of chasing transition noise.
pub const N_DIRS: usize = 8;
pub const DIRS: [(i64, i64); N_DIRS] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Serving-cell choice per (gridpoint, travel direction, current serving
/// cell). States absent from the table fall back to the greedy choice.
#[derive(Debug, Clone)]
pub struct Policy {
    table: HashMap<(usize, usize, usize), usize>,
    greedy: Vec<usize>,
}

impl Policy {
    pub fn action(&self, point: usize, dir: usize, serving: usize) -> usize {
        *self
            .table
            .get(&(point, dir, serving))
            .unwrap_or(&self.greedy[point])
    }

    /// (point, direction, serving, action) tuples for inspection dumps.
    pub fn entries(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut v: Vec<_> = self
            .table
            .iter()
            .map(|(&(p, d, s), &a)| (p, d, s, a))
            .collect();
        v.sort_unstable();
        v
    }
}

/// Always connect to the strongest cell, whatever the current serving cell.
pub fn greedy_policy(grid: &RsrpGrid) -> Policy {
    Policy {
        table: HashMap::new(),
        greedy: (0..grid.n_points()).map(|p| grid.best_cell(p)).collect(),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RewardWeights {
    pub w_ho: f64,
    pub w_rsrp: f64,
}

impl RewardWeights {
    pub fn new(w_ho: f64, w_rsrp: f64) -> Result<Self, SimError> {
        if w_ho < 0.0 || w_rsrp < 0.0 || (w_ho == 0.0 && w_rsrp == 0.0) {
            return Err(SimError::Config(format!(
                "weights must be >= 0 and not both zero (got {w_ho}/{w_rsrp})"
            )));
        }
        Ok(Self { w_ho, w_rsrp })
    }
}

/// Maps RSRP in [-120, -60] dBm to [0, 1], clipped. Changing this range
/// rescales the effective w_ho/w_rsrp ratio.
pub fn rsrp_norm(rsrp_dbm: f64) -> f64 {
    rsrp_norm_in(rsrp_dbm, -120.0, -60.0)
}

/// rsrp_norm with configurable clipping bounds. Outside the active range
/// the reward is flat, so bounds should bracket the map's dynamic range or
/// the policy rides fades for free.
pub fn rsrp_norm_in(rsrp_dbm: f64, lo: f64, hi: f64) -> f64 {
    ((rsrp_dbm - lo) / (hi - lo)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QlHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub episodes: usize,
    /// Actions per state: the top-N cells by RSRP at the gridpoint.
    pub candidates: usize,
    pub max_steps: usize,
    /// rsrp_norm clipping bounds, dBm.
    pub norm_lo: f64,
    pub norm_hi: f64,
}

impl Default for QlHyper {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            eps_start: 0.1,
            eps_end: 0.01,
            episodes: 20_000,
            candidates: 8,
            max_steps: 200,
            norm_lo: -120.0,
            norm_hi: -60.0,
        }
    }
}

impl QlHyper {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SimError::Config(format!("alpha {} not in (0,1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SimError::Config(format!("gamma {} not in [0,1)", self.gamma)));
        }
        if self.episodes == 0 || self.candidates == 0 || self.max_steps < 2 {
            return Err(SimError::Config("episodes, candidates, max_steps too small".into()));
        }
        if self.norm_lo >= self.norm_hi {
            return Err(SimError::Config("norm_lo must be below norm_hi".into()));
        }
        Ok(())
    }
}

/// Action values per visited (point, direction, serving) state, plus the
/// per-point candidate action sets.
#[derive(Debug, Clone)]
pub struct QTable {
    q: HashMap<(usize, usize, usize), Vec<f64>>,
    cands: Vec<Vec<usize>>,
    greedy: Vec<usize>,
    weights: RewardWeights,
}

impl QTable {
    pub fn n_states(&self) -> usize {
        self.q.len()
    }

    /// Greedy-in-Q policy; unvisited states fall back to strongest-cell.
    /// Values within a small tolerance of the maximum count as tied; ties
    /// keep the serving cell if it is among them (no handover for no gain),
    /// otherwise the strongest cell. Both preferences match the true
    /// optimum, so this only removes finite-training noise.
    pub fn policy(&self) -> Policy {
        let tol = 0.02 * (self.weights.w_ho + self.weights.w_rsrp);
        let mut table = HashMap::new();
        for (&(p, d, s), vals) in &self.q {
            let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let acts = &self.cands[p];
            let mut pick = None;
            for (i, &v) in vals.iter().enumerate() {
                if v >= top - tol {
                    if acts[i] == s && self.weights.w_ho > 0.0 {
                        pick = Some(i);
                        break;
                    }
                    // candidates are RSRP-sorted, so the first near-max
                    // entry is the strongest of the tied set
                    pick.get_or_insert(i);
                }
            }
            table.insert((p, d, s), acts[pick.expect("nonempty actions")]);
        }
        Policy {
            table,
            greedy: self.greedy.clone(),
        }
    }
}

/// The gridpoint one lattice step along `dir`, if still inside the grid.
pub fn next_point(grid: &RsrpGrid, p: usize, dir: usize) -> Option<usize> {
    let ix = (p % grid.nx) as i64 + DIRS[dir].0;
    let iy = (p / grid.nx) as i64 + DIRS[dir].1;
    (ix >= 0 && iy >= 0 && ix < grid.nx as i64 && iy < grid.ny as i64)
        .then(|| iy as usize * grid.nx + ix as usize)
}

/// A straight crossing of the grid: uniform entry gridpoint and lattice
/// bearing, one grid cell per step, ending at the boundary or after
/// max_steps. Returns the visited points and the direction index.
pub fn sample_trajectory(
    grid: &RsrpGrid,
    max_steps: usize,
    rng: &mut impl Rng,
) -> (Vec<usize>, usize) {
    let mut ix = rng.gen_range(0..grid.nx) as i64;
    let mut iy = rng.gen_range(0..grid.ny) as i64;
    let dir = rng.gen_range(0..N_DIRS);
    let (dx, dy) = DIRS[dir];
    let mut path = Vec::new();
    for _ in 0..max_steps {
        if ix < 0 || iy < 0 || ix >= grid.nx as i64 || iy >= grid.ny as i64 {
            break;
        }
        path.push(iy as usize * grid.nx + ix as usize);
        ix += dx;
        iy += dy;
    }
    (path, dir)
}

/// Tabular Q-learning over straight trajectories. The reward for picking
/// cell a while moving into the next gridpoint is
/// w_rsrp * rsrp_norm(next rsrp of a) - w_ho * 1{a != serving}.
pub fn q_learn(
    grid: &RsrpGrid,
    weights: RewardWeights,
    hyper: QlHyper,
    seed: u64,
) -> Result<QTable, SimError> {
    hyper.validate()?;
    let n_cand = hyper.candidates.min(grid.n_cells);
    let cands: Vec<Vec<usize>> = (0..grid.n_points())
        .map(|p| grid.top_cells(p, n_cand))
        .collect();
    let greedy: Vec<usize> = (0..grid.n_points()).map(|p| grid.best_cell(p)).collect();
    let mut q: HashMap<(usize, usize, usize), Vec<f64>> = HashMap::new();
    // model-based warm start: transitions along a lattice ray are known and
    // deterministic, so the optimal value of camping on cell s at (p, d) is
    // exact by backward induction. Unvisited states start (and bootstrap)
    // from this fixpoint; the sampled Q-updates then confirm or correct it.
    let nc = grid.n_cells;
    let mut vstar = vec![0.0; grid.n_points() * N_DIRS * nc];
    for d in 0..N_DIRS {
        let mut order: Vec<usize> = (0..grid.n_points()).collect();
        let proj = |p: usize| {
            (p % grid.nx) as i64 * DIRS[d].0 + (p / grid.nx) as i64 * DIRS[d].1
        };
        order.sort_by_key(|&p| std::cmp::Reverse(proj(p)));
        for p in order {
            let pn = next_point(grid, p, d);
            for s in 0..nc {
                let mut best = f64::NEG_INFINITY;
                for &a in &cands[p] {
                    let future = pn.map_or(0.0, |pn| vstar[(pn * N_DIRS + d) * nc + a]);
                    let v = weights.w_rsrp * rsrp_norm_in(grid.rsrp(p, a), hyper.norm_lo, hyper.norm_hi)
                        - weights.w_ho * f64::from(a != s)
                        + hyper.gamma * future;
                    best = best.max(v);
                }
                vstar[(p * N_DIRS + d) * nc + s] = best;
            }
        }
    }
    let init_vals = |p: usize, d: usize, s: usize, cands: &[usize]| -> Vec<f64> {
        let pn = next_point(grid, p, d);
        cands
            .iter()
            .map(|&a| {
                weights.w_rsrp * rsrp_norm_in(grid.rsrp(p, a), hyper.norm_lo, hyper.norm_hi) - weights.w_ho * f64::from(a != s)
                    + hyper.gamma * pn.map_or(0.0, |pn| vstar[(pn * N_DIRS + d) * nc + a])
            })
            .collect()
    };
    let mut rng = derive_rng(seed, 0x6D51);
    for ep in 0..hyper.episodes {
        let eps = hyper.eps_start
            + (hyper.eps_end - hyper.eps_start) * ep as f64 / (hyper.episodes - 1).max(1) as f64;
        let (path, dir) = sample_trajectory(grid, hyper.max_steps, &mut rng);
        if path.len() < 2 {
            continue;
        }
        // on arriving at each point, pick the cell to camp on there
        let mut serving = greedy[path[0]];
        for t in 1..path.len() {
            let p = path[t];
            let acts = &cands[p];
            let vals = q
                .entry((p, dir, serving))
                .or_insert_with(|| init_vals(p, dir, serving, acts));
            let ai = if rng.gen::<f64>() < eps {
                rng.gen_range(0..acts.len())
            } else {
                let mut best = 0;
                for (i, &v) in vals.iter().enumerate() {
                    if v > vals[best] {
                        best = i;
                    }
                }
                best
            };
            let a = acts[ai];
            let reward = weights.w_rsrp * rsrp_norm_in(grid.rsrp(p, a), hyper.norm_lo, hyper.norm_hi)
                - weights.w_ho * f64::from(a != serving);
            let next_max = if t + 1 < path.len() {
                let pn = path[t + 1];
                q.get(&(pn, dir, a))
                    .map(|v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or_else(|| {
                        init_vals(pn, dir, a, &cands[pn])
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
            } else {
                0.0
            };
            let vals = q.get_mut(&(p, dir, serving)).unwrap();
            vals[ai] += hyper.alpha * (reward + hyper.gamma * next_max - vals[ai]);
            serving = a;
        }
    }
    Ok(QTable {
        q,
        cands,
        greedy,
        weights,
    })
}

#[derive(Debug, Clone)]
pub struct PolicyEval {
    /// Handover count per trajectory.
    pub handovers: CdfSummary,
    /// Serving RSRP per step, dBm.
    pub rsrp_dbm: CdfSummary,
    /// Per-trajectory handover count divided by greedy's on the same path.
    pub handover_ratio: CdfSummary,
}

/// Walks fresh trajectories under a frozen policy, pairing each with the
/// greedy baseline on the same path.
pub fn evaluate_policy(
    grid: &RsrpGrid,
    policy: &Policy,
    n_trajectories: usize,
    max_steps: usize,
    seed: u64,
) -> Result<PolicyEval, SimError> {
    if n_trajectories == 0 {
        return Err(SimError::Config("n_trajectories must be >= 1".into()));
    }
    let greedy = greedy_policy(grid);
    let walks: Vec<(f64, Vec<f64>, Option<f64>)> = (0..n_trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, 0x6D_E0_0000 + i);
            let (path, dir) = sample_trajectory(grid, max_steps, &mut rng);
            if path.len() < 2 {
                return (0.0, Vec::new(), None);
            }
            let walk = |pol: &Policy| {
                let mut serving = grid.best_cell(path[0]);
                let mut hos = 0usize;
                let mut rsrps = Vec::with_capacity(path.len());
                rsrps.push(grid.rsrp(path[0], serving));
                for &p in &path[1..] {
                    let a = pol.action(p, dir, serving);
                    hos += (a != serving) as usize;
                    serving = a;
                    rsrps.push(grid.rsrp(p, serving));
                }
                (hos, rsrps)
            };
            let (hos, rsrps) = walk(policy);
            let (ghos, _) = walk(&greedy);
            let ratio = (ghos > 0).then(|| hos as f64 / ghos as f64);
            (hos as f64, rsrps, ratio)
        })
        .collect();
    let mut eval = PolicyEval {
        handovers: CdfSummary::new(),
        rsrp_dbm: CdfSummary::new(),
        handover_ratio: CdfSummary::new(),
    };
    for (hos, rsrps, ratio) in walks {
        if rsrps.is_empty() {
            continue;
        }
        eval.handovers.push(hos);
        eval.rsrp_dbm.extend(&rsrps);
        if let Some(r) = ratio {
            eval.handover_ratio.push(r);
        }
    }
    Ok(eval)
}
