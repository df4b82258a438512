//! Evaluation utilities: exact Wasserstein distance between discrete mixing
//! measures via the transportation problem, Voronoi-cell assignment of
//! fitted atoms to true atoms, and selection-accuracy aggregation.

use serde::{Deserialize, Serialize};

use crate::core::{euclidean, MixingMeasure};
use crate::error::{Error, Result};

/// Largest support size accepted by the exact solver.
pub const MAX_SUPPORT: usize = 64;

/// An optimal coupling between two discrete measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// q[j][k]: mass moved from source atom j to target atom k.
    pub q: Vec<Vec<f64>>,
    /// Total transport cost under the r-th power ground cost.
    pub cost: f64,
}

/// Solves the balanced transportation problem exactly by successive
/// shortest augmenting paths with node potentials (sources are nodes
/// `0..K`, sinks `K..K+K'`). Each augmentation saturates a source or a
/// sink, so at most `K + K'` rounds run.
fn solve_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> TransportPlan {
    let k = supply.len();
    let kp = demand.len();
    let nodes = k + kp;
    let mut remaining_supply = supply.to_vec();
    let mut remaining_demand = demand.to_vec();
    let mut flow = vec![vec![0.0f64; kp]; k];
    // Johnson potentials keep residual reduced costs nonnegative; ground
    // costs are nonnegative so zero potentials are valid initially
    let mut phi = vec![0.0f64; nodes];
    let eps = 1e-15;

    loop {
        if remaining_supply.iter().sum::<f64>() <= eps * k.max(1) as f64 {
            break;
        }
        // dense multi-source Dijkstra over the residual graph
        let mut dist = vec![f64::INFINITY; nodes];
        let mut done = vec![false; nodes];
        let mut prev = vec![usize::MAX; nodes];
        for j in 0..k {
            if remaining_supply[j] > eps {
                dist[j] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < k {
                for t in 0..kp {
                    let rc = (cost[u][t] + phi[u] - phi[k + t]).max(0.0);
                    if dist[u] + rc < dist[k + t] {
                        dist[k + t] = dist[u] + rc;
                        prev[k + t] = u;
                    }
                }
            } else {
                let t = u - k;
                for j in 0..k {
                    if flow[j][t] > eps {
                        let rc = (-cost[j][t] + phi[u] - phi[j]).max(0.0);
                        if dist[u] + rc < dist[j] {
                            dist[j] = dist[u] + rc;
                            prev[j] = u;
                        }
                    }
                }
            }
        }
        // nearest sink still demanding mass
        let mut sink = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..kp {
            if remaining_demand[t] > eps && dist[k + t] < best {
                best = dist[k + t];
                sink = t;
            }
        }
        if sink == usize::MAX {
            break; // numerically exhausted
        }
        // walk predecessors back to a root source
        let mut arcs: Vec<(usize, usize, bool)> = Vec::new();
        let mut v = k + sink;
        while prev[v] != usize::MAX {
            let p = prev[v];
            if v >= k {
                arcs.push((p, v - k, true)); // add flow on p -> sink v
            } else {
                arcs.push((v, p - k, false)); // return flow on v <- sink p
            }
            v = p;
        }
        let source = v;
        let mut bottleneck = remaining_supply[source].min(remaining_demand[sink]);
        for &(j, t, fwd) in &arcs {
            if !fwd {
                bottleneck = bottleneck.min(flow[j][t]);
            }
        }
        for &(j, t, fwd) in &arcs {
            if fwd {
                flow[j][t] += bottleneck;
            } else {
                flow[j][t] -= bottleneck;
            }
        }
        remaining_supply[source] -= bottleneck;
        remaining_demand[sink] -= bottleneck;
        let reach_cap = dist[k + sink];
        for v in 0..nodes {
            phi[v] += dist[v].min(reach_cap);
        }
    }

    let mut total = 0.0;
    for j in 0..k {
        for t in 0..kp {
            total += flow[j][t] * cost[j][t];
        }
    }
    TransportPlan {
        q: flow,
        cost: total,
    }
}

/// Optimal transport plan between two mixing measures under the ground
/// cost `||theta_j - theta'_k||^r`.
pub fn transport_plan(a: &MixingMeasure, b: &MixingMeasure, r: u32) -> Result<TransportPlan> {
    if r != 1 && r != 2 {
        return Err(Error::UnsupportedOrder { order: r });
    }
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.len() > MAX_SUPPORT || b.len() > MAX_SUPPORT {
        return Err(Error::InvalidConfig {
            reason: format!("supports capped at {MAX_SUPPORT} atoms"),
        });
    }
    let cost: Vec<Vec<f64>> = a
        .atoms
        .iter()
        .map(|x| {
            b.atoms
                .iter()
                .map(|y| {
                    let d = euclidean(x, y);
                    if r == 1 {
                        d
                    } else {
                        d * d
                    }
                })
                .collect()
        })
        .collect();
    Ok(solve_transport(&a.weights, &b.weights, &cost))
}

/// Wasserstein distance of order r between two discrete mixing measures:
/// the r-th root of the minimal transport cost.
pub fn wasserstein(a: &MixingMeasure, b: &MixingMeasure, r: u32) -> Result<f64> {
    let plan = transport_plan(a, b, r)?;
    let cost = plan.cost.max(0.0);
    Ok(if r == 1 { cost } else { cost.sqrt() })
}

/// Assigns each fitted atom to its nearest true atom (ties to the smallest
/// true-atom index), returning one index set per true atom.
pub fn voronoi_assign(fitted_atoms: &[Vec<f64>], true_atoms: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new(); true_atoms.len()];
    for (j, fit) in fitted_atoms.iter().enumerate() {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, truth) in true_atoms.iter().enumerate() {
            let d = euclidean(fit, truth);
            if d < best_dist {
                best_dist = d;
                best = k;
            }
        }
        cells[best].push(j);
    }
    cells
}

/// Aggregate order-selection outcome for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// (selected order, count), sorted by order.
    pub counts: Vec<(usize, usize)>,
    pub total: usize,
    pub correct_proportion: f64,
}

impl MethodSummary {
    pub fn proportion(&self, order: usize) -> f64 {
        self.counts
            .iter()
            .find(|(o, _)| *o == order)
            .map_or(0.0, |(_, c)| *c as f64 / self.total as f64)
    }
}

/// Per-method histograms of selected orders over a replication run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k0: usize,
    pub methods: Vec<MethodSummary>,
}

impl SelectionReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Histograms the selected orders per method and computes the proportion of
/// correct selections against the true order.
pub fn aggregate_selection(results: &[(String, usize)], k0: usize) -> SelectionReport {
    let mut methods: Vec<String> = Vec::new();
    for (m, _) in results {
        if !methods.contains(m) {
            methods.push(m.clone());
        }
    }
    let summaries = methods
        .into_iter()
        .map(|name| {
            let orders: Vec<usize> = results
                .iter()
                .filter(|(m, _)| *m == name)
                .map(|(_, o)| *o)
                .collect();
            let total = orders.len();
            let mut counts: Vec<(usize, usize)> = Vec::new();
            for &o in &orders {
                match counts.iter_mut().find(|(ord, _)| *ord == o) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((o, 1)),
                }
            }
            counts.sort_by_key(|(o, _)| *o);
            let correct = orders.iter().filter(|&&o| o == k0).count();
            MethodSummary {
                method: name,
                counts,
                total,
                correct_proportion: correct as f64 / total as f64,
            }
        })
        .collect();
    SelectionReport {
        k0,
        methods: summaries,
    }
}
