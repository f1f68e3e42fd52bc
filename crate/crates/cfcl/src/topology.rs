//! Communication graph: random geometric graph generation with a target
//! average degree, plus explicit adjacency loading and neighbor queries.

use rand::Rng;

use crate::error::{Error, Result};

/// Undirected device graph. For generated graphs the positions and the
/// connection radius are kept for inspection; explicitly loaded graphs have
/// neither.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n: usize,
    pub positions: Option<Vec<(f64, f64)>>,
    pub radius: f64,
    /// Sorted neighbor list per device; symmetric and irreflexive.
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds the graph induced by a fixed radius over given positions.
    pub fn from_positions(positions: Vec<(f64, f64)>, radius: f64) -> Self {
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = positions[i].0 - positions[j].0;
                let dy = positions[i].1 - positions[j].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
        Self {
            n,
            positions: Some(positions),
            radius,
            adjacency,
        }
    }

    /// Builds a topology from explicit neighbor lists. Edges are
    /// symmetrized; self-loops and out-of-range ids are rejected.
    pub fn from_adjacency(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        if n == 0 {
            return Err(Error::config("topology.adjacency", "need at least 1 device"));
        }
        let mut matrix = vec![vec![false; n]; n];
        for (i, neighbors) in lists.iter().enumerate() {
            for &j in neighbors {
                if j >= n {
                    return Err(Error::InvalidDeviceId { id: j, count: n });
                }
                if j == i {
                    return Err(Error::config(
                        "topology.adjacency",
                        format!("self-loop at device {i}"),
                    ));
                }
                matrix[i][j] = true;
                matrix[j][i] = true;
            }
        }
        let adjacency = matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &e)| e)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            positions: None,
            radius: 0.0,
            adjacency,
        })
    }

    /// Neighbor set of device `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(|v| v.as_slice())
            .ok_or(Error::InvalidDeviceId {
                id: i,
                count: self.n,
            })
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|v| v.len()).sum::<usize>() / 2
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.n as f64
    }

    /// Unique edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, neighbors) in self.adjacency.iter().enumerate() {
            for &j in neighbors {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut visited = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    visited += 1;
                    stack.push(j);
                }
            }
        }
        visited == self.n
    }
}

pub const DEFAULT_RGG_RETRIES: usize = 100;

/// Samples positions uniformly in the unit square and picks the connection
/// radius from the sorted pairwise distances so the realized average degree
/// lands within `tolerance` of the target; positions are resampled (up to
/// `max_retries` times) until the graph is connected.
pub fn generate_rgg(
    n: usize,
    target_avg_degree: f64,
    rng: &mut impl Rng,
    tolerance: f64,
    max_retries: usize,
) -> Result<Topology> {
    if n < 2 {
        return Err(Error::config("device_count", "need at least 2 devices"));
    }
    if !(target_avg_degree > 0.0 && target_avg_degree <= (n - 1) as f64) {
        return Err(Error::config(
            "topology.target_avg_degree",
            format!("must be in (0, {}]", n - 1),
        ));
    }

    // An average degree g needs g*n/2 edges; the radius equal to the m-th
    // smallest pairwise distance realizes exactly m edges (up to ties).
    let total_pairs = n * (n - 1) / 2;
    let wanted_edges = ((target_avg_degree * n as f64 / 2.0).round() as usize)
        .clamp(1, total_pairs);

    for _ in 0..max_retries {
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let mut distances: Vec<f64> = Vec::with_capacity(total_pairs);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = positions[i].0 - positions[j].0;
                let dy = positions[i].1 - positions[j].1;
                distances.push((dx * dx + dy * dy).sqrt());
            }
        }
        distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let radius = distances[wanted_edges - 1];

        let topology = Topology::from_positions(positions, radius);
        if (topology.average_degree() - target_avg_degree).abs() <= tolerance
            && topology.is_connected()
        {
            return Ok(topology);
        }
    }
    Err(Error::RetriesExhausted(format!(
        "no connected graph with average degree {target_avg_degree} +- {tolerance} \
         after {max_retries} attempts"
    )))
}
