//! Domain objects: road network, trajectory, POI.

use crate::error::TrajError;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNode {
    pub id: u32,
    pub lng: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub desc: String,
}

/// Directed road graph. `adjacency[e]` holds every edge sharing an endpoint
/// with `e` (either end, excluding `e` itself).
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub nodes: Vec<RoadNode>,
    pub edges: Vec<RoadEdge>,
    adjacency: Vec<Vec<u32>>,
}

/// Geographic bounding box of a network, used to normalize coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub min_lng: f64,
    pub max_lng: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

impl Bounds {
    pub fn norm_lng(&self, lng: f64) -> f64 {
        let span = self.max_lng - self.min_lng;
        if span > 0.0 {
            (lng - self.min_lng) / span
        } else {
            0.0
        }
    }

    pub fn norm_lat(&self, lat: f64) -> f64 {
        let span = self.max_lat - self.min_lat;
        if span > 0.0 {
            (lat - self.min_lat) / span
        } else {
            0.0
        }
    }
}

impl RoadNetwork {
    /// Validates id density and endpoint references, then derives the
    /// shared-endpoint adjacency.
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(TrajError::InvalidNetwork(format!(
                    "node ids must be dense 0-based, got {} at index {}",
                    n.id, i
                )));
            }
        }
        for (i, e) in edges.iter().enumerate() {
            if e.id as usize != i {
                return Err(TrajError::InvalidNetwork(format!(
                    "edge ids must be dense 0-based, got {} at index {}",
                    e.id, i
                )));
            }
            if e.from as usize >= nodes.len() || e.to as usize >= nodes.len() {
                return Err(TrajError::InvalidNetwork(format!(
                    "edge {} references missing node",
                    e.id
                )));
            }
        }
        let mut by_node: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
        for e in &edges {
            by_node[e.from as usize].push(e.id);
            by_node[e.to as usize].push(e.id);
        }
        let mut adjacency = vec![Vec::new(); edges.len()];
        for e in &edges {
            let mut nb: Vec<u32> = by_node[e.from as usize]
                .iter()
                .chain(&by_node[e.to as usize])
                .copied()
                .filter(|&o| o != e.id)
                .collect();
            nb.sort_unstable();
            nb.dedup();
            adjacency[e.id as usize] = nb;
        }
        Ok(RoadNetwork {
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn neighbors(&self, edge: u32) -> &[u32] {
        &self.adjacency[edge as usize]
    }

    pub fn edge(&self, id: u32) -> Result<&RoadEdge> {
        self.edges
            .get(id as usize)
            .ok_or(TrajError::UnknownRoad(id))
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            min_lng: f64::INFINITY,
            max_lng: f64::NEG_INFINITY,
            min_lat: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
        };
        for n in &self.nodes {
            b.min_lng = b.min_lng.min(n.lng);
            b.max_lng = b.max_lng.max(n.lng);
            b.min_lat = b.min_lat.min(n.lat);
            b.max_lat = b.max_lat.max(n.lat);
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub lng: f64,
    pub lat: f64,
    /// Matched road segment id.
    pub road: u32,
    /// Seconds since epoch.
    pub t: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn departure(&self) -> i64 {
        self.points.first().map(|p| p.t).unwrap_or(0)
    }

    pub fn origin(&self) -> &TrajPoint {
        &self.points[0]
    }

    pub fn destination(&self) -> &TrajPoint {
        self.points.last().expect("non-empty trajectory")
    }

    /// Ingestion validation: strictly increasing timestamps, length within
    /// `[min_len, max_len]`, every road id present in the network.
    pub fn validate(&self, network: &RoadNetwork, min_len: usize, max_len: usize) -> Result<()> {
        if self.points.len() < min_len || self.points.len() > max_len {
            return Err(TrajError::InvalidTrajectory(format!(
                "trajectory {} has {} points, expected {}..={}",
                self.id,
                self.points.len(),
                min_len,
                max_len
            )));
        }
        for w in self.points.windows(2) {
            if w[1].t <= w[0].t {
                return Err(TrajError::InvalidTrajectory(format!(
                    "trajectory {} timestamps not strictly increasing ({} then {})",
                    self.id, w[0].t, w[1].t
                )));
            }
        }
        for p in &self.points {
            if p.road as usize >= network.edges.len() {
                return Err(TrajError::UnknownRoad(p.road));
            }
        }
        Ok(())
    }

    /// Subsequence of odd-numbered points (1st, 3rd, ...) or even-numbered.
    pub fn subsequence(&self, odd: bool, new_id: u64) -> Trajectory {
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| if odd { i % 2 == 0 } else { i % 2 == 1 })
            .map(|(_, p)| *p)
            .collect();
        Trajectory { id: new_id, points }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub id: u32,
    pub lng: f64,
    pub lat: f64,
    pub desc: String,
}
