//! File formats (JSON-lines trajectories and POIs, JSON road network) and
//! the chronological dataset split.

use super::types::{Poi, RoadEdge, RoadNetwork, RoadNode, TrajPoint, Trajectory};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct PointJson {
    lng: f64,
    lat: f64,
    road: u32,
    t: i64,
}

#[derive(Serialize, Deserialize)]
struct TrajJson {
    id: u64,
    points: Vec<PointJson>,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    nodes: Vec<(u32, f64, f64)>,
    edges: Vec<(u32, u32, u32, String)>,
}

#[derive(Serialize, Deserialize)]
struct PoiJson {
    id: u32,
    lng: f64,
    lat: f64,
    desc: String,
}

pub fn write_trajectories(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in trajs {
        let row = TrajJson {
            id: t.id,
            points: t
                .points
                .iter()
                .map(|p| PointJson {
                    lng: p.lng,
                    lat: p.lat,
                    road: p.road,
                    t: p.t,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrajJson = serde_json::from_str(&line)?;
        out.push(Trajectory {
            id: row.id,
            points: row
                .points
                .into_iter()
                .map(|p| TrajPoint {
                    lng: p.lng,
                    lat: p.lat,
                    road: p.road,
                    t: p.t,
                })
                .collect(),
        });
    }
    Ok(out)
}

pub fn write_network(path: impl AsRef<Path>, network: &RoadNetwork) -> Result<()> {
    let json = NetworkJson {
        nodes: network.nodes.iter().map(|n| (n.id, n.lng, n.lat)).collect(),
        edges: network
            .edges
            .iter()
            .map(|e| (e.id, e.from, e.to, e.desc.clone()))
            .collect(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &json)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_network(path: impl AsRef<Path>) -> Result<RoadNetwork> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let json: NetworkJson = serde_json::from_reader(r)?;
    RoadNetwork::new(
        json.nodes
            .into_iter()
            .map(|(id, lng, lat)| RoadNode { id, lng, lat })
            .collect(),
        json.edges
            .into_iter()
            .map(|(id, from, to, desc)| RoadEdge { id, from, to, desc })
            .collect(),
    )
}

pub fn write_pois(path: impl AsRef<Path>, pois: &[Poi]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in pois {
        let row = PoiJson {
            id: p.id,
            lng: p.lng,
            lat: p.lat,
            desc: p.desc.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pois(path: impl AsRef<Path>) -> Result<Vec<Poi>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PoiJson = serde_json::from_str(&line)?;
        out.push(Poi {
            id: row.id,
            lng: row.lng,
            lat: row.lat,
            desc: row.desc,
        });
    }
    Ok(out)
}

/// Sorts by departure time (id as tie-break) and splits contiguously by
/// the given ratio, e.g. (8, 1, 1).
pub fn chronological_split(
    mut trajs: Vec<Trajectory>,
    ratio: (usize, usize, usize),
) -> (Vec<Trajectory>, Vec<Trajectory>, Vec<Trajectory>) {
    trajs.sort_by_key(|t| (t.departure(), t.id));
    let n = trajs.len();
    let total = ratio.0 + ratio.1 + ratio.2;
    let n_train = n * ratio.0 / total;
    let n_valid = n * (ratio.0 + ratio.1) / total - n_train;
    let mut trajs = trajs;
    let test = trajs.split_off(n_train + n_valid);
    let valid = trajs.split_off(n_train);
    (trajs, valid, test)
}
