//! Synthetic world and trajectory generation: a grid road network with
//! templated descriptions, POIs, and random-walk trajectories whose speed
//! profiles include stops and steady segments.

use super::geo::haversine;
use super::types::{Poi, RoadEdge, RoadNetwork, RoadNode, TrajPoint, Trajectory};
use crate::Result;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub poi_count: usize,
    pub origin_lng: f64,
    pub origin_lat: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 8,
            cols: 8,
            spacing_m: 500.0,
            poi_count: 50,
            origin_lng: 104.0,
            origin_lat: 30.65,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajGenConfig {
    pub count: usize,
    /// Fraction of trajectories that reuse an earlier trajectory's route
    /// (hence share its OD pair).
    pub od_share: f64,
    /// Within the od_share clones, the fraction replayed point-for-point
    /// (near-duplicates, for similarity-search targets).
    pub duplicate_share: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Departure window start (seconds since epoch) and span.
    pub t_base: i64,
    pub t_span: i64,
}

impl Default for TrajGenConfig {
    fn default() -> Self {
        TrajGenConfig {
            count: 2000,
            od_share: 0.3,
            duplicate_share: 0.5,
            min_len: 5,
            max_len: 120,
            // 2018-10-01 00:00:00 UTC, ten days
            t_base: 1_538_352_000,
            t_span: 10 * 86_400,
        }
    }
}

const ROAD_NAMES: &[&str] = &[
    "Maple", "Oak", "Cedar", "Elm", "Birch", "Willow", "Juniper", "Aspen", "Laurel", "Poplar",
    "Magnolia", "Sycamore", "Chestnut", "Hawthorn", "Linden", "Rowan",
];
const ROAD_SUFFIXES: &[&str] = &["Street", "Avenue", "Road", "Boulevard", "Lane", "Drive"];
const ROAD_TYPES: &[&str] = &["residential street", "arterial road", "expressway"];

const POI_NAMES: &[&str] = &[
    "Greenfield", "Riverside", "Summit", "Harbor", "Meadow", "Sunset", "Granite", "Crescent",
    "Fountain", "Orchard", "Lakeview", "Hillcrest", "Garden", "Union", "Central", "Pioneer",
];
const POI_KINDS: &[(&str, &str)] = &[
    ("Market", "a grocery market selling fresh produce and daily goods"),
    ("Park", "a public park with walking trails and open lawns"),
    ("Office Tower", "an office building hosting company headquarters"),
    ("Apartments", "a residential home complex with family housing"),
];

/// Grid road network plus POIs near nodes, deterministic under `seed`.
/// Each undirected grid connection is stored as a pair of directed edges
/// sharing one description.
pub fn generate_synthetic_world(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(RoadNetwork, Vec<Poi>)> {
    assert!(cfg.rows >= 2 && cfg.cols >= 2, "grid needs at least 2x2 nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dlat = cfg.spacing_m / 111_195.0;
    let dlng = cfg.spacing_m / (111_195.0 * cfg.origin_lat.to_radians().cos());

    let mut nodes = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            nodes.push(RoadNode {
                id: (r * cfg.cols + c) as u32,
                lng: cfg.origin_lng + c as f64 * dlng,
                lat: cfg.origin_lat + r as f64 * dlat,
            });
        }
    }

    let mut edges = Vec::new();
    let add_pair = |edges: &mut Vec<RoadEdge>, a: u32, b: u32, rng: &mut ChaCha8Rng| {
        let name = ROAD_NAMES.choose(rng).unwrap();
        let suffix = ROAD_SUFFIXES.choose(rng).unwrap();
        let kind = ROAD_TYPES.choose(rng).unwrap();
        let desc = format!("{name} {suffix}, {kind}");
        let id = edges.len() as u32;
        edges.push(RoadEdge {
            id,
            from: a,
            to: b,
            desc: desc.clone(),
        });
        edges.push(RoadEdge {
            id: id + 1,
            from: b,
            to: a,
            desc,
        });
    };
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let id = (r * cfg.cols + c) as u32;
            if c + 1 < cfg.cols {
                add_pair(&mut edges, id, id + 1, &mut rng);
            }
            if r + 1 < cfg.rows {
                add_pair(&mut edges, id, id + cfg.cols as u32, &mut rng);
            }
        }
    }
    let network = RoadNetwork::new(nodes, edges)?;

    let mut pois = Vec::with_capacity(cfg.poi_count);
    for i in 0..cfg.poi_count {
        let node = &network.nodes[rng.random_range(0..network.nodes.len())];
        let off_lng = rng.random_range(-0.3..0.3) * dlng;
        let off_lat = rng.random_range(-0.3..0.3) * dlat;
        let name = POI_NAMES.choose(&mut rng).unwrap();
        let (kind, blurb) = POI_KINDS.choose(&mut rng).unwrap();
        pois.push(Poi {
            id: i as u32,
            lng: node.lng + off_lng,
            lat: node.lat + off_lat,
            desc: format!("{name} {kind}, {blurb}"),
        });
    }
    Ok((network, pois))
}

/// Random-walk trajectories over the network. Speed profiles mix cruising,
/// stops, and whole-edge steady stretches; sampling intervals are >= 6 s
/// and lengths stay within `[min_len, max_len]`. An `od_share` fraction
/// replays an earlier route (some as exact point-for-point duplicates) so
/// similarity search has same-OD candidates.
pub fn generate_trajectories(
    network: &RoadNetwork,
    cfg: &TrajGenConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outgoing = outgoing_edges(network);

    let mut trajs: Vec<Trajectory> = Vec::with_capacity(cfg.count);
    let mut routes: Vec<Vec<u32>> = Vec::with_capacity(cfg.count);

    for id in 0..cfg.count {
        let clone_existing = !trajs.is_empty() && rng.random_range(0.0..1.0) < cfg.od_share;
        if clone_existing {
            let src = rng.random_range(0..trajs.len());
            let duplicate = rng.random_range(0.0..1.0) < cfg.duplicate_share;
            if duplicate {
                // exact replay, shifted slightly in departure time so both
                // land in the same chronological split
                let shift = rng.random_range(-600..=600);
                let mut points = trajs[src].points.clone();
                for p in &mut points {
                    p.t += shift;
                }
                routes.push(routes[src].clone());
                trajs.push(Trajectory {
                    id: id as u64,
                    points,
                });
                continue;
            }
            let route = routes[src].clone();
            let depart = trajs[src].departure() + rng.random_range(-600..=600);
            let traj = sample_along_route(network, &route, depart, cfg, id as u64, &mut rng)?;
            routes.push(route);
            trajs.push(traj);
            continue;
        }

        let route = random_route(network, &outgoing, &mut rng);
        let depart = cfg.t_base + rng.random_range(0..cfg.t_span);
        let traj = sample_along_route(network, &route, depart, cfg, id as u64, &mut rng)?;
        routes.push(route);
        trajs.push(traj);
    }
    Ok(trajs)
}

fn outgoing_edges(network: &RoadNetwork) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); network.nodes.len()];
    for e in &network.edges {
        out[e.from as usize].push(e.id);
    }
    out
}

fn random_route(network: &RoadNetwork, outgoing: &[Vec<u32>], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let hops = rng.random_range(3..=14);
    let start = rng.random_range(0..network.edges.len()) as u32;
    let mut route = vec![start];
    let mut cur = &network.edges[start as usize];
    for _ in 1..hops {
        let options = &outgoing[cur.to as usize];
        // avoid immediately doubling back unless forced
        let forward: Vec<u32> = options
            .iter()
            .copied()
            .filter(|&e| network.edges[e as usize].to != cur.from)
            .collect();
        let next = if forward.is_empty() {
            match options.choose(rng) {
                Some(&e) => e,
                None => break,
            }
        } else {
            *forward.choose(rng).unwrap()
        };
        route.push(next);
        cur = &network.edges[next as usize];
    }
    route
}

#[derive(Clone, Copy)]
enum DriveMode {
    Cruise,
    Steady,
    Stopped,
}

fn sample_along_route(
    network: &RoadNetwork,
    route: &[u32],
    depart: i64,
    cfg: &TrajGenConfig,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    // polyline of (edge id, segment length) with node coordinates
    let mut cum = vec![0.0];
    for &e in route {
        let edge = network.edge(e)?;
        let a = &network.nodes[edge.from as usize];
        let b = &network.nodes[edge.to as usize];
        let len = haversine((a.lng, a.lat), (b.lng, b.lat)).max(1.0);
        cum.push(cum.last().unwrap() + len);
    }
    let total = *cum.last().unwrap();

    let locate = |dist: f64| -> (f64, f64, u32) {
        let d = dist.clamp(0.0, total - 1e-9);
        let mut k = 0;
        while k + 1 < cum.len() - 1 && cum[k + 1] <= d {
            k += 1;
        }
        let edge = network.edge(route[k]).unwrap();
        let a = &network.nodes[edge.from as usize];
        let b = &network.nodes[edge.to as usize];
        let f = (d - cum[k]) / (cum[k + 1] - cum[k]);
        (
            a.lng + (b.lng - a.lng) * f,
            a.lat + (b.lat - a.lat) * f,
            route[k],
        )
    };

    let mut points = Vec::new();
    let mut dist = 0.0;
    let mut t = depart;
    let mut mode = DriveMode::Cruise;
    let mut mode_left = rng.random_range(2..6);
    let mut speed = rng.random_range(8.0..18.0);

    while points.len() < cfg.max_len {
        let (lng, lat, road) = locate(dist);
        points.push(TrajPoint { lng, lat, road, t });
        if dist >= total - 1e-6 {
            break;
        }
        if mode_left == 0 {
            let roll: f64 = rng.random_range(0.0..1.0);
            mode = if roll < 0.15 {
                DriveMode::Stopped
            } else if roll < 0.45 {
                DriveMode::Steady
            } else {
                DriveMode::Cruise
            };
            mode_left = match mode {
                DriveMode::Stopped => rng.random_range(2..5),
                DriveMode::Steady => rng.random_range(3..8),
                DriveMode::Cruise => rng.random_range(2..6),
            };
            if matches!(mode, DriveMode::Cruise | DriveMode::Steady) {
                speed = rng.random_range(6.0..20.0);
            }
        }
        mode_left -= 1;
        let dt = rng.random_range(6..=12);
        t += dt;
        let v = match mode {
            DriveMode::Stopped => rng.random_range(0.0..0.2),
            DriveMode::Steady => speed,
            DriveMode::Cruise => f64::max(speed + rng.random_range(-3.0..3.0), 1.0),
        };
        dist = (dist + v * dt as f64).min(total);
    }

    // force the destination sample if the cap cut the route short
    if points.len() >= cfg.max_len && dist < total {
        let last = points.last_mut().unwrap();
        let (lng, lat, road) = locate(total);
        last.lng = lng;
        last.lat = lat;
        last.road = road;
    }

    // pad short walks by idling at the destination
    while points.len() < cfg.min_len {
        let prev = *points.last().unwrap();
        points.push(TrajPoint {
            t: prev.t + rng.random_range(6..=12),
            ..prev
        });
    }

    Ok(Trajectory { id, points })
}
