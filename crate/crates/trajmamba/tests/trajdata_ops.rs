//! Feature-pipeline, preprocessing, compression-baseline, and generator
//! tests, each DERIVED value computed by its stated independent oracle.

use trajmamba::trajdata::*;

fn traj(points: Vec<(f64, f64, u32, i64)>) -> Trajectory {
    Trajectory {
        id: 0,
        points: points
            .into_iter()
            .map(|(lng, lat, road, t)| TrajPoint { lng, lat, road, t })
            .collect(),
    }
}

// ── movement features ────────────────────────────────────────────────

#[test]
fn stationary_points_have_zero_speed() {
    let t = traj(vec![
        (104.0, 30.6, 0, 0),
        (104.0, 30.6, 0, 10),
        (104.01, 30.6, 0, 20),
    ]);
    let m = compute_movement_features(&t).unwrap();
    // first segment has no displacement; speed column min-max keeps it at 0
    assert_eq!(m[0][0], 0.0);
}

#[test]
fn constant_velocity_eastward_line_is_uniform() {
    let mut pts = Vec::new();
    for i in 0..4 {
        pts.push((104.0 + 0.001 * i as f64, 30.6, 0, 10 * i as i64));
    }
    let t = traj(pts);
    let m = compute_movement_features(&t).unwrap();
    // acceleration column equal everywhere pre-normalization => all zeros
    // after min-max; angle constant => all zeros after min-max
    for row in &m[..3] {
        assert_eq!(row[1], 0.0, "acceleration column not constant: {m:?}");
        assert_eq!(row[2], 0.0, "angle column not constant: {m:?}");
    }
    assert_eq!(m[3], [0.0; 3]);
}

#[test]
fn four_point_case_matches_independent_recomputation() {
    let pts = [
        (104.000, 30.600, 0u32, 0i64),
        (104.002, 30.601, 0, 12),
        (104.005, 30.6005, 1, 20),
        (104.006, 30.603, 1, 35),
    ];
    let t = traj(pts.to_vec());
    let m = compute_movement_features(&t).unwrap();

    // independent spreadsheet-style recomputation
    let d = |a: (f64, f64), b: (f64, f64)| haversine(a, b);
    let g = |i: usize| (pts[i].0, pts[i].1);
    let dt = |i: usize| (pts[i + 1].3 - pts[i].3) as f64;
    let v: Vec<f64> = (0..3).map(|i| d(g(i), g(i + 1)) / dt(i)).collect();
    let a = [(v[1] - v[0]) / dt(0), (v[2] - v[1]) / dt(1), 0.0];
    let th: Vec<f64> = (0..3)
        .map(|i| bearing(g(i), g(i + 1)) / std::f64::consts::TAU)
        .collect();
    let minmax = |col: &[f64], x: f64| {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    for i in 0..3 {
        assert!((m[i][0] - minmax(&v, v[i])).abs() < 1e-12, "speed row {i}");
        assert!((m[i][1] - minmax(&a, a[i])).abs() < 1e-12, "accel row {i}");
        assert!((m[i][2] - minmax(&th, th[i])).abs() < 1e-12, "angle row {i}");
    }
    assert_eq!(m[3], [0.0; 3]);
}

#[test]
fn zero_time_delta_is_an_error() {
    let t = traj(vec![(104.0, 30.6, 0, 5), (104.001, 30.6, 0, 5)]);
    assert!(compute_movement_features(&t).is_err());
}

// ── redundancy filter ────────────────────────────────────────────────

fn cfg() -> FilterConfig {
    FilterConfig::default()
}

#[test]
fn five_stationary_points_collapse_to_two() {
    let t = traj((0..5).map(|i| (104.0, 30.6, 0, 10 * i as i64)).collect());
    let f = filter_explicit_redundancy(&t, &cfg()).unwrap();
    assert_eq!(f.len(), 2);
    assert_eq!(f.points[0].t, 0);
    assert_eq!(f.points[1].t, 40);
}

#[test]
fn alternating_roads_with_varying_speed_are_unchanged() {
    // speeds vary well beyond the steadiness threshold and roads alternate
    let t = traj(vec![
        (104.000, 30.600, 0, 0),
        (104.001, 30.600, 1, 10),
        (104.003, 30.600, 0, 20),
        (104.004, 30.600, 1, 30),
        (104.007, 30.600, 0, 40),
        (104.008, 30.600, 1, 50),
    ]);
    let f = filter_explicit_redundancy(&t, &cfg()).unwrap();
    assert_eq!(f.len(), t.len());
}

/// Brute-force run-detection oracle: enumerates every maximal stop run and
/// same-road steady run directly, marks interiors, iterates to fixpoint.
fn filter_oracle(t: &Trajectory, c: &FilterConfig) -> Vec<i64> {
    let mut current = t.clone();
    loop {
        let n = current.len();
        if n <= 2 {
            break;
        }
        let sp = segment_speeds(&current).unwrap();
        let mut drop = vec![false; n];
        // all maximal stop runs by exhaustive scan
        for i in 0..sp.len() {
            for j in i..sp.len() {
                if (i..=j).all(|k| sp[k] < c.stop_speed)
                    && (i == 0 || sp[i - 1] >= c.stop_speed)
                    && (j + 1 >= sp.len() || sp[j + 1] >= c.stop_speed)
                {
                    for k in i + 1..=j {
                        drop[k] = true;
                    }
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let same_road = (i..=j).all(|k| current.points[k].road == current.points[i].road);
                let maximal = (i == 0 || current.points[i - 1].road != current.points[i].road)
                    && (j + 1 >= n || current.points[j + 1].road != current.points[i].road);
                if same_road && maximal && j > i + 1 {
                    let seg = &sp[i..j];
                    let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if hi - lo < c.steady_speed_range {
                        for k in i + 1..j {
                            drop[k] = true;
                        }
                    }
                }
            }
        }
        drop[0] = false;
        drop[n - 1] = false;
        let points: Vec<_> = current
            .points
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(p, _)| *p)
            .collect();
        if points.len() == n {
            break;
        }
        current = Trajectory { id: t.id, points };
    }
    current.points.iter().map(|p| p.t).collect()
}

#[test]
fn mixed_twelve_point_case_matches_brute_force_oracle() {
    // cruise, stop x3, cruise on one road at steady pace x4, cruise
    let t = traj(vec![
        (104.0000, 30.600, 0, 0),
        (104.0010, 30.600, 0, 10),   // moving
        (104.0010, 30.600, 0, 20),   // stop run start
        (104.00101, 30.600, 0, 30),  // stopped
        (104.0010, 30.600, 0, 40),   // stopped
        (104.0030, 30.600, 1, 50),   // moving again, road 1
        (104.0041, 30.600, 1, 60),   // steady on road 1
        (104.0052, 30.600, 1, 70),   // steady
        (104.0063, 30.600, 1, 80),   // steady
        (104.0074, 30.600, 1, 90),   // steady
        (104.0120, 30.600, 2, 100),  // fast on road 2
        (104.0150, 30.600, 2, 110),
    ]);
    let expected = filter_oracle(&t, &cfg());
    let got: Vec<i64> = filter_explicit_redundancy(&t, &cfg())
        .unwrap()
        .points
        .iter()
        .map(|p| p.t)
        .collect();
    assert_eq!(got, expected);
    assert!(got.len() < t.len());
}

#[test]
fn filter_is_idempotent_on_generated_trajectories() {
    let (network, _pois) = generate_synthetic_world(&SynthConfig::default(), 3).unwrap();
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count: 40,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    for t in &trajs {
        let once = filter_explicit_redundancy(t, &cfg()).unwrap();
        let twice = filter_explicit_redundancy(&once, &cfg()).unwrap();
        assert_eq!(once, twice, "not idempotent on trajectory {}", t.id);
    }
}

// ── Douglas-Peucker ──────────────────────────────────────────────────

#[test]
fn collinear_points_reduce_to_endpoints() {
    let t = traj((0..6).map(|i| (104.0 + 0.001 * i as f64, 30.6, 0, 10 * i as i64)).collect());
    let s = douglas_peucker(&t, 5.0);
    assert_eq!(s.len(), 2);
}

#[test]
fn zero_epsilon_keeps_every_point() {
    let t = traj(vec![
        (104.000, 30.600, 0, 0),
        (104.001, 30.6005, 0, 10),
        (104.002, 30.5995, 0, 20),
        (104.003, 30.600, 0, 30),
    ]);
    let s = douglas_peucker(&t, 0.0);
    assert_eq!(s.len(), t.len());
}

#[test]
fn triangle_detour_keeps_the_apex() {
    let t = traj(vec![
        (104.000, 30.600, 0, 0),
        (104.001, 30.6018, 0, 10), // apex ~200 m off the base line
        (104.002, 30.600, 0, 20),
    ]);
    // brute-force max-deviation oracle: independent 3D-vector deviation
    fn unit(p: (f64, f64)) -> [f64; 3] {
        let (lng, lat) = (p.0.to_radians(), p.1.to_radians());
        [lat.cos() * lng.cos(), lat.cos() * lng.sin(), lat.sin()]
    }
    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
    fn norm(a: [f64; 3]) -> f64 {
        (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
    }
    let (a, b, p) = (
        unit((104.000, 30.600)),
        unit((104.002, 30.600)),
        unit((104.001, 30.6018)),
    );
    let n = cross(a, b);
    let nn = norm(n);
    let dot = (n[0] * p[0] + n[1] * p[1] + n[2] * p[2]) / nn;
    let oracle_dev = dot.asin().abs() * EARTH_RADIUS_M;

    let dev = cross_track_distance((104.001, 30.6018), (104.000, 30.600), (104.002, 30.600));
    assert!(
        (dev - oracle_dev).abs() / oracle_dev < 1e-6,
        "{dev} vs {oracle_dev}"
    );

    let kept = douglas_peucker(&t, oracle_dev * 0.5);
    assert_eq!(kept.len(), 3, "apex must survive");
    let dropped = douglas_peucker(&t, oracle_dev * 2.0);
    assert_eq!(dropped.len(), 2);
}

#[test]
fn coarser_epsilon_never_keeps_more_points() {
    let (network, _) = generate_synthetic_world(&SynthConfig::default(), 11).unwrap();
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count: 20,
            ..Default::default()
        },
        11,
    )
    .unwrap();
    for t in &trajs {
        let fine = douglas_peucker(t, 10.0).len();
        let coarse = douglas_peucker(t, 80.0).len();
        assert!(fine >= coarse, "traj {}: {fine} < {coarse}", t.id);
    }
}

// ── downsample ───────────────────────────────────────────────────────

#[test]
fn ratio_one_is_identity() {
    let t = traj((0..9).map(|i| (104.0 + 0.001 * i as f64, 30.6, 0, 10 * i as i64)).collect());
    assert_eq!(downsample(&t, 1.0).unwrap(), t);
}

#[test]
fn ten_points_at_sixty_percent_keep_six_with_endpoints() {
    let t = traj((0..10).map(|i| (104.0 + 0.001 * i as f64, 30.6, 0, 10 * i as i64)).collect());
    let d = downsample(&t, 0.6).unwrap();
    assert_eq!(d.len(), 6);
    assert_eq!(d.points[0], t.points[0]);
    assert_eq!(d.points[5], t.points[9]);
}

#[test]
fn downsample_indices_are_evenly_spaced() {
    let t = traj((0..120).map(|i| (104.0 + 0.0001 * i as f64, 30.6, 0, 10 * i as i64)).collect());
    let d = downsample(&t, 0.6).unwrap();
    // arithmetic index oracle: round(k * 119 / 71)
    let m = (0.6f64 * 120.0).round() as usize;
    assert_eq!(d.len(), m);
    for (k, p) in d.points.iter().enumerate() {
        let expect = ((k as f64) * 119.0 / (m as f64 - 1.0)).round() as usize;
        assert_eq!(p.t, t.points[expect].t, "index {k}");
    }
}

// ── chronological split ──────────────────────────────────────────────

#[test]
fn ten_trajectories_split_eight_one_one() {
    let trajs: Vec<Trajectory> = (0..10)
        .map(|i| traj(vec![(104.0, 30.6, 0, 100 * i as i64), (104.001, 30.6, 0, 100 * i as i64 + 10)]))
        .collect();
    let (tr, va, te) = chronological_split(trajs, (8, 1, 1));
    assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
}

#[test]
fn sorted_input_order_is_preserved() {
    let trajs: Vec<Trajectory> = (0..10)
        .map(|i| {
            let mut t = traj(vec![
                (104.0, 30.6, 0, 50 * i as i64),
                (104.001, 30.6, 0, 50 * i as i64 + 10),
            ]);
            t.id = i as u64;
            t
        })
        .collect();
    let (tr, ..) = chronological_split(trajs.clone(), (8, 1, 1));
    let ids: Vec<u64> = tr.iter().map(|t| t.id).collect();
    assert_eq!(ids, (0..8).collect::<Vec<u64>>());
}

#[test]
fn shuffled_input_respects_departure_ordering() {
    let mut trajs: Vec<Trajectory> = (0..30)
        .map(|i| {
            let dep = ((i * 7919) % 100) as i64 * 13;
            let mut t = traj(vec![(104.0, 30.6, 0, dep), (104.001, 30.6, 0, dep + 9)]);
            t.id = i as u64;
            t
        })
        .collect();
    trajs.reverse();
    let (tr, va, te) = chronological_split(trajs, (8, 1, 1));
    // sort oracle: max(train) <= min(valid) <= max(valid) <= min(test)
    let max_tr = tr.iter().map(|t| t.departure()).max().unwrap();
    let min_va = va.iter().map(|t| t.departure()).min().unwrap();
    let max_va = va.iter().map(|t| t.departure()).max().unwrap();
    let min_te = te.iter().map(|t| t.departure()).min().unwrap();
    assert!(max_tr <= min_va && max_va <= min_te);
}

// ── synthetic generation ─────────────────────────────────────────────

#[test]
fn two_by_two_grid_has_four_connections_stored_directed() {
    let (network, _) = generate_synthetic_world(
        &SynthConfig {
            rows: 2,
            cols: 2,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    assert_eq!(network.nodes.len(), 4);
    // 4 undirected grid connections stored as directed pairs
    assert_eq!(network.edges.len(), 8);
    let undirected: std::collections::BTreeSet<(u32, u32)> = network
        .edges
        .iter()
        .map(|e| (e.from.min(e.to), e.from.max(e.to)))
        .collect();
    assert_eq!(undirected.len(), 4);
}

#[test]
fn same_seed_gives_identical_worlds() {
    let a = generate_synthetic_world(&SynthConfig::default(), 9).unwrap();
    let b = generate_synthetic_world(&SynthConfig::default(), 9).unwrap();
    assert_eq!(a.0.nodes, b.0.nodes);
    assert_eq!(a.0.edges, b.0.edges);
    assert_eq!(a.1, b.1);
}

#[test]
fn pois_stay_inside_the_grid_bounding_box() {
    let cfg = SynthConfig {
        poi_count: 50,
        ..Default::default()
    };
    let (network, pois) = generate_synthetic_world(&cfg, 5).unwrap();
    assert_eq!(pois.len(), 50);
    let b = network.bounds();
    let dlng = (b.max_lng - b.min_lng) * 0.5;
    let dlat = (b.max_lat - b.min_lat) * 0.5;
    for p in &pois {
        assert!(p.lng >= b.min_lng - dlng && p.lng <= b.max_lng + dlng);
        assert!(p.lat >= b.min_lat - dlat && p.lat <= b.max_lat + dlat);
    }
}

#[test]
fn generated_lengths_and_intervals_respect_constraints() {
    let (network, _) = generate_synthetic_world(&SynthConfig::default(), 13).unwrap();
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count: 200,
            ..Default::default()
        },
        13,
    )
    .unwrap();
    assert_eq!(trajs.len(), 200);
    for t in &trajs {
        assert!((5..=120).contains(&t.len()), "length {}", t.len());
        for w in t.points.windows(2) {
            assert!(w[1].t - w[0].t >= 6, "interval {}", w[1].t - w[0].t);
        }
        t.validate(&network, 5, 120).unwrap();
    }
}

#[test]
fn od_share_produces_same_od_partners() {
    let (network, _) = generate_synthetic_world(&SynthConfig::default(), 17).unwrap();
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count: 300,
            od_share: 0.3,
            ..Default::default()
        },
        17,
    )
    .unwrap();
    // counting oracle over the generated set
    let od = |t: &Trajectory| (t.origin().road, t.destination().road);
    let mut counts = std::collections::BTreeMap::new();
    for t in &trajs {
        *counts.entry(od(t)).or_insert(0usize) += 1;
    }
    let partnered: usize = trajs.iter().filter(|t| counts[&od(t)] >= 2).count();
    let frac = partnered as f64 / trajs.len() as f64;
    assert!(frac >= 0.25, "partnered fraction {frac}");
}

#[test]
fn generation_is_bit_reproducible() {
    let (network, _) = generate_synthetic_world(&SynthConfig::default(), 23).unwrap();
    let gen = TrajGenConfig {
        count: 50,
        ..Default::default()
    };
    let a = generate_trajectories(&network, &gen, 23).unwrap();
    let b = generate_trajectories(&network, &gen, 23).unwrap();
    assert_eq!(a, b);
}

// ── file formats ─────────────────────────────────────────────────────

#[test]
fn trajectory_jsonl_uses_the_documented_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let t = traj(vec![(104.25, 30.5, 3, 1000), (104.26, 30.51, 4, 1010)]);
    write_trajectories(&path, &[t.clone()]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.trim(),
        r#"{"id":0,"points":[{"lng":104.25,"lat":30.5,"road":3,"t":1000},{"lng":104.26,"lat":30.51,"road":4,"t":1010}]}"#
    );
    let back = read_trajectories(&path).unwrap();
    assert_eq!(back, vec![t]);
}

#[test]
fn network_and_poi_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (network, pois) = generate_synthetic_world(
        &SynthConfig {
            rows: 3,
            cols: 3,
            poi_count: 7,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    let np = dir.path().join("net.json");
    let pp = dir.path().join("pois.jsonl");
    write_network(&np, &network).unwrap();
    write_pois(&pp, &pois).unwrap();
    let network2 = read_network(&np).unwrap();
    let pois2 = read_pois(&pp).unwrap();
    assert_eq!(network.nodes, network2.nodes);
    assert_eq!(network.edges, network2.edges);
    assert_eq!(pois, pois2);
}
