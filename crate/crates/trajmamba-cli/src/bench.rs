//! Encoding wall-time benchmark over sequence length, for the linear-time
//! check.

use crate::CliResult;
use gradcore::{ParamStore, Tape};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use trajmamba::config::RunConfig;
use trajmamba::ssmcore::{encode_trajectory, EncoderWeights, ScanMode};
use trajmamba::trajdata::{Bounds, TrajPoint, Trajectory};

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub mode: String,
    pub millis: f64,
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    /// R^2 of the linear fit of sequential time against n.
    pub linear_fit_r2: f64,
    pub csv_path: Option<std::path::PathBuf>,
}

fn synthetic_line(n: usize, seed: u64) -> Trajectory {
    let mut t = 1_538_352_000i64;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        t += 6 + ((seed as i64 + i as i64) % 7);
        points.push(TrajPoint {
            lng: 104.0 + 1e-4 * i as f64,
            lat: 30.65 + 2e-5 * ((i * 7) % 13) as f64,
            road: (i % 16) as u32,
            t,
        });
    }
    Trajectory { id: seed, points }
}

pub fn lin_fit_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + icept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    1.0 - ss_res / ss_tot
}

/// Median wall time per encode across `lengths` in both scan modes; rows
/// are appended to `bench_scan.csv` under `out_dir` unless `dry` is set.
pub fn bench_encoder(
    cfg: &RunConfig,
    lengths: &[usize],
    repeats: usize,
    dry: bool,
) -> CliResult<BenchSummary> {
    let enc_cfg = cfg.encoder();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = EncoderWeights::init(&mut store, "encoder", &enc_cfg, 16, &mut rng)?;
    let bounds = Bounds {
        min_lng: 104.0,
        max_lng: 104.3,
        min_lat: 30.65,
        max_lat: 30.9,
    };

    let mut rows = Vec::new();
    for &n in lengths {
        let traj = synthetic_line(n, cfg.seed);
        for (mode, name) in [
            (ScanMode::Sequential, "sequential"),
            (ScanMode::Chunked(enc_cfg.chunk_size), "chunked"),
        ] {
            let mut times = Vec::with_capacity(repeats);
            // warmup
            {
                let mut tape = Tape::inference();
                let bound = weights.bind(&mut tape, &store)?;
                encode_trajectory(&mut tape, &bound, &traj, &bounds, mode)?;
            }
            for _ in 0..repeats {
                let t0 = Instant::now();
                let mut tape = Tape::inference();
                let bound = weights.bind(&mut tape, &store)?;
                encode_trajectory(&mut tape, &bound, &traj, &bounds, mode)?;
                times.push(t0.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            rows.push(BenchRow {
                n,
                mode: name.into(),
                millis: times[times.len() / 2],
            });
        }
    }

    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == "sequential")
        .map(|r| r.n as f64)
        .collect();
    let ys: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == "sequential")
        .map(|r| r.millis)
        .collect();
    let r2 = lin_fit_r2(&xs, &ys);

    let csv_path = if dry {
        None
    } else {
        std::fs::create_dir_all(&cfg.out_dir)?;
        let path = cfg.out_dir.join("bench_scan.csv");
        let mut csv = String::from("n,mode,millis\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{:.4}\n", r.n, r.mode, r.millis));
        }
        std::fs::write(&path, csv)?;
        Some(path)
    };

    Ok(BenchSummary {
        rows,
        linear_fit_r2: r2,
        csv_path,
    })
}

pub fn cmd_bench_scan(cfg: &RunConfig) -> CliResult<BenchSummary> {
    bench_encoder(cfg, &[128, 256, 512, 1024, 2048], 5, false)
}
