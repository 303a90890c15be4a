//! Synthetic dataset generation and loading.

use crate::{CliError, CliResult};
use trajmamba::config::RunConfig;
use trajmamba::pretrain::World;
use trajmamba::purposeviews::{
    fetch_remote_embeddings, world_descriptions, TextEmbeddingStore,
};
use trajmamba::trajdata::{
    chronological_split, generate_synthetic_world, generate_trajectories, read_network,
    read_pois, read_trajectories, write_network, write_pois, write_trajectories, Trajectory,
};

pub const NETWORK_FILE: &str = "road_network.json";
pub const POI_FILE: &str = "pois.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const STS_POOL_FILE: &str = "sts_pool.jsonl";
pub const TEXT_STORE_FILE: &str = "text_store.temb";

#[derive(Debug, Clone, serde::Serialize)]
pub struct SynthStats {
    pub time_span_start: i64,
    pub time_span_end: i64,
    pub trajectories: usize,
    pub points: usize,
    pub road_segments: usize,
    pub pois: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub sts_pool: usize,
}

impl SynthStats {
    pub fn table(&self) -> String {
        format!(
            "dataset statistics\n  time span       {} .. {}\n  #trajectories   {}\n  #points         {}\n  #road segments  {}\n  #pois           {}\n  splits          {}/{}/{} (+{} search pool)\n",
            self.time_span_start,
            self.time_span_end,
            self.trajectories,
            self.points,
            self.road_segments,
            self.pois,
            self.train,
            self.valid,
            self.test,
            self.sts_pool,
        )
    }
}

/// Generates the world and trajectory files under `data_dir` and returns
/// the dataset statistics.
pub fn cmd_synth(cfg: &RunConfig, force: bool) -> CliResult<SynthStats> {
    let dir = &cfg.data_dir;
    if dir.join(NETWORK_FILE).exists() && !force {
        return Err(CliError::data(format!(
            "output {} already exists; pass --force to overwrite",
            dir.join(NETWORK_FILE).display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let (network, pois) = generate_synthetic_world(&cfg.synth(), cfg.seed)?;
    let trajs = generate_trajectories(&network, &cfg.trajgen(), cfg.seed.wrapping_add(1))?;
    let points: usize = trajs.iter().map(|t| t.len()).sum();
    let t_min = trajs.iter().map(|t| t.departure()).min().unwrap_or(0);
    let t_max = trajs.iter().map(|t| t.departure()).max().unwrap_or(0);
    let total = trajs.len();
    let (train, valid, test) = chronological_split(trajs, (8, 1, 1));

    write_network(dir.join(NETWORK_FILE), &network)?;
    write_pois(dir.join(POI_FILE), &pois)?;
    write_trajectories(dir.join(TRAIN_FILE), &train)?;
    write_trajectories(dir.join(VALID_FILE), &valid)?;
    write_trajectories(dir.join(TEST_FILE), &test)?;

    // optional extra eval-only pool so similarity search has enough
    // negatives at desk scale
    let mut pool_len = 0;
    if cfg.synth_sts_pool > 0 {
        let mut pool_cfg = cfg.trajgen();
        pool_cfg.count = cfg.synth_sts_pool;
        let mut pool = generate_trajectories(&network, &pool_cfg, cfg.seed.wrapping_add(2))?;
        for (i, t) in pool.iter_mut().enumerate() {
            t.id = 1_000_000 + i as u64;
        }
        pool_len = pool.len();
        write_trajectories(dir.join(STS_POOL_FILE), &pool)?;
    }

    Ok(SynthStats {
        time_span_start: t_min,
        time_span_end: t_max,
        trajectories: total,
        points,
        road_segments: network.edges.len(),
        pois: pois.len(),
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        sts_pool: pool_len,
    })
}

pub struct Dataset {
    pub world: World,
    pub train: Vec<Trajectory>,
    pub valid: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub sts_pool: Vec<Trajectory>,
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let dir = &cfg.data_dir;
    let network = read_network(dir.join(NETWORK_FILE))?;
    let pois = read_pois(dir.join(POI_FILE))?;
    let train = read_trajectories(dir.join(TRAIN_FILE))?;
    let valid = read_trajectories(dir.join(VALID_FILE))?;
    let test = read_trajectories(dir.join(TEST_FILE))?;
    let sts_pool = if dir.join(STS_POOL_FILE).exists() {
        read_trajectories(dir.join(STS_POOL_FILE))?
    } else {
        Vec::new()
    };
    for t in train.iter().chain(&valid).chain(&test).chain(&sts_pool) {
        t.validate(&network, 2, usize::MAX)?;
    }
    Ok(Dataset {
        world: World::new(network, pois),
        train,
        valid,
        test,
        sts_pool,
    })
}

/// Builds or loads the textual embedding store for a world, honoring
/// `text_source` (deterministic pseudo-embeddings, a TEMB file, or the
/// remote endpoint with an on-disk cache).
pub fn build_text_store(cfg: &RunConfig, dataset: &Dataset) -> CliResult<TextEmbeddingStore> {
    let descriptions = world_descriptions(&dataset.world.network, &dataset.world.pois);
    match cfg.text_source.as_str() {
        "pseudo" => {
            let mut store = TextEmbeddingStore::new(cfg.text_dim);
            store.fill_pseudo(descriptions.iter().map(|s| s.as_str()), cfg.seed)?;
            Ok(store)
        }
        "file" => {
            if cfg.text_file.is_empty() {
                return Err(CliError::usage("text_source = file requires text_file"));
            }
            let store = TextEmbeddingStore::load(&cfg.text_file)?;
            if store.dim != cfg.text_dim {
                return Err(CliError::data(format!(
                    "text store dim {} != configured text_dim {}",
                    store.dim, cfg.text_dim
                )));
            }
            Ok(store)
        }
        "remote" => {
            let cache = cfg.data_dir.join(TEXT_STORE_FILE);
            if cache.exists() {
                return Ok(TextEmbeddingStore::load(&cache)?);
            }
            let endpoint = std::env::var("EMBED_ENDPOINT").map_err(|_| {
                CliError::usage("text_source = remote requires EMBED_ENDPOINT")
            })?;
            let token = std::env::var("EMBED_TOKEN").ok();
            let store = fetch_remote_embeddings(
                &endpoint,
                token.as_deref(),
                &descriptions,
                cfg.text_dim,
                64,
            )?;
            store.save(&cache)?;
            Ok(store)
        }
        other => Err(CliError::usage(format!("unknown text_source `{other}`"))),
    }
}
