//! The registered gradient-check suite: every differentiable primitive and
//! every composite loss against central finite differences in 64-bit mode.

use crate::{CliError, CliResult};
use gradcore::{finite_difference_check, init, BnMode, FdReport, ParamStore, Tape, TensorRef};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajmamba::config::RunConfig;
use trajmamba::pretrain::*;
use trajmamba::purposeviews::*;
use trajmamba::ssmcore::*;
use trajmamba::trajdata::*;
use trajmamba::TrajError;

type CheckFn = Box<dyn Fn(u64) -> Result<FdReport, TrajError>>;

pub struct CheckCase {
    pub name: String,
    pub run: CheckFn,
}

impl CheckCase {
    fn new(name: &str, run: CheckFn) -> Self {
        CheckCase {
            name: name.into(),
            run,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    /// (case name, max relative error, passed)
    pub results: Vec<(String, f64, bool)>,
    pub tolerance: f64,
}

impl SuiteOutcome {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|(_, _, ok)| *ok)
    }

    pub fn failures(&self) -> Vec<&(String, f64, bool)> {
        self.results.iter().filter(|(_, _, ok)| !ok).collect()
    }
}

fn unary_case(name: &'static str, lo: f64, hi: f64, op: fn(&mut Tape<f64>, TensorRef) -> gradcore::Result<TensorRef>) -> CheckCase {
    CheckCase::new(
        name,
        Box::new(move |seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![2, 3], lo, hi, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let y = op(tape, x)?;
                    let w = tape.leaf_vec(2, 3, (0..6).map(|i| 0.3 + 0.11 * i as f64).collect())?;
                    let p = tape.mul(y, w)?;
                    Ok(tape.sum_all(p)?)
                },
                1e-5,
                64,
                seed,
            )
        }),
    )
}

/// Every registered check: the primitive operation set, the state-space
/// kernels, and all composite losses on tiny configurations.
pub fn standard_suite() -> Vec<CheckCase> {
    let mut cases = vec![
        unary_case("exp", -2.0, 2.0, |t, x| t.exp(x)),
        unary_case("log", 0.2, 4.0, |t, x| t.log(x)),
        unary_case("sqrt", 0.2, 4.0, |t, x| t.sqrt(x)),
        unary_case("sin", -2.0, 2.0, |t, x| t.sin(x)),
        unary_case("cos", -2.0, 2.0, |t, x| t.cos(x)),
        unary_case("sigmoid", -3.0, 3.0, |t, x| t.sigmoid(x)),
        unary_case("tanh", -2.0, 2.0, |t, x| t.tanh(x)),
        unary_case("relu", 0.2, 3.0, |t, x| t.relu(x)),
        unary_case("silu", -3.0, 3.0, |t, x| t.silu(x)),
        unary_case("softplus", -3.0, 3.0, |t, x| t.softplus(x)),
        unary_case("erf", -2.0, 2.0, |t, x| t.erf(x)),
        unary_case("softmax", -2.0, 2.0, |t, x| t.softmax_rows(x)),
        unary_case("rms_normalize", 0.3, 2.0, |t, x| t.rms_norm_rows(x, 1e-5)),
        unary_case("l1_normalize", 0.2, 2.0, |t, x| t.l1_normalize(x, 1)),
        unary_case("cumprod", 0.3, 1.8, |t, x| t.cumprod_axis0(x)),
        unary_case("transpose", -2.0, 2.0, |t, x| t.transpose(x)),
        unary_case("powf", 0.3, 2.5, |t, x| t.powf(x, 1.7)),
        unary_case("clamp", -0.8, 0.8, |t, x| t.clamp(x, -1.0, 1.0)),
        unary_case("mean_axis", -2.0, 2.0, |t, x| t.mean_axis0(x)),
        unary_case("sum_axis", -2.0, 2.0, |t, x| t.sum_axis1(x)),
    ];

    cases.push(CheckCase::new(
        "arith_broadcast",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![3, 4], 0.4, 2.0, &mut rng), true)?;
            store.register("y", init::uniform(vec![3, 4], 0.4, 2.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let y = tape.param(store, store.id_of("y")?)?;
                    let row = tape.leaf_vec(1, 4, vec![0.5, 1.5, -0.7, 2.0])?;
                    let col = tape.leaf_vec(3, 1, vec![1.1, 0.3, -0.9])?;
                    let a = tape.add(x, row)?;
                    let s = tape.sub(a, y)?;
                    let m = tape.mul(s, col)?;
                    let denom = tape.add_scalar(y, 2.0)?;
                    let d = tape.div(m, denom)?;
                    Ok(tape.mean_all(d)?)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "matmul_concat_slice_reshape_gather",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![3, 4], -1.5, 1.5, &mut rng), true)?;
            store.register("w", init::uniform(vec![4, 3], -1.0, 1.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let w = tape.param(store, store.id_of("w")?)?;
                    let y = tape.matmul(x, w)?;
                    let cat = tape.concat_rows(&[y, y])?;
                    let cc = tape.concat_cols(&[cat, cat])?;
                    let sl = tape.slice_rows(cc, 1, 5)?;
                    let sc = tape.slice_cols(sl, 1, 5)?;
                    let rs = tape.reshape(sc, 8, 2)?;
                    let g = tape.gather_rows(rs, &[0, 3, 3, 7])?;
                    Ok(tape.mean_all(g)?)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "batch_norm_train",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![6, 3], -1.5, 1.5, &mut rng), true)?;
            store.register("gamma", init::uniform(vec![1, 3], 0.7, 1.3, &mut rng), true)?;
            store.register("beta", init::uniform(vec![1, 3], -0.3, 0.3, &mut rng), true)?;
            store.register("rm", init::zeros(vec![1, 3]), false)?;
            store.register("rv", init::full(vec![1, 3], 1.0), false)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let g = tape.param(store, store.id_of("gamma")?)?;
                    let b = tape.param(store, store.id_of("beta")?)?;
                    let y = tape.batch_norm(
                        x,
                        g,
                        b,
                        store,
                        store.id_of("rm")?,
                        store.id_of("rv")?,
                        0.1,
                        1e-5,
                        BnMode::Train { track: false },
                    )?;
                    let w = tape.leaf_vec(6, 3, (0..18).map(|i| 0.2 + 0.05 * i as f64).collect())?;
                    let p = tape.mul(y, w)?;
                    Ok(tape.sum_all(p)?)
                },
                1e-6,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "zoh_selective_scan",
        Box::new(|seed| {
            let (n, dim, heads, sd) = (5usize, 4usize, 2usize, 3usize);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![n, dim], -1.0, 1.0, &mut rng), true)?;
            store.register("a_log", init::a_log_init(heads, &mut rng), true)?;
            store.register("delta_pre", init::uniform(vec![n, heads], -2.0, 1.0, &mut rng), true)?;
            store.register("b", init::uniform(vec![n, sd], -1.0, 1.0, &mut rng), true)?;
            store.register("c", init::uniform(vec![n, sd], -1.0, 1.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let a_log = tape.param(store, store.id_of("a_log")?)?;
                    let a_exp = tape.exp(a_log)?;
                    let a_neg = tape.neg(a_exp)?;
                    let dpre = tape.param(store, store.id_of("delta_pre")?)?;
                    let delta = tape.softplus(dpre)?;
                    let delta = tape.add_scalar(delta, 1e-8)?;
                    let b = tape.param(store, store.id_of("b")?)?;
                    let c = tape.param(store, store.id_of("c")?)?;
                    let (abar, bcoef) = zoh_discretize(tape, a_neg, delta)?;
                    let y = selective_scan(tape, x, abar, bcoef, b, c, heads, ScanMode::Sequential)?;
                    Ok(tape.mean_all(y)?)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "causal_conv1d",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("x", init::uniform(vec![6, 3], -1.0, 1.0, &mut rng), true)?;
            store.register("k", init::uniform(vec![4, 3], -0.8, 0.8, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let x = tape.param(store, store.id_of("x")?)?;
                    let k = tape.param(store, store.id_of("k")?)?;
                    let y = causal_conv1d(tape, x, k)?;
                    Ok(tape.mean_all(y)?)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "infonce",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let temp = LearnableTemperature::init(&mut store, "temp")?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("anchors", init::uniform(vec![4, 8], -1.0, 1.0, &mut rng), true)?;
            store.register("positives", init::uniform(vec![4, 8], -1.0, 1.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let t = temp.bind(tape, store)?;
                    let a = tape.param(store, store.id_of("anchors")?)?;
                    let p = tape.param(store, store.id_of("positives")?)?;
                    infonce_pair_loss(tape, a, p, t)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "mec",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("zt", init::uniform(vec![8, 8], -1.0, 1.0, &mut rng), true)?;
            store.register("zs", init::uniform(vec![8, 8], -1.0, 1.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let zt_raw = tape.param(store, store.id_of("zt")?)?;
                    let zs_raw = tape.param(store, store.id_of("zs")?)?;
                    let zt = l2_normalize_rows(tape, zt_raw)?;
                    let zs = l2_normalize_rows(tape, zs_raw)?;
                    mec_loss(tape, zt, zs, 4, 2.0, false)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new(
        "mask_loss",
        Box::new(|seed| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            store.register("mu", init::uniform(vec![7, 1], -1.0, 1.0, &mut rng), true)?;
            finite_difference_check::<TrajError, _>(
                &mut store,
                |tape, store| {
                    let mu = tape.param(store, store.id_of("mu")?)?;
                    mask_loss(tape, &[mu], 0.5)
                },
                1e-5,
                64,
                seed,
            )
        }),
    ));

    cases.push(CheckCase::new("purpose_loss_full", Box::new(purpose_full_case)));
    cases.push(CheckCase::new("kd_loss_full", Box::new(kd_full_case)));
    cases
}

fn tiny_world(seed: u64) -> Result<(World, TextEmbeddingStore, Vec<Trajectory>), TrajError> {
    let (network, pois) = generate_synthetic_world(
        &SynthConfig {
            rows: 3,
            cols: 3,
            poi_count: 8,
            ..Default::default()
        },
        seed,
    )?;
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count: 3,
            ..Default::default()
        },
        seed,
    )?;
    let mut text = TextEmbeddingStore::new(16);
    text.fill_pseudo(
        world_descriptions(&network, &pois).iter().map(|s| s.as_str()),
        seed,
    )?;
    Ok((World::new(network, pois), text, trajs))
}

fn tiny_encoder_cfg() -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        embed_dim: 8,
        state_dim: 4,
        heads: 2,
        conv_width: 4,
        chunk_size: 8,
        road_embed_dim: 4,
        fourier_freqs: 2,
        rmsnorm_eps: 1e-5,
    }
}

fn purpose_full_case(seed: u64) -> Result<FdReport, TrajError> {
    let (world, text, trajs) = tiny_world(seed)?;
    let vcfg = ViewConfig::default();
    let mut model = init_purpose_model::<f64>(
        &tiny_encoder_cfg(),
        16,
        world.network.edges.len(),
        world.pois.len(),
        seed,
    )?;
    let transitions = TransitionTable::build(&trajs);
    let contexts: Vec<ViewContext> = trajs
        .iter()
        .map(|t| build_view_context(t, &world.network, &world.pois, &text, &transitions, &vcfg))
        .collect::<Result<_, _>>()?;
    let encoder = model.encoder.clone();
    let views = model.views.clone();
    let temp = model.temperature;
    finite_difference_check::<TrajError, _>(
        &mut model.store,
        |tape, store| {
            let enc = encoder.bind(tape, store)?;
            let vw = views.bind(tape, store)?;
            let t = temp.bind(tape, store)?;
            let mut rows_t = Vec::new();
            let mut rows_road = Vec::new();
            let mut rows_poi = Vec::new();
            for (traj, ctx) in trajs.iter().zip(&contexts) {
                let bundle = embed_point_features(tape, &enc.embedder, traj, &world.bounds)?;
                rows_t.push(encode_bundle(tape, &enc, &bundle, None, ScanMode::Sequential)?);
                let (rs, ps) = aggregate_views(
                    tape,
                    store,
                    &vw,
                    ctx,
                    &vcfg,
                    BnMode::Train { track: false },
                    true,
                )?;
                let (zr, zp) = encode_views(tape, &vw, rs, ps, ScanMode::Sequential, 1e-5)?;
                rows_road.push(zr);
                rows_poi.push(zp);
            }
            let z_t = tape.concat_rows(&rows_t)?;
            let z_road = tape.concat_rows(&rows_road)?;
            let z_poi = tape.concat_rows(&rows_poi)?;
            let l_road = infonce_pair_loss(tape, z_t, z_road, t)?;
            let l_poi = infonce_pair_loss(tape, z_t, z_poi, t)?;
            let sum = tape.add(l_road, l_poi)?;
            Ok(tape.scale(sum, 0.5)?)
        },
        1e-6,
        4,
        seed,
    )
}

fn kd_full_case(seed: u64) -> Result<FdReport, TrajError> {
    let (world, _text, trajs) = tiny_world(seed)?;
    let cfg = tiny_encoder_cfg();
    let kd_cfg = KdConfig {
        mask: MaskGenConfig {
            dim: 8,
            heads: 2,
            state: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut proto = ParamStore::<f64>::new();
    EncoderWeights::init(
        &mut proto,
        "encoder",
        &cfg,
        world.network.edges.len(),
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0xDEAD),
    )?;
    let tensors: Vec<(String, gradcore::Tensor<f64>)> = proto
        .iter()
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect();
    let mut model = init_kd_model::<f64>(&tensors, &cfg, &kd_cfg, world.network.edges.len(), seed)?;

    let filtered: Vec<Trajectory> = trajs
        .iter()
        .map(|t| filter_explicit_redundancy(t, &kd_cfg.filter))
        .collect::<Result<_, _>>()?;
    let feats: Vec<_> = filtered
        .iter()
        .map(|t| mask_features(t, &world.bounds))
        .collect::<Result<_, _>>()?;
    let noises: Vec<Vec<f64>> = {
        use rand::Rng;
        let mut nr = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
        filtered
            .iter()
            .map(|t| (0..t.len()).map(|_| nr.random_range(-0.5..0.5)).collect())
            .collect()
    };
    let teacher = model.teacher.clone();
    let student = model.student.clone();
    let maskgen = model.maskgen.clone();
    finite_difference_check::<TrajError, _>(
        &mut model.store,
        |tape, store| {
            let t_enc = teacher.bind(tape, store)?;
            let s_enc = student.bind(tape, store)?;
            let mg = maskgen.bind(tape, store)?;
            let mut rows_t = Vec::new();
            let mut rows_s = Vec::new();
            let mut mus = Vec::new();
            for ((traj, pre), (feat, noise)) in trajs
                .iter()
                .zip(&filtered)
                .zip(feats.iter().zip(&noises))
            {
                let bt = embed_point_features(tape, &t_enc.embedder, traj, &world.bounds)?;
                rows_t.push(encode_bundle(tape, &t_enc, &bt, None, ScanMode::Sequential)?);
                let mu = compute_mu(tape, &mg, feat, ScanMode::Sequential)?;
                let noise_leaf = tape.leaf_vec(noise.len(), 1, noise.clone())?;
                let shifted = tape.add(mu, noise_leaf)?;
                let m = tape.clamp(shifted, 0.0, 1.0)?;
                let bs = embed_point_features(tape, &s_enc.embedder, pre, &world.bounds)?;
                rows_s.push(encode_bundle(tape, &s_enc, &bs, Some(m), ScanMode::Sequential)?);
                mus.push(mu);
            }
            let zt_raw = tape.concat_rows(&rows_t)?;
            let zs_raw = tape.concat_rows(&rows_s)?;
            let zt = l2_normalize_rows(tape, zt_raw)?;
            let zs = l2_normalize_rows(tape, zs_raw)?;
            let l_mec = mec_loss(tape, zt, zs, kd_cfg.mec_order, kd_cfg.mec_eps, false)?;
            let l_mask = mask_loss(tape, &mus, kd_cfg.mask.delta)?;
            let a = tape.scale(l_mec, kd_cfg.w_mec)?;
            let b = tape.scale(l_mask, kd_cfg.w_mask)?;
            Ok(tape.add(a, b)?)
        },
        1e-6,
        4,
        seed,
    )
}

/// Runs the cases, printing one line per case with its max relative error.
pub fn run_suite(cases: &[CheckCase], tolerance: f64, seed: u64) -> CliResult<SuiteOutcome> {
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        let report = (case.run)(seed).map_err(CliError::from)?;
        let max = report.max_rel_err();
        let ok = report.passed(tolerance);
        println!(
            "[{}] {:<38} max rel err {:.3e}",
            if ok { "pass" } else { "FAIL" },
            case.name,
            max
        );
        if !ok {
            for f in report.failures(tolerance) {
                println!(
                    "       param {} elem {}: analytic {:.6e} vs numeric {:.6e}",
                    f.name, f.worst_index, f.analytic_at_worst, f.numeric_at_worst
                );
            }
        }
        results.push((case.name.clone(), max, ok));
    }
    Ok(SuiteOutcome {
        results,
        tolerance,
    })
}

/// Every differentiable operation and composite loss vs central finite
/// differences, 64-bit, rel err < 1e-4. Nonzero exit on failure.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<SuiteOutcome> {
    let outcome = run_suite(&standard_suite(), 1e-4, cfg.seed)?;
    if !outcome.all_passed() {
        return Err(CliError::check(format!(
            "{} gradient check(s) failed",
            outcome.failures().len()
        )));
    }
    Ok(outcome)
}
