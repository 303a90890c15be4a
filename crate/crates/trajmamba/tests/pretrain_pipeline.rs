//! End-to-end pretraining behavior at tiny scale: losses are finite and
//! reproducible, the student initializes as an exact teacher copy, the
//! teacher receives no gradients, checkpoints exclude view weights, and
//! the full composite losses pass 64-bit finite differences.

use gradcore::checkpoint::Checkpoint;
use gradcore::{finite_difference_check, BnMode, ParamStore, Tape};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajmamba::pretrain::*;
use trajmamba::purposeviews::*;
use trajmamba::ssmcore::*;
use trajmamba::trajdata::*;
use trajmamba::TrajError;

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

struct Fixture {
    world: World,
    text: TextEmbeddingStore,
    trajs: Vec<Trajectory>,
    vcfg: ViewConfig,
}

fn fixture(seed: u64, count: usize) -> Fixture {
    let (network, pois) = generate_synthetic_world(
        &SynthConfig {
            rows: 3,
            cols: 3,
            poi_count: 8,
            ..Default::default()
        },
        seed,
    )
    .unwrap();
    let trajs = generate_trajectories(
        &network,
        &TrajGenConfig {
            count,
            ..Default::default()
        },
        seed,
    )
    .unwrap();
    let mut text = TextEmbeddingStore::new(16);
    text.fill_pseudo(
        world_descriptions(&network, &pois).iter().map(|s| s.as_str()),
        seed,
    )
    .unwrap();
    Fixture {
        world: World::new(network, pois),
        text,
        trajs,
        vcfg: ViewConfig::default(),
    }
}

fn tiny_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs,
        learning_rate: 1e-3,
        seed,
    }
}

// ── purpose pretraining ──────────────────────────────────────────────

#[test]
fn first_batch_loss_is_finite_and_positive() {
    let f = fixture(100, 8);
    let mut model =
        init_purpose_model::<f32>(&tiny_encoder_cfg(), 16, f.world.network.edges.len(), 8, 100)
            .unwrap();
    let summary = purpose_pretrain(
        &mut model,
        &f.world,
        &f.text,
        &f.trajs,
        &tiny_train(100, 1),
        &f.vcfg,
        ScanMode::Sequential,
        &RunIo::in_memory(100),
    )
    .unwrap();
    assert!(summary.final_loss.is_finite());
    assert!(summary.final_loss > 0.0, "positive cross-entropy for B > 1");
    assert_eq!(summary.steps, 2); // ceil(8/4) batches x 1 epoch
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let run = || {
        let f = fixture(101, 8);
        let mut model = init_purpose_model::<f32>(
            &tiny_encoder_cfg(),
            16,
            f.world.network.edges.len(),
            8,
            101,
        )
        .unwrap();
        let s = purpose_pretrain(
            &mut model,
            &f.world,
            &f.text,
            &f.trajs,
            &tiny_train(101, 2),
            &f.vcfg,
            ScanMode::Sequential,
            &RunIo::in_memory(101),
        )
        .unwrap();
        let weights: Vec<f32> = model
            .store
            .iter()
            .flat_map(|e| e.tensor.data.clone())
            .collect();
        (s.final_loss, weights)
    };
    let (l1, w1) = run();
    let (l2, w2) = run();
    assert_eq!(l1, l2);
    assert_eq!(w1, w2);
}

// ── distillation ─────────────────────────────────────────────────────

fn teacher_tensors(f: &Fixture, seed: u64) -> (Vec<(String, gradcore::Tensor<f32>)>, EncoderConfig) {
    let cfg = tiny_encoder_cfg();
    let mut model =
        init_purpose_model::<f32>(&cfg, 16, f.world.network.edges.len(), 8, seed).unwrap();
    purpose_pretrain(
        &mut model,
        &f.world,
        &f.text,
        &f.trajs,
        &tiny_train(seed, 1),
        &f.vcfg,
        ScanMode::Sequential,
        &RunIo::in_memory(seed),
    )
    .unwrap();
    let tensors = model
        .store
        .iter()
        .filter(|e| e.name.starts_with("encoder."))
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect();
    (tensors, cfg)
}

#[test]
fn student_initializes_as_exact_teacher_copy() {
    let f = fixture(102, 8);
    let (tensors, cfg) = teacher_tensors(&f, 102);
    let model = init_kd_model::<f32>(
        &tensors,
        &cfg,
        &KdConfig::default(),
        f.world.network.edges.len(),
        102,
    )
    .unwrap();

    // identical weights + identical input + all-ones mask => embeddings
    // agree within 1e-5 (bitwise, in fact)
    let traj = &f.trajs[0];
    let mut tape = Tape::inference();
    let teacher = model.teacher.bind(&mut tape, &model.store).unwrap();
    let student = model.student.bind(&mut tape, &model.store).unwrap();
    let bt = embed_point_features(&mut tape, &teacher.embedder, traj, &f.world.bounds).unwrap();
    let zt = encode_bundle(&mut tape, &teacher, &bt, None, ScanMode::Sequential).unwrap();
    let ones = tape.leaf_vec(traj.len(), 1, vec![1.0f32; traj.len()]).unwrap();
    let bs = embed_point_features(&mut tape, &student.embedder, traj, &f.world.bounds).unwrap();
    let zs = encode_bundle(&mut tape, &student, &bs, Some(ones), ScanMode::Sequential).unwrap();
    let max_abs = tape
        .data(zt)
        .iter()
        .zip(tape.data(zs))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_abs < 1e-5, "max abs diff {max_abs}");
}

#[test]
fn kd_runs_deterministically_and_freezes_the_teacher() {
    let f = fixture(103, 8);
    let (tensors, cfg) = teacher_tensors(&f, 103);
    let run = || {
        let mut model = init_kd_model::<f32>(
            &tensors,
            &cfg,
            &KdConfig::default(),
            f.world.network.edges.len(),
            103,
        )
        .unwrap();
        let before: Vec<f32> = model
            .store
            .iter()
            .filter(|e| e.name.starts_with("teacher."))
            .flat_map(|e| e.tensor.data.clone())
            .collect();
        let summary = kd_pretrain(
            &mut model,
            &f.world,
            &f.trajs,
            &tiny_train(103, 2),
            &KdConfig::default(),
            ScanMode::Sequential,
            &RunIo::in_memory(103),
        )
        .unwrap();
        let after: Vec<f32> = model
            .store
            .iter()
            .filter(|e| e.name.starts_with("teacher."))
            .flat_map(|e| e.tensor.data.clone())
            .collect();
        assert_eq!(before, after, "teacher weights are frozen");
        // teacher entries never accumulate gradients
        assert!(model
            .store
            .iter()
            .filter(|e| e.name.starts_with("teacher."))
            .all(|e| e.tensor.grad.is_none()));
        let weights: Vec<f32> = model
            .store
            .iter()
            .flat_map(|e| e.tensor.data.clone())
            .collect();
        (summary.final_loss, weights)
    };
    let (l1, w1) = run();
    let (l2, w2) = run();
    assert_eq!(l1, l2);
    assert_eq!(w1, w2);
}

#[test]
fn teacher_checkpoint_excludes_view_weights() {
    let f = fixture(104, 8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_encoder_cfg();
    let mut model =
        init_purpose_model::<f32>(&cfg, 16, f.world.network.edges.len(), 8, 104).unwrap();
    let io = RunIo {
        out_dir: Some(dir.path().to_path_buf()),
        config_echo: "test".into(),
        seed: 104,
        abort_after_epoch: None,
    };
    purpose_pretrain(
        &mut model,
        &f.world,
        &f.text,
        &f.trajs,
        &tiny_train(104, 1),
        &f.vcfg,
        ScanMode::Sequential,
        &io,
    )
    .unwrap();
    let ck = Checkpoint::<f32>::load(dir.path().join("teacher.tmck")).unwrap();
    // name-set inspection: encoder weights only, none of the view or
    // temperature parameters that exist solely for pretraining
    assert!(!ck.tensors.is_empty());
    for name in ck.names() {
        assert!(
            name.starts_with("encoder."),
            "unexpected tensor `{name}` in teacher checkpoint"
        );
    }
    let model_views: usize = model
        .store
        .iter()
        .filter(|e| e.name.starts_with("views."))
        .count();
    assert!(model_views > 0, "views existed during pretraining");
}

#[test]
fn checkpoint_save_load_save_is_byte_identical_and_validates_config() {
    let f = fixture(105, 8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_encoder_cfg();
    let mut model =
        init_purpose_model::<f32>(&cfg, 16, f.world.network.edges.len(), 8, 105).unwrap();
    let io = RunIo {
        out_dir: Some(dir.path().to_path_buf()),
        config_echo: "echo-text".into(),
        seed: 105,
        abort_after_epoch: None,
    };
    purpose_pretrain(
        &mut model,
        &f.world,
        &f.text,
        &f.trajs,
        &tiny_train(105, 1),
        &f.vcfg,
        ScanMode::Sequential,
        &io,
    )
    .unwrap();
    let path = dir.path().join("teacher.tmck");
    let bytes1 = std::fs::read(&path).unwrap();
    let ck = Checkpoint::<f32>::load(&path).unwrap();
    let path2 = dir.path().join("teacher2.tmck");
    ck.save(&path2).unwrap();
    assert_eq!(bytes1, std::fs::read(&path2).unwrap());

    // loading into a mismatched embed-dim structure errors out
    let mut wrong_cfg = cfg;
    wrong_cfg.embed_dim = 16;
    match init_kd_model::<f32>(
        &ck.tensors,
        &wrong_cfg,
        &KdConfig::default(),
        f.world.network.edges.len(),
        105,
    ) {
        Err(err) => assert!(matches!(err, TrajError::Grad(_)), "{err}"),
        Ok(_) => panic!("mismatched embed dim must fail to load"),
    }
}

#[test]
fn interrupted_purpose_run_resumes_to_identical_final_artifacts() {
    let f = fixture(106, 8);
    let run = |dir: &std::path::Path, abort: Option<usize>| {
        let mut model = init_purpose_model::<f32>(
            &tiny_encoder_cfg(),
            16,
            f.world.network.edges.len(),
            8,
            106,
        )
        .unwrap();
        let io = RunIo {
            out_dir: Some(dir.to_path_buf()),
            config_echo: "resume-test".into(),
            seed: 106,
            abort_after_epoch: abort,
        };
        purpose_pretrain(
            &mut model,
            &f.world,
            &f.text,
            &f.trajs,
            &tiny_train(106, 4),
            &f.vcfg,
            ScanMode::Sequential,
            &io,
        )
        .unwrap()
    };

    let clean = tempfile::tempdir().unwrap();
    let s = run(clean.path(), None);
    assert!(s.finished);

    let interrupted = tempfile::tempdir().unwrap();
    let s1 = run(interrupted.path(), Some(2));
    assert!(!s1.finished);
    assert_eq!(s1.completed_epochs, 2);
    assert!(!interrupted.path().join("teacher.tmck").exists());
    let s2 = run(interrupted.path(), None);
    assert!(s2.finished);

    let a = std::fs::read(clean.path().join("teacher.tmck")).unwrap();
    let b = std::fs::read(interrupted.path().join("teacher.tmck")).unwrap();
    assert_eq!(a, b, "resumed run must match the uninterrupted one");
}

// ── composite-loss gradient checks (64-bit) ──────────────────────────

#[test]
fn full_purpose_loss_gradients_match_finite_differences() {
    let f = fixture(107, 3);
    let mut model =
        init_purpose_model::<f64>(&tiny_encoder_cfg(), 16, f.world.network.edges.len(), 8, 107)
            .unwrap();
    let transitions = TransitionTable::build(&f.trajs);
    let contexts: Vec<ViewContext> = f
        .trajs
        .iter()
        .map(|t| {
            build_view_context(t, &f.world.network, &f.world.pois, &f.text, &transitions, &f.vcfg)
                .unwrap()
        })
        .collect();
    let encoder = model.encoder.clone();
    let views = model.views.clone();
    let temp = model.temperature;
    let report = finite_difference_check::<TrajError, _>(
        &mut model.store,
        |tape, store| {
            let enc = encoder.bind(tape, store)?;
            let vw = views.bind(tape, store)?;
            let t = temp.bind(tape, store)?;
            let mut rows_t = Vec::new();
            let mut rows_road = Vec::new();
            let mut rows_poi = Vec::new();
            for (traj, ctx) in f.trajs.iter().zip(&contexts) {
                let bundle = embed_point_features(tape, &enc.embedder, traj, &f.world.bounds)?;
                rows_t.push(encode_bundle(tape, &enc, &bundle, None, ScanMode::Sequential)?);
                let (rseq, pseq) = aggregate_views(
                    tape,
                    store,
                    &vw,
                    ctx,
                    &f.vcfg,
                    BnMode::Train { track: false },
                    true,
                )?;
                let (zr, zp) = encode_views(tape, &vw, rseq, pseq, ScanMode::Sequential, 1e-5)?;
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
        6,
        107,
    )
    .unwrap();
    assert!(report.passed(1e-4), "max {}", report.max_rel_err());
}

#[test]
fn full_kd_loss_gradients_match_finite_differences() {
    let f = fixture(108, 3);
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
    // teacher with arbitrary (initialized) weights is fine for a gradient
    // check; build it in f64 directly
    let mut proto = ParamStore::<f64>::new();
    let teacher_enc = EncoderWeights::init(
        &mut proto,
        "encoder",
        &cfg,
        f.world.network.edges.len(),
        &mut ChaCha8Rng::seed_from_u64(1080),
    )
    .unwrap();
    drop(teacher_enc);
    let tensors: Vec<(String, gradcore::Tensor<f64>)> = proto
        .iter()
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect();
    let mut model =
        init_kd_model::<f64>(&tensors, &cfg, &kd_cfg, f.world.network.edges.len(), 108).unwrap();

    let filtered: Vec<Trajectory> = f
        .trajs
        .iter()
        .map(|t| filter_explicit_redundancy(t, &kd_cfg.filter).unwrap())
        .collect();
    let feats: Vec<_> = filtered
        .iter()
        .map(|t| mask_features(t, &f.world.bounds).unwrap())
        .collect();
    // fixed noise so the loss is a deterministic function of the weights
    let noises: Vec<Vec<f64>> = {
        let mut nr = ChaCha8Rng::seed_from_u64(1081);
        use rand::Rng;
        filtered
            .iter()
            .map(|t| (0..t.len()).map(|_| nr.random_range(-0.5..0.5)).collect())
            .collect()
    };

    let teacher = model.teacher.clone();
    let student = model.student.clone();
    let maskgen = model.maskgen.clone();
    let report = finite_difference_check::<TrajError, _>(
        &mut model.store,
        |tape, store| {
            let t_enc = teacher.bind(tape, store)?;
            let s_enc = student.bind(tape, store)?;
            let mg = maskgen.bind(tape, store)?;
            let mut rows_t = Vec::new();
            let mut rows_s = Vec::new();
            let mut mus = Vec::new();
            for ((traj, pre), (feat, noise)) in f
                .trajs
                .iter()
                .zip(&filtered)
                .zip(feats.iter().zip(&noises))
            {
                let bt = embed_point_features(tape, &t_enc.embedder, traj, &f.world.bounds)?;
                rows_t.push(encode_bundle(tape, &t_enc, &bt, None, ScanMode::Sequential)?);
                let mu = compute_mu(tape, &mg, feat, ScanMode::Sequential)?;
                let noise_leaf = tape.leaf_vec(noise.len(), 1, noise.clone())?;
                let shifted = tape.add(mu, noise_leaf)?;
                let m = tape.clamp(shifted, 0.0, 1.0)?;
                let bs = embed_point_features(tape, &s_enc.embedder, pre, &f.world.bounds)?;
                rows_s.push(encode_bundle(tape, &s_enc, &bs, Some(m), ScanMode::Sequential)?);
                mus.push(mu);
            }
            let zt_raw = tape.concat_rows(&rows_t)?;
            let zs_raw = tape.concat_rows(&rows_s)?;
            let zt = l2_normalize_rows(tape, zt_raw)?;
            let zs = l2_normalize_rows(tape, zs_raw)?;
            let l_mec = mec_loss(tape, zt, zs, 4, 2.0, false)?;
            let l_mask = mask_loss(tape, &mus, 0.5)?;
            let a = tape.scale(l_mec, 0.5)?;
            let b = tape.scale(l_mask, 0.5)?;
            Ok(tape.add(a, b)?)
        },
        1e-6,
        6,
        108,
    )
    .unwrap();
    assert!(report.passed(1e-4), "max {}", report.max_rel_err());
    // the teacher is frozen: its parameters never enter the report
    assert!(report.entries.iter().all(|e| !e.name.starts_with("teacher.")));
}
