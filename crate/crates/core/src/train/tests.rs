use super::*;
use crate::nets::{read_tensors, write_tensors, FieldInputs, PositionalEncoder};
use crate::render::{trace_chunk, ChunkTrace};
use crate::scene::{generate_dataset, MotionSpec, SceneSpec};
use ndarray::Array2;
use std::sync::OnceLock;

fn dataset() -> &'static FrameDataset {
    static DS: OnceLock<FrameDataset> = OnceLock::new();
    DS.get_or_init(|| {
        generate_dataset(&SceneSpec {
            width: 24,
            height: 24,
            motion: MotionSpec {
                frames: 5,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap()
    })
}

fn small_field(joints: usize) -> FieldConfig {
    FieldConfig {
        pose_hidden: vec![16],
        pose_feature_dim: 8,
        deform_hidden: vec![16],
        density_hidden: vec![32, 32],
        density_skip_after: Some(1),
        geometry_feature_dim: 16,
        color_hidden: vec![16],
        coord_encoder: PositionalEncoder::new(4, true),
        dir_encoder: PositionalEncoder::new(2, true),
        ..FieldConfig::for_joints(joints)
    }
}

fn small_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        learning_rate: 5e-3,
        final_learning_rate: 1e-3,
        batch_size: 48,
        iterations: 40,
        samples_per_ray: 16,
        chunk_size: 16,
        seed,
        ..Default::default()
    }
}

fn trainer(config: TrainingConfig) -> Trainer<'static> {
    let ds = dataset();
    Trainer::new(ds, config)
        .unwrap()
        .with_field(small_field(ds.model.joint_count()))
}

#[test]
fn photometric_loss_hand_example() {
    let (loss, grad) = photometric_loss(&[[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]], &[[0.0, 0.5, 1.0], [1.0, 0.0, 0.5]]).unwrap();
    // (0.25 + 0 + 0.25 + 0 + 0 + 0.25) / 2
    assert!((loss - 0.375).abs() < 1e-15);
    assert_eq!(grad, vec![[0.5, 0.0, -0.5], [0.0, 0.0, -0.5]]);
    assert!(matches!(
        photometric_loss(&[[0.0; 3]], &[]),
        Err(TrainError::ShapeMismatch(1, 0))
    ));
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    let r = vec![[0.1, 0.7, 0.3], [0.9, 0.2, 0.4], [0.5, 0.5, 0.0]];
    let t = vec![[0.2, 0.1, 0.3], [0.0, 0.3, 0.8], [0.6, 0.5, 0.1]];
    let (_, g) = photometric_loss(&r, &t).unwrap();
    let h = 1e-6;
    for i in 0..3 {
        for k in 0..3 {
            let mut p = r.clone();
            let mut m = r.clone();
            p[i][k] += h;
            m[i][k] -= h;
            let fd = (photometric_loss(&p, &t).unwrap().0 - photometric_loss(&m, &t).unwrap().0) / (2.0 * h);
            assert!((fd - g[i][k]).abs() < 1e-8);
        }
    }
}

#[test]
fn learning_rate_decays_exponentially() {
    let c = TrainingConfig::default();
    assert_eq!(c.learning_rate_at(0), c.learning_rate);
    assert!((c.learning_rate_at(c.iterations) - c.final_learning_rate).abs() < 1e-18);
    let mid = c.learning_rate_at(c.iterations / 2);
    assert!((mid - (c.learning_rate * c.final_learning_rate).sqrt()).abs() < 1e-15);
}

#[test]
fn ablation_modes_parse_and_change_one_stage() {
    let full = apply_ablation(AblationMode::Full);
    assert_eq!(full, PipelineWiring::default());
    for m in AblationMode::ALL {
        assert_eq!(m.name().parse::<AblationMode>().unwrap(), m);
        let w = apply_ablation(m);
        let changed = [
            w.project != full.project,
            w.field.deform != full.field.deform,
            w.field.pose != full.field.pose,
            w.field.zero_distance != full.field.zero_distance,
        ]
        .iter()
        .filter(|c| **c)
        .count();
        assert_eq!(changed, usize::from(m != AblationMode::Full), "{m}");
    }
    assert!(matches!("bogus".parse::<AblationMode>(), Err(TrainError::UnknownMode(_))));
}

/// Nets whose deformation output is non-zero so ablation contracts are
/// not satisfied trivially.
fn active_nets(t: &Trainer) -> FieldNets {
    let mut nets = FieldNets::new(t.field.clone(), 11);
    let last = nets.deform_net.layers.last_mut().unwrap();
    last.weight.mapv_inplace(|_| 0.3);
    last.bias.fill(0.2);
    nets
}

fn body_rays(t: &Trainer) -> Vec<TaggedRay> {
    (8..16)
        .flat_map(|y| [10, 12, 14].map(|x| t.supervised_ray(1, 0, x, y).ray))
        .collect()
}

fn trace(t: &Trainer, nets: &FieldNets, mode: AblationMode) -> ChunkTrace {
    let mut opts = t.render_options();
    opts.wiring = apply_ablation(mode);
    let tr = trace_chunk(nets, &t.frames, &body_rays(t), &opts, None, false).unwrap();
    assert!(tr.sample_count() > 20);
    tr
}

#[test]
fn no_deform_feeds_projection_unchanged() {
    let t = trainer(small_config(0));
    let nets = active_nets(&t);
    let exact = |mode| {
        trace(&t, &nets, mode)
            .batches
            .iter()
            .flat_map(|b| &b.samples)
            .all(|s| s.deformed.map(f64::to_bits) == s.projection.coords().map(f64::to_bits))
    };
    assert!(exact(AblationMode::NoDeform));
    assert!(!exact(AblationMode::Full));
}

#[test]
fn naked_surface_zeroes_distance() {
    let t = trainer(small_config(0));
    let nets = active_nets(&t);
    let tr = trace(&t, &nets, AblationMode::NakedSurface);
    assert!(tr.batches.iter().flat_map(|b| &b.samples).all(|s| s.deformed[2] == 0.0));
    let full = trace(&t, &nets, AblationMode::Full);
    assert!(full.batches.iter().flat_map(|b| &b.samples).any(|s| s.deformed[2] != 0.0));
}

#[test]
fn no_projection_feeds_raw_positions() {
    let t = trainer(small_config(0));
    let mut nets = active_nets(&t);
    nets.deform_net.zero_output_layer();
    let tr = trace(&t, &nets, AblationMode::NoProjection);
    for s in tr.batches.iter().flat_map(|b| &b.samples) {
        assert_eq!(s.deformed, [s.position.x, s.position.y, s.position.z]);
    }
}

#[test]
fn no_pose_ignores_the_articulation() {
    let t = trainer(small_config(0));
    let nets = active_nets(&t);
    let n = 6;
    let coords = Array2::from_shape_fn((n, 3), |(i, k)| 0.1 * i as f64 - 0.05 * k as f64);
    let dirs = Array2::from_shape_fn((n, 3), |(_, k)| if k == 2 { 1.0 } else { 0.0 });
    let dim = t.field.pose_input_dim;
    let eval = |switches, scale: f64| {
        let inputs = FieldInputs {
            coords: coords.clone(),
            dirs: dirs.clone(),
            sample_pose: vec![0; n],
            poses: Array2::from_shape_fn((1, dim), |(_, j)| scale * (j as f64 * 0.37).sin()),
        };
        nets.forward(&inputs, switches, None).unwrap()
    };
    let off = apply_ablation(AblationMode::NoPose).field;
    let (a, b) = (eval(off, 0.2), eval(off, 1.3));
    assert_eq!(a.sigma, b.sigma);
    assert_eq!(a.rgb, b.rgb);
    let on = apply_ablation(AblationMode::Full).field;
    assert_ne!(eval(on, 0.2).rgb, eval(on, 1.3).rgb);
}

fn run_steps(t: &Trainer, state: &mut TrainState, n: u64) -> Vec<LossRecord> {
    let mut records = Vec::new();
    let until = state.iteration + n;
    t.run(
        state,
        until,
        &mut |r| {
            records.push(r.clone());
            Ok(())
        },
        &mut |_| Ok(()),
    )
    .unwrap();
    records
}

#[test]
fn training_is_deterministic_across_runs_and_thread_counts() {
    let t = trainer(small_config(4));
    let go = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = t.initial_state();
            let r = run_steps(&t, &mut s, 3);
            (s, r)
        })
    };
    let (a, ra) = go(1);
    let (b, rb) = go(1);
    let (c, rc) = go(3);
    assert_eq!(ra, rb);
    assert_eq!(ra, rc);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a.nets, t.initial_state().nets);
}

#[test]
fn checkpoint_round_trips_byte_identically() {
    let t = trainer(small_config(2));
    let mut s = t.initial_state();
    run_steps(&t, &mut s, 2);
    let bytes = write_checkpoint(&s, &t.config).unwrap();
    let (back, config) = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, s);
    assert_eq!(config, t.config);
    assert_eq!(write_checkpoint(&back, &config).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.ndft");
    save_checkpoint(&path, &s, &t.config).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().0, s);
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let t = trainer(small_config(2));
    let bytes = write_checkpoint(&t.initial_state(), &t.config).unwrap();
    let mut archive = read_tensors(&mut &bytes[..]).unwrap();
    archive.metadata["checkpoint_version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    let mut altered = Vec::new();
    write_tensors(&mut altered, &archive).unwrap();
    match read_checkpoint(&altered) {
        Err(TrainError::Version { found, expected }) => {
            assert_eq!((found, expected), (CHECKPOINT_VERSION + 1, CHECKPOINT_VERSION))
        }
        other => panic!("expected version error, got {:?}", other.map(|_| ())),
    }
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let t = trainer(small_config(5));
    let mut straight = t.initial_state();
    let all = run_steps(&t, &mut straight, 5);

    let mut first = t.initial_state();
    let head = run_steps(&t, &mut first, 3);
    let (mut resumed, _) = read_checkpoint(&write_checkpoint(&first, &t.config).unwrap()).unwrap();
    let tail = run_steps(&t, &mut resumed, 2);
    assert_eq!([head, tail].concat(), all);
    assert_eq!(resumed, straight);
}

#[test]
fn checkpoints_fire_at_the_configured_cadence() {
    let t = trainer(TrainingConfig {
        checkpoint_every: 2,
        batch_size: 8,
        ..small_config(0)
    });
    let mut s = t.initial_state();
    let mut at = Vec::new();
    t.run(&mut s, 5, &mut |_| Ok(()), &mut |st| {
        at.push(st.iteration);
        Ok(())
    })
    .unwrap();
    assert_eq!(at, vec![2, 4]);
}

#[test]
fn training_log_round_trips_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let header = LogHeader {
        mode: AblationMode::NoPose,
        config: small_config(1),
        parameters: 123,
    };
    let rec = |i| LossRecord {
        iteration: i,
        loss: 0.1 / i as f64,
        batch_psnr: 10.0 + i as f64,
        samples: 100 * i as usize,
        learning_rate: 1e-3,
    };
    let mut log = TrainingLog::create(&path, &header).unwrap();
    for i in 1..=4 {
        log.append(&rec(i)).unwrap();
    }
    log.flush().unwrap();
    drop(log);
    let (h, records) = read_log(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(records, (1..=4).map(rec).collect::<Vec<_>>());

    let mut log = TrainingLog::resume(&path, 2).unwrap();
    log.append(&rec(3)).unwrap();
    log.flush().unwrap();
    drop(log);
    assert_eq!(read_log(&path).unwrap().1, (1..=3).map(rec).collect::<Vec<_>>());
}

#[test]
fn short_training_reduces_the_loss() {
    let t = trainer(small_config(3));
    let held = t.held_out_rays(256, 9);
    let mut s = t.initial_state();
    let before = t.evaluate_loss(&s.nets, &held).unwrap();
    let records = run_steps(&t, &mut s, 200);
    let after = t.evaluate_loss(&s.nets, &held).unwrap();
    let early = mean(&records[..20].iter().map(|r| r.loss).collect::<Vec<_>>());
    let late = mean(&records[180..].iter().map(|r| r.loss).collect::<Vec<_>>());
    assert!(late < early, "batch loss {early} -> {late}");
    assert!(after < before, "held-out loss {before} -> {after}");
    assert!(records.iter().all(|r| r.samples > 0 && r.loss.is_finite()));
}
