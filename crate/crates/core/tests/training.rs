use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ds4d::scene_synth::{
    default_cameras, generate_scene, holdout_cameras, render_dataset, Dataset, MotionFamily,
    SceneSpec,
};
use ds4d::train::{
    build_feature_bank, deformed_points, initial_points, load_model, model_tensors, run_ablation,
    train, train_static_stage, write_checkpoint, FeatureSource, Model, TrainConfig, TrainLog,
    Variant,
};
use ds4d::tssf::FusionMode;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let mut spec = SceneSpec::preset(MotionFamily::Oscillate);
        spec.num_points = 60;
        let scene = generate_scene(&spec, 3).unwrap();
        render_dataset(&scene, &default_cameras(2, 32, 32), &holdout_cameras(32, 32), 4).unwrap()
    })
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("num_points", "40"),
        ("warmup_iters", "30"),
        ("dynamic_iters", "20"),
        ("densify_interval", "10"),
        ("feature_dim", "12"),
        ("feature_grid", "4"),
        ("hexplane_resolution", "4"),
        ("hexplane_levels", "2"),
        ("hexplane_channels", "2"),
        ("mixer_width", "8"),
        ("hidden_width", "8"),
        ("log_every", "5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn no_dynamic_iterations_leave_the_deformation_at_identity() {
    let mut cfg = small_config();
    cfg.dynamic_iters = 0;
    let out = train(dataset(), &cfg).unwrap();
    for i in 0..dataset().frames {
        let pts = deformed_points(&out.model, &out.bank, dataset(), i).unwrap();
        assert_eq!(pts, out.model.points, "frame {i}");
    }
}

#[test]
fn static_stage_reduces_loss_and_leaves_networks_untouched() {
    let cfg = small_config();
    let ds = dataset();
    let bank = build_feature_bank(ds, &cfg).unwrap();
    let points = initial_points(ds, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = Model::new(&cfg, points, bank.width(cfg.feature_source), &mut rng).unwrap();
    let before = model.clone();
    let mut log = TrainLog::default();
    train_static_stage(&mut model.points, ds, &cfg, &mut log).unwrap();
    let (first, last) = (log.rows.first().unwrap(), log.rows.last().unwrap());
    assert!(last.loss.total < first.loss.total, "{} -> {}", first.loss.total, last.loss.total);
    // 30 iterations, densifying at 10 and 20
    assert!(model.points.len() > before.points.len());
    assert_eq!(model.field, before.field);
    assert_eq!(model.fusion, before.fusion);
    assert_eq!(model.mixer, before.mixer);
    assert_eq!(model.net, before.net);
}

#[test]
fn log_covers_both_stages_in_order() {
    let cfg = small_config();
    let out = train(dataset(), &cfg).unwrap();
    let iters: Vec<usize> = out.log.rows.iter().map(|r| r.iter).collect();
    assert!(iters.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*iters.first().unwrap(), 0);
    assert_eq!(*iters.last().unwrap(), cfg.warmup_iters + cfg.dynamic_iters - 1);
    let csv = out.log.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "iter,loss_total,loss_rec,loss_mask,loss_proxy,lr,num_points");
    assert_eq!(csv.lines().count(), out.log.rows.len() + 1);
}

#[test]
fn checkpoint_round_trip_is_stable() {
    let mut cfg = small_config();
    cfg.fusion_mode = FusionMode::Da;
    let out = train(dataset(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    write_checkpoint(&a, &cfg, &out.model).unwrap();
    let (cfg2, model2) = load_model(&a).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(model2.source, FeatureSource::Fused);
    for (x, y) in model_tensors(&out.model).iter().zip(model_tensors(&model2)) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.shape, y.shape);
        for (u, v) in x.data.iter().zip(&y.data) {
            assert_eq!(*u as f32 as f64, *v, "{}", x.name);
        }
    }
    let b = dir.path().join("b.ckpt");
    write_checkpoint(&b, &cfg2, &model2).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn training_is_deterministic_single_threaded() {
    let cfg = small_config();
    let run = || ds4d::par::with_single_thread(|| train(dataset(), &cfg).unwrap());
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
}

#[test]
fn repeated_variant_gives_identical_rows() {
    let cfg = small_config();
    let rows = run_ablation(dataset(), &cfg, &[Variant::TssfGa, Variant::TssfGa]).unwrap();
    assert_eq!(rows[0], rows[1]);
    assert!(rows[0].psnr.is_finite());
}
