use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ds4d::dsfd::{
    compare_decoupling, decouple_all, dynamic_heatmap, select_references, Combine,
    DecoupleOptions, Granularity, ReferenceMode,
};
use ds4d::export::{export_heatmap, export_scoremap};
use ds4d::features::{read_ftr, write_ftr, FeatureSet};
use ds4d::gradchecks;
use ds4d::image::write_pnm;
use ds4d::scene_synth::{
    default_cameras, extract_all_features, generate_scene, holdout_cameras, read_dataset,
    render_dataset, write_dataset, MotionFamily, SceneSpec,
};
use ds4d::train::{
    build_feature_bank, evaluate_holdout, format_table, load_model, render_model, run_ablation,
    train as run_training, write_checkpoint, Variant,
};

use crate::{
    run_config, AblateArgs, BenchArgs, CliError, DecoupleArgs, EvalArgs, ExtractArgs,
    GradcheckArgs, HeatmapArgs, RenderArgs, SynthArgs, TrainArgs,
};

type CmdResult = Result<(), CliError>;

fn parse_arg<T: FromStr<Err = ds4d::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: ds4d::Error| CliError::Usage(e.to_string()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let family: MotionFamily = parse_arg(&a.preset)?;
    if a.views < 2 || a.frames < 2 || a.size == 0 || a.points == 0 {
        return Err(CliError::Usage(
            "need --views >= 2, --frames >= 2, positive --size and --points".into(),
        ));
    }
    let mut spec = SceneSpec::preset(family);
    spec.num_points = a.points;
    let scene = generate_scene(&spec, a.seed)?;
    let ds = render_dataset(
        &scene,
        &default_cameras(a.views, a.size, a.size),
        &holdout_cameras(a.size, a.size),
        a.frames,
    )?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} scene: {} frames x {} views ({} held out) at {}x{} to {}",
        family.name(),
        a.frames,
        a.views,
        ds.holdout.len(),
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

pub fn extract(a: ExtractArgs) -> CmdResult {
    let ds = read_dataset(&a.data)?;
    let set = extract_all_features(&ds.images, ds.frames, ds.views(), a.grid, a.dim)?;
    write_ftr(&a.out, &set)?;
    println!(
        "extracted {} frames x {} views, {} tokens of width {} -> {}",
        set.frames,
        set.views,
        set.tokens(),
        set.dim,
        a.out.display()
    );
    Ok(())
}

pub fn decouple(a: DecoupleArgs) -> CmdResult {
    let opts = DecoupleOptions {
        mode: parse_arg::<ReferenceMode>(&a.mode)?,
        combine: parse_arg::<Combine>(&a.combine)?,
        granularity: parse_arg::<Granularity>(&a.granularity)?,
    };
    let set = read_ftr(&a.features)?;
    let refs = select_references(&set)?;
    let (fd, elapsed) = decouple_all(&set, &refs, opts)?;
    write_ftr(&a.out, &fd.set)?;
    println!(
        "decoupled against middle frame {} ({}), width {} -> {} in {:.3} ms",
        refs.middle_index,
        opts.mode,
        set.dim,
        fd.set.dim,
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn random_features(t: usize, v: usize, grid: usize, d: usize, seed: u64) -> FeatureSet {
    let mut set = FeatureSet::zeros(t, v, grid, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    set.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    set
}

pub fn bench_decouple(a: BenchArgs) -> CmdResult {
    let grid = (a.p as f64).sqrt().round() as usize;
    if grid * grid != a.p || a.p == 0 {
        return Err(CliError::Usage(format!("--p {} is not a positive perfect square", a.p)));
    }
    if a.t < 2 || a.v == 0 || a.d == 0 {
        return Err(CliError::Usage("need --t >= 2 and positive --v, --d".into()));
    }
    let set = random_features(a.t, a.v, grid, a.d, a.seed);
    let cmp = compare_decoupling(&set, a.repeats)?;
    println!("t={} v={} P={} D={} threads={}", a.t, a.v, a.p, a.d, ds4d::par::current_threads());
    println!("reference-based: {:.4} s", cmp.reference.as_secs_f64());
    println!("all-pairs:       {:.4} s ({} frame pairs)", cmp.all_pairs.as_secs_f64(), cmp.pair_decouplings);
    println!("speedup:         {:.2}x (best of {})", cmp.speedup(), a.repeats.max(1));
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let cfg = run_config::resolve(a.config.config.as_deref(), &a.config.overrides, a.config.seed)?;
    let ds = read_dataset(&a.data)?;
    let outcome = run_training(&ds, &cfg)?;
    ensure_dir(&a.out)?;
    write_checkpoint(&a.out.join("model.ckpt"), &cfg, &outcome.model)?;
    write_text(&a.out.join("train_log.csv"), &outcome.log.to_csv())?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    if let Some(last) = outcome.log.rows.last() {
        println!(
            "iter {}: loss {:.6} (rec {:.6}), {} points",
            last.iter, last.loss.total, last.loss.rec, last.num_points
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn render(a: RenderArgs) -> CmdResult {
    let (cfg, model) = load_model(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    let bank = build_feature_bank(&ds, &cfg)?;
    ensure_dir(&a.out)?;
    let cams = if a.holdout { &ds.holdout } else { &ds.cameras };
    for i in 0..ds.frames {
        for (j, cam) in cams.iter().enumerate() {
            let frame = render_model(&model, &bank, &ds, i, cam)?;
            write_pnm(&a.out.join(format!("{i}_{j}.ppm")), &frame.rgb)?;
        }
    }
    println!("rendered {} frames x {} views to {}", ds.frames, cams.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let (cfg, model) = load_model(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    let bank = build_feature_bank(&ds, &cfg)?;
    let report = evaluate_holdout(&model, &bank, &ds)?;
    if let Some(path) = &a.out {
        let mut csv = String::from("time,view,psnr,ssim,dssim\n");
        for e in &report.entries {
            let _ = writeln!(csv, "{},{},{},{},{}", e.time, e.view, e.psnr, e.ssim, e.dssim);
        }
        write_text(path, &csv)?;
    }
    println!(
        "held-out ({} images): PSNR {:.3} dB  SSIM {:.4}  D-SSIM {:.4}",
        report.entries.len(),
        report.mean_psnr(),
        report.mean_ssim(),
        report.mean_dssim()
    );
    Ok(())
}

pub fn heatmap(a: HeatmapArgs) -> CmdResult {
    let mode: ReferenceMode = parse_arg(&a.mode)?;
    let ds = read_dataset(&a.data)?;
    let raw = extract_all_features(&ds.images, ds.frames, ds.views(), a.grid, a.dim)?;
    let refs = select_references(&raw)?;
    let opts = DecoupleOptions {
        mode,
        ..DecoupleOptions::default()
    };
    let (fd, _) = decouple_all(&raw, &refs, opts)?;
    ensure_dir(&a.out)?;
    for i in 0..ds.frames {
        for j in 0..ds.views() {
            let grid = dynamic_heatmap(&fd, i, j)?;
            export_heatmap(&grid, a.grid, a.size, a.size, &a.out.join(format!("heatmap_{i}_{j}.pgm")))?;
        }
    }
    let mut written = ds.frames * ds.views();
    if let Some(ckpt) = &a.ckpt {
        let (cfg, model) = load_model(ckpt)?;
        let bank = build_feature_bank(&ds, &cfg)?;
        for i in 0..ds.frames {
            let trace = model.forward(bank.for_source(model.source), &ds.cameras, i, ds.time_norm(i))?;
            let fusion = trace.fusion_output().ok_or_else(|| {
                CliError::Usage(format!("{} does not use fused features", ckpt.display()))
            })?;
            let scores = &fusion.scores;
            for (j, cam) in ds.cameras.iter().enumerate() {
                let column: Vec<f64> = (0..scores.points).map(|p| scores.row(p)[j]).collect();
                let path = a.out.join(format!("scoremap_{i}_{j}.pgm"));
                export_scoremap(&column, &trace.deformed, cam, &path)?;
                written += 1;
            }
        }
    }
    println!("wrote {written} maps to {}", a.out.display());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let variants: Vec<Variant> = match &a.variants {
        Some(list) => list
            .split(',')
            .map(|s| parse_arg(s.trim()))
            .collect::<Result<_, _>>()?,
        None => Variant::ALL.to_vec(),
    };
    let cfg = run_config::resolve(a.config.config.as_deref(), &a.config.overrides, a.config.seed)?;
    let ds = read_dataset(&a.data)?;
    let rows = run_ablation(&ds, &cfg, &variants)?;
    print!("{}", format_table(&rows));
    if let Some(path) = &a.out {
        let mut csv = String::from("variant,psnr,ssim,dssim\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{}", r.variant.name(), r.psnr, r.ssim, r.dssim);
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let results = gradchecks::run_all(a.seed)?;
    let mut failed = 0;
    for c in &results {
        println!(
            "{:<12} {:>5} params  max rel err {:.3e}  tol {:.0e}  {}",
            c.name,
            c.params,
            c.max_rel_error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{failed} of {} gradient checks failed", results.len())));
    }
    Ok(())
}
