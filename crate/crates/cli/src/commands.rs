use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hvdpo::data::{
    build_pairs, gen_toy_videos, ingest_scores, read_video, save_records, write_video, Dataset,
    PairIndex,
};
use hvdpo::gradcheck;
use hvdpo::metrics::{build_report, ReportMeta};
use hvdpo::train::{
    invert_video, log_tsv, run_inference, sample_from_latent, train_stage_a, train_stage_b, Checkpoint,
    StepLog, TrainConfig, TrainObserver,
};
use hvdpo::Tensor;

use crate::runconfig::{apply_overrides, path_setting, Resolved, RunFile};
use crate::{Eval, GenToy, Gradcheck, Invert, Pair, Sample, Score, ShowCheckpoint, TrainA, TrainB, TrainFlags, Usage};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path, true)?)
}

pub fn gen_toy(a: GenToy) -> Result<()> {
    let g = &a.geometry;
    let shape = [g.frames, g.channels, g.height, g.width];
    let records = gen_toy_videos(a.kind, a.count, a.condition, a.seed, a.quality, shape)
        .map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ds = save_records(&a.out, &records)?;
    log::info!("wrote {} videos, index now lists {}", records.len(), ds.entries.len());
    Resolved::new("gen-toy")
        .push("kind", a.kind)
        .push("count", a.count)
        .push("quality", a.quality)
        .push("seed", a.seed)
        .push("condition", a.condition)
        .push("frames", g.frames)
        .push("channels", g.channels)
        .push("height", g.height)
        .push("width", g.width)
        .path("out", &a.out)
        .write_beside(&a.out)?;
    Ok(())
}

pub fn score(a: Score) -> Result<()> {
    let outcome = ingest_scores(&a.data, &a.scores)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    outcome.dataset.write_index(&a.out)?;
    Resolved::new("score")
        .path("data", &a.data)
        .path("scores", &a.scores)
        .path("out", &a.out)
        .write_beside(&a.out)?;
    Ok(())
}

pub fn pair(a: Pair) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let pairs = build_pairs(&ds.entries, a.count, a.seed)?;
    parent_dir(&a.out)?;
    pairs.write(&a.out)?;
    Resolved::new("pair")
        .path("data", &a.data)
        .push("count", a.count)
        .push("seed", a.seed)
        .path("out", &a.out)
        .write_beside(&a.out)?;
    Ok(())
}

/// Logs progress every 100 steps.
struct Progress {
    total: usize,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, l: &StepLog) {
        if l.step % 100 == 0 || l.step + 1 == self.total {
            match l.margin {
                Some(m) => log::info!("step {} loss {:.5} margin {:.4}", l.step, l.loss, m),
                None => log::info!("step {} loss {:.5}", l.step, l.loss),
            }
        }
    }
}

struct Prepared {
    cfg: TrainConfig,
    data: PathBuf,
    out: PathBuf,
}

fn prepare(t: &TrainFlags, mut cfg: TrainConfig) -> Result<Prepared> {
    let file = RunFile::load(t.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    let stage = cfg.stage;
    file.apply(&mut cfg).map_err(|e| usage(format!("{e:#}")))?;
    apply_overrides(&mut cfg, &t.sets).map_err(|e| usage(format!("{e:#}")))?;
    if let Some(v) = t.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = t.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    cfg.seed = t.seed;
    if cfg.stage != stage {
        return Err(usage(format!("this command trains stage {stage}, config says {}", cfg.stage)));
    }
    if cfg.iterations == 0 {
        return Err(usage("iterations must be at least 1"));
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = path_setting(&t.data, &file, "data").ok_or_else(|| usage("missing required flag --data"))?;
    let out = path_setting(&t.out, &file, "out").ok_or_else(|| usage("missing required flag --out"))?;
    Ok(Prepared { cfg, data, out })
}

fn finish(resolved: &mut Resolved, p: &Prepared, ck: &Checkpoint, log: &[StepLog]) -> Result<()> {
    parent_dir(&p.out)?;
    ck.save(&p.out)?;
    let mut log_path = p.out.clone().into_os_string();
    log_path.push(".log.tsv");
    fs::write(&log_path, log_tsv(log)).context("writing training log")?;
    resolved.train(&p.cfg).path("data", &p.data).path("out", &p.out);
    resolved.write_beside(&p.out)?;
    log::info!("saved {} (digest {})", p.out.display(), ck.digest());
    Ok(())
}

pub fn train_a(a: TrainA) -> Result<()> {
    let p = prepare(&a.train, TrainConfig::stage_a(a.train.seed))?;
    let init_seed = a.init_seed.unwrap_or(p.cfg.seed);
    let ds = Dataset::load(&p.data)?;
    let records = ds.load_records(&p.cfg.model.video_shape())?;
    let init = hvdpo::denoiser::Denoiser::init(init_seed, p.cfg.model.clone())?;
    let mut progress = Progress { total: p.cfg.iterations };
    let outcome = train_stage_a(&p.cfg, &records, init, &mut progress)?;
    let mut r = Resolved::new("train-a");
    r.push("init_seed", init_seed);
    finish(&mut r, &p, &outcome.checkpoint, &outcome.log)
}

pub fn train_b(a: TrainB) -> Result<()> {
    let file = RunFile::load(a.train.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    let reference = path_setting(&a.reference, &file, "ref").ok_or_else(|| usage("missing required flag --ref"))?;
    let pairs_path = path_setting(&a.pairs, &file, "pairs").ok_or_else(|| usage("missing required flag --pairs"))?;
    let base = load_checkpoint(&reference)?;
    let mut cfg = TrainConfig::stage_b(a.train.seed);
    cfg.model = base.model.config().clone();
    cfg.schedule = base.schedule.clone();
    let mut p = prepare(&a.train, cfg)?;
    if let Some(b) = a.beta {
        p.cfg.beta = b;
        p.cfg.validate().map_err(|e| usage(e.to_string()))?;
    }
    let ds = Dataset::load(&p.data)?;
    let records = ds.load_records(&p.cfg.model.video_shape())?;
    let pairs = PairIndex::read(&pairs_path)?;
    let mut progress = Progress { total: p.cfg.iterations };
    let outcome = train_stage_b(&p.cfg, &pairs, &records, &base, &mut progress)?;
    let mut r = Resolved::new("train-b");
    r.path("ref", &reference).path("pairs", &pairs_path);
    finish(&mut r, &p, &outcome.checkpoint, &outcome.log)
}

pub fn invert(a: Invert) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let video = read_video(&a.video, Some(&ck.model.config().video_shape()))?;
    let schedule = ck.schedule.build()?;
    let latent = invert_video(&ck.model, &schedule, &video, a.condition, a.steps, a.refine)?;
    parent_dir(&a.out)?;
    write_video(&a.out, &latent)?;
    Resolved::new("invert")
        .path("ckpt", &a.ckpt)
        .path("video", &a.video)
        .push("condition", a.condition)
        .push("steps", a.steps)
        .push("refine", a.refine)
        .path("out", &a.out)
        .write_beside(&a.out)?;
    Ok(())
}

pub fn sample(a: Sample) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let shape = ck.model.config().video_shape();
    let schedule = ck.schedule.build()?;
    let mut r = Resolved::new("sample");
    r.path("ckpt", &a.ckpt).push("condition", a.condition).push("steps", a.steps);
    let video = match (&a.first_frame, &a.latent) {
        (Some(src), None) => {
            let seed = a.seed.ok_or_else(|| usage("missing required flag --seed"))?;
            let v = read_video(src, None)?;
            if v.shape()[1..] != shape[1..] {
                bail!("{}: frame shape {:?} does not match the model's {:?}", src.display(), &v.shape()[1..], &shape[1..]);
            }
            let first = v.narrow(0, 0, 1)?;
            r.path("first_frame", src).push("seed", seed);
            run_inference(&ck.model, &schedule, &first, a.condition, a.steps, seed)?
        }
        (None, Some(latent)) => {
            let z = read_video(latent, Some(&shape))?;
            r.path("latent", latent);
            sample_from_latent(&ck.model, &schedule, &z, a.condition, a.steps)?
        }
        _ => return Err(usage("give exactly one of --first-frame and --latent")),
    };
    parent_dir(&a.out)?;
    write_video(&a.out, &video)?;
    r.path("out", &a.out).write_beside(&a.out)?;
    Ok(())
}

pub fn eval(a: Eval) -> Result<()> {
    let mut videos: Vec<(String, usize, Tensor<f32>)> = Vec::new();
    let mut r = Resolved::new("eval");
    if let Some(dir) = &a.data {
        let ds = Dataset::load(dir)?;
        for e in &ds.entries {
            videos.push((e.id.clone(), e.condition, read_video(&ds.video_path(e), None)?));
        }
        r.path("data", dir);
    }
    for p in &a.video {
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("{}: no file name", p.display()))?;
        videos.push((id, 0, read_video(p, None)?));
        r.path("video", p);
    }
    let meta = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            r.path("ckpt", p);
            ReportMeta {
                checkpoint_digest: Some(ck.digest()),
                seeds: vec![ck.seed],
            }
        }
        None => ReportMeta::default(),
    };
    let refs: Vec<(String, usize, &Tensor<f32>)> = videos.iter().map(|(i, c, v)| (i.clone(), *c, v)).collect();
    let report = build_report(&refs, meta)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("report.json"), report.to_json()).context("writing report.json")?;
    fs::write(a.out.join("report.tsv"), report.to_tsv()).context("writing report.tsv")?;
    log::info!(
        "{} videos: mean ssim {:.4}, mean mse {:.5}",
        report.overall.count,
        report.overall.mean_ssim,
        report.overall.mean_mse
    );
    r.path("out", &a.out).write_beside(&a.out)?;
    Ok(())
}

pub fn gradcheck(a: Gradcheck) -> Result<()> {
    if a.instances == 0 {
        return Err(usage("--instances must be at least 1"));
    }
    let outcomes = gradcheck::run_suite(a.seed, a.instances)?;
    let mut table = String::from("check\tinstance\tmax_rel_error\tcoordinates\tpassed\n");
    let mut failed = 0;
    for o in &outcomes {
        let _ = writeln!(table, "{}\t{}\t{:e}\t{}\t{}", o.name, o.instance, o.max_rel_error, o.coordinates, o.passed());
        if !o.passed() {
            failed += 1;
            eprintln!("FAIL {} instance {}: relative error {:e}", o.name, o.instance, o.max_rel_error);
        }
    }
    if let Some(out) = &a.out {
        parent_dir(out)?;
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
        Resolved::new("gradcheck")
            .push("seed", a.seed)
            .push("instances", a.instances)
            .path("out", out)
            .write_beside(out)?;
    }
    let worst = outcomes.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    eprintln!(
        "{} checks, {} failed, worst relative error {:e} (bound {:e})",
        outcomes.len(),
        failed,
        worst,
        gradcheck::TOLERANCE
    );
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}

pub fn show_checkpoint(a: ShowCheckpoint) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let m = ck.model.config();
    let mut s = String::new();
    let _ = writeln!(s, "stage: {}", ck.stage);
    let _ = writeln!(s, "iteration: {}", ck.iteration);
    let _ = writeln!(s, "seed: {}", ck.seed);
    let _ = writeln!(s, "config_digest: {}", ck.config_digest);
    let _ = writeln!(s, "digest: {}", ck.digest());
    let _ = writeln!(s, "video: {:?}", m.video_shape());
    let _ = writeln!(s, "hidden: {} heads: {} categories: {} time_dim: {}", m.hidden, m.heads, m.categories, m.time_dim);
    let _ = writeln!(s, "lora: {}", match ck.model.lora() {
        Some(_) => format!("rank {} alpha {}", m.lora_rank, m.lora_alpha),
        None => "none".into(),
    });
    let _ = writeln!(
        s,
        "schedule: {} steps, beta {} to {}",
        ck.schedule.steps, ck.schedule.beta_start, ck.schedule.beta_end
    );
    let params: usize = ck.model.params().tensors().iter().map(|t| t.numel()).sum();
    let lora: usize = ck.model.lora().map_or(0, |l| l.tensors().iter().map(|t| t.numel()).sum());
    let _ = writeln!(s, "parameters: {params} base, {lora} lora");
    print!("{s}");
    Ok(())
}
