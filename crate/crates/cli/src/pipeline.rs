//! Experiment pipeline: dataset synthesis, autoencoder training, and the
//! per-seed comparison of the active learner against the two supervised
//! baselines at equal label budgets.
//!
//! All methods of one seed share the bootstrap set, the test set and the
//! penetrating user codes used for handling. The two baselines also share
//! their uniform sample stream, so they differ only in the loss.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use selfcol::active::{
    aggregate, boundary_term, bootstrap, calibrate_pd_scale, elbow_point, model_update, near_boundary_fraction,
    partition, CollisionDataset, EpochStats, LatentBox, Labeler, Origin, Subset,
};
use selfcol::autoencoder::{reconstruction_report, train_autoencoder, Autoencoder, ReconstructionReport, TrainLog};
use selfcol::datagen::{synth_dataset, PoseFamily, SynthDataset};
use selfcol::detector::Detector;
use selfcol::geom::{CollisionOracle, CollisionSample, DomainMap};
use selfcol::mesh::obj::write_obj;
use selfcol::mesh::{feature_transform, FeatureVector};
use selfcol::nn::{load_checkpoint, save_checkpoint};

use crate::config::{ExperimentConfig, Method};
use crate::eval::{
    evaluate_detector, handle_collisions, handle_csv, handling_metrics, DetectionMetrics, HandleRecord,
    HandlingMetrics,
};

/// Independent stream seeds derived from the experiment seed.
fn stream(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

const TEST: u64 = 1;
const USERS: u64 = 2;
const BOOT: u64 = 3;
const SPLIT: u64 = 4;
const DET: u64 = 5;
const TRAIN: u64 = 6;
const AUG: u64 = 100;
const UNIFORM: u64 = 200;
const GROWTH: u64 = 300;

/// The trained autoencoder and everything derived from it.
pub struct Prepared {
    pub family: PoseFamily,
    pub ae: Autoencoder,
    pub domains: DomainMap,
    pub bx: LatentBox,
    pub train_log: TrainLog,
    pub reconstruction: ReconstructionReport,
    pub synth: SynthDataset,
}

impl Prepared {
    pub fn oracle(&self) -> CollisionOracle<'_, Autoencoder> {
        CollisionOracle {
            decoder: &self.ae,
            rest: self.family.rest(),
            domains: &self.domains,
            config: self.family.oracle_config(),
        }
    }
}

pub fn synthesize(cfg: &ExperimentConfig) -> Result<(PoseFamily, SynthDataset)> {
    let family = cfg.dataset.family.build();
    let synth = synth_dataset(&family, cfg.dataset.n_meshes, cfg.dataset.seed)?;
    if synth.report.collision_free < 2 {
        bail!("only {} collision-free meshes synthesized; need at least 2", synth.report.collision_free);
    }
    Ok((family, synth))
}

/// Writes the synthesized meshes as OBJ files plus a JSON manifest.
pub fn write_synth(dir: &Path, family: &PoseFamily, synth: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir.join("meshes"))?;
    let rest = family.rest();
    write_obj(&dir.join("rest.obj"), &rest.rest, &rest.triangles)?;
    for (i, m) in synth.meshes.iter().enumerate() {
        write_obj(&dir.join("meshes").join(format!("{i:05}.obj")), &m.vertices, &m.triangles)?;
    }
    let mut manifest = synth.manifest();
    manifest["family"] = serde_json::json!(family.name);
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Synthesizes data and trains the autoencoder; the latent box spans the
/// encodings of the collision-free training meshes.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (family, synth) = synthesize(cfg)?;
    let features: Vec<FeatureVector> = synth
        .collision_free()
        .into_iter()
        .map(feature_transform)
        .collect::<Result<_, _>>()?;
    let (ae, train_log) = train_autoencoder(family.rest(), &features, &cfg.autoencoder)?;
    finish_prepare(family, synth, ae, train_log, &features)
}

fn finish_prepare(
    family: PoseFamily,
    synth: SynthDataset,
    ae: Autoencoder,
    train_log: TrainLog,
    features: &[FeatureVector],
) -> Result<Prepared> {
    let reconstruction = reconstruction_report(&ae, family.rest(), features)?;
    let bx = LatentBox::from_codes(&ae.encode_all(features)?)?;
    let domains = ae.domain_map();
    Ok(Prepared {
        family,
        ae,
        domains,
        bx,
        train_log,
        reconstruction,
        synth,
    })
}

pub fn ae_dir(out: &Path) -> PathBuf {
    out.join("autoencoder")
}

pub fn save_prepared(out: &Path, p: &Prepared) -> Result<()> {
    let dir = ae_dir(out);
    fs::create_dir_all(&dir)?;
    save_checkpoint(&dir, "autoencoder", &p.ae.to_checkpoint())?;
    fs::write(dir.join("train_log.csv"), p.train_log.to_csv())?;
    fs::write(dir.join("box.json"), serde_json::to_string_pretty(&p.bx)?)?;
    fs::write(
        dir.join("reconstruction.json"),
        serde_json::to_string_pretty(&p.reconstruction)?,
    )?;
    Ok(())
}

/// Reloads a saved autoencoder; the synthetic dataset is regenerated (it is
/// deterministic in the config).
pub fn load_prepared(out: &Path, cfg: &ExperimentConfig) -> Result<Prepared> {
    let dir = ae_dir(out);
    if !dir.join("autoencoder.json").exists() {
        bail!("no autoencoder checkpoint in {}; run train-ae first", dir.display());
    }
    let ae = Autoencoder::from_checkpoint(load_checkpoint(&dir, "autoencoder")?)?;
    let (family, synth) = synthesize(cfg)?;
    if ae.num_vertices != family.rest().num_vertices() {
        bail!("autoencoder checkpoint does not match the configured mesh family");
    }
    let features: Vec<FeatureVector> = synth
        .collision_free()
        .into_iter()
        .map(feature_transform)
        .collect::<Result<_, _>>()?;
    finish_prepare(family, synth, ae, TrainLog::default(), &features)
}

/// Draws uniform codes until `n` penetrating ones are found.
pub fn penetrating_users(bx: &LatentBox, labeler: &dyn Labeler, n: usize, seed: u64) -> Result<Vec<CollisionSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found = Vec::with_capacity(n);
    let mut drawn = 0;
    while found.len() < n {
        if drawn >= 100 * n {
            bail!("found only {} penetrating codes in {drawn} draws", found.len());
        }
        let batch = (n - found.len()).max(64).min(100 * n - drawn);
        drawn += batch;
        let zs = bx.sample_with(batch, &mut rng);
        found.extend(labeler.label(&zs)?.into_iter().filter(|s| s.pd > 0.0));
    }
    found.truncate(n);
    Ok(found)
}

/// Exhaustive invariant checks over every labeled sample of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleChecks {
    pub samples: usize,
    /// Samples not in exactly one of the positive/negative/boundary sets.
    pub partition_violations: usize,
    /// Samples whose label disagrees with `pd > 0`.
    pub sign_violations: usize,
    pub boundary_samples: usize,
    /// Boundary samples whose boundary-loss contribution is not `|p - 0.5|`,
    /// or is nonzero at `p = 0.5`.
    pub boundary_violations: usize,
}

impl SampleChecks {
    fn check(&mut self, samples: &[CollisionSample], eps: f64, det: &Detector) -> Result<()> {
        let zs: Vec<Vec<f64>> = samples.iter().map(|s| s.z.clone()).collect();
        let probs = det.probs(&zs)?;
        for (s, p) in samples.iter().zip(probs) {
            self.samples += 1;
            let memberships = [s.pd > eps, s.pd < 0.0, (0.0..=eps).contains(&s.pd)];
            let expected = match partition(s.pd, eps) {
                Subset::Positive => 0,
                Subset::Negative => 1,
                Subset::Boundary => 2,
            };
            if memberships.iter().filter(|&&m| m).count() != 1 || !memberships[expected] {
                self.partition_violations += 1;
            }
            if s.label != (s.pd > 0.0) {
                self.sign_violations += 1;
            }
            if partition(s.pd, eps) == Subset::Boundary {
                self.boundary_samples += 1;
                if boundary_term(p) != (p - 0.5).abs() || boundary_term(0.5) != 0.0 {
                    self.boundary_violations += 1;
                }
            }
        }
        Ok(())
    }

    pub fn ok(&self) -> bool {
        self.partition_violations == 0 && self.sign_violations == 0 && self.boundary_violations == 0
    }
}

/// Metrics of one method at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub labels: usize,
    pub positives: usize,
    pub negatives: usize,
    pub boundary: usize,
    pub detection: DetectionMetrics,
    pub validation_accuracy: f64,
    pub handling: HandlingMetrics,
    /// Active learner only: near-boundary fractions of the two halves of the
    /// latest aggregation round.
    pub near_boundary_projected: Option<f64>,
    pub near_boundary_uniform: Option<f64>,
    pub final_train_ce: f64,
}

pub const METRICS_CSV_HEADER: &str = "iteration,labels,positives,negatives,boundary,accuracy,fnr,fpr,validation_accuracy,\
handle_success,mean_reduction,mean_embedding_diff,handle_feasible,handle_infeasible,near_boundary_projected,\
near_boundary_uniform,final_train_ce";

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.labels,
            r.positives,
            r.negatives,
            r.boundary,
            r.detection.accuracy,
            r.detection.fnr,
            r.detection.fpr,
            r.validation_accuracy,
            r.handling.success_rate,
            r.handling.mean_reduction,
            r.handling.mean_embedding_diff,
            r.handling.feasible,
            r.handling.infeasible,
            opt(r.near_boundary_projected),
            opt(r.near_boundary_uniform),
            r.final_train_ce,
        ));
    }
    s
}

/// One method's trajectory over the aggregation rounds.
pub struct MethodRun {
    pub method: Method,
    pub rows: Vec<IterationMetrics>,
    /// Detector after each round, index = iteration.
    pub detectors: Vec<Detector>,
    pub handling: Vec<Vec<HandleRecord>>,
    pub dataset: CollisionDataset,
    pub train_logs: Vec<Vec<EpochStats>>,
}

pub struct SeedRun {
    pub seed: u64,
    pub n_init: usize,
    /// Test accuracy per candidate bootstrap size, when the size was grown.
    pub growth: Vec<(usize, f64)>,
    pub methods: BTreeMap<Method, MethodRun>,
    pub checks: SampleChecks,
    pub test: Vec<CollisionSample>,
    pub users: Vec<CollisionSample>,
}

impl SeedRun {
    pub fn method(&self, m: Method) -> &MethodRun {
        &self.methods[&m]
    }
}

struct Learner {
    method: Method,
    det: Detector,
    data: CollisionDataset,
    run: MethodRun,
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    prep: &'a Prepared,
    seed: u64,
    test: Vec<CollisionSample>,
    users: Vec<CollisionSample>,
}

impl SeedContext<'_> {
    fn fresh_detector(&self) -> Detector {
        let mut dc = self.cfg.detector.clone();
        dc.seed = stream(self.seed, DET) ^ dc.seed;
        let ae = &self.prep.ae;
        Detector::new(ae.num_domains, ae.sub_dim, &self.prep.bx.lo, &self.prep.bx.hi, &dc)
    }

    fn bootstrap_train(&self, data: &CollisionDataset, boundary: bool) -> Result<(Detector, Vec<EpochStats>)> {
        let mut det = self.fresh_detector();
        let train = data.train();
        calibrate_pd_scale(&mut det, &train);
        let log = model_update(
            &mut det,
            &train,
            self.cfg.active.eps,
            &self.cfg.loss,
            boundary,
            &self.cfg.active.bootstrap,
            stream(self.seed, TRAIN),
        )?;
        Ok((det, log))
    }

    fn evaluate(&self, l: &mut Learner, iteration: usize, near: Option<(f64, f64)>, log: Vec<EpochStats>) -> Result<()> {
        let clock = Instant::now();
        let detection = evaluate_detector(&l.det, &self.test)?;
        let validation: Vec<CollisionSample> = l.data.validation().into_iter().cloned().collect();
        let validation_accuracy = evaluate_detector(&l.det, &validation)?.accuracy;
        let oracle = self.prep.oracle();
        let (records, _) = handle_collisions(
            &l.det,
            &self.prep.ae,
            &oracle,
            &self.users,
            self.cfg.eval.objective,
            &self.cfg.alm,
        )?;
        let counts = l.data.counts();
        let row = IterationMetrics {
            iteration,
            labels: l.data.len(),
            positives: counts.positive,
            negatives: counts.negative,
            boundary: counts.boundary,
            detection,
            validation_accuracy,
            handling: handling_metrics(&records),
            near_boundary_projected: near.map(|n| n.0),
            near_boundary_uniform: near.map(|n| n.1),
            final_train_ce: log.last().map_or(f64::NAN, |e| e.train_ce),
        };
        log::debug!("evaluation took {:.1?}", clock.elapsed());
        log::info!(
            "seed {} {} iter {iteration}: {} labels, acc {:.4}, fnr {:.4}, handled {:.3}",
            self.seed,
            l.method,
            row.labels,
            row.detection.accuracy,
            row.detection.fnr,
            row.handling.success_rate
        );
        l.run.rows.push(row);
        l.run.detectors.push(l.det.clone());
        l.run.handling.push(records);
        l.run.train_logs.push(log);
        Ok(())
    }
}

/// Grows the bootstrap size over `sizes` and returns the elbow of test
/// accuracy, plus the measured curve.
fn grow_init(ctx: &SeedContext<'_>, sizes: &[usize]) -> Result<(usize, Vec<(usize, f64)>)> {
    let oracle = ctx.prep.oracle();
    let largest = *sizes.last().expect("sizes checked by config validation");
    let pool = bootstrap(largest, &ctx.prep.bx, &oracle, stream(ctx.seed, GROWTH))?;
    let mut curve = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut data = CollisionDataset::new(ctx.cfg.active.eps);
        data.extend(pool[..n].to_vec(), Origin::Bootstrap, 0, &mut ChaCha8Rng::seed_from_u64(stream(ctx.seed, SPLIT)));
        let (det, _) = ctx.bootstrap_train(&data, true)?;
        curve.push((n, evaluate_detector(&det, &ctx.test)?.accuracy));
    }
    let xs: Vec<f64> = curve.iter().map(|c| c.0 as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let elbow = elbow_point(&xs, &ys)?;
    log::info!("seed {}: bootstrap size elbow at {} (found: {})", ctx.seed, elbow.x, elbow.found);
    Ok((sizes[elbow.index], curve))
}

/// Runs every configured method for one seed.
pub fn run_seed(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let a = &cfg.active;
    let oracle = prep.oracle();
    let clock = Instant::now();
    let test = oracle.label_batch(&prep.bx.sample_uniform(cfg.eval.n_test, stream(seed, TEST)))?;
    let users = penetrating_users(&prep.bx, &oracle, cfg.eval.n_handle, stream(seed, USERS))?;
    log::debug!("test set and users labeled in {:.1?}", clock.elapsed());
    let ctx = SeedContext {
        cfg,
        prep,
        seed,
        test,
        users,
    };
    let (n_init, growth) = if a.init_growth.is_empty() {
        (a.n_init, Vec::new())
    } else {
        grow_init(&ctx, &a.init_growth)?
    };

    let boot = bootstrap(n_init, &prep.bx, &oracle, stream(seed, BOOT))?;
    let mut base = CollisionDataset::new(a.eps);
    base.extend(boot, Origin::Bootstrap, 0, &mut ChaCha8Rng::seed_from_u64(stream(seed, SPLIT)));

    let mut learners: Vec<Learner> = Vec::new();
    let mut checks = SampleChecks::default();
    let with_bd = cfg.methods.iter().any(|m| m.boundary());
    let clock = Instant::now();
    let bd = if with_bd { Some(ctx.bootstrap_train(&base, true)?) } else { None };
    log::debug!("bootstrap training took {:.1?}", clock.elapsed());
    for &method in &cfg.methods {
        let (det, log) = match (method.boundary(), &bd) {
            (true, Some((d, l))) => (d.clone(), l.clone()),
            _ => ctx.bootstrap_train(&base, false)?,
        };
        let mut l = Learner {
            method,
            det,
            data: base.clone(),
            run: MethodRun {
                method,
                rows: Vec::new(),
                detectors: Vec::new(),
                handling: Vec::new(),
                dataset: CollisionDataset::new(a.eps),
                train_logs: Vec::new(),
            },
        };
        let boot_samples: Vec<CollisionSample> = l.data.entries.iter().map(|e| e.sample.clone()).collect();
        checks.check(&boot_samples, a.eps, &l.det)?;
        // the boundary methods start from the same detector, so iteration 0 is shared
        match learners.iter().find(|p| p.method.boundary() && method.boundary()) {
            Some(p) => {
                l.run.rows.push(p.run.rows[0].clone());
                l.run.detectors.push(l.det.clone());
                l.run.handling.push(p.run.handling[0].clone());
                l.run.train_logs.push(log);
            }
            None => ctx.evaluate(&mut l, 0, None, log)?,
        }
        learners.push(l);
    }

    for it in 1..=a.iterations {
        // one uniform stream shared by both baselines
        let needs_uniform = learners.iter().any(|l| l.method != Method::ActiveBd);
        let uniform = if needs_uniform {
            oracle.label_batch(&prep.bx.sample_uniform(a.n_aug, stream(seed, UNIFORM + it as u64)))?
        } else {
            Vec::new()
        };
        for l in &mut learners {
            let split_seed = stream(seed, SPLIT + 1000 * it as u64);
            let near = if l.method == Method::ActiveBd {
                let codes = l.data.codes();
                let agg = aggregate(
                    &codes,
                    &l.det,
                    &prep.bx,
                    &oracle,
                    a.n_aug,
                    &cfg.projection,
                    stream(seed, AUG + it as u64),
                )?;
                let near = (
                    near_boundary_fraction(&agg.projected, a.eps),
                    near_boundary_fraction(&agg.uniform, a.eps),
                );
                checks.check(&agg.projected, a.eps, &l.det)?;
                checks.check(&agg.uniform, a.eps, &l.det)?;
                let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
                l.data.extend(agg.projected, Origin::Projected, it, &mut rng);
                l.data.extend(agg.uniform, Origin::Uniform, it, &mut rng);
                Some(near)
            } else {
                checks.check(&uniform, a.eps, &l.det)?;
                l.data
                    .extend(uniform.clone(), Origin::Uniform, it, &mut ChaCha8Rng::seed_from_u64(split_seed));
                None
            };
            let train = l.data.train();
            let clock = Instant::now();
            let log = model_update(
                &mut l.det,
                &train,
                a.eps,
                &cfg.loss,
                l.method.boundary(),
                &a.fine_tune,
                stream(seed, TRAIN + 1000 * it as u64),
            )?;
            log::debug!("{} fine-tuning took {:.1?}", l.method, clock.elapsed());
            let expected = n_init + it * a.n_aug;
            if l.data.len() != expected {
                bail!("{}: dataset has {} labels, expected {expected}", l.method, l.data.len());
            }
            ctx.evaluate(l, it, near, log)?;
        }
    }

    checks.check(&ctx.test, a.eps, &learners[0].det)?;
    checks.check(&ctx.users, a.eps, &learners[0].det)?;
    let methods = learners
        .into_iter()
        .map(|mut l| {
            l.run.dataset = l.data;
            (l.method, l.run)
        })
        .collect();
    Ok(SeedRun {
        seed,
        n_init,
        growth,
        methods,
        checks,
        test: ctx.test,
        users: ctx.users,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("runs").join(format!("seed-{seed}"))
}

/// Persists a seed's config copy, manifest, checkpoints and metrics CSVs.
pub fn write_seed_run(out: &Path, cfg: &ExperimentConfig, run: &SeedRun) -> Result<PathBuf> {
    let dir = seed_dir(out, run.seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut manifest = serde_json::json!({
        "seed": run.seed,
        "n_init": run.n_init,
        "n_test": run.test.len(),
        "n_handle": run.users.len(),
        "checks": run.checks,
        "growth": run.growth,
        "methods": {},
    });
    for (m, mr) in &run.methods {
        let mdir = dir.join(m.slug());
        fs::create_dir_all(&mdir)?;
        fs::write(mdir.join("metrics.csv"), metrics_csv(&mr.rows))?;
        for (it, (det, recs)) in mr.detectors.iter().zip(&mr.handling).enumerate() {
            save_checkpoint(&mdir, &format!("detector-{it}"), &det.to_checkpoint())?;
            fs::write(mdir.join(format!("handling-{it}.csv")), handle_csv(recs))?;
        }
        let mut train_csv = String::from("iteration,epoch,pd,rank,ce,boundary,total,train_ce\n");
        for (it, log) in mr.train_logs.iter().enumerate() {
            for e in log {
                let t = &e.terms;
                train_csv.push_str(&format!(
                    "{it},{},{},{},{},{},{},{}\n",
                    e.epoch, t.pd, t.rank, t.ce, t.boundary, t.total, e.train_ce
                ));
            }
        }
        fs::write(mdir.join("train.csv"), train_csv)?;
        mr.dataset
            .save(&mdir, "dataset", serde_json::json!({ "seed": run.seed, "method": m.name() }))?;
        manifest["methods"][m.name()] = serde_json::json!({
            "iterations": mr.rows.len(),
            "labels": mr.rows.last().map(|r| r.labels),
        });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(dir)
}

/// Detector checkpoints of a persisted run, in iteration order.
pub fn load_detectors(out: &Path, seed: u64, method: Method) -> Result<Vec<Detector>> {
    let mdir = seed_dir(out, seed).join(method.slug());
    let mut dets = Vec::new();
    while mdir.join(format!("detector-{}.json", dets.len())).exists() {
        let ck = load_checkpoint(&mdir, &format!("detector-{}", dets.len()))?;
        dets.push(Detector::from_checkpoint(ck)?);
    }
    if dets.is_empty() {
        bail!("no detector checkpoints in {}", mdir.display());
    }
    Ok(dets)
}

/// Loads a persisted run's config copy.
pub fn load_run_config(out: &Path, seed: u64) -> Result<ExperimentConfig> {
    let path = seed_dir(out, seed).join("config.toml");
    ExperimentConfig::load(&path).with_context(|| format!("run config {}", path.display()))
}
