//! Runs the stages of a config and writes the output directory.
//!
//! Layout of `out/`: `manifest.json` (written before any stage runs),
//! `report.json` keyed by stage name, `summary.csv` with one row per
//! reported number, and `<stage>.encoded.raw` plus `<stage>.labels.csv` for
//! encode stages. Encoder parameters are only ever written under
//! `--key-out`, which must lie outside `out/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use instenc_core::families::{compose_families, grow_family, permutation_family, random_family};
use instenc_core::rng::{derive, derive_indexed};
use instenc_core::scores::{decompose_privacy_score, privacy_score, utility_score, Budget, LabelingPrior};
use instenc_core::{EncoderFamily, Universe};
use instenc_neural::attacks::{
    match_pairs, matching_model_train, mmd_attack, normalized_mse, plaintext_attack, reidentification_auc,
    sensitive_feature_attack, AttackConfig, FitConfig, MatchingConfig,
};
use instenc_neural::encoders::stack_samples;
use instenc_neural::learning::{run_setting, ClassifierKind, ClassifierSpec, OwnerImages};
use instenc_neural::synthetic::image_task;
use instenc_neural::{ImageEncoder, ImageEncoderSpec};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::*;
use crate::ingest::{self, ImageData};
use crate::report::{write_json, write_summary, RunManifest, StageSeed, SummaryRow, MANIFEST, REPORT, SUMMARY};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Where encode stages save their encoder; nothing is saved without it.
    pub key_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutput {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub report: Value,
    #[serde(skip)]
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub stages: Vec<StageOutput>,
}

impl RunOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.stages.iter().flat_map(|s| s.rows.iter())
    }
}

fn stage_seeds(config: &ExperimentConfig) -> Vec<StageSeed> {
    config
        .stages()
        .into_iter()
        .map(|(name, e)| StageSeed {
            seed: derive(config.seed, &name),
            kind: e.kind().to_string(),
            name,
        })
        .collect()
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    p.canonicalize().map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
}

/// Runs every stage and writes `manifest.json`, `report.json` and
/// `summary.csv` under `options.out`.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let out = absolute(&options.out)?;
    let key_out = match &options.key_out {
        Some(k) => {
            let k = absolute(k)?;
            if k.starts_with(&out) {
                return Err(CliError::Config(format!("--key-out {} lies inside the output directory", k.display())).into());
            }
            Some(k)
        }
        None => None,
    };
    let seeds = stage_seeds(config);
    let manifest = RunManifest::new(config, seeds.clone())?;
    write_json(&out.join(MANIFEST), &manifest)?;

    let budget = config.budget.map(Budget).unwrap_or_default();
    let mut stages = Vec::new();
    for ((name, experiment), seed) in config.stages().into_iter().zip(&seeds) {
        let ctx = StageContext {
            name: &name,
            seed: seed.seed,
            budget,
            out: &out,
            key_out: key_out.as_deref(),
        };
        let (report, rows) = run_stage(&ctx, experiment).with_context(|| format!("stage `{name}`"))?;
        stages.push(StageOutput {
            name: name.clone(),
            kind: experiment.kind().to_string(),
            seed: seed.seed,
            report,
            rows,
        });
    }

    let report: BTreeMap<&str, &StageOutput> = stages.iter().map(|s| (s.name.as_str(), s)).collect();
    write_json(&out.join(REPORT), &report)?;
    let rows: Vec<SummaryRow> = stages.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    write_summary(&out.join(SUMMARY), &rows)?;
    Ok(RunOutcome { manifest, stages })
}

struct StageContext<'a> {
    name: &'a str,
    seed: u64,
    budget: Budget,
    out: &'a Path,
    key_out: Option<&'a Path>,
}

impl StageContext<'_> {
    fn row(&self, setting: impl Into<String>, task: impl Into<String>, seed: u64, value: f64) -> SummaryRow {
        SummaryRow::new(self.name, setting, task, seed, value)
    }
}

type StageResult = Result<(Value, Vec<SummaryRow>)>;

fn run_stage(ctx: &StageContext, experiment: &Experiment) -> StageResult {
    match experiment {
        Experiment::Score(c) => score_stage(ctx, c),
        Experiment::ComposeSweep(c) => compose_sweep_stage(ctx, c),
        Experiment::Encode(c) => encode_stage(ctx, c),
        Experiment::Attack(c) => attack_stage(ctx, c),
        Experiment::Train(c) => train_stage(ctx, c),
        Experiment::FullPipeline(_) => Err(CliError::Config("pipelines cannot nest".into()).into()),
    }
}

fn load_universe(source: &UniverseSource) -> Result<(Universe, usize)> {
    Ok(match source {
        UniverseSource::Labels { labels, label_count } => (Universe::from_labels(labels, *label_count)?, 0),
        UniverseSource::Scalar { values, labels } => {
            let l: Vec<&str> = labels.iter().map(String::as_str).collect();
            (Universe::scalar(values, &l)?, 0)
        }
        UniverseSource::Csv { path } => (ingest::read_universe_csv(path)?, 0),
        UniverseSource::TokenCsv { path, min_tokens } => ingest::read_token_csv(path, *min_tokens)?,
        UniverseSource::RawTensor { path, labels, pixel_max } => (ingest::read_raw_universe(path, labels, *pixel_max)?, 0),
    })
}

fn load_family(named: &NamedFamily, universe: &Universe, seed: u64) -> Result<EncoderFamily> {
    let base = match &named.family {
        FamilySource::Inline(doc) => EncoderFamily::from_doc(doc)?,
        FamilySource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let doc = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            EncoderFamily::from_doc(&doc)?
        }
        FamilySource::Permutations(kind) => permutation_family(universe, *kind)?,
        FamilySource::Random { codomain, size } => {
            random_family(universe.len(), *codomain, *size, derive(seed, &format!("family {}", named.name)))?
        }
    };
    Ok(match &named.extra {
        Some(doc) => grow_family(&base, EncoderFamily::from_doc(doc)?.encoders().to_vec(), None)?,
        None => base,
    })
}

fn score_stage(ctx: &StageContext, c: &ScoreConfig) -> StageResult {
    let (universe, dropped) = load_universe(&c.universe)?;
    let mut families: Vec<(String, EncoderFamily)> = Vec::new();
    let find = |families: &[(String, EncoderFamily)], name: &str| {
        families
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| CliError::Config(format!("unknown family `{name}`")))
    };
    for f in &c.families {
        if families.iter().any(|(n, _)| *n == f.name) {
            return Err(CliError::Config(format!("family `{}` is defined twice", f.name)).into());
        }
        families.push((f.name.clone(), load_family(f, &universe, ctx.seed)?));
    }
    for comp in &c.compositions {
        let composed = compose_families(&find(&families, &comp.inner)?, &find(&families, &comp.outer)?)?;
        families.push((comp.name.clone(), composed));
    }

    let mut rows = Vec::new();
    let mut per_family = BTreeMap::new();
    for (name, family) in &families {
        let mut scores = Vec::new();
        for &n in &c.n {
            let mut entry = BTreeMap::new();
            entry.insert("n".to_string(), json!(n));
            for m in &c.measures {
                match m {
                    Measure::Privacy => {
                        let r = privacy_score(family, &universe, n, None, ctx.budget)?;
                        rows.push(ctx.row(name, format!("privacy/n={n}"), ctx.seed, r.score_bits));
                        entry.insert("privacy_bits".into(), json!(r.score_bits));
                        entry.insert("privacy_cost".into(), json!(r.cost.to_string()));
                    }
                    Measure::Decomposition => {
                        let d = decompose_privacy_score(family, &universe, n, ctx.budget)?;
                        rows.push(ctx.row(name, format!("h_data/n={n}"), ctx.seed, d.h_data));
                        rows.push(ctx.row(name, format!("h_key_given_data/n={n}"), ctx.seed, d.h_key_given_data));
                        entry.insert("h_data_bits".into(), json!(d.h_data));
                        entry.insert("h_key_given_data_bits".into(), json!(d.h_key_given_data));
                    }
                    Measure::Utility => {
                        let prior = LabelingPrior::all_labelings(universe.len(), universe.label_count())?;
                        let r = utility_score(family, &universe, n, &prior, ctx.budget)?;
                        rows.push(ctx.row(name, format!("utility/n={n}"), ctx.seed, r.score_bits));
                        entry.insert("utility_bits".into(), json!(r.score_bits));
                    }
                }
            }
            scores.push(entry);
        }
        per_family.insert(
            name.clone(),
            json!({
                "size": family.len(),
                "codomain_size": family.codomain_size(),
                "scores": scores,
            }),
        );
    }
    let report = json!({
        "universe_size": universe.len(),
        "dropped_samples": dropped,
        "families": per_family,
    });
    Ok((report, rows))
}

fn compose_sweep_stage(ctx: &StageContext, c: &ComposeSweepConfig) -> StageResult {
    if c.max_domain < 2 || c.max_family < 1 || c.n.is_empty() {
        return Err(CliError::Config("compose sweep needs max_domain ≥ 2, max_family ≥ 1 and some n".into()).into());
    }
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut violations = 0usize;
    for t in 0..c.trials {
        let seed = derive_indexed(ctx.seed, "trial", t as u64);
        let mut r = instenc_core::rng::rng(seed);
        let domain = r.random_range(2..=c.max_domain);
        let labels: Vec<usize> = (0..domain).map(|_| r.random_range(0..2)).collect();
        let n = c.n[t % c.n.len()].min(domain);
        let universe = Universe::from_labels(&labels, 2)?;
        let inner = random_family(domain, domain, r.random_range(1..=c.max_family), derive(seed, "inner"))?;
        let outer = random_family(domain, domain, r.random_range(1..=c.max_family), derive(seed, "outer"))?;
        let composed = compose_families(&inner, &outer)?;
        let score = |f: &EncoderFamily| privacy_score(f, &universe, n, None, ctx.budget).map(|r| r.score_bits);
        let (si, so, sc) = (score(&inner)?, score(&outer)?, score(&composed)?);
        let violated = sc + 1e-9 < si.max(so);
        violations += usize::from(violated);
        let setting = format!("trial{t}");
        rows.push(ctx.row(&setting, "inner", seed, si));
        rows.push(ctx.row(&setting, "outer", seed, so));
        rows.push(ctx.row(&setting, "composed", seed, sc));
        trials.push(json!({
            "seed": seed,
            "labels": labels,
            "n": n,
            "inner": inner.to_doc(),
            "outer": outer.to_doc(),
            "inner_bits": si,
            "outer_bits": so,
            "composed_bits": sc,
            "composed_below_max": violated,
        }));
    }
    rows.push(ctx.row("all", "composed_below_max", ctx.seed, violations as f64));
    Ok((json!({ "trials": trials, "composed_below_max": violations }), rows))
}

fn load_images(source: &ImageSource, seed: u64) -> Result<ImageData> {
    Ok(match source {
        ImageSource::Synthetic(spec) => {
            let s = image_task(&instenc_neural::synthetic::ImageTaskSpec { seed, ..spec.clone() });
            ImageData {
                images: s.images,
                labels: s.labels,
                sensitive: Some(s.sensitive),
            }
        }
        ImageSource::RawTensor { path, labels, pixel_max } => ingest::read_raw_images(path, labels, *pixel_max)?,
    })
}

fn owner_encoder(spec: &ImageEncoderSpec, seed: u64, images: &ImageData) -> Result<ImageEncoder> {
    let mut enc = ImageEncoder::build(&spec.with_seed(seed))?;
    enc.calibrate(&images.images)?;
    Ok(enc)
}

fn encode_stage(ctx: &StageContext, c: &EncodeConfig) -> StageResult {
    let data = load_images(&c.images, derive(ctx.seed, "images"))?;
    let enc = owner_encoder(&c.encoder, derive(ctx.seed, "encoder"), &data)?;
    let sets = enc.encode_batch(&data.images, derive(ctx.seed, "shuffle"))?;
    let stacked = stack_samples(&sets)?;
    let encoded_path = ctx.out.join(format!("{}.encoded.raw", ctx.name));
    stacked.save(&encoded_path).map_err(|e| CliError::Output(format!("{}: {e}", encoded_path.display())))?;
    let labels_path = ctx.out.join(format!("{}.labels.csv", ctx.name));
    let out_err = |e: csv::Error| CliError::Output(format!("{}: {e}", labels_path.display()));
    let mut w = csv::Writer::from_path(&labels_path).map_err(out_err)?;
    w.write_record(["index", "label"]).map_err(out_err)?;
    for (i, l) in data.labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(out_err)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))?;
    let key = match ctx.key_out {
        Some(dir) => {
            let d = dir.join(ctx.name);
            enc.save_dir(&d)?;
            Some(d)
        }
        None => None,
    };
    let rows = vec![
        ctx.row("encoder", "samples", ctx.seed, sets.len() as f64),
        ctx.row("encoder", "set_size", ctx.seed, enc.patches_per_image() as f64),
        ctx.row("encoder", "dim", ctx.seed, enc.out_dim() as f64),
    ];
    let report = json!({
        "samples": sets.len(),
        "set_size": enc.patches_per_image(),
        "dim": enc.out_dim(),
        "encoded": encoded_path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "labels": labels_path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "key_saved": key.is_some(),
    });
    Ok((report, rows))
}

fn require_sensitive(d: &ImageData, which: &str) -> Result<Vec<usize>, CliError> {
    d.sensitive
        .clone()
        .ok_or_else(|| CliError::Input(format!("the {which} images carry no sensitive attribute")))
}

fn attack_stage(ctx: &StageContext, c: &AttackExperiment) -> StageResult {
    if c.repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()).into());
    }
    let mode = match c.mode {
        AttackMode::Mmd => "mmd",
        AttackMode::Sensitive => "sensitive",
        AttackMode::Match => "match",
    };
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for rep in 0..c.repeats {
        let seed = derive_indexed(ctx.seed, "repeat", rep as u64);
        let private = load_images(&c.private, derive(seed, "private"))?;
        let truth = owner_encoder(&c.encoder, derive(seed, "owner encoder"), &private)?;
        let z = truth.encode_batch(&private.images, derive(seed, "publish"))?;
        let run = match c.mode {
            AttackMode::Mmd | AttackMode::Sensitive => {
                let public_src = c
                    .public
                    .as_ref()
                    .ok_or_else(|| CliError::Config(format!("attack mode `{mode}` needs public images")))?;
                let public = load_images(public_src, derive(seed, "public"))?;
                let cfg = AttackConfig {
                    seed: derive(seed, "attack"),
                    ..c.mmd.clone().unwrap_or_else(|| AttackConfig::reference(0))
                };
                let init = truth.fresh(derive(seed, "attack init"))?;
                let (est, report) = mmd_attack(&z, Some(&private.labels), &public.images, Some(&public.labels), &init, &cfg)?;
                let nmse = normalized_mse(&est, &truth, &public.images)?;
                rows.push(ctx.row(mode, "validation_mmd", seed, report.validation_mmd));
                rows.push(ctx.row(mode, "normalized_mse", seed, nmse));
                let mut run = json!({
                    "seed": seed,
                    "validation_mmd": report.validation_mmd,
                    "best_epoch": report.best_epoch,
                    "best_restart": report.best_restart,
                    "normalized_mse": nmse,
                    "loss_curve": report.loss_curve,
                });
                if c.mode == AttackMode::Sensitive {
                    let cls = ClassifierSpec {
                        seed: derive(seed, "sensitive classifier"),
                        ..c.classifier.clone().unwrap_or_else(|| ClassifierSpec::new(ClassifierKind::SetPoolMlp, 0))
                    };
                    let s = sensitive_feature_attack(
                        &est,
                        &public.images,
                        &require_sensitive(&public, "public")?,
                        &z,
                        &require_sensitive(&private, "private")?,
                        &cls,
                    )?;
                    rows.push(ctx.row(mode, "auc_on_z_star", seed, s.auc_on_z_star));
                    rows.push(ctx.row(mode, "auc_on_z", seed, s.auc_on_z));
                    run["auc_on_z_star"] = json!(s.auc_on_z_star);
                    run["auc_on_z"] = json!(s.auc_on_z);
                }
                run
            }
            AttackMode::Match => {
                let n = z.len();
                let cfg = MatchingConfig {
                    seed: derive(seed, "matching"),
                    ..c.matching.clone().unwrap_or(MatchingConfig {
                        iterations: 1000,
                        batch_size: n,
                        lr: 1e-2,
                        embed_dim: 16,
                        references: 8,
                        seed: 0,
                    })
                };
                let architecture = truth.fresh(derive(seed, "architecture"))?;
                let model = matching_model_train(&private.images, &architecture, &cfg)?;
                let auc = reidentification_auc(&model, &private.images, &z)?;
                let pairs = match_pairs(&model, &private.images, &z)?;
                let exact = pairs.iter().enumerate().filter(|&(i, &j)| i == j).count() as f64 / n as f64;
                let matched: Vec<_> = pairs.iter().map(|&j| z[j].clone()).collect();
                let fit = FitConfig {
                    seed: derive(seed, "plaintext"),
                    ..c.plaintext.clone().unwrap_or(FitConfig {
                        epochs: 100,
                        lr: 1e-2,
                        batch_size: 32,
                        heldout_fraction: 0.2,
                        seed: 0,
                    })
                };
                let init = truth.fresh(derive(seed, "plaintext init"))?;
                let (_, p) = plaintext_attack(&private.images, &matched, &init, &fit)?;
                rows.push(ctx.row(mode, "reidentification_auc", seed, auc));
                rows.push(ctx.row(mode, "exact_match_rate", seed, exact));
                rows.push(ctx.row(mode, "plaintext_mse_ratio", seed, p.ratio));
                json!({
                    "seed": seed,
                    "reidentification_auc": auc,
                    "exact_match_rate": exact,
                    "plaintext": p,
                })
            }
        };
        runs.push(run);
    }
    Ok((json!({ "mode": mode, "runs": runs }), rows))
}

fn train_stage(ctx: &StageContext, c: &TrainExperiment) -> StageResult {
    if c.repeats == 0 || c.settings.is_empty() {
        return Err(CliError::Config("train needs repeats ≥ 1 and at least one setting".into()).into());
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for rep in 0..c.repeats {
        let seed = derive_indexed(ctx.seed, "repeat", rep as u64);
        let owners = c
            .owners
            .iter()
            .enumerate()
            .map(|(i, src)| {
                let d = load_images(src, derive_indexed(seed, "owner", i as u64))?;
                Ok(OwnerImages {
                    images: d.images,
                    labels: d.labels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for &setting in &c.settings {
            let r = run_setting(setting, &owners, &c.encoding, &c.classifier, c.split, seed)?;
            for (i, a) in r.per_owner_auc.iter().enumerate() {
                if let Some(a) = a {
                    rows.push(ctx.row(setting.name(), format!("owner{i}"), seed, *a));
                }
            }
            rows.push(ctx.row(setting.name(), "mean", seed, r.mean_auc));
            runs.push(r);
        }
    }
    Ok((json!({ "runs": runs }), rows))
}
