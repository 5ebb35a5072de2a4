use serde::{Deserialize, Serialize};

use crate::attribution::{
    build_shadow_ensemble, calibrate_delta0, conf_from_distances, instance_conf_against, key_outputs,
    statistical_verdict, train_discriminator, AttributionConfig, Calibration, DistanceHistogram, FitConfig,
    ShadowPools, ShadowSplit,
};
use crate::diffmodel::{generate_batch, prompt_seed, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keyselect::{KeySampleSet, Strategy};
use crate::par;
use crate::seeds;
use crate::simembed::perceptual_similarity;
use crate::synthworld::{render, Prompt, PROMPT_COUNT};

use super::lab::Lab;
use super::metrics::{accuracy, auc, tpr_at_fpr, ScoredModel, ScoredPopulation};

/// Per-cell seed for the `rep`-th suspect at `rho`, under a suite label.
pub fn cell_seed(master: u64, label: &str, rho: f64, rep: usize) -> u64 {
    let millis = (rho * 1000.0).round() as u64;
    seeds::derive(seeds::derive(master, label, millis), "rep", rep as u64)
}

#[derive(Clone, Debug)]
pub struct GridModel {
    pub rho: f64,
    pub rep: usize,
    pub model: ModelCheckpoint,
    pub digest: String,
}

/// Suspects for every `(rho, rep)` cell, in grid order.
#[derive(Clone, Debug)]
pub struct SuspectGrid {
    pub models: Vec<GridModel>,
}

impl SuspectGrid {
    pub fn build(lab: &Lab, rhos: &[f64], repetitions: usize, label: &str) -> Result<Self> {
        let cells: Vec<(f64, usize)> = rhos
            .iter()
            .flat_map(|&r| (0..repetitions).map(move |rep| (r, rep)))
            .collect();
        let models = par::try_map(&cells, |_, &(rho, rep)| {
            let model = lab.suspect(rho, cell_seed(lab.seed, label, rho, rep))?;
            let digest = model.digest()?;
            Ok(GridModel { rho, rep, model, digest })
        })?;
        Ok(Self { models })
    }

    pub fn at(&self, rho: f64) -> impl Iterator<Item = &GridModel> {
        self.models.iter().filter(move |m| m.rho == rho)
    }
}

/// Builds `calibration_models` innocent and aggressive reference suspects
/// and calibrates δ₀ on `keys`.
pub fn calibrate(lab: &Lab, keys: &KeySampleSet) -> Result<Calibration> {
    let count = lab.plan.calibration_models;
    let grid = SuspectGrid::build(lab, &[0.0, 1.0], count, "calibration")?;
    let innocent: Vec<&ModelCheckpoint> = grid.at(0.0).map(|m| &m.model).collect();
    let infringing: Vec<&ModelCheckpoint> = grid.at(1.0).map(|m| &m.model).collect();
    calibrate_delta0(&lab.source, &innocent, &infringing, keys, &lab.plan.attribution)
}

/// One suspect's instance result under one key strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConf {
    pub strategy: Strategy,
    pub rho: f64,
    pub rep: usize,
    pub digest: String,
    pub conf: f64,
    pub distances: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub rho: f64,
    pub mean_conf: f64,
    /// Sample standard deviation (0 for a single model).
    pub std_conf: f64,
    pub models: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSweep {
    pub delta0: f64,
    pub rows: Vec<SweepRow>,
    pub models: Vec<ModelConf>,
}

impl RhoSweep {
    pub fn mean_conf(&self, strategy: Strategy, rho: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.rho == rho)
            .map(|r| r.mean_conf)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,rho,mean_conf,std_conf,models\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{}\n",
                r.strategy, r.rho, r.mean_conf, r.std_conf, r.models
            ));
        }
        out
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Instance conf of every grid suspect under every key set, aggregated per
/// `(strategy, rho)` in grid order.
pub fn run_rho_sweep(lab: &Lab, grid: &SuspectGrid, key_sets: &[KeySampleSet], delta0: f64) -> Result<RhoSweep> {
    let cfg = AttributionConfig {
        delta0,
        ..lab.plan.attribution
    };
    cfg.validate()?;
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for keys in key_sets {
        keys.check_source(&lab.source.digest()?)?;
        let source_outputs = key_outputs(&lab.source, keys, cfg.samples_per_prompt)?;
        let results = par::try_map(&grid.models, |_, m| instance_conf_against(&source_outputs, &m.model, keys, &cfg))?;
        let mut rhos: Vec<f64> = Vec::new();
        for m in &grid.models {
            if !rhos.contains(&m.rho) {
                rhos.push(m.rho);
            }
        }
        for &rho in &rhos {
            let confs: Vec<f64> = grid
                .models
                .iter()
                .zip(&results)
                .filter(|(m, _)| m.rho == rho)
                .map(|(_, r)| r.conf)
                .collect();
            let (mean_conf, std_conf) = mean_std(&confs);
            rows.push(SweepRow {
                strategy: keys.strategy,
                rho,
                mean_conf,
                std_conf,
                models: confs.len(),
            });
        }
        for (m, r) in grid.models.iter().zip(results) {
            models.push(ModelConf {
                strategy: keys.strategy,
                rho: m.rho,
                rep: m.rep,
                digest: m.digest.clone(),
                conf: r.conf,
                distances: r.distances,
            });
        }
    }
    Ok(RhoSweep { delta0, rows, models })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSweepRow {
    pub n: usize,
    pub mean_conf_infringing: f64,
    pub mean_conf_innocent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSweep {
    pub delta0: f64,
    pub rows: Vec<NSweepRow>,
    /// Full-list distances per grid model, in grid order.
    pub distances: Vec<Vec<f32>>,
}

impl NSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mean_conf_infringing,mean_conf_innocent\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4}\n",
                r.n, r.mean_conf_infringing, r.mean_conf_innocent
            ));
        }
        out
    }
}

/// Conf on nested prefixes of one ranked key list. Grid models with `rho > 0`
/// count as infringing.
pub fn run_n_sweep(lab: &Lab, grid: &SuspectGrid, ranked: &KeySampleSet, n_values: &[usize], delta0: f64) -> Result<NSweep> {
    if let Some(&n) = n_values.iter().find(|&&n| n == 0 || n > ranked.len()) {
        return Err(Error::InvalidArgument(format!(
            "key count {n} outside 1..={}",
            ranked.len()
        )));
    }
    let cfg = AttributionConfig {
        delta0,
        ..lab.plan.attribution
    };
    ranked.check_source(&lab.source.digest()?)?;
    let source_outputs = key_outputs(&lab.source, ranked, cfg.samples_per_prompt)?;
    let distances = par::try_map(&grid.models, |_, m| {
        Ok(instance_conf_against(&source_outputs, &m.model, ranked, &cfg)?.distances)
    })?;
    let rows = n_values
        .iter()
        .map(|&n| {
            let mean_for = |infringing: bool| {
                let confs: Vec<f64> = grid
                    .models
                    .iter()
                    .zip(&distances)
                    .filter(|(m, _)| (m.rho > 0.0) == infringing)
                    .map(|(_, d)| conf_from_distances(&d[..n], delta0))
                    .collect();
                mean_std(&confs).0
            };
            NSweepRow {
                n,
                mean_conf_infringing: mean_for(true),
                mean_conf_innocent: mean_for(false),
            }
        })
        .collect();
    Ok(NSweep { delta0, rows, distances })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub label: String,
    pub rho: f64,
    pub histogram: DistanceHistogram,
}

/// Distance histograms per ρ class of a rho sweep, for one strategy.
pub fn delta0_table(sweep: &RhoSweep, strategy: Strategy) -> Result<Vec<HistogramRow>> {
    let mut rhos: Vec<f64> = Vec::new();
    for m in sweep.models.iter().filter(|m| m.strategy == strategy) {
        if !rhos.contains(&m.rho) {
            rhos.push(m.rho);
        }
    }
    rhos.iter()
        .map(|&rho| {
            let pooled: Vec<f32> = sweep
                .models
                .iter()
                .filter(|m| m.strategy == strategy && m.rho == rho)
                .flat_map(|m| m.distances.iter().copied())
                .collect();
            Ok(HistogramRow {
                label: if rho == 0.0 { "innocent".into() } else { "infringing".into() },
                rho,
                histogram: DistanceHistogram::from_distances(&pooled)?,
            })
        })
        .collect()
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = format!("model,rho,{}\n", DistanceHistogram::header());
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.label, r.rho, r.histogram.csv_row()));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticalEval {
    pub accuracy: f64,
    pub auc: f64,
    pub tpr_at_10_fpr: f64,
    pub population: ScoredPopulation,
    pub shadow_split: ShadowSplit,
    pub shadow_digests: Vec<String>,
}

impl StatisticalEval {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("digest,infringing,score\n");
        for m in &self.population.models {
            out.push_str(&format!("{},{},{:.6}\n", m.digest, u8::from(m.infringing), m.score));
        }
        out
    }
}

/// Trains shadows and a discriminator on `keys`, then scores fresh held-out
/// suspects: innocent ones and infringing ones with ρ cycling over the
/// plan's values.
pub fn run_statistical_eval(lab: &Lab, keys: &KeySampleSet) -> Result<StatisticalEval> {
    let plan = &lab.plan;
    if plan.eval_models < 1 {
        return Err(Error::InvalidArgument("at least one held-out suspect per class".into()));
    }
    let source_digest = lab.source.digest()?;
    let pools = ShadowPools::collect(
        &lab.source,
        &lab.innocent_reference,
        &lab.source_data,
        seeds::derive(lab.seed, "stat/pools", 0),
    )?;
    let ensemble = build_shadow_ensemble(
        &lab.base,
        &pools,
        &source_digest,
        &lab.innocent_reference.digest()?,
        plan.shadow_size,
        plan.shadow_count,
        &plan.finetune,
        seeds::derive(lab.seed, "stat/shadows", 0),
    )?;
    let (disc, split) = train_discriminator(
        &ensemble,
        keys,
        plan.shadow_split,
        &FitConfig::default(),
        seeds::derive(lab.seed, "stat/split", 0),
    )?;
    let shadow_digests = ensemble.all().map(|s| s.model.digest()).collect::<Result<Vec<_>>>()?;

    let infringing_rhos: Vec<f64> = plan.rho_values.iter().copied().filter(|&r| r > 0.0).collect();
    if infringing_rhos.is_empty() {
        return Err(Error::InvalidArgument("no positive rho for infringing held-out suspects".into()));
    }
    let mut cells = Vec::new();
    for i in 0..plan.eval_models {
        cells.push((0.0, i));
        cells.push((infringing_rhos[i % infringing_rhos.len()], i));
    }
    let scored = par::try_map(&cells, |_, &(rho, i)| {
        let suspect = lab.suspect(rho, cell_seed(lab.seed, "stat/heldout", rho, i))?;
        let r = statistical_verdict(&disc, &suspect, keys)?;
        Ok((
            ScoredModel {
                score: r.model_score,
                infringing: rho > 0.0,
                digest: suspect.digest()?,
            },
            r.res,
        ))
    })?;
    if scored.iter().any(|(m, _)| shadow_digests.contains(&m.digest)) {
        return Err(Error::InvalidArgument("a held-out suspect coincides with a shadow".into()));
    }
    let preds: Vec<bool> = scored.iter().map(|(_, res)| *res == 1).collect();
    let population = ScoredPopulation::new(scored.into_iter().map(|(m, _)| m).collect());
    let truth: Vec<bool> = population.models.iter().map(|m| m.infringing).collect();
    Ok(StatisticalEval {
        accuracy: accuracy(&preds, &truth)?,
        auc: auc(&population)?,
        tpr_at_10_fpr: tpr_at_fpr(&population, 0.1)?,
        population,
        shadow_split: split,
        shadow_digests,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub hits: usize,
    pub total: usize,
    pub rate: f64,
}

/// For each trained prompt, generates from `model` and checks that its own
/// render is strictly the most similar among itself and `candidates - 1`
/// other prompts drawn uniformly from the whole prompt space.
pub fn retrieval_check(model: &ModelCheckpoint, prompts: &[Prompt], candidates: usize, seed: u64) -> Result<Retrieval> {
    if prompts.is_empty() || candidates < 2 || candidates > PROMPT_COUNT {
        return Err(Error::InvalidArgument("retrieval needs prompts and 2..=1024 candidates".into()));
    }
    let seeds_: Vec<u64> = prompts.iter().map(prompt_seed).collect();
    let generated = generate_batch(model, prompts, &seeds_)?;
    let hits = par::try_map(prompts, |i, p| {
        let mut rng = seeds::rng_for(seed, "retrieval/candidates", i as u64);
        let others: Vec<Prompt> = rand::seq::index::sample(&mut rng, PROMPT_COUNT - 1, candidates - 1)
            .into_iter()
            .map(|j| Prompt::from_index(if j >= p.index() { j + 1 } else { j }))
            .collect::<Result<_>>()?;
        let own = perceptual_similarity(&generated[i], &render(p, &model.world))?.value;
        let mut best_other = f32::NEG_INFINITY;
        for q in &others {
            let img: Image = render(q, &model.world);
            best_other = best_other.max(perceptual_similarity(&generated[i], &img)?.value);
        }
        Ok(own > best_other)
    })?;
    let count = hits.iter().filter(|&&h| h).count();
    Ok(Retrieval {
        hits: count,
        total: prompts.len(),
        rate: count as f64 / prompts.len() as f64,
    })
}
