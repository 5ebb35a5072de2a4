//! Command implementations over an [`ArtifactStore`].
//!
//! Shared models (base, source, innocent reference) are looked up by name and
//! reused when their provenance matches what the current config would
//! produce; otherwise they are trained and stored. Every output embeds the
//! digests of the artifacts it was derived from.

use std::path::PathBuf;

use provlab::attribution::{
    build_shadow_ensemble, instance_conf, statistical_verdict, train_discriminator, AttributionConfig,
    AttributionReport, Calibration, FitConfig, ShadowPools, SuspectSpec, TrainedDiscriminator,
};
use provlab::dataset;
use provlab::diffmodel::{ModelCheckpoint, TrainConfig};
use provlab::evalharness::{
    base_dataset, calibrate, cell_seed, delta0_table, histogram_csv, run_n_sweep, run_rho_sweep,
    run_statistical_eval, select_keys, source_dataset, train_base, train_innocent_reference, train_source, Lab,
    SuspectGrid,
};
use provlab::keyselect::{KeySampleSet, Strategy};
use provlab::seeds;
use provlab::synthworld::{LabeledPair, WorldConfig};
use provlab::{Error, Result};

use crate::config::RunConfig;
use crate::store::{ArtifactStore, Kind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Instance,
    Statistical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    RhoSweep,
    NSweep,
    Delta0Table,
    StatisticalEval,
}

/// What a command produced.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// One-line summary for standard output.
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
    /// Set by `attribute`.
    pub infringing: Option<bool>,
}

pub struct Context {
    pub cfg: RunConfig,
    pub store: ArtifactStore,
    world: WorldConfig,
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

impl Context {
    pub fn new(cfg: RunConfig, store: ArtifactStore) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.plan.world.build()?;
        store.put("config", Kind::Config, cfg.to_text().as_bytes())?;
        Ok(Self { cfg, store, world })
    }

    fn put_checkpoint(&self, name: &str, model: &ModelCheckpoint) -> Result<(String, PathBuf)> {
        self.store.put(name, Kind::Checkpoint, &model.to_bytes()?)
    }

    fn put_dataset(&self, name: &str, data: &[LabeledPair]) -> Result<String> {
        Ok(self.store.put(name, Kind::Dataset, &dataset::encode(&self.world, data)?)?.0)
    }

    /// The stored checkpoint `name` when its provenance matches, else a fresh
    /// one from `train`.
    fn reuse_or_train(
        &self,
        name: &str,
        expected_seed: u64,
        expected_dataset: &str,
        expected_train: &TrainConfig,
        train: impl FnOnce() -> Result<ModelCheckpoint>,
    ) -> Result<ModelCheckpoint> {
        if let Some((_, bytes)) = self.store.get_named(name)? {
            let m = ModelCheckpoint::from_bytes(&bytes)?;
            if m.world == self.world
                && m.provenance.train_seed == expected_seed
                && m.provenance.dataset_digest == expected_dataset
                && m.provenance.train == *expected_train
            {
                return Ok(m);
            }
        }
        let m = train()?;
        self.put_checkpoint(name, &m)?;
        Ok(m)
    }

    pub fn base(&self) -> Result<ModelCheckpoint> {
        let plan = &self.cfg.plan;
        let data = base_dataset(&self.world, plan, self.cfg.seed)?;
        let digest = self.put_dataset("data/base", &data)?;
        let seed = seeds::derive(self.cfg.seed, "lab/base", 0);
        self.reuse_or_train("base", seed, &digest, &plan.base_train, || {
            train_base(&self.world, plan, &data, self.cfg.seed)
        })
    }

    pub fn source_data(&self) -> Result<(Vec<LabeledPair>, String)> {
        let data = source_dataset(&self.world, &self.cfg.plan, self.cfg.seed)?;
        let digest = self.put_dataset("data/source", &data)?;
        Ok((data, digest))
    }

    pub fn default_source(&self) -> Result<ModelCheckpoint> {
        let (data, digest) = self.source_data()?;
        let seed = seeds::derive(self.cfg.seed, "lab/source", 0);
        self.reuse_or_train("source", seed, &digest, &self.cfg.plan.source_train, || {
            train_source(&self.world, &self.cfg.plan, &data, self.cfg.seed)
        })
    }

    pub fn innocent_reference(&self, base: &ModelCheckpoint) -> Result<ModelCheckpoint> {
        let name = "innocent-reference";
        if let Some((_, bytes)) = self.store.get_named(name)? {
            let m = ModelCheckpoint::from_bytes(&bytes)?;
            if m.provenance.parent.as_deref() == Some(base.digest()?.as_str())
                && m.provenance.train_seed == seeds::derive(self.cfg.seed, "lab/innocent-reference", 0)
                && m.provenance.train == self.cfg.plan.finetune
            {
                return Ok(m);
            }
        }
        let m = train_innocent_reference(base, &self.cfg.plan, self.cfg.seed)?;
        self.put_checkpoint(name, &m)?;
        Ok(m)
    }

    /// A source checkpoint from a file or store name (the default source
    /// when absent) plus its training data, found by digest in the store.
    pub fn source(&self, reference: Option<&str>) -> Result<(ModelCheckpoint, Vec<LabeledPair>)> {
        let model = match reference {
            None => self.default_source()?,
            Some(r) => ModelCheckpoint::from_bytes(&self.store.resolve(r, Kind::Checkpoint)?.1)?,
        };
        if model.world != self.world {
            return Err(Error::WorldMismatch("source checkpoint belongs to another world".into()));
        }
        let wanted = &model.provenance.dataset_digest;
        let bytes = match self.store.get(Kind::Dataset, wanted) {
            Ok(b) => b,
            Err(_) => {
                let (data, digest) = self.source_data()?;
                if &digest != wanted {
                    return Err(Error::InsufficientData(format!(
                        "training data {} of the source is not in the store",
                        short(wanted)
                    )));
                }
                return Ok((model, data));
            }
        };
        Ok((model, dataset::decode(&bytes, &self.world)?))
    }

    pub fn lab(&self, source: ModelCheckpoint, source_data: Vec<LabeledPair>) -> Result<Lab> {
        let base = self.base()?;
        let innocent_reference = self.innocent_reference(&base)?;
        Ok(Lab {
            plan: self.cfg.plan.clone(),
            seed: self.cfg.seed,
            world: self.world.clone(),
            base,
            source_data,
            source,
            innocent_reference,
        })
    }

    fn keys(&self, reference: Option<&str>, lab: &Lab, strategy: Strategy, n: usize) -> Result<KeySampleSet> {
        let source_digest = lab.source.digest()?;
        if let Some(r) = reference {
            let keys = KeySampleSet::from_text(&String::from_utf8_lossy(&self.store.resolve(r, Kind::Keys)?.1))?;
            keys.check_source(&source_digest)?;
            return Ok(keys);
        }
        let name = format!("keys-{strategy}-{n}");
        if let Some((_, bytes)) = self.store.get_named(&name)? {
            let keys = KeySampleSet::from_text(&String::from_utf8_lossy(&bytes))?;
            let search = (strategy == Strategy::Generate).then_some(self.cfg.plan.search);
            if keys.source_digest == source_digest && keys.search == search {
                return Ok(keys);
            }
        }
        let keys = select_keys(&lab.source, &lab.source_data, strategy, n, &self.cfg.plan.search, self.cfg.seed)?;
        self.store.put(&name, Kind::Keys, keys.to_text()?.as_bytes())?;
        Ok(keys)
    }

    /// δ₀ from calibration when enabled, else the configured value.
    fn delta0(&self, lab: &Lab, keys: &KeySampleSet) -> Result<(f64, Option<Calibration>)> {
        if !self.cfg.plan.calibrate {
            return Ok((self.cfg.plan.attribution.delta0, None));
        }
        let cal = calibrate(lab, keys)?;
        self.store.put(
            &format!("calibration-{}", short(&keys.digest()?)),
            Kind::Report,
            to_json(&cal)?.as_bytes(),
        )?;
        Ok((cal.delta0, Some(cal)))
    }

    pub fn train_source(&self) -> Result<Outcome> {
        self.base()?;
        let source = self.default_source()?;
        let path = self.store.object_path(Kind::Checkpoint, &source.digest()?);
        Ok(Outcome {
            summary: format!("source {} trained on {} pairs", short(&source.digest()?), self.cfg.plan.source_count),
            artifacts: vec![path],
            infringing: None,
        })
    }

    pub fn build_suspect(&self, source_ref: Option<&str>, rho: f64, index: usize) -> Result<Outcome> {
        let (source, data) = self.source(source_ref)?;
        let base = self.base()?;
        let spec = SuspectSpec::with_rho(self.cfg.plan.suspect_size, rho, self.cfg.plan.finetune)?;
        let prompts: Vec<_> = data.iter().map(|p| p.prompt).collect();
        let suspect = provlab::attribution::build_suspect(
            &base,
            &spec,
            Some(&source),
            &prompts,
            cell_seed(self.cfg.seed, "cli/suspect", rho, index),
        )?;
        let (digest, path) = self.put_checkpoint(&format!("suspect-rho{rho}-{index}"), &suspect)?;
        Ok(Outcome {
            summary: format!(
                "suspect {} rho={} ({} own, {} generated)",
                short(&digest),
                spec.rho(),
                spec.own_count,
                spec.generated_count
            ),
            artifacts: vec![path],
            infringing: None,
        })
    }

    pub fn select_keys(&self, source_ref: Option<&str>, strategy: Strategy) -> Result<Outcome> {
        let (source, data) = self.source(source_ref)?;
        let n = self.cfg.plan.attribution.keys;
        let keys = select_keys(&source, &data, strategy, n, &self.cfg.plan.search, self.cfg.seed)?;
        let (digest, path) = self.store.put(&format!("keys-{strategy}-{n}"), Kind::Keys, keys.to_text()?.as_bytes())?;
        Ok(Outcome {
            summary: format!("keys {} strategy={strategy} n={}", short(&digest), keys.len()),
            artifacts: vec![path],
            infringing: None,
        })
    }

    pub fn attribute(
        &self,
        level: Level,
        source_ref: Option<&str>,
        suspect_ref: &str,
        keys_ref: Option<&str>,
    ) -> Result<Outcome> {
        let (source, data) = self.source(source_ref)?;
        let suspect = ModelCheckpoint::from_bytes(&self.store.resolve(suspect_ref, Kind::Checkpoint)?.1)?;
        let lab = self.lab(source, data)?;
        let keys = self.keys(keys_ref, &lab, self.cfg.plan.strategy, self.cfg.plan.attribution.keys)?;
        let mut report = AttributionReport {
            source_digest: lab.source.digest()?,
            suspect_digest: suspect.digest()?,
            keys_digest: keys.digest()?,
            config: self.cfg.plan.attribution,
            instance: None,
            statistical: None,
        };
        match level {
            Level::Instance => {
                let (delta0, _) = self.delta0(&lab, &keys)?;
                let cfg = AttributionConfig {
                    delta0,
                    ..self.cfg.plan.attribution
                };
                report.config = cfg;
                let r = instance_conf(&lab.source, &suspect, &keys, &cfg)?;
                report.instance = Some(AttributionReport::instance_section(&r, &cfg));
            }
            Level::Statistical => {
                let disc = self.discriminator(&lab, &keys)?;
                let disc_digest = provlab::codec::sha256_hex(to_json(&disc)?.as_bytes());
                let r = statistical_verdict(&disc, &suspect, &keys)?;
                report.statistical = Some(AttributionReport::statistical_section(&r, &disc_digest));
            }
        }
        let name = format!(
            "report-{}-{}",
            if level == Level::Instance { "instance" } else { "statistical" },
            short(&report.suspect_digest)
        );
        let (_, path) = self.store.put(&name, Kind::Report, report.to_text()?.as_bytes())?;
        Ok(Outcome {
            summary: report.summary(),
            artifacts: vec![path],
            infringing: Some(report.infringing()),
        })
    }

    fn discriminator(&self, lab: &Lab, keys: &KeySampleSet) -> Result<TrainedDiscriminator> {
        let plan = &self.cfg.plan;
        let pools = ShadowPools::collect(
            &lab.source,
            &lab.innocent_reference,
            &lab.source_data,
            seeds::derive(lab.seed, "stat/pools", 0),
        )?;
        let ensemble = build_shadow_ensemble(
            &lab.base,
            &pools,
            &lab.source.digest()?,
            &lab.innocent_reference.digest()?,
            plan.shadow_size,
            plan.shadow_count,
            &plan.finetune,
            seeds::derive(lab.seed, "stat/shadows", 0),
        )?;
        let (disc, _) = train_discriminator(
            &ensemble,
            keys,
            plan.shadow_split,
            &FitConfig::default(),
            seeds::derive(lab.seed, "stat/split", 0),
        )?;
        self.store.put(
            &format!("discriminator-{}", short(&keys.digest()?)),
            Kind::Discriminator,
            to_json(&disc)?.as_bytes(),
        )?;
        Ok(disc)
    }

    fn table(&self, name: &str, inputs: &[(&str, String)], body: &str) -> Result<PathBuf> {
        let mut text = String::new();
        for (k, v) in inputs {
            text.push_str(&format!("# {k}={v}\n"));
        }
        text.push_str(body);
        Ok(self.store.put(name, Kind::Table, text.as_bytes())?.1)
    }

    pub fn experiment(&self, suite: Suite, source_ref: Option<&str>) -> Result<Outcome> {
        let (source, data) = self.source(source_ref)?;
        let lab = self.lab(source, data)?;
        let plan = &self.cfg.plan;
        let n = plan.attribution.keys;
        let config_digest = self.cfg.digest();
        let source_digest = lab.source.digest()?;
        let mut artifacts = Vec::new();
        let summary;
        match suite {
            Suite::RhoSweep | Suite::Delta0Table => {
                let detect = self.keys(None, &lab, Strategy::Detect, n)?;
                let (delta0, _) = self.delta0(&lab, &detect)?;
                let mut key_sets = vec![detect];
                if suite == Suite::RhoSweep {
                    key_sets.push(self.keys(None, &lab, Strategy::Generate, n)?);
                    key_sets.push(self.keys(None, &lab, Strategy::Random, n)?);
                }
                let mut rhos = vec![0.0];
                rhos.extend(plan.rho_values.iter().copied().filter(|&r| r > 0.0));
                let grid = SuspectGrid::build(&lab, &rhos, plan.repetitions, "sweep")?;
                let sweep = run_rho_sweep(&lab, &grid, &key_sets, delta0)?;
                let mut inputs = vec![
                    ("config", config_digest.clone()),
                    ("source", source_digest.clone()),
                    ("delta0", delta0.to_string()),
                ];
                for k in &key_sets {
                    inputs.push(("keys", k.digest()?));
                }
                if suite == Suite::RhoSweep {
                    artifacts.push(self.table("rho-sweep.csv", &inputs, &sweep.to_csv())?);
                    artifacts.push(
                        self.store
                            .put("rho-sweep-models", Kind::Report, to_json(&sweep)?.as_bytes())?
                            .1,
                    );
                    summary = format!("rho sweep: {} rows, delta0={delta0:.4}", sweep.rows.len());
                } else {
                    let rows = delta0_table(&sweep, Strategy::Detect)?;
                    artifacts.push(self.table("delta0-table.csv", &inputs, &histogram_csv(&rows))?);
                    summary = format!("delta0 table: {} rows, delta0={delta0:.4}", rows.len());
                }
            }
            Suite::NSweep => {
                let max_n = plan.n_values.iter().copied().max().unwrap_or(n);
                let ranked = self.keys(None, &lab, Strategy::Detect, max_n)?;
                let calib_keys = ranked.prefix(n.min(ranked.len()))?;
                let (delta0, _) = self.delta0(&lab, &calib_keys)?;
                let grid = SuspectGrid::build(&lab, &[0.0, 1.0], plan.repetitions, "sweep")?;
                let sweep = run_n_sweep(&lab, &grid, &ranked, &plan.n_values, delta0)?;
                let inputs = [
                    ("config", config_digest),
                    ("source", source_digest),
                    ("keys", ranked.digest()?),
                    ("delta0", delta0.to_string()),
                ];
                artifacts.push(self.table("n-sweep.csv", &inputs, &sweep.to_csv())?);
                summary = format!("n sweep: {} rows, delta0={delta0:.4}", sweep.rows.len());
            }
            Suite::StatisticalEval => {
                let keys = self.keys(None, &lab, plan.strategy, n)?;
                let eval = run_statistical_eval(&lab, &keys)?;
                let inputs = [
                    ("config", config_digest),
                    ("source", source_digest),
                    ("keys", keys.digest()?),
                ];
                artifacts.push(self.table("statistical-eval.csv", &inputs, &eval.to_csv())?);
                artifacts.push(
                    self.store
                        .put("statistical-eval", Kind::Report, to_json(&eval)?.as_bytes())?
                        .1,
                );
                summary = format!(
                    "statistical eval: accuracy={:.3} auc={:.3} tpr@10%fpr={:.3}",
                    eval.accuracy, eval.auc, eval.tpr_at_10_fpr
                );
            }
        }
        Ok(Outcome {
            summary,
            artifacts,
            infringing: None,
        })
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
