use serde::{Deserialize, Serialize};

use super::instance::{conf_from_distances, instance_verdict, InstanceResult};
use super::statistical::{verdict_from_scores, StatisticalResult};
use super::AttributionConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSection {
    pub distances: Vec<f32>,
    pub conf: f64,
    pub infringing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticalSection {
    pub discriminator_digest: String,
    pub scores: Vec<f64>,
    pub model_score: f64,
    pub res: u8,
}

/// Everything behind one attribution decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub source_digest: String,
    pub suspect_digest: String,
    pub keys_digest: String,
    pub config: AttributionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistical: Option<StatisticalSection>,
}

impl AttributionReport {
    pub fn instance_section(result: &InstanceResult, cfg: &AttributionConfig) -> InstanceSection {
        InstanceSection {
            distances: result.distances.clone(),
            conf: result.conf,
            infringing: instance_verdict(result.conf, cfg.delta),
        }
    }

    pub fn statistical_section(result: &StatisticalResult, discriminator_digest: &str) -> StatisticalSection {
        StatisticalSection {
            discriminator_digest: discriminator_digest.to_string(),
            scores: result.scores.clone(),
            model_score: result.model_score,
            res: result.res,
        }
    }

    /// Infringing under whichever verdicts are present.
    pub fn infringing(&self) -> bool {
        self.instance.as_ref().is_some_and(|s| s.infringing) || self.statistical.as_ref().is_some_and(|s| s.res == 1)
    }

    /// Recomputes both verdicts from the stored distances and scores.
    pub fn reverdict(&self) -> Result<AttributionReport> {
        let mut out = self.clone();
        if let Some(s) = out.instance.as_mut() {
            s.conf = conf_from_distances(&s.distances, self.config.delta0);
            s.infringing = instance_verdict(s.conf, self.config.delta);
        }
        if let Some(s) = out.statistical.as_mut() {
            let r = verdict_from_scores(s.scores.clone())?;
            s.model_score = r.model_score;
            s.res = r.res;
        }
        Ok(out)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let r: AttributionReport = serde_json::from_str(text)?;
        if r.instance.is_none() && r.statistical.is_none() {
            return Err(Error::Format("report carries no verdict".into()));
        }
        Ok(r)
    }

    /// One-line summary for terminals.
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if let Some(s) = &self.instance {
            parts.push(format!(
                "instance conf={:.3} verdict={}",
                s.conf,
                if s.infringing { "infringing" } else { "innocent" }
            ));
        }
        if let Some(s) = &self.statistical {
            parts.push(format!(
                "statistical score={:.3} verdict={}",
                s.model_score,
                if s.res == 1 { "infringing" } else { "innocent" }
            ));
        }
        parts.join("; ")
    }
}
