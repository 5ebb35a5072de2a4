use serde::{Deserialize, Serialize};

use super::instance::{instance_conf_against, key_outputs};
use super::AttributionConfig;
use crate::diffmodel::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::keyselect::KeySampleSet;

/// Histogram ranges `[lo, hi)`. Distances outside every range are reported in
/// the `other` column.
pub const HISTOGRAM_BINS: [(f64, f64); 5] = [(0.0, 0.1), (0.1, 0.15), (0.15, 0.2), (0.25, 0.3), (0.3, 0.4)];

/// Share of distances per bin, plus their average and minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub fractions: [f64; 5],
    pub other: f64,
    pub average: f64,
    pub best: f64,
    pub count: usize,
}

impl DistanceHistogram {
    pub fn from_distances(distances: &[f32]) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::InsufficientData("no distances to tabulate".into()));
        }
        let n = distances.len() as f64;
        let mut fractions = [0.0; 5];
        let mut binned = 0usize;
        for (slot, &(lo, hi)) in HISTOGRAM_BINS.iter().enumerate() {
            let c = distances.iter().filter(|&&d| (d as f64) >= lo && (d as f64) < hi).count();
            binned += c;
            fractions[slot] = c as f64 / n;
        }
        let average = distances.iter().map(|&d| d as f64).sum::<f64>() / n;
        let best = distances.iter().fold(f64::INFINITY, |m, &d| m.min(d as f64));
        Ok(Self {
            fractions,
            other: (distances.len() - binned) as f64 / n,
            average,
            best,
            count: distances.len(),
        })
    }

    pub fn header() -> String {
        let mut cols: Vec<String> = HISTOGRAM_BINS.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect();
        cols.extend(["other".into(), "average".into(), "best".into()]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.fractions.iter().map(|f| format!("{f:.3}")).collect();
        cols.push(format!("{:.3}", self.other));
        cols.push(format!("{:.3}", self.average));
        cols.push(format!("{:.3}", self.best));
        cols.join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub delta0: f64,
    /// Innocent 10th percentile.
    pub innocent_p10: f64,
    /// Infringing 90th percentile.
    pub infringing_p90: f64,
    /// Set when the populations overlapped and the best-F1 fallback was used.
    pub warning: Option<String>,
    pub innocent: DistanceHistogram,
    pub infringing: DistanceHistogram,
    pub innocent_distances: Vec<f32>,
    pub infringing_distances: Vec<f32>,
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted values.
pub fn percentile(values: &[f32], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty list");
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Picks δ₀ from pooled distances of known-innocent and known-infringing
/// suspects: the midpoint of the gap between the innocent 10th percentile and
/// the infringing 90th percentile, or the best-F1 threshold when there is no
/// gap.
pub fn delta0_from_distances(innocent: &[f32], infringing: &[f32]) -> Result<Calibration> {
    if innocent.is_empty() || infringing.is_empty() {
        return Err(Error::InsufficientData("calibration needs distances from both populations".into()));
    }
    let innocent_p10 = percentile(innocent, 0.1);
    let infringing_p90 = percentile(infringing, 0.9);
    let (delta0, warning) = if innocent_p10 > infringing_p90 {
        ((innocent_p10 + infringing_p90) / 2.0, None)
    } else {
        let t = best_f1_threshold(innocent, infringing);
        (
            t,
            Some(format!(
                "populations overlap (innocent p10 {innocent_p10:.4} <= infringing p90 {infringing_p90:.4}); using best-F1 threshold"
            )),
        )
    };
    Ok(Calibration {
        delta0,
        innocent_p10,
        infringing_p90,
        warning,
        innocent: DistanceHistogram::from_distances(innocent)?,
        infringing: DistanceHistogram::from_distances(infringing)?,
        innocent_distances: innocent.to_vec(),
        infringing_distances: infringing.to_vec(),
    })
}

/// Threshold maximizing F1 of "distance < threshold ⇒ infringing", scanned
/// over midpoints between consecutive distinct pooled distances; the smaller
/// threshold wins ties.
fn best_f1_threshold(innocent: &[f32], infringing: &[f32]) -> f64 {
    let mut pooled: Vec<f64> = innocent.iter().chain(infringing).map(|&d| d as f64).collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut candidates = Vec::with_capacity(pooled.len() + 1);
    candidates.push(pooled[0] / 2.0);
    for w in pooled.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(pooled[pooled.len() - 1] + 1e-6);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for t in candidates {
        let tp = infringing.iter().filter(|&&d| (d as f64) < t).count() as f64;
        let fp = innocent.iter().filter(|&&d| (d as f64) < t).count() as f64;
        let fneg = infringing.len() as f64 - tp;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    best.1
}

/// Pools key-sample distances of reference suspects against `source` and
/// derives δ₀ from them.
pub fn calibrate_delta0(
    source: &ModelCheckpoint,
    innocent_refs: &[&ModelCheckpoint],
    infringing_refs: &[&ModelCheckpoint],
    keys: &KeySampleSet,
    cfg: &AttributionConfig,
) -> Result<Calibration> {
    if innocent_refs.is_empty() || infringing_refs.is_empty() {
        return Err(Error::InsufficientData(
            "calibration needs at least one innocent and one infringing reference".into(),
        ));
    }
    keys.check_source(&source.digest()?)?;
    let source_outputs = key_outputs(source, keys, cfg.samples_per_prompt)?;
    let pool = |refs: &[&ModelCheckpoint]| -> Result<Vec<f32>> {
        let mut out = Vec::new();
        for m in refs {
            out.extend(instance_conf_against(&source_outputs, m, keys, cfg)?.distances);
        }
        Ok(out)
    };
    let innocent = pool(innocent_refs)?;
    let infringing = pool(infringing_refs)?;
    let cal = delta0_from_distances(&innocent, &infringing)?;
    if let Some(w) = &cal.warning {
        log::warn!("{w}");
    }
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_constants_give_midpoint() {
        let cal = delta0_from_distances(&[0.2; 10], &[0.1; 10]).unwrap();
        assert!((cal.delta0 - 0.15).abs() < 1e-7);
        assert!(cal.warning.is_none());
    }

    #[test]
    fn overlap_falls_back_with_warning() {
        let inn = [0.1, 0.2, 0.3, 0.05];
        let inf = [0.1, 0.12, 0.25, 0.07];
        let cal = delta0_from_distances(&inn, &inf).unwrap();
        assert!(cal.warning.is_some());
        assert!(cal.delta0 > 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((percentile(&[0.0, 1.0], 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn histogram_accounts_for_every_distance() {
        let h = DistanceHistogram::from_distances(&[0.05, 0.12, 0.22, 0.27, 0.5]).unwrap();
        assert_eq!(h.fractions, [0.2, 0.2, 0.0, 0.2, 0.0]);
        assert!((h.other - 0.4).abs() < 1e-12);
        assert!((h.best - 0.05).abs() < 1e-7);
    }
}
