use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::judge::{transfer_accuracy, Judge};
use super::metrics::{bleu, sari, sari_sentence, self_bleu, sentence_bleu};
use crate::error::{Error, Result};

/// A corpus-level metric with its per-sentence values and the settings that
/// produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    /// Always `corpus`: BLEU is pooled over the corpus, the others are
    /// means of `per_sentence`.
    pub level: String,
    pub value: f64,
    pub per_sentence: Vec<f64>,
    pub fingerprint: BTreeMap<String, String>,
}

impl EvalReport {
    fn corpus(metric: &str, value: f64, per_sentence: Vec<f64>) -> Self {
        Self {
            metric: metric.into(),
            level: "corpus".into(),
            value,
            per_sentence,
            fingerprint: BTreeMap::new(),
        }
    }

    /// Per-sentence values are smoothed sentence BLEU.
    pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[Vec<T>]) -> Result<Self> {
        let value = bleu(hyps, refs)?;
        let per = hyps
            .iter()
            .zip(refs)
            .map(|(h, r)| sentence_bleu(h.as_ref(), r))
            .collect();
        Ok(Self::corpus("bleu", value, per))
    }

    pub fn self_bleu<S: AsRef<str>, T: AsRef<str>>(inputs: &[S], outputs: &[T]) -> Result<Self> {
        let value = self_bleu(inputs, outputs)?;
        let per = inputs
            .iter()
            .zip(outputs)
            .map(|(i, o)| sentence_bleu(o.as_ref(), &[i.as_ref()]))
            .collect();
        Ok(Self::corpus("self_bleu", value, per))
    }

    pub fn sari<S: AsRef<str>, H: AsRef<str>, T: AsRef<str>>(
        sources: &[S],
        hyps: &[H],
        refs: &[Vec<T>],
    ) -> Result<Self> {
        let value = sari(sources, hyps, refs)?;
        let per = sources
            .iter()
            .zip(hyps)
            .zip(refs)
            .map(|((s, h), r)| sari_sentence(s.as_ref(), h.as_ref(), r))
            .collect();
        Ok(Self::corpus("sari", value, per))
    }

    pub fn accuracy<S: AsRef<str>>(outputs: &[S], target: u8, judge: &Judge) -> Result<Self> {
        let value = transfer_accuracy(outputs, target, judge)?;
        let per = judge
            .predict(outputs)?
            .into_iter()
            .map(|p| if p == Some(target) { 1.0 } else { 0.0 })
            .collect();
        Ok(Self::corpus("accuracy", value, per))
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.fingerprint.insert(key.into(), value.to_string());
        self
    }
}

/// Metrics produced by one sweep configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointMetrics {
    pub accuracy: Option<f64>,
    pub self_bleu: Option<f64>,
    pub bleu: Option<f64>,
    pub sari: Option<f64>,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub sweep_param: String,
    pub value: f64,
    pub accuracy: Option<f64>,
    pub self_bleu: Option<f64>,
    pub bleu: Option<f64>,
    pub sari: Option<f64>,
    pub seconds: f64,
    /// Hash of the trained mapping, or `failed` when the point errored.
    pub checkpoint_hash: String,
    #[serde(skip)]
    pub error: Option<String>,
}

pub const FAILED: &str = "failed";

impl TradeoffPoint {
    pub fn is_failed(&self) -> bool {
        self.checkpoint_hash == FAILED
    }
}

/// Runs `run` once per grid value. A failing point is recorded as a failed
/// row and the sweep continues.
pub fn tradeoff_sweep<F>(param: &str, grid: &[f64], mut run: F) -> Result<Vec<TradeoffPoint>>
where
    F: FnMut(f64) -> Result<PointMetrics>,
{
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let start = Instant::now();
        let res = run(value);
        let seconds = start.elapsed().as_secs_f64();
        let point = match res {
            Ok(m) => TradeoffPoint {
                sweep_param: param.into(),
                value,
                accuracy: m.accuracy,
                self_bleu: m.self_bleu,
                bleu: m.bleu,
                sari: m.sari,
                seconds,
                checkpoint_hash: m.checkpoint_hash,
                error: None,
            },
            Err(e) => {
                log::warn!("sweep point {param}={value} failed: {e}");
                TradeoffPoint {
                    sweep_param: param.into(),
                    value,
                    accuracy: None,
                    self_bleu: None,
                    bleu: None,
                    sari: None,
                    seconds,
                    checkpoint_hash: FAILED.into(),
                    error: Some(e.to_string()),
                }
            }
        };
        points.push(point);
    }
    Ok(points)
}

pub fn write_sweep_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<TradeoffPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `Σ (bleu + accuracy)` over the points of one `λ_adv` setting; failed
/// points and missing values contribute nothing.
pub fn selection_score(points: &[TradeoffPoint]) -> f64 {
    points
        .iter()
        .filter(|p| !p.is_failed())
        .map(|p| p.bleu.unwrap_or(0.0) + p.accuracy.unwrap_or(0.0))
        .sum()
}

/// The `λ_adv` whose sweep has the highest selection score; the first wins
/// ties.
pub fn select_lambda_adv(candidates: &[(f64, Vec<TradeoffPoint>)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (lambda, points) in candidates {
        let s = selection_score(points);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((*lambda, s));
        }
    }
    best.map(|(l, _)| l)
}

/// Adjacent pairs that break a non-decreasing (or non-increasing) order.
pub fn inversions(values: &[f64], increasing: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] })
        .count()
}

/// The successful point whose accuracy is closest to `target`.
pub fn nearest_by_accuracy(points: &[TradeoffPoint], target: f64) -> Option<&TradeoffPoint> {
    points
        .iter()
        .filter(|p| p.accuracy.is_some() && !p.is_failed())
        .min_by(|a, b| {
            let da = (a.accuracy.unwrap() - target).abs();
            let db = (b.accuracy.unwrap() - target).abs();
            da.total_cmp(&db)
        })
}
