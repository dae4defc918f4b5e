//! Evaluation tables: one row per image plus one mean row per
//! (method, dataset) pair, emitted as CSV or JSON.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Quality numbers for one image (or the mean over a set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// dB; `inf` for identical images.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_f1: Option<f64>,
    /// Seconds per image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value `{t}`"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub dataset: String,
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Label used for aggregate rows.
pub const AGGREGATE_ID: &str = "mean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<EvalRow>,
    /// Result ids without a ground-truth partner (and vice versa).
    pub unmatched: Vec<String>,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    pub fn new(config_hash: String, rows: Vec<EvalRow>, unmatched: Vec<String>) -> Self {
        let mut groups: Vec<(String, String)> = Vec::new();
        for r in &rows {
            let key = (r.method.clone(), r.dataset.clone());
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        let aggregates = groups
            .into_iter()
            .map(|(method, dataset)| {
                let members: Vec<&EvalRow> = rows
                    .iter()
                    .filter(|r| r.method == method && r.dataset == dataset)
                    .collect();
                let n = members.len() as f64;
                EvalRow {
                    method,
                    dataset,
                    id: AGGREGATE_ID.to_string(),
                    metrics: MetricReport {
                        psnr: members.iter().map(|r| r.metrics.psnr).sum::<f64>() / n,
                        ssim: members.iter().map(|r| r.metrics.ssim).sum::<f64>() / n,
                        mask_accuracy: mean_opt(members.iter().map(|r| r.metrics.mask_accuracy)),
                        mask_f1: mean_opt(members.iter().map(|r| r.metrics.mask_f1)),
                        wall_time: mean_opt(members.iter().map(|r| r.metrics.wall_time)),
                    },
                }
            })
            .collect();
        EvalReport {
            config_hash,
            rows,
            aggregates,
            unmatched,
        }
    }

    pub fn aggregate(&self, method: &str, dataset: &str) -> Option<&MetricReport> {
        self.aggregates
            .iter()
            .find(|r| r.method == method && r.dataset == dataset)
            .map(|r| &r.metrics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-image rows followed by the aggregate rows.
    pub fn to_csv(&self) -> String {
        let optional = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = String::from("method,dataset,id,psnr,ssim,mask_accuracy,mask_f1,wall_time_s,config_hash\n");
        for r in self.rows.iter().chain(&self.aggregates) {
            let m = &r.metrics;
            let psnr = if m.psnr.is_infinite() { "inf".to_string() } else { format!("{:.6}", m.psnr) };
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{},{},{}\n",
                r.method,
                r.dataset,
                r.id,
                psnr,
                m.ssim,
                optional(m.mask_accuracy),
                optional(m.mask_f1),
                optional(m.wall_time),
                self.config_hash
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, psnr: f64, ssim: f64) -> EvalRow {
        EvalRow {
            method: "m".into(),
            dataset: "d".into(),
            id: id.into(),
            metrics: MetricReport {
                psnr,
                ssim,
                mask_accuracy: None,
                mask_f1: None,
                wall_time: None,
            },
        }
    }

    #[test]
    fn k_rows_plus_one_aggregate() {
        let report = EvalReport::new("h".into(), vec![row("a", 20.0, 0.5), row("b", 30.0, 0.7)], vec![]);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
        let agg = report.aggregate("m", "d").unwrap();
        assert_eq!(agg.psnr, 25.0);
        assert!((agg.ssim - 0.6).abs() < 1e-12);
    }

    #[test]
    fn infinite_psnr_round_trips_through_json() {
        let report = EvalReport::new("h".into(), vec![row("a", f64::INFINITY, 1.0)], vec![]);
        let json = report.to_json();
        assert!(json.contains("\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(report.to_csv().contains(",inf,"));
    }
}
