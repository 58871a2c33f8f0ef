//! Average precision, per-task macro means, and report files.

use std::fmt::Write as _;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::params::Graph;
use crate::sample::PreparedSample;
use crate::scalar::Scalar;
use crate::tape::sigmoid;
use crate::taxonomy::{class_name, class_names, Labels, NUM_CLASSES, NUM_ELEMENTS, RELIABLE_MATERIALS};

/// Non-interpolated step AP. Samples sharing a score form one rank group:
/// the group is admitted at once and its positives are credited at the
/// precision reached after the whole group. `None` when there is no
/// positive label.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    let npos = labels.iter().filter(|&&l| l).count();
    if npos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut hits, mut ap) = (0usize, 0usize, DoubleDouble::ZERO);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_hits = 0;
        while i < order.len() && scores[order[i]] == s {
            group_hits += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        hits += group_hits;
        if group_hits > 0 {
            ap = ap.add(DoubleDouble::ratio((group_hits * hits) as f64, seen as f64));
        }
    }
    Ok(Some(ap.div_round(npos as f64)))
}

/// Unevaluated sum `hi + lo`, enough headroom that the final rounding of a
/// sum of small-denominator fractions lands on the nearest `f64`.
#[derive(Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    /// `num / den` for integer-valued operands; the remainder is exact by FMA.
    fn ratio(num: f64, den: f64) -> Self {
        let hi = num / den;
        let rem = (-hi).mul_add(den, num);
        Self { hi, lo: rem / den }
    }

    fn add(self, o: Self) -> Self {
        let s = self.hi + o.hi;
        let v = s - self.hi;
        let err = (self.hi - (s - v)) + (o.hi - v);
        let lo = err + self.lo + o.lo;
        let hi = s + lo;
        Self { hi, lo: lo - (hi - s) }
    }

    fn div_round(self, den: f64) -> f64 {
        let q = self.hi / den;
        let rem = (-q).mul_add(den, self.hi) + self.lo;
        q + rem / den
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class AP (flat order, elements first) and the macro summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: [Option<f64>; NUM_CLASSES],
    pub map_elements: Option<f64>,
    pub map_materials: Option<f64>,
    pub map_materials_star: Option<f64>,
}

impl EvalReport {
    pub fn from_ap(ap: [Option<f64>; NUM_CLASSES]) -> Self {
        Self {
            map_elements: mean_defined(ap[..NUM_ELEMENTS].iter().copied()),
            map_materials: mean_defined(ap[NUM_ELEMENTS..].iter().copied()),
            map_materials_star: mean_defined(RELIABLE_MATERIALS.iter().map(|&m| ap[NUM_ELEMENTS + m])),
            ap,
        }
    }

    /// Scores `[n][13]` (any monotone scale) against labels.
    pub fn from_scores(scores: &[[f64; NUM_CLASSES]], labels: &[Labels]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::contract("evaluation needs at least one sample"));
        }
        if scores.len() != labels.len() {
            return Err(Error::validation("score and label counts differ"));
        }
        let flat: Vec<[bool; NUM_CLASSES]> = labels.iter().map(Labels::flat).collect();
        let mut ap = [None; NUM_CLASSES];
        for (k, slot) in ap.iter_mut().enumerate() {
            let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let l: Vec<bool> = flat.iter().map(|r| r[k]).collect();
            *slot = average_precision(&s, &l)?;
        }
        Ok(Self::from_ap(ap))
    }

    /// Mean of the two task mAPs, undefined tasks counted as 0.
    pub fn mean_map(&self) -> f64 {
        (self.map_elements.unwrap_or(0.0) + self.map_materials.unwrap_or(0.0)) / 2.0
    }

    pub fn ap_of(&self, name: &str) -> Option<f64> {
        class_names().position(|n| n == name).and_then(|k| self.ap[k])
    }

    pub fn to_json(&self) -> Value {
        let opt = |v: Option<f64>| v.map(Value::from).unwrap_or(Value::Null);
        let mut ap = Map::new();
        for (k, name) in class_names().enumerate() {
            ap.insert(name.to_string(), opt(self.ap[k]));
        }
        let mut root = Map::new();
        root.insert("ap".into(), Value::Object(ap));
        root.insert("map_elements".into(), opt(self.map_elements));
        root.insert("map_materials".into(), opt(self.map_materials));
        root.insert("map_materials_star".into(), opt(self.map_materials_star));
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a report, insisting on exactly this taxonomy in this order.
    pub fn from_json(v: &Value) -> Result<Self> {
        let ap = v
            .get("ap")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::validation("report lacks an `ap` object"))?;
        let keys: Vec<&str> = ap.keys().map(String::as_str).collect();
        if !keys.iter().copied().eq(class_names()) {
            return Err(Error::validation(format!("report classes {keys:?} do not match the taxonomy")));
        }
        let mut out = [None; NUM_CLASSES];
        for (slot, value) in out.iter_mut().zip(ap.values()) {
            *slot = match value {
                Value::Null => None,
                Value::Number(n) => n.as_f64(),
                other => return Err(Error::validation(format!("AP value {other} is not a number"))),
            };
        }
        Ok(Self::from_ap(out))
    }

    pub fn csv_header() -> String {
        let mut h = String::from("model");
        for name in class_names() {
            h.push(',');
            h.push_str(name);
        }
        h.push_str(",map_elements,map_materials,map_materials_star");
        h
    }

    pub fn csv_row(&self, model: &str) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut row = model.to_string();
        for v in self.ap.iter().chain([&self.map_elements, &self.map_materials, &self.map_materials_star]) {
            row.push(',');
            row.push_str(&fmt(*v));
        }
        row
    }

    pub fn to_csv(&self, model: &str) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row(model))
    }
}

/// Sigmoid scores of every sample, flat class order.
pub fn predict<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    samples: &[PreparedSample<T>],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    samples
        .iter()
        .map(|x| {
            let mut g = Graph::inference(model.params());
            let logits = model.forward(&mut g, x)?;
            let mut row = [0.0; NUM_CLASSES];
            let e = g.value(logits.elements).data();
            let m = g.value(logits.materials).data();
            for (slot, &z) in row.iter_mut().zip(e.iter().chain(m)) {
                *slot = sigmoid(z).to_f64_lossy();
            }
            Ok(row)
        })
        .collect()
}

pub fn evaluate<T: Scalar, M: Classifier<T> + ?Sized>(model: &M, samples: &[PreparedSample<T>]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::contract("evaluation needs at least one sample"));
    }
    let scores = predict(model, samples)?;
    let labels: Vec<Labels> = samples.iter().map(|s| s.labels).collect();
    EvalReport::from_scores(&scores, &labels)
}

/// Per-class AP differences against a baseline, in percentage points.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub name: String,
    pub deltas: [Option<f64>; NUM_CLASSES],
}

pub fn compare_reports(baseline: &EvalReport, candidates: &[(String, EvalReport)]) -> Vec<DeltaRow> {
    candidates
        .iter()
        .map(|(name, r)| {
            let mut deltas = [None; NUM_CLASSES];
            for (k, d) in deltas.iter_mut().enumerate() {
                if let (Some(a), Some(b)) = (baseline.ap[k], r.ap[k]) {
                    *d = Some((b - a) * 100.0);
                }
            }
            DeltaRow { name: name.clone(), deltas }
        })
        .collect()
}

/// Signed one-decimal percentage points, `n/a` when undefined.
pub fn format_delta(d: Option<f64>) -> String {
    match d {
        Some(v) => {
            let v = (v * 10.0).round() / 10.0;
            if v == 0.0 {
                "0.0".to_string()
            } else {
                format!("{v:+.1}")
            }
        }
        None => "n/a".to_string(),
    }
}

pub fn format_delta_table(rows: &[DeltaRow]) -> String {
    let mut out = String::from("model");
    for k in 0..NUM_CLASSES {
        let _ = write!(out, "\t{}", class_name(k));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.name);
        for d in r.deltas {
            let _ = write!(out, "\t{}", format_delta(d));
        }
        out.push('\n');
    }
    out
}
