//! Confusion matrices, classification reports, ROC curves and their CSV forms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Exact rationals for rounding that matches hand arithmetic.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: u128,
    den: u128,
}

impl Ratio {
    fn new(num: u128, den: u128) -> Self {
        if den == 0 || num == 0 {
            return Ratio { num: 0, den: 1 };
        }
        let g = gcd(num, den);
        Ratio { num: num / g, den: den / g }
    }

    fn add(self, o: Ratio) -> Ratio {
        let g = gcd(self.den, o.den);
        let l = self.den / g * o.den;
        Ratio::new(self.num * (l / self.den) + o.num * (l / o.den), l)
    }

    fn scale(self, mul: u128, div: u128) -> Ratio {
        let a = gcd(mul, self.den).max(1);
        let b = gcd(self.num, div).max(1);
        Ratio::new((self.num / b) * (mul / a), (self.den / a) * (div / b))
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Half-away-from-zero rounding to two decimals.
    fn round2(self) -> f64 {
        ((200 * self.num + self.den) / (2 * self.den)) as f64 / 100.0
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Half-away-from-zero rounding of an arbitrary float to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

// ---------------------------------------------------------------------------

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, labels: Vec<String>) -> Result<Self, EvalError> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Input("confusion matrix must be square".into()));
        }
        if labels.len() != k {
            return Err(EvalError::Input(format!("{} labels for a {k}x{k} matrix", labels.len())));
        }
        Ok(Self { counts, labels })
    }

    pub fn with_labels(self, labels: Vec<String>) -> Result<Self, EvalError> {
        ConfusionMatrix::from_counts(self.counts, labels)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

fn default_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

/// `counts[i][j]` = number of samples with true class `i` predicted as `j`.
pub fn confusion(true_labels: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if true_labels.len() != predicted.len() {
        return Err(EvalError::Input(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(EvalError::Input(format!("label {} out of range for {k} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, default_labels(k))
}

/// Each non-zero row divided by its sum; zero rows stay zero.
pub fn normalize_rows(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    cm.counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter().map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 }).collect()
        })
        .collect()
}

/// A metric at full precision and rounded half-away-from-zero to 2 d.p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub rounded: f64,
}

impl Rate {
    fn from_ratio(r: Ratio) -> Self {
        Self {
            value: r.value(),
            rounded: r.round2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: Rate,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total_support: u64,
}

/// Precision `tp/colsum`, recall `tp/rowsum`, F1 the harmonic mean; each is 0
/// when its denominator is 0. Macro averages are unweighted means, weighted
/// averages use the class supports. Computed in exact rational arithmetic.
pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport, EvalError> {
    let k = cm.k();
    if k < 2 {
        return Err(EvalError::Input("a report needs at least two classes".into()));
    }
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Input("confusion matrix is empty".into()));
    }
    let mut per = Vec::with_capacity(k);
    for j in 0..k {
        let tp = cm.counts[j][j] as u128;
        let col = cm.col_sum(j) as u128;
        let row = cm.row_sum(j) as u128;
        let p = Ratio::new(tp, col);
        let r = Ratio::new(tp, row);
        // 2pr/(p+r) = 2tp/(row+col)
        let f = Ratio::new(2 * tp, row + col);
        per.push((p, r, f, row as u64));
    }
    let zero = Ratio::new(0, 1);
    let avg = |pick: fn(&(Ratio, Ratio, Ratio, u64)) -> Ratio, weighted: bool| -> Rate {
        let sum = per.iter().fold(zero, |acc, m| {
            if weighted {
                acc.add(pick(m).scale(m.3 as u128, 1))
            } else {
                acc.add(pick(m))
            }
        });
        let den = if weighted { total as u128 } else { k as u128 };
        Rate::from_ratio(sum.scale(1, den))
    };
    let averages = |weighted| Averages {
        precision: avg(|m| m.0, weighted),
        recall: avg(|m| m.1, weighted),
        f1: avg(|m| m.2, weighted),
    };
    Ok(ClassificationReport {
        classes: per
            .iter()
            .zip(&cm.labels)
            .map(|(m, label)| ClassMetrics {
                label: label.clone(),
                precision: Rate::from_ratio(m.0),
                recall: Rate::from_ratio(m.1),
                f1: Rate::from_ratio(m.2),
                support: m.3,
            })
            .collect(),
        accuracy: Rate::from_ratio(Ratio::new(cm.trace() as u128, total as u128)),
        macro_avg: averages(false),
        weighted_avg: averages(true),
        total_support: total,
    })
}

impl ClassificationReport {
    /// Plain-text table in the usual `precision recall f1-score support` layout.
    pub fn to_text(&self) -> String {
        let width = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(0).max(12);
        let mut s = format!("{:>width$} {:>9} {:>9} {:>9} {:>9}\n\n", "", "precision", "recall", "f1-score", "support");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                c.label, c.precision.rounded, c.recall.rounded, c.f1.rounded, c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy.rounded, self.total_support);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, a.precision.rounded, a.recall.rounded, a.f1.rounded, self.total_support
            );
        }
        s
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Samples with `score >= threshold` are predicted positive. The first
    /// anchor uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Threshold sweep over the distinct scores, highest first, starting at the
/// `(0, 0)` anchor and ending at `(1, 1)`. Tied scores share one point.
pub fn roc(scores: &[f64], true_labels: &[usize], positive: usize) -> Result<RocCurve, EvalError> {
    if scores.len() != true_labels.len() {
        return Err(EvalError::Input(format!("{} scores for {} labels", scores.len(), true_labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(EvalError::Input(format!("score {s} outside [0, 1]")));
    }
    let pos = true_labels.iter().filter(|&&l| l == positive).count();
    let neg = true_labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::Input("ROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if true_labels[order[i]] == positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve over fpr.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

// ---------------------------------------------------------------------------
// CSV emission

const REPORT_HEADER: [&str; 8] = ["class", "precision", "recall", "f1", "support", "precision_2dp", "recall_2dp", "f1_2dp"];

/// Report CSV: one row per class, then `accuracy`, `macro avg` and
/// `weighted avg`. The accuracy row carries its value in the `f1` columns
/// and leaves precision/recall empty.
pub fn report_to_csv(r: &ClassificationReport) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    let rate_row = |name: &str, p: &Rate, rc: &Rate, f: &Rate, support: u64| {
        vec![
            name.to_string(),
            p.value.to_string(),
            rc.value.to_string(),
            f.value.to_string(),
            support.to_string(),
            format!("{:.2}", p.rounded),
            format!("{:.2}", rc.rounded),
            format!("{:.2}", f.rounded),
        ]
    };
    for c in &r.classes {
        w.write_record(rate_row(&c.label, &c.precision, &c.recall, &c.f1, c.support)).map_err(csv_err)?;
    }
    w.write_record([
        "accuracy".to_string(),
        String::new(),
        String::new(),
        r.accuracy.value.to_string(),
        r.total_support.to_string(),
        String::new(),
        String::new(),
        format!("{:.2}", r.accuracy.rounded),
    ])
    .map_err(csv_err)?;
    for (name, a) in [("macro avg", &r.macro_avg), ("weighted avg", &r.weighted_avg)] {
        w.write_record(rate_row(name, &a.precision, &a.recall, &a.f1, r.total_support)).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?).map_err(|e| EvalError::Csv(e.to_string()))
}

pub fn report_from_csv(text: &str) -> Result<ClassificationReport, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers().map_err(|e| EvalError::Csv(e.to_string()))?.clone();
    if headers.iter().ne(REPORT_HEADER) {
        return Err(EvalError::Csv(format!("unexpected header {headers:?}")));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|_| EvalError::Csv(format!("bad number `{s}`")));
    let rate = |v: &str, r: &str| -> Result<Rate, EvalError> { Ok(Rate { value: f(v)?, rounded: f(r)? }) };
    let mut classes = Vec::new();
    let mut accuracy = None;
    let mut macro_avg = None;
    let mut weighted_avg = None;
    let mut total_support = 0;
    for row in rd.records() {
        let row = row.map_err(|e| EvalError::Csv(e.to_string()))?;
        let support: u64 = row[4].parse().map_err(|_| EvalError::Csv(format!("bad support `{}`", &row[4])))?;
        match &row[0] {
            "accuracy" => {
                accuracy = Some(rate(&row[3], &row[7])?);
                total_support = support;
            }
            name @ ("macro avg" | "weighted avg") => {
                let a = Averages {
                    precision: rate(&row[1], &row[5])?,
                    recall: rate(&row[2], &row[6])?,
                    f1: rate(&row[3], &row[7])?,
                };
                if name == "macro avg" {
                    macro_avg = Some(a);
                } else {
                    weighted_avg = Some(a);
                }
            }
            label => classes.push(ClassMetrics {
                label: label.to_string(),
                precision: rate(&row[1], &row[5])?,
                recall: rate(&row[2], &row[6])?,
                f1: rate(&row[3], &row[7])?,
                support,
            }),
        }
    }
    let missing = |what: &str| EvalError::Csv(format!("missing `{what}` row"));
    Ok(ClassificationReport {
        classes,
        accuracy: accuracy.ok_or_else(|| missing("accuracy"))?,
        macro_avg: macro_avg.ok_or_else(|| missing("macro avg"))?,
        weighted_avg: weighted_avg.ok_or_else(|| missing("weighted avg"))?,
        total_support,
    })
}

/// `threshold,fpr,tpr`, rows in curve order (non-decreasing fpr, then tpr).
pub fn curve_to_csv(c: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &c.points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

/// Confusion matrix with a header of predicted labels and one row per true label.
pub fn confusion_to_csv(cm: &ConfusionMatrix, normalized: bool) -> String {
    let mut s = String::from("true\\pred");
    for l in &cm.labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    let norm = normalize_rows(cm);
    for (i, l) in cm.labels.iter().enumerate() {
        s.push_str(l);
        for j in 0..cm.k() {
            if normalized {
                let _ = write!(s, ",{}", norm[i][j]);
            } else {
                let _ = write!(s, ",{}", cm.counts[i][j]);
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), EvalError> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| io_err(path, e))
}
