use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Label, LabeledDataset};

/// Exact rational in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub const FOUR_FIFTHS: Fraction = Fraction { num: 4, den: 5 };

    pub fn new(num: u64, den: u64) -> Result<Self, DataError> {
        if den == 0 || num > den {
            return Err(DataError::Invalid {
                what: "fraction",
                detail: format!("{num}/{den} must lie in [0, 1]"),
            });
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    /// `round(self · n)`, halves rounded up.
    pub fn round_of(&self, n: usize) -> usize {
        let n = n as u128;
        ((2 * self.num as u128 * n + self.den as u128) / (2 * self.den as u128)) as usize
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for Fraction {
    fn default() -> Self {
        Fraction::FOUR_FIFTHS
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = DataError;

    /// Accepts `n/d` or a decimal such as `0.8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || DataError::Invalid {
            what: "fraction",
            detail: format!("cannot parse `{s}`"),
        };
        if let Some((n, d)) = s.split_once('/') {
            return Fraction::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) || (int.is_empty() && frac.is_empty()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Fraction::new(int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?, den)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub train_fraction: Fraction,
}

impl SplitPlan {
    /// Checks that the plan partitions exactly the records of `dataset`.
    pub fn check_against(&self, dataset: &LabeledDataset) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train_ids.iter().chain(&self.test_ids) {
            if !seen.insert(id.as_str()) {
                return Err(DataError::Dataset(format!("split lists `{id}` twice")));
            }
            if dataset.get(id).is_none() {
                return Err(DataError::Dataset(format!("split references unknown record `{id}`")));
            }
        }
        if seen.len() != dataset.len() {
            return Err(DataError::Dataset(format!(
                "split covers {} of {} records",
                seen.len(),
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// Per class (in label order): sort ids, shuffle with the seeded generator,
/// send the first `round(fraction · n_c)` to train and the rest to test.
pub fn stratified_split(dataset: &LabeledDataset, fraction: Fraction, seed: u64) -> Result<SplitPlan, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for label in Label::ALL {
        let mut ids: Vec<&str> = dataset
            .records()
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.id.as_str())
            .collect();
        if ids.is_empty() {
            return Err(DataError::EmptyClass(label));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let k = fraction.round_of(ids.len());
        train_ids.extend(ids[..k].iter().map(|s| s.to_string()));
        test_ids.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    Ok(SplitPlan {
        train_ids,
        test_ids,
        seed,
        train_fraction: fraction,
    })
}

/// Two-column CSV `id,partition` preceded by a `# seed=…, fraction=…` comment.
pub fn write_split_csv(plan: &SplitPlan, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut buf = format!("# seed={} fraction={}\n", plan.seed, plan.train_fraction).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let rows = plan
            .train_ids
            .iter()
            .map(|id| (id, Partition::Train))
            .chain(plan.test_ids.iter().map(|id| (id, Partition::Test)));
        w.write_record(["id", "partition"]).map_err(|e| DataError::SplitFile(e.to_string()))?;
        for (id, part) in rows {
            w.write_record([id.as_str(), part.as_str()]).map_err(|e| DataError::SplitFile(e.to_string()))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| DataError::io(path, e))
}

pub fn read_split_csv(path: impl AsRef<Path>) -> Result<SplitPlan, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut seed = 0;
    let mut train_fraction = Fraction::default();
    if let Some(meta) = text.lines().next().and_then(|l| l.strip_prefix('#')) {
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse().map_err(|_| DataError::SplitFile(format!("bad seed `{v}`")))?,
                Some(("fraction", v)) => train_fraction = v.parse()?,
                _ => {}
            }
        }
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| DataError::SplitFile(e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "partition" {
        return Err(DataError::SplitFile("expected header `id,partition`".into()));
    }
    let mut plan = SplitPlan {
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        seed,
        train_fraction,
    };
    for row in r.records() {
        let row = row.map_err(|e| DataError::SplitFile(e.to_string()))?;
        match &row[1] {
            "train" => plan.train_ids.push(row[0].to_string()),
            "test" => plan.test_ids.push(row[0].to_string()),
            other => return Err(DataError::SplitFile(format!("unknown partition `{other}`"))),
        }
    }
    Ok(plan)
}
