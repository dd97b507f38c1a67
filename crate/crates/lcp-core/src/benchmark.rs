//! Benchmark records and their construction: Pearson correlation with a
//! two-sided significance test, significance filtering, seeded stratified
//! sampling over correlation bins, counterfactual-context handling, and the
//! line-oriented record file format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::eval::{bin_index, N_BINS};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("columns have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 complete rows, got {0}")]
    TooFewRows(usize),
    #[error("column {0:?} has zero variance")]
    DegenerateColumn(String),
    #[error("non-finite value in column {0:?}")]
    NonFiniteValue(String),
    #[error("record has no counterfactual context to apply")]
    MissingContext,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One benchmark entry: a variable pair with its textual context and the
/// observed correlation computed from raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub pair_id: String,
    pub var1_name: String,
    pub var2_name: String,
    pub var1_desc: String,
    pub var2_desc: String,
    pub table_name: String,
    pub dataset_desc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_override: Option<String>,
    pub r_obs: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_flag: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl BenchmarkRecord {
    fn validate(&self) -> Result<(), String> {
        if self.var1_name.is_empty() || self.var2_name.is_empty() {
            return Err("variable names must be non-empty".to_string());
        }
        if !(-1.0..=1.0).contains(&self.r_obs) {
            return Err(format!("r_obs {} outside [-1, 1]", self.r_obs));
        }
        if !(0.0..=1.0).contains(&self.p_value) {
            return Err(format!("p_value {} outside [0, 1]", self.p_value));
        }
        if self.n < 3 {
            return Err(format!("sample size {} below 3", self.n));
        }
        Ok(())
    }
}

/// Stable pair identifier: truncated SHA-256 of the table and variable names,
/// so record files and trace stores join deterministically.
pub fn pair_id(table_name: &str, var1_name: &str, var2_name: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(table_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(var1_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(var2_name.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Product-moment correlation with a two-sided p-value from the exact t
/// transform `t = r sqrt((n-2)/(1-r^2))` on n-2 degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<PearsonResult, BenchmarkError> {
    if xs.len() != ys.len() {
        return Err(BenchmarkError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(BenchmarkError::TooFewRows(n));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(BenchmarkError::NonFiniteValue("x".to_string()));
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(BenchmarkError::NonFiniteValue("y".to_string()));
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(BenchmarkError::DegenerateColumn("x".to_string()));
    }
    if syy == 0.0 {
        return Err(BenchmarkError::DegenerateColumn("y".to_string()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p_value = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * ((nf - 2.0) / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0).expect("dof >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(PearsonResult { r, p_value, n })
}

/// Drops rows with a missing value in either column, then correlates the
/// complete pairs.
pub fn pearson_pairwise(
    xs: &[Option<f64>],
    ys: &[Option<f64>],
) -> Result<PearsonResult, BenchmarkError> {
    if xs.len() != ys.len() {
        return Err(BenchmarkError::LengthMismatch(xs.len(), ys.len()));
    }
    let mut cx = Vec::with_capacity(xs.len());
    let mut cy = Vec::with_capacity(ys.len());
    for (x, y) in xs.iter().zip(ys) {
        if let (Some(x), Some(y)) = (x, y) {
            cx.push(*x);
            cy.push(*y);
        }
    }
    pearson(&cx, &cy)
}

/// Keeps records with `p_value < alpha` (strict), preserving input order.
pub fn significance_filter(records: Vec<BenchmarkRecord>, alpha: f64) -> Vec<BenchmarkRecord> {
    records
        .into_iter()
        .filter(|rec| rec.p_value < alpha)
        .collect()
}

/// Stratified sampling configuration: equal-width bins on [-1, 1], a target
/// count per bin, and the RNG seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratificationPlan {
    pub n_bins: usize,
    pub per_bin: usize,
    pub seed: u64,
}

impl Default for StratificationPlan {
    fn default() -> Self {
        Self {
            n_bins: N_BINS,
            per_bin: 200,
            seed: 0,
        }
    }
}

impl StratificationPlan {
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.n_bins)
            .map(|i| -1.0 + 2.0 * i as f64 / self.n_bins as f64)
            .collect()
    }
}

/// A bin that could not supply the requested count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinShortfall {
    pub bin: usize,
    pub available: usize,
    pub requested: usize,
}

/// Samples `per_bin` records without replacement from each signed-correlation
/// bin. Bins with fewer records contribute everything they have and are
/// reported as shortfalls. Output is bin order then draw order, and is a pure
/// function of the input order and the seed.
pub fn stratified_sample(
    records: &[BenchmarkRecord],
    plan: &StratificationPlan,
) -> (Vec<BenchmarkRecord>, Vec<BinShortfall>) {
    let mut bins: Vec<Vec<&BenchmarkRecord>> = vec![Vec::new(); plan.n_bins];
    for rec in records {
        // same right-closed binning as the evaluation breakdown
        let idx = if plan.n_bins == N_BINS {
            bin_index(rec.r_obs)
        } else {
            let w = 2.0 / plan.n_bins as f64;
            let i = ((rec.r_obs + 1.0) / w).ceil() as isize - 1;
            i.clamp(0, plan.n_bins as isize - 1) as usize
        };
        bins[idx].push(rec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut sampled = Vec::new();
    let mut shortfalls = Vec::new();
    for (bin_no, members) in bins.iter().enumerate() {
        if members.is_empty() && plan.per_bin > 0 {
            shortfalls.push(BinShortfall {
                bin: bin_no,
                available: 0,
                requested: plan.per_bin,
            });
            continue;
        }
        if members.len() <= plan.per_bin {
            if members.len() < plan.per_bin {
                shortfalls.push(BinShortfall {
                    bin: bin_no,
                    available: members.len(),
                    requested: plan.per_bin,
                });
            }
            sampled.extend(members.iter().map(|r| (*r).clone()));
        } else {
            let chosen = rand::seq::index::sample(&mut rng, members.len(), plan.per_bin);
            sampled.extend(chosen.iter().map(|i| members[i].clone()));
        }
    }
    (sampled, shortfalls)
}

/// Applies a counterfactual context: flips the sign of the observed
/// correlation and marks the copy as counterfactual. The original record is
/// untouched. Requires `context_override`.
pub fn negate_for_context(record: &BenchmarkRecord) -> Result<BenchmarkRecord, BenchmarkError> {
    if record.context_override.is_none() {
        return Err(BenchmarkError::MissingContext);
    }
    let mut flipped = record.clone();
    flipped.r_obs = if record.r_obs == 0.0 { 0.0 } else { -record.r_obs };
    flipped.provenance = Some("counterfactual".to_string());
    Ok(flipped)
}

/// Strict line-oriented load: any malformed line aborts with its number.
pub fn load_records(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<BenchmarkRecord>, BenchmarkError> {
    let (records, issues) = load_records_inner(path, true)?;
    debug_assert!(issues.is_empty());
    Ok(records)
}

/// Lenient load: malformed lines are skipped and reported with line numbers.
pub fn load_records_lenient(
    path: impl AsRef<std::path::Path>,
) -> Result<(Vec<BenchmarkRecord>, Vec<(usize, String)>), BenchmarkError> {
    load_records_inner(path, false)
}

fn load_records_inner(
    path: impl AsRef<std::path::Path>,
    strict: bool,
) -> Result<(Vec<BenchmarkRecord>, Vec<(usize, String)>), BenchmarkError> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<BenchmarkRecord, String> = serde_json::from_str(line)
            .map_err(|e| e.to_string())
            .and_then(|rec: BenchmarkRecord| rec.validate().map(|()| rec));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(msg) => {
                if strict {
                    return Err(BenchmarkError::Parse { line: i + 1, msg });
                }
                issues.push((i + 1, msg));
            }
        }
    }
    Ok((records, issues))
}

pub fn save_records(
    path: impl AsRef<std::path::Path>,
    records: &[BenchmarkRecord],
) -> Result<(), BenchmarkError> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Numeric columns parsed from a delimiter-separated file: header row with
/// variable names, comma delimiter, "." decimal point, empty cell = missing.
#[derive(Debug, Clone)]
pub struct ColumnTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
}

pub fn load_columns(path: impl AsRef<std::path::Path>) -> Result<ColumnTable, BenchmarkError> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(BenchmarkError::Parse {
        line: 1,
        msg: "missing header row".to_string(),
    })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(BenchmarkError::Parse {
                line: i + 1,
                msg: format!("expected {} cells, got {}", names.len(), cells.len()),
            });
        }
        for (col, cell) in columns.iter_mut().zip(&cells) {
            let cell = cell.trim();
            if cell.is_empty() {
                col.push(None);
            } else {
                let value: f64 = cell.parse().map_err(|_| BenchmarkError::Parse {
                    line: i + 1,
                    msg: format!("not a number: {cell:?}"),
                })?;
                col.push(Some(value));
            }
        }
    }
    Ok(ColumnTable { names, columns })
}
