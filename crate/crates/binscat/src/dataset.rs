//! Tabular input, mass-point analysis, effective sample size, and the
//! degrees-of-freedom checks that gate the nonparametric procedures.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Which CSV columns play which role.
#[derive(Debug, Clone, Default)]
pub struct ColumnSpec {
    pub y: String,
    pub x: String,
    pub covariates: Vec<String>,
    pub cluster: Option<String>,
    pub fweight: Option<String>,
    pub by: Option<String>,
}

/// In-memory sample: outcome, running variable, optional controls,
/// cluster labels, frequency weights and by-group labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Covariate columns, one vector per column, aligned with `w_names`.
    pub w: Vec<Vec<f64>>,
    pub w_names: Vec<String>,
    pub cluster: Option<Vec<String>>,
    pub fweight: Option<Vec<u64>>,
    pub by: Option<Vec<String>>,
    pub y_name: String,
    pub x_name: String,
    /// Rows removed at load because a mapped value was missing or non-finite.
    pub dropped_rows: usize,
}

/// Distinct values of x and their multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPointInfo {
    pub n_distinct: usize,
    pub unique_values: Vec<f64>,
    pub multiplicity: Vec<usize>,
}

/// Effective sample size min{n, N, G}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveSample {
    /// Total rows after frequency-weight expansion.
    pub n: usize,
    /// Distinct x values (set to n under `nomassadj`).
    pub n_distinct: usize,
    /// Cluster count; equals n when the data are not clustered.
    pub n_clusters: usize,
    pub n_eff: usize,
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn parse_numeric(raw: &str, column: &str, row: usize) -> Result<Option<f64>> {
    if is_missing(raw) {
        return Ok(None);
    }
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::NonNumeric {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        })?;
    if v.is_finite() {
        Ok(Some(v))
    } else {
        Ok(None) // non-finite counts as missing, row is dropped
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Load a CSV file (UTF-8, header row, comma delimiter; `NA` or an
    /// empty cell is missing). Rows with any missing or non-finite mapped
    /// value are dropped and counted.
    pub fn load_csv(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?
            .clone();
        let col_index = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::ColumnNotFound(name.to_string()))
        };

        let iy = col_index(&spec.y)?;
        let ix = col_index(&spec.x)?;
        let iw: Vec<usize> = spec
            .covariates
            .iter()
            .map(|c| col_index(c))
            .collect::<Result<_>>()?;
        let icluster = spec.cluster.as_deref().map(col_index).transpose()?;
        let ifw = spec.fweight.as_deref().map(col_index).transpose()?;
        let iby = spec.by.as_deref().map(col_index).transpose()?;

        let mut ds = Dataset {
            y: Vec::new(),
            x: Vec::new(),
            w: vec![Vec::new(); iw.len()],
            w_names: spec.covariates.clone(),
            cluster: icluster.map(|_| Vec::new()),
            fweight: ifw.map(|_| Vec::new()),
            by: iby.map(|_| Vec::new()),
            y_name: spec.y.clone(),
            x_name: spec.x.clone(),
            dropped_rows: 0,
        };

        for (row_no, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
            let field = |i: usize| record.get(i).unwrap_or("");

            let y = parse_numeric(field(iy), &spec.y, row_no + 1)?;
            let x = parse_numeric(field(ix), &spec.x, row_no + 1)?;
            let mut wvals = Vec::with_capacity(iw.len());
            let mut missing = y.is_none() || x.is_none();
            for (k, &i) in iw.iter().enumerate() {
                match parse_numeric(field(i), &spec.covariates[k], row_no + 1)? {
                    Some(v) => wvals.push(v),
                    None => missing = true,
                }
            }
            let cluster_val = icluster.map(|i| field(i).trim().to_string());
            if let Some(c) = &cluster_val {
                missing = missing || c.is_empty();
            }
            let by_val = iby.map(|i| field(i).trim().to_string());
            if let Some(b) = &by_val {
                missing = missing || b.is_empty();
            }
            let fw_val = match ifw {
                Some(i) => {
                    let raw = field(i);
                    if is_missing(raw) {
                        missing = true;
                        None
                    } else {
                        let w: u64 = raw.trim().parse().map_err(|_| Error::BadWeight {
                            row: row_no + 1,
                            value: raw.to_string(),
                        })?;
                        if w < 1 {
                            return Err(Error::BadWeight {
                                row: row_no + 1,
                                value: raw.to_string(),
                            });
                        }
                        Some(w)
                    }
                }
                None => None,
            };

            if missing {
                ds.dropped_rows += 1;
                continue;
            }
            ds.y.push(y.unwrap());
            ds.x.push(x.unwrap());
            for (k, v) in wvals.into_iter().enumerate() {
                ds.w[k].push(v);
            }
            if let Some(c) = ds.cluster.as_mut() {
                c.push(cluster_val.unwrap());
            }
            if let Some(f) = ds.fweight.as_mut() {
                f.push(fw_val.unwrap());
            }
            if let Some(b) = ds.by.as_mut() {
                b.push(by_val.unwrap());
            }
        }

        if ds.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(ds)
    }

    /// Replicate each row by its frequency weight. Downstream estimation
    /// then treats every row as one observation, which makes a weighted
    /// dataset observationally identical to its row-replicated form.
    pub fn expand_fweights(mut self) -> Dataset {
        let Some(weights) = self.fweight.take() else {
            return self;
        };
        if weights.iter().all(|&w| w == 1) {
            return self;
        }
        let total: usize = weights.iter().map(|&w| w as usize).sum();
        let mut y = Vec::with_capacity(total);
        let mut x = Vec::with_capacity(total);
        let mut w = vec![Vec::with_capacity(total); self.w.len()];
        let mut cluster = self.cluster.as_ref().map(|_| Vec::with_capacity(total));
        let mut by = self.by.as_ref().map(|_| Vec::with_capacity(total));
        for (i, &wt) in weights.iter().enumerate() {
            for _ in 0..wt {
                y.push(self.y[i]);
                x.push(self.x[i]);
                for (k, col) in self.w.iter().enumerate() {
                    w[k].push(col[i]);
                }
                if let (Some(dst), Some(src)) = (cluster.as_mut(), self.cluster.as_ref()) {
                    dst.push(src[i].clone());
                }
                if let (Some(dst), Some(src)) = (by.as_mut(), self.by.as_ref()) {
                    dst.push(src[i].clone());
                }
            }
        }
        Dataset {
            y,
            x,
            w,
            cluster,
            by,
            fweight: None,
            ..self
        }
    }

    /// Rows with the given indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            w: self
                .w
                .iter()
                .map(|col| idx.iter().map(|&i| col[i]).collect())
                .collect(),
            w_names: self.w_names.clone(),
            cluster: self
                .cluster
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
            fweight: self
                .fweight
                .as_ref()
                .map(|f| idx.iter().map(|&i| f[i]).collect()),
            by: self
                .by
                .as_ref()
                .map(|b| idx.iter().map(|&i| b[i].clone()).collect()),
            y_name: self.y_name.clone(),
            x_name: self.x_name.clone(),
            dropped_rows: 0,
        }
    }

    /// Sorted distinct by-group labels.
    pub fn group_labels(&self) -> Vec<String> {
        match &self.by {
            None => Vec::new(),
            Some(by) => {
                let mut labels: Vec<String> = by.clone();
                labels.sort();
                labels.dedup();
                labels
            }
        }
    }
}

/// Count distinct x values using exact floating-point equality.
pub fn analyze_mass_points(x: &[f64]) -> MassPointInfo {
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut unique_values = Vec::new();
    let mut multiplicity = Vec::new();
    for &v in &sorted {
        match unique_values.last() {
            Some(&last) if last == v => *multiplicity.last_mut().unwrap() += 1,
            _ => {
                unique_values.push(v);
                multiplicity.push(1);
            }
        }
    }
    MassPointInfo {
        n_distinct: unique_values.len(),
        unique_values,
        multiplicity,
    }
}

/// Effective sample size min{n, N, G}. When `nomassadj` is set, the
/// distinct-value count N is replaced by n.
pub fn effective_sample(ds: &Dataset, nomassadj: bool) -> EffectiveSample {
    let n = match &ds.fweight {
        Some(w) => w.iter().map(|&v| v as usize).sum(),
        None => ds.len(),
    };
    let n_distinct = if nomassadj {
        n
    } else {
        analyze_mass_points(&ds.x).n_distinct
    };
    let n_clusters = match &ds.cluster {
        None => n,
        Some(labels) => {
            let mut seen: HashMap<&str, ()> = HashMap::new();
            for l in labels {
                seen.insert(l.as_str(), ());
            }
            seen.len()
        }
    };
    EffectiveSample {
        n,
        n_distinct,
        n_clusters,
        n_eff: n.min(n_distinct).min(n_clusters),
    }
}

/// Degrees-of-freedom gate for a nonparametric procedure with degree p,
/// smoothness s on J bins: requires n_eff > N1 + (p+1)J - (J-1)s.
pub fn df_check_nonparametric(n_eff: usize, p: usize, s: usize, j: usize, n1: usize) -> bool {
    let k = basis_size(p, s, j);
    (n_eff as i64) > n1 as i64 + k
}

fn basis_size(p: usize, s: usize, j: usize) -> i64 {
    (p as i64 + 1) * j as i64 - (j as i64 - 1) * s as i64
}

/// Degrees-of-freedom gate for rule-of-thumb bin selection (and for the
/// global polynomial reference fit): requires n_eff > N2 + p + 1.
pub fn df_check_rot(n_eff: usize, p: usize, n2: usize) -> bool {
    n_eff > n2 + p + 1
}
