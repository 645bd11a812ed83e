//! Return and factor panels: loading French-library files, building excess
//! returns, aligning on common periods, and the canonical CSV layout.
//!
//! All values are percent per month. Missing observations are replaced by
//! zero at load time.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{PremiaError, Result};
use crate::linalg::{normal_rcond, RCOND_THRESHOLD};

/// Sentinels used by the French data library for missing returns.
pub const DEFAULT_MISSING_CODES: [f64; 2] = [-99.99, -999.0];

/// Loader settings for French-library CSV files.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Values treated as missing and replaced by zero.
    pub missing_codes: Vec<f64>,
    /// Which monthly block to read (0 = first). Annual blocks are never counted.
    pub block: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            missing_codes: DEFAULT_MISSING_CODES.to_vec(),
            block: 0,
        }
    }
}

/// A monthly table as read from disk: one row per period, one column per series.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub periods: Vec<i64>,
    /// periods x columns.
    pub values: DMatrix<f64>,
}

impl RawTable {
    /// Index of the column whose trimmed name matches `name` case-insensitively.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.trim().eq_ignore_ascii_case(name.trim()))
    }

    pub fn column(&self, idx: usize) -> DVector<f64> {
        self.values.column(idx).into_owned()
    }

    /// Table without column `idx`.
    pub fn without_column(&self, idx: usize) -> RawTable {
        let mut columns = self.columns.clone();
        columns.remove(idx);
        RawTable {
            columns,
            periods: self.periods.clone(),
            values: self.values.clone().remove_column(idx),
        }
    }

    /// Restricts the table to periods within `[start, end]` (inclusive).
    pub fn window(&self, start: i64, end: i64) -> RawTable {
        let keep: Vec<usize> = (0..self.periods.len())
            .filter(|&i| self.periods[i] >= start && self.periods[i] <= end)
            .collect();
        RawTable {
            columns: self.columns.clone(),
            periods: keep.iter().map(|&i| self.periods[i]).collect(),
            values: self.values.select_rows(&keep),
        }
    }
}

/// `N x T` panel of excess returns, assets in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    assets: Vec<String>,
    periods: Vec<i64>,
    values: DMatrix<f64>,
}

/// `T x k` panel of factor realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    names: Vec<String>,
    periods: Vec<i64>,
    values: DMatrix<f64>,
}

fn check_periods(periods: &[i64]) -> Result<()> {
    if let Some(w) = periods.windows(2).find(|w| w[1] <= w[0]) {
        return Err(PremiaError::Alignment(format!(
            "period labels not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn check_finite(values: &DMatrix<f64>, what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PremiaError::Parameter(format!("{what} contains non-finite values")));
    }
    Ok(())
}

impl ReturnsPanel {
    pub fn new(assets: Vec<String>, periods: Vec<i64>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != assets.len() || values.ncols() != periods.len() {
            return Err(PremiaError::Dimension(format!(
                "returns values are {}x{} but there are {} assets and {} periods",
                values.nrows(),
                values.ncols(),
                assets.len(),
                periods.len()
            )));
        }
        if assets.is_empty() || periods.is_empty() {
            return Err(PremiaError::InsufficientData("returns panel is empty".into()));
        }
        check_periods(&periods)?;
        check_finite(&values, "returns panel")?;
        Ok(ReturnsPanel {
            assets,
            periods,
            values,
        })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    /// `N x T` values.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_assets(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    /// Time-average return of each asset over the full sample.
    pub fn mean_returns(&self) -> DVector<f64> {
        self.values.column_mean()
    }

    /// Panel restricted to the given period indices (in the given order).
    pub fn select_periods(&self, idx: &[usize]) -> Result<ReturnsPanel> {
        ReturnsPanel::new(
            self.assets.clone(),
            idx.iter().map(|&i| self.periods[i]).collect(),
            self.values.select_columns(idx),
        )
    }

    /// Panel with assets reordered by `perm`.
    pub fn select_assets(&self, perm: &[usize]) -> Result<ReturnsPanel> {
        ReturnsPanel::new(
            perm.iter().map(|&i| self.assets[i].clone()).collect(),
            self.periods.clone(),
            self.values.select_rows(perm),
        )
    }

    /// Every return multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ReturnsPanel {
        ReturnsPanel {
            assets: self.assets.clone(),
            periods: self.periods.clone(),
            values: &self.values * c,
        }
    }

    pub fn to_canonical_csv(&self) -> String {
        write_canonical(&self.assets, &self.periods, |t, j| self.values[(j, t)])
    }

    pub fn from_canonical_csv(text: &str) -> Result<ReturnsPanel> {
        let table = parse_canonical(text)?;
        ReturnsPanel::new(table.columns, table.periods, table.values.transpose())
    }
}

impl FactorPanel {
    /// Builds a factor panel; the sample covariance must have full column rank.
    pub fn new(names: Vec<String>, periods: Vec<i64>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != names.len() || values.nrows() != periods.len() {
            return Err(PremiaError::Dimension(format!(
                "factor values are {}x{} but there are {} periods and {} factors",
                values.nrows(),
                values.ncols(),
                periods.len(),
                names.len()
            )));
        }
        if names.is_empty() {
            return Err(PremiaError::InsufficientData("factor panel has no factors".into()));
        }
        check_periods(&periods)?;
        check_finite(&values, "factor panel")?;
        let panel = FactorPanel {
            names,
            periods,
            values,
        };
        let rcond = normal_rcond(&panel.demeaned());
        if !(rcond > RCOND_THRESHOLD) {
            return Err(PremiaError::Singular {
                context: "factor sample covariance".into(),
                rcond,
            });
        }
        Ok(panel)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    /// `T x k` values.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn means(&self) -> DVector<f64> {
        self.values.row_mean().transpose()
    }

    /// Values with each factor's full-sample mean removed.
    pub fn demeaned(&self) -> DMatrix<f64> {
        let mut out = self.values.clone();
        for mut col in out.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        out
    }

    /// Sample covariance with divisor `T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.demeaned();
        d.transpose() * &d / self.n_periods() as f64
    }

    pub fn select_periods(&self, idx: &[usize]) -> Result<FactorPanel> {
        FactorPanel::new(
            self.names.clone(),
            idx.iter().map(|&i| self.periods[i]).collect(),
            self.values.select_rows(idx),
        )
    }

    /// Panel restricted to the named subset of factor columns.
    pub fn select_factors(&self, idx: &[usize]) -> Result<FactorPanel> {
        FactorPanel::new(
            idx.iter().map(|&i| self.names[i].clone()).collect(),
            self.periods.clone(),
            self.values.select_columns(idx),
        )
    }

    /// Appends a column (e.g. momentum) with the same period labels.
    pub fn with_factor(&self, name: &str, series: &DVector<f64>) -> Result<FactorPanel> {
        if series.len() != self.n_periods() {
            return Err(PremiaError::Dimension(format!(
                "factor {name} has {} observations, panel has {}",
                series.len(),
                self.n_periods()
            )));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let k = self.n_factors();
        let values = self.values.clone().insert_column(k, 0.0);
        let mut values = values;
        values.set_column(k, series);
        FactorPanel::new(names, self.periods.clone(), values)
    }

    pub fn to_canonical_csv(&self) -> String {
        write_canonical(&self.names, &self.periods, |t, j| self.values[(t, j)])
    }

    pub fn from_canonical_csv(text: &str) -> Result<FactorPanel> {
        let table = parse_canonical(text)?;
        FactorPanel::new(table.columns, table.periods, table.values)
    }

    pub fn from_table(table: &RawTable) -> Result<FactorPanel> {
        FactorPanel::new(table.columns.clone(), table.periods.clone(), table.values.clone())
    }
}

/// Formats a float so that parsing it back yields the identical bits.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_canonical(names: &[String], periods: &[i64], value: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from("period");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, p) in periods.iter().enumerate() {
        write!(out, "{p}").unwrap();
        for j in 0..names.len() {
            out.push(',');
            out.push_str(&format_f64(value(t, j)));
        }
        out.push('\n');
    }
    out
}

/// Parses the canonical layout: header `period,<names...>`, then one row per period.
pub fn parse_canonical(text: &str) -> Result<RawTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(PremiaError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if !fields[0].eq_ignore_ascii_case("period") {
        return Err(PremiaError::Parse {
            line: 1,
            message: format!("expected header starting with 'period', found '{}'", fields[0]),
        });
    }
    let columns: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
    let mut periods = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != columns.len() + 1 {
            return Err(PremiaError::RaggedRow {
                line: i + 1,
                expected: columns.len() + 1,
                found: f.len(),
            });
        }
        periods.push(f[0].parse::<i64>().map_err(|_| PremiaError::Parse {
            line: i + 1,
            message: format!("bad period label '{}'", f[0]),
        })?);
        for s in &f[1..] {
            data.push(s.parse::<f64>().map_err(|_| PremiaError::Parse {
                line: i + 1,
                message: format!("bad number '{s}'"),
            })?);
        }
    }
    let values = DMatrix::from_row_slice(periods.len(), columns.len(), &data);
    Ok(RawTable {
        columns,
        periods,
        values,
    })
}

/// Reads a file in either canonical layout or French-library layout.
pub fn read_table(path: &Path, options: &LoadOptions) -> Result<RawTable> {
    let text = read_text(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().to_ascii_lowercase().starts_with("period,") {
        let mut t = parse_canonical(&text)?;
        replace_missing(&mut t.values, &options.missing_codes);
        Ok(t)
    } else {
        parse_french(&text, options)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read(path)
        .map(|bytes| String::from_utf8_lossy(&bytes).into_owned())
        .map_err(|source| PremiaError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads a French-library CSV (header lines, `YYYYMM` date column, numeric
/// columns), replacing missing-value sentinels with zero.
pub fn load_french_portfolios(path: &Path, options: &LoadOptions) -> Result<RawTable> {
    parse_french(&read_text(path)?, options)
}

fn replace_missing(values: &mut DMatrix<f64>, codes: &[f64]) {
    for v in values.iter_mut() {
        if codes.iter().any(|c| (*v - c).abs() <= 1e-9 * c.abs().max(1.0)) {
            *v = 0.0;
        }
    }
}

enum LineKind {
    Blank,
    /// Row whose first field is a (possibly malformed) date and the rest numeric.
    Data,
    /// Row of column names (first field empty or non-numeric, others not numbers).
    Header,
    Text,
}

fn classify(fields: &[&str]) -> LineKind {
    if fields.iter().all(|f| f.is_empty()) {
        return LineKind::Blank;
    }
    if fields.len() < 2 {
        return LineKind::Text;
    }
    let rest_numeric = fields[1..].iter().all(|f| !f.is_empty() && f.parse::<f64>().is_ok());
    if rest_numeric {
        return LineKind::Data;
    }
    let rest_named = fields[1..].iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err());
    if rest_named && (fields[0].is_empty() || fields[0].parse::<f64>().is_err()) {
        return LineKind::Header;
    }
    LineKind::Text
}

fn parse_yyyymm(s: &str) -> Option<i64> {
    if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: i64 = s.parse().ok()?;
    let month = v % 100;
    (1..=12).contains(&month).then_some(v)
}

fn is_annual(s: &str) -> bool {
    s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit())
}

fn parse_french(text: &str, options: &LoadOptions) -> Result<RawTable> {
    let mut block_index = 0usize;
    let mut header: Option<Vec<String>> = None;
    let mut current: Option<(Vec<String>, Vec<i64>, Vec<f64>)> = None;
    let mut finished: Option<RawTable> = None;

    let close = |cur: (Vec<String>, Vec<i64>, Vec<f64>)| -> RawTable {
        let (columns, periods, data) = cur;
        let values = DMatrix::from_row_slice(periods.len(), columns.len(), &data);
        RawTable {
            columns,
            periods,
            values,
        }
    };

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = raw_line.split(',').map(str::trim).collect();
        match classify(&fields) {
            LineKind::Data => {
                let date = fields[0];
                if current.is_none() && is_annual(date) {
                    // annual sub-table: skipped entirely
                    header = None;
                    continue;
                }
                let period = parse_yyyymm(date).ok_or_else(|| PremiaError::Parse {
                    line: line_no,
                    message: format!("malformed date '{date}' (expected YYYYMM)"),
                })?;
                let ncols = fields.len() - 1;
                let cur = current.get_or_insert_with(|| {
                    let names = match header.take() {
                        Some(h) if h.len() == ncols => h,
                        _ => (1..=ncols).map(|j| format!("col{j}")).collect(),
                    };
                    (names, Vec::new(), Vec::new())
                });
                if ncols != cur.0.len() {
                    return Err(PremiaError::RaggedRow {
                        line: line_no,
                        expected: cur.0.len() + 1,
                        found: fields.len(),
                    });
                }
                if let Some(&last) = cur.1.last() {
                    if period <= last {
                        return Err(PremiaError::Parse {
                            line: line_no,
                            message: format!("date {period} does not follow {last}"),
                        });
                    }
                }
                cur.1.push(period);
                for f in &fields[1..] {
                    cur.2.push(f.parse::<f64>().expect("classified numeric"));
                }
            }
            LineKind::Header => {
                if let Some(cur) = current.take() {
                    if block_index == options.block {
                        finished = Some(close(cur));
                        break;
                    }
                    block_index += 1;
                }
                header = Some(fields[1..].iter().map(|s| s.to_string()).collect());
            }
            LineKind::Blank | LineKind::Text => {
                if let Some(cur) = current.take() {
                    if block_index == options.block {
                        finished = Some(close(cur));
                        break;
                    }
                    block_index += 1;
                }
                if matches!(classify(&fields), LineKind::Text) {
                    header = None;
                }
            }
        }
    }
    if finished.is_none() {
        if let Some(cur) = current.take() {
            if block_index == options.block {
                finished = Some(close(cur));
            }
        }
    }
    let mut table = finished.ok_or_else(|| PremiaError::Parse {
        line: text.lines().count(),
        message: format!("monthly block {} not found", options.block),
    })?;
    replace_missing(&mut table.values, &options.missing_codes);
    Ok(table)
}

/// Subtracts the risk-free rate from every return series.
///
/// `raw` is periods x assets as loaded; the result is the asset-by-period panel.
pub fn build_excess_returns(raw: &RawTable, risk_free: &RawTable) -> Result<ReturnsPanel> {
    if risk_free.values.ncols() != 1 {
        return Err(PremiaError::Dimension(format!(
            "risk-free table must have one column, found {}",
            risk_free.values.ncols()
        )));
    }
    if raw.periods.len() != risk_free.periods.len() || raw.periods != risk_free.periods {
        let first = raw
            .periods
            .iter()
            .zip(&risk_free.periods)
            .find(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .or_else(|| {
                let n = raw.periods.len().min(risk_free.periods.len());
                raw.periods.get(n).or(risk_free.periods.get(n)).copied()
            });
        return Err(PremiaError::Alignment(format!(
            "returns and risk-free periods differ, first offending period {}",
            first.map(|p| p.to_string()).unwrap_or_default()
        )));
    }
    let rf = risk_free.values.column(0);
    let mut values = raw.values.transpose();
    for mut row in values.row_iter_mut() {
        row -= rf.transpose();
    }
    ReturnsPanel::new(raw.columns.clone(), raw.periods.clone(), values)
}

/// Treats a raw table as already-excess returns.
pub fn returns_from_table(raw: &RawTable) -> Result<ReturnsPanel> {
    ReturnsPanel::new(raw.columns.clone(), raw.periods.clone(), raw.values.transpose())
}

/// Restricts both panels to their common periods.
pub fn align(returns: &ReturnsPanel, factors: &FactorPanel) -> Result<(ReturnsPanel, FactorPanel)> {
    let rp: BTreeSet<i64> = returns.periods.iter().copied().collect();
    let common: Vec<i64> = factors.periods.iter().copied().filter(|p| rp.contains(p)).collect();
    if common.is_empty() {
        return Err(PremiaError::Alignment(
            "returns and factors share no periods".into(),
        ));
    }
    let pick = |periods: &[i64]| -> Vec<usize> {
        let mut j = 0;
        let mut out = Vec::with_capacity(common.len());
        for (i, p) in periods.iter().enumerate() {
            if j < common.len() && *p == common[j] {
                out.push(i);
                j += 1;
            }
        }
        out
    };
    Ok((
        returns.select_periods(&pick(&returns.periods))?,
        factors.select_periods(&pick(&factors.periods))?,
    ))
}
