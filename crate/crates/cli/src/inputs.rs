//! Reading returns, factors and risk-free rates from disk.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use premia_core::panel::{read_table, returns_from_table};
use premia_core::{align, build_excess_returns, FactorPanel, LoadOptions, PremiaError, RawTable, ReturnsPanel, Result};

#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    /// Portfolio returns (canonical CSV or French-library CSV)
    #[arg(long)]
    pub returns: PathBuf,
    /// Factor returns; an `RF` column is used as the risk-free rate and dropped
    #[arg(long)]
    pub factors: PathBuf,
    /// Separate risk-free series (column `RF`, or the only column)
    #[arg(long)]
    pub riskfree: Option<PathBuf>,
    /// Momentum series appended to the factors as `Mom`
    #[arg(long)]
    pub momentum: Option<PathBuf>,
    /// First period kept (YYYYMM)
    #[arg(long)]
    pub start: Option<i64>,
    /// Last period kept (YYYYMM)
    #[arg(long)]
    pub end: Option<i64>,
    /// Monthly block of the returns file to read (0 = first)
    #[arg(long, default_value_t = 0)]
    pub block: usize,
}

pub struct Inputs {
    pub returns: ReturnsPanel,
    pub factors: FactorPanel,
}

fn read(path: &Path, opts: &LoadOptions, start: i64, end: i64) -> Result<RawTable> {
    Ok(read_table(path, opts)?.window(start, end))
}

fn single_column(table: &RawTable, what: &Path) -> Result<RawTable> {
    let idx = match table.column_index("RF") {
        Some(i) => i,
        None if table.columns.len() == 1 => 0,
        None => {
            return Err(PremiaError::Parse {
                line: 1,
                message: format!("{}: no RF column and more than one series", what.display()),
            })
        }
    };
    Ok(RawTable {
        columns: vec![table.columns[idx].clone()],
        periods: table.periods.clone(),
        values: DMatrix::from_column_slice(table.periods.len(), 1, table.values.column(idx).as_slice()),
    })
}

fn keep_periods(table: &RawTable, keep: &BTreeSet<i64>) -> RawTable {
    let rows: Vec<usize> = (0..table.periods.len()).filter(|&i| keep.contains(&table.periods[i])).collect();
    RawTable {
        columns: table.columns.clone(),
        periods: rows.iter().map(|&i| table.periods[i]).collect(),
        values: table.values.select_rows(&rows),
    }
}

/// Loads and aligns everything; returns are made excess when a risk-free rate is available.
pub fn load(args: &DataArgs) -> Result<Inputs> {
    let (start, end) = (args.start.unwrap_or(i64::MIN), args.end.unwrap_or(i64::MAX));
    let opts = LoadOptions {
        block: args.block,
        ..LoadOptions::default()
    };
    let raw = read(&args.returns, &opts, start, end)?;
    let factor_table = read(&args.factors, &LoadOptions::default(), start, end)?;
    let rf_in_factors = factor_table.column_index("RF");
    let rf = match (&args.riskfree, rf_in_factors) {
        (Some(p), _) => Some(single_column(&read(p, &LoadOptions::default(), start, end)?, p)?),
        (None, Some(_)) => Some(single_column(&factor_table, &args.factors)?),
        (None, None) => None,
    };
    let factor_table = match rf_in_factors {
        Some(i) => factor_table.without_column(i),
        None => factor_table,
    };
    let returns = match rf {
        Some(rf) => {
            let common: BTreeSet<i64> = rf.periods.iter().copied().filter(|p| raw.periods.contains(p)).collect();
            if common.is_empty() {
                return Err(PremiaError::Alignment("returns and risk-free rate share no periods".into()));
            }
            build_excess_returns(&keep_periods(&raw, &common), &keep_periods(&rf, &common))?
        }
        None => returns_from_table(&raw)?,
    };
    let mut factors = FactorPanel::from_table(&factor_table)?;
    if let Some(p) = &args.momentum {
        let mom = FactorPanel::from_table(&single_momentum(&read(p, &LoadOptions::default(), start, end)?, p)?)?;
        let (f, m) = align_factors(&factors, &mom)?;
        factors = f.with_factor("Mom", &m.values().column(0).into_owned())?;
    }
    let (returns, factors) = align(&returns, &factors)?;
    Ok(Inputs { returns, factors })
}

fn single_momentum(table: &RawTable, path: &Path) -> Result<RawTable> {
    if table.columns.len() == 1 {
        return Ok(table.clone());
    }
    match table.column_index("Mom") {
        Some(i) => Ok(RawTable {
            columns: vec!["Mom".into()],
            periods: table.periods.clone(),
            values: DMatrix::from_column_slice(table.periods.len(), 1, table.values.column(i).as_slice()),
        }),
        None => Err(PremiaError::Parse {
            line: 1,
            message: format!("{}: expected one series or a Mom column", path.display()),
        }),
    }
}

fn align_factors(a: &FactorPanel, b: &FactorPanel) -> Result<(FactorPanel, FactorPanel)> {
    let bp: BTreeSet<i64> = b.periods().iter().copied().collect();
    let ia: Vec<usize> = (0..a.n_periods()).filter(|&i| bp.contains(&a.periods()[i])).collect();
    if ia.is_empty() {
        return Err(PremiaError::Alignment("factors and momentum share no periods".into()));
    }
    let ap: BTreeSet<i64> = ia.iter().map(|&i| a.periods()[i]).collect();
    let ib: Vec<usize> = (0..b.n_periods()).filter(|&i| ap.contains(&b.periods()[i])).collect();
    Ok((a.select_periods(&ia)?, b.select_periods(&ib)?))
}

/// Reads a `k_v x k_F` matrix, one comma-separated row per line.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| PremiaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| PremiaError::Parse {
                line: n + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(PremiaError::RaggedRow {
                    line: n + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PremiaError::Parse {
            line: 0,
            message: format!("{}: empty matrix", path.display()),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat))
}
