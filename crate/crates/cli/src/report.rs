//! Estimation reports: premia by method next to average factor returns.

use std::fmt::Write as _;

use nalgebra::DVector;
use premia_core::inference::SpecificationTest;
use premia_core::panel::format_f64;
use premia_core::{EstimateResult, LongRunVariance};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub label: String,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec_test: Option<SpecRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecRow {
    pub wald: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject_at_5pct: bool,
    pub non_psd_weight: bool,
}

impl From<&SpecificationTest> for SpecRow {
    fn from(s: &SpecificationTest) -> Self {
        SpecRow {
            wald: s.test.statistic,
            dof: s.test.dof,
            p_value: s.test.p_value,
            reject_at_5pct: s.test.reject_at_5pct,
            non_psd_weight: s.non_psd_weight,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub factors: Vec<String>,
    pub n_assets: usize,
    pub n_periods: usize,
    pub first_period: i64,
    pub last_period: i64,
    pub nw_lags: usize,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(factors: Vec<String>, n_assets: usize, periods: &[i64], nw_lags: usize) -> Self {
        Report {
            factors,
            n_assets,
            n_periods: periods.len(),
            first_period: periods.first().copied().unwrap_or_default(),
            last_period: periods.last().copied().unwrap_or_default(),
            nw_lags,
            rows: Vec::new(),
        }
    }

    /// Average realized factor returns with Newey-West standard errors.
    pub fn push_average(&mut self, means: &DVector<f64>, lrv: &LongRunVariance) {
        let t = self.n_periods as f64;
        self.rows.push(Row {
            label: "average".into(),
            values: means.iter().copied().collect(),
            std_errors: lrv.omega.diagonal().iter().map(|v| (v / t).sqrt()).collect(),
            spec_test: None,
        });
    }

    pub fn push_estimate(&mut self, est: &EstimateResult, spec: Option<&SpecificationTest>) {
        self.rows.push(Row {
            label: est.method.to_string(),
            values: est.lambda.iter().copied().collect(),
            std_errors: est.std_errors.iter().copied().collect(),
            spec_test: spec.map(SpecRow::from),
        });
    }

    /// Two lines per row: estimates, then standard errors.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for f in &self.factors {
            out.push(',');
            out.push_str(f);
        }
        out.push_str(",wald,dof,p_value\n");
        for r in &self.rows {
            out.push_str(&r.label);
            for v in &r.values {
                write!(out, ",{}", format_f64(*v)).unwrap();
            }
            match &r.spec_test {
                Some(s) => writeln!(out, ",{},{},{}", format_f64(s.wald), s.dof, format_f64(s.p_value)).unwrap(),
                None => out.push_str(",,,\n"),
            }
            write!(out, "{}_se", r.label).unwrap();
            for v in &r.std_errors {
                write!(out, ",{}", format_f64(*v)).unwrap();
            }
            out.push_str(",,,\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Specification tests on their own.
#[derive(Debug, Clone, Serialize)]
pub struct SpecReport {
    pub factors: Vec<String>,
    pub tests: Vec<(String, SpecRow)>,
}

impl SpecReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,wald,dof,p_value,reject_at_5pct,non_psd_weight\n");
        for (m, s) in &self.tests {
            writeln!(
                out,
                "{m},{},{},{},{},{}",
                format_f64(s.wald),
                s.dof,
                format_f64(s.p_value),
                s.reject_at_5pct,
                s.non_psd_weight
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry<'a> {
            method: &'a str,
            #[serde(flatten)]
            test: &'a SpecRow,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            factors: &'a [String],
            tests: Vec<Entry<'a>>,
        }
        let out = Out {
            factors: &self.factors,
            tests: self.tests.iter().map(|(m, t)| Entry { method: m, test: t }).collect(),
        };
        serde_json::to_string_pretty(&out).expect("report serializes") + "\n"
    }
}
