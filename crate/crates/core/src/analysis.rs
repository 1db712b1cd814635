//! Security versus performance model.
//!
//! With `n` lines of code, `k` instructions per line and a per-operation unit
//! `o`, the base operation count is `n*k*o`. Baseline metrics are
//! `Perf = n*k*o` and `Sec = 1 - 1/(n*k*o)`. Each of the four security
//! properties (invulnerable, integrity, verification, trustworthy) adds
//! `n*k*o / l_i` instructions, giving
//!
//! ```text
//! Perf = (1 + 1/l1 + 1/l2 + 1/l3 + 1/l4) * n*k*o
//! Sec  = 1 - (1 + l1 + l2 + l3 + l4) / (n*k*o)
//! ```
//!
//! Formulas are evaluated as written. Note that the secured `Sec` is never
//! above the baseline one for positive `l_i`, and can go negative; the raw
//! value is always reported and a separate field clamps it to `[0, 1]`.
//! `l_i` reads most naturally as a dilution ratio (original lines per added
//! line), which is what makes the `Perf` term an overhead factor.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("DomainError: {0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, AnalysisError> {
    Err(AnalysisError::Domain(msg.into()))
}

pub const DEFAULT_OP_UNIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisInput {
    pub n: u64,
    pub k: f64,
    pub o: f64,
    /// Overhead coefficients for invulnerable, integrity, verification, trustworthy.
    pub l: [f64; 4],
}

impl AnalysisInput {
    pub fn new(n: u64, k: f64, o: f64, l: [f64; 4]) -> Result<Self, AnalysisError> {
        let input = Self { n, k, o, l };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        check_base(self.n, self.k, self.o)?;
        for (i, l) in self.l.iter().enumerate() {
            check_positive(&format!("l{}", i + 1), *l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResult {
    pub base_ops: f64,
    pub perf_base: f64,
    pub sec_base: f64,
    pub perf_secured: f64,
    /// Secured security metric exactly as the formula gives it.
    pub sec_secured: f64,
    /// `sec_secured` clamped to `[0, 1]`.
    pub sec_clamped: f64,
    pub overhead_ops: [f64; 4],
}

fn check_positive(name: &str, v: f64) -> Result<(), AnalysisError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be a positive finite number, got {v}"))
    }
}

fn check_base(n: u64, k: f64, o: f64) -> Result<(), AnalysisError> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    check_positive("k", k)?;
    check_positive("o", o)
}

/// `n * k * o`.
pub fn base_operations(n: u64, k: f64, o: f64) -> Result<f64, AnalysisError> {
    check_base(n, k, o)?;
    Ok(n as f64 * k * o)
}

/// Baseline `(Perf, Sec)`; undefined below one operation.
pub fn baseline_metrics(n: u64, k: f64, o: f64) -> Result<(f64, f64), AnalysisError> {
    let ops = base_operations(n, k, o)?;
    if ops < 1.0 {
        return domain(format!("n*k*o = {ops} is below one operation"));
    }
    Ok((ops, 1.0 - 1.0 / ops))
}

/// Additional instructions for one property: `n*k*o / l`.
pub fn property_overhead(n: u64, k: f64, o: f64, l: f64) -> Result<f64, AnalysisError> {
    check_positive("l", l)?;
    Ok(base_operations(n, k, o)? / l)
}

pub fn secured_metrics(input: &AnalysisInput) -> Result<AnalysisResult, AnalysisError> {
    input.validate()?;
    let (perf_base, sec_base) = baseline_metrics(input.n, input.k, input.o)?;
    let ops = perf_base;
    let [l1, l2, l3, l4] = input.l;
    let perf_secured = (1.0 + 1.0 / l1 + 1.0 / l2 + 1.0 / l3 + 1.0 / l4) * ops;
    let sec_secured = 1.0 - (1.0 / ops) * (1.0 + l1 + l2 + l3 + l4);
    let mut overhead_ops = [0.0; 4];
    for (slot, l) in overhead_ops.iter_mut().zip(input.l) {
        *slot = property_overhead(input.n, input.k, input.o, l)?;
    }
    Ok(AnalysisResult {
        base_ops: ops,
        perf_base,
        sec_base,
        perf_secured,
        sec_secured,
        sec_clamped: sec_secured.clamp(0.0, 1.0),
        overhead_ops,
    })
}

/// Inclusive `start:stop:step` range of line counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NRange {
    pub start: u64,
    pub stop: u64,
    pub step: u64,
}

impl NRange {
    pub fn new(start: u64, stop: u64, step: u64) -> Result<Self, AnalysisError> {
        if step == 0 {
            return domain("range step must be positive");
        }
        if start == 0 {
            return domain("range must start at n >= 1");
        }
        if start > stop {
            return domain(format!("empty range {start}:{stop}:{step}"));
        }
        Ok(Self { start, stop, step })
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> {
        (self.start..=self.stop).step_by(self.step as usize)
    }
}

impl FromStr for NRange {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return domain(format!("range {s:?} is not start:stop:step"));
        };
        let num = |p: &str| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| AnalysisError::Domain(format!("range {s:?}: {p:?} is not a count")))
        };
        Self::new(num(start)?, num(stop)?, num(step)?)
    }
}

impl fmt::Display for NRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub perf_base: f64,
    pub sec_base: f64,
    pub perf_secured: f64,
    pub sec_secured_raw: f64,
    pub sec_clamped: f64,
}

pub const SWEEP_HEADER: &str = "n,perf_base,sec_base,perf_secured,sec_secured_raw,sec_clamped";

pub fn sweep(range: NRange, k: f64, o: f64, l: [f64; 4]) -> Result<Vec<SweepRow>, AnalysisError> {
    range
        .iter()
        .map(|n| {
            let r = secured_metrics(&AnalysisInput::new(n, k, o, l)?)?;
            Ok(SweepRow {
                n,
                perf_base: r.perf_base,
                sec_base: r.sec_base,
                perf_secured: r.perf_secured,
                sec_secured_raw: r.sec_secured,
                sec_clamped: r.sec_clamped,
            })
        })
        .collect()
}

/// Write sweep rows as CSV: fixed header, LF endings, 12 significant digits.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            fmt_sig(r.perf_base),
            fmt_sig(r.sec_base),
            fmt_sig(r.perf_secured),
            fmt_sig(r.sec_secured_raw),
            fmt_sig(r.sec_clamped)
        )?;
    }
    Ok(())
}

/// Format with 12 significant digits, `%.12g` style: trailing zeros are
/// dropped and very large or small magnitudes switch to exponent form.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
