use std::fmt::Write as _;
use std::path::Path;

use super::evaluate::EvalReport;
use super::io::write_atomic;
use super::{HarnessError, Result};
use crate::evalkit::{CorrelationMode, Timing};

/// Side-by-side tables, one row (or column) per report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub csi_table: String,
    pub mse_table: String,
    pub correlation_table: String,
    pub reliability_table: String,
    pub cost_table: String,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Builds comparison tables. All reports must share the test split.
pub fn compare(reports: &[EvalReport], mode: CorrelationMode) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Config("nothing to compare".into()))?;
    if reports.iter().any(|r| r.test_hash != first.test_hash) {
        let listing: Vec<String> = reports.iter().map(|r| format!("{}={}", r.variant, r.test_hash)).collect();
        return Err(HarnessError::SplitMismatch(listing.join(", ")));
    }
    let names: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    let header = |first: &str| format!("{first},{}\n", names.join(","));

    let mut csi = String::from("variant");
    for row in &first.csi.rows {
        let _ = write!(csi, ",csi_{}", row.threshold);
    }
    csi.push('\n');
    for r in reports {
        csi.push_str(&r.variant);
        for row in &r.csi.rows {
            let _ = write!(csi, ",{}", num(row.csi));
        }
        csi.push('\n');
    }

    let column_table = |label: &str, keys: Vec<String>, col: &dyn Fn(&EvalReport) -> &[f64]| {
        let mut t = header(label);
        for (i, k) in keys.iter().enumerate() {
            t.push_str(k);
            for r in reports {
                let _ = write!(t, ",{}", col(r).get(i).map_or("NaN".into(), |&v| num(v)));
            }
            t.push('\n');
        }
        t
    };
    let leads: Vec<String> = (1..=first.mse.values.len()).map(|l| l.to_string()).collect();
    let mse = column_table("lead", leads.clone(), &|r| &r.mse.values);
    let correlation = column_table("lead", leads, &|r| r.correlation.curve(mode));
    let levels: Vec<String> = first.reliability.levels.iter().map(|l| format!("{l}")).collect();
    let reliability = column_table("nominal", levels, &|r| &r.reliability.observed);

    let mut cost = String::from("variant,parameter_count,flops_per_pass,passes,total_flops,gflops\n");
    for r in reports {
        let c = &r.cost;
        let _ = writeln!(
            cost,
            "{},{},{},{},{},{}",
            r.variant,
            c.parameter_count,
            c.flops_per_pass,
            c.passes,
            c.total_flops,
            c.total_flops as f64 / 1e9
        );
    }
    Ok(Comparison {
        csi_table: csi,
        mse_table: mse,
        correlation_table: correlation,
        reliability_table: reliability,
        cost_table: cost,
    })
}

pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<()> {
    for (name, text) in [
        ("table_csi.csv", &c.csi_table),
        ("mse_by_lead.csv", &c.mse_table),
        ("correlation.csv", &c.correlation_table),
        ("reliability.csv", &c.reliability_table),
        ("cost.csv", &c.cost_table),
    ] {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

/// Wall-clock table, kept apart from the deterministic outputs.
pub fn write_timing_table(dir: &Path, rows: &[(String, Timing)]) -> Result<()> {
    let mut s = String::from("variant,repeats,mean_seconds,sd_seconds\n");
    for (name, t) in rows {
        let _ = writeln!(s, "{name},{},{},{}", t.samples.len(), t.mean, t.sd);
    }
    write_atomic(&dir.join("timing.csv"), s.as_bytes())?;
    Ok(())
}
