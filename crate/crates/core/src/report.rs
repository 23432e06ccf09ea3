//! Consistency-report aggregation and CSV/markdown emission.
//!
//! A report has one row per offset step f ∈ {0…10}; each row aggregates the
//! per-trial normalized deviations into the table schema: mean, max and min
//! signed deviation, MSE, percentage buckets and a degenerate-baseline
//! count. The f = 0 row is the baseline row and prints N/A statistics.

use crate::grid::AngleDeg;

/// Configuration echo embedded in every report header.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportConfig {
    pub structure: String,
    pub step: AngleDeg,
    pub conv_layers: usize,
    pub activation: String,
    pub trials: usize,
    pub seed: u64,
    pub image_side: usize,
    pub canvas_side: usize,
    pub param_source: String,
    pub image_source: String,
}

/// One offset row. `deviations` keeps the raw per-trial worst-node signed
/// deviations of the non-degenerate trials for downstream diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetRow {
    pub f: u8,
    pub offset: AngleDeg,
    pub mean_normalized: f64,
    pub max_deviation: f64,
    pub min_deviation: f64,
    pub mse: f64,
    /// |deviation| buckets: <1%, <2%, <3%, <4%, <5%, ≥5%.
    pub buckets: [u64; 6],
    /// Supplementary count: trials within 0.5%.
    pub within_half_pct: u64,
    pub degenerate: u64,
    pub deviations: Vec<f64>,
}

impl OffsetRow {
    /// Aggregate a row from per-trial data. `worst` carries one signed
    /// worst-node deviation per non-degenerate trial; `all_deviations` the
    /// per-node deviations; `normalized_means` the per-trial node-mean
    /// normalized outputs.
    pub fn aggregate(
        f: u8,
        offset: AngleDeg,
        worst: Vec<f64>,
        all_deviations: &[f64],
        normalized_means: &[f64],
        degenerate: u64,
    ) -> OffsetRow {
        let mut buckets = [0u64; 6];
        let mut within_half_pct = 0u64;
        for d in &worst {
            let a = d.abs();
            let slot = if a < 0.01 {
                0
            } else if a < 0.02 {
                1
            } else if a < 0.03 {
                2
            } else if a < 0.04 {
                3
            } else if a < 0.05 {
                4
            } else {
                5
            };
            buckets[slot] += 1;
            if a < 0.005 {
                within_half_pct += 1;
            }
        }
        let mean_normalized = if normalized_means.is_empty() {
            f64::NAN
        } else {
            normalized_means.iter().sum::<f64>() / normalized_means.len() as f64
        };
        let max_deviation = all_deviations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_deviation = all_deviations.iter().copied().fold(f64::INFINITY, f64::min);
        let mse = if all_deviations.is_empty() {
            f64::NAN
        } else {
            all_deviations.iter().map(|d| d * d).sum::<f64>() / all_deviations.len() as f64
        };
        OffsetRow {
            f,
            offset,
            mean_normalized,
            max_deviation,
            min_deviation,
            mse,
            buckets,
            within_half_pct,
            degenerate,
            deviations: worst,
        }
    }

    pub fn trial_count(&self) -> u64 {
        self.buckets.iter().sum::<u64>() + self.degenerate
    }

    pub fn median_abs_deviation(&self) -> Option<f64> {
        if self.deviations.is_empty() {
            return None;
        }
        let mut mags: Vec<f64> = self.deviations.iter().map(|d| d.abs()).collect();
        mags.sort_by(f64::total_cmp);
        Some(mags[mags.len() / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub config: ReportConfig,
    pub rows: Vec<OffsetRow>,
}

impl ConsistencyReport {
    /// Median |deviation| pooled over the off-step rows (0 < f < 10); the
    /// quantity behind the activation/step-angle monotonicity diagnostics.
    pub fn median_offstep_abs_deviation(&self) -> Option<f64> {
        let mut mags: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.f > 0 && r.f < 10)
            .flat_map(|r| r.deviations.iter().map(|d| d.abs()))
            .collect();
        if mags.is_empty() {
            return None;
        }
        mags.sort_by(f64::total_cmp);
        Some(mags[mags.len() / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

fn stat(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "N/A".to_owned()
    }
}

fn header_lines(config: &ReportConfig, comment: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("{comment} gricnn consistency report\n"));
    s.push_str(&format!("{comment} structure {}\n", config.structure));
    s.push_str(&format!("{comment} step_deg {}\n", config.step));
    s.push_str(&format!("{comment} conv_layers {}\n", config.conv_layers));
    s.push_str(&format!("{comment} activation {}\n", config.activation));
    s.push_str(&format!("{comment} trials {}\n", config.trials));
    s.push_str(&format!("{comment} seed {}\n", config.seed));
    s.push_str(&format!(
        "{comment} image {} side {} canvas {}\n",
        config.image_source, config.image_side, config.canvas_side
    ));
    s.push_str(&format!("{comment} params {}\n", config.param_source));
    s
}

/// Render a report. Columns: mean, max diff, min diff, MSE, the six
/// percentage buckets, then the <0.5% count and the degenerate count.
/// The f = 0 baseline row prints N/A statistics.
pub fn emit_report(report: &ConsistencyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => emit_markdown(report),
    }
}

const COLUMNS: &str =
    "offset_f,offset_deg,mean,max_diff,min_diff,mse,lt1,lt2,lt3,lt4,lt5,ge5,lt_half,degenerate";

fn row_stats(row: &OffsetRow) -> (String, String, String, String) {
    if row.f == 0 {
        ("1.00000".to_owned(), "N/A".to_owned(), "N/A".to_owned(), "N/A".to_owned())
    } else {
        (
            stat(row.mean_normalized, 5),
            stat(row.max_deviation, 5),
            stat(row.min_deviation, 5),
            stat(row.mse, 7),
        )
    }
}

fn emit_csv(report: &ConsistencyReport) -> String {
    let mut out = header_lines(&report.config, "#");
    out.push_str(COLUMNS);
    out.push('\n');
    for row in &report.rows {
        let (mean, max, min, mse) = row_stats(row);
        out.push_str(&format!(
            "{},{:.5},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.f,
            row.offset.degrees_f64(),
            mean,
            max,
            min,
            mse,
            row.buckets[0],
            row.buckets[1],
            row.buckets[2],
            row.buckets[3],
            row.buckets[4],
            row.buckets[5],
            row.within_half_pct,
            row.degenerate,
        ));
    }
    out
}

fn emit_markdown(report: &ConsistencyReport) -> String {
    let mut out = header_lines(&report.config, ">");
    out.push('\n');
    out.push_str(
        "| offset f | offset ° | mean | max diff | min diff | MSE | <1% | <2% | <3% | <4% | <5% | ≥5% | <0.5% | degenerate |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for row in &report.rows {
        let (mean, max, min, mse) = row_stats(row);
        out.push_str(&format!(
            "| {} | {:.5} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            row.f,
            row.offset.degrees_f64(),
            mean,
            max,
            min,
            mse,
            row.buckets[0],
            row.buckets[1],
            row.buckets[2],
            row.buckets[3],
            row.buckets[4],
            row.buckets[5],
            row.within_half_pct,
            row.degenerate,
        ));
    }
    out
}

/// Parsed CSV row used by the round-trip checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub f: u8,
    pub offset_deg: f64,
    pub mean: Option<f64>,
    pub max_diff: Option<f64>,
    pub min_diff: Option<f64>,
    pub mse: Option<f64>,
    pub buckets: [u64; 6],
    pub within_half_pct: u64,
    pub degenerate: u64,
}

/// Parse a CSV report emitted by [`emit_report`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != COLUMNS {
                return Err(format!("unexpected column header {line:?}"));
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 14 {
            return Err(format!("bad row {line:?}"));
        }
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s == "N/A" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("bad float {s:?}"))
            }
        };
        let int =
            |s: &str| -> Result<u64, String> { s.parse().map_err(|_| format!("bad count {s:?}")) };
        rows.push(CsvRow {
            f: parts[0].parse().map_err(|_| "bad offset_f".to_owned())?,
            offset_deg: parts[1].parse().map_err(|_| "bad offset_deg".to_owned())?,
            mean: opt(parts[2])?,
            max_diff: opt(parts[3])?,
            min_diff: opt(parts[4])?,
            mse: opt(parts[5])?,
            buckets: [
                int(parts[6])?,
                int(parts[7])?,
                int(parts[8])?,
                int(parts[9])?,
                int(parts[10])?,
                int(parts[11])?,
            ],
            within_half_pct: int(parts[12])?,
            degenerate: int(parts[13])?,
        });
    }
    if !saw_header {
        return Err("missing column header".into());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ReportConfig {
        ReportConfig {
            structure: "ssk".into(),
            step: AngleDeg::from_int(15),
            conv_layers: 3,
            activation: "sigmoid".into(),
            trials: 4,
            seed: 7,
            image_side: 63,
            canvas_side: 91,
            param_source: "random".into(),
            image_source: "synthetic".into(),
        }
    }

    fn row(f: u8, devs: Vec<f64>) -> OffsetRow {
        let all = devs.clone();
        let norm: Vec<f64> = devs.iter().map(|d| 1.0 + d).collect();
        OffsetRow::aggregate(f, AngleDeg::new(15 * f as i64, 10).unwrap(), devs, &all, &norm, 0)
    }

    #[test]
    fn bucket_edges() {
        let r = row(5, vec![0.0005, 0.009, -0.015, 0.031, 0.26, -0.0499]);
        assert_eq!(r.buckets, [2, 1, 0, 1, 1, 1]);
        assert_eq!(r.within_half_pct, 1);
        assert_eq!(r.trial_count(), 6);
    }

    #[test]
    fn empty_report_renders_header_only() {
        let report = ConsistencyReport { config: config(), rows: vec![] };
        let csv = emit_report(&report, ReportFormat::Csv);
        let data_lines: Vec<&str> =
            csv.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
        assert_eq!(data_lines, vec![COLUMNS]);
        assert!(parse_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn full_sweep_renders_eleven_rows() {
        let rows: Vec<OffsetRow> = (0..=10).map(|f| row(f, vec![0.001, -0.002])).collect();
        let report = ConsistencyReport { config: config(), rows };
        let csv = emit_report(&report, ReportFormat::Csv);
        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 11);
        // The f=0 baseline row prints mean 1 and N/A statistics.
        assert_eq!(parsed[0].mean, Some(1.0));
        assert_eq!(parsed[0].max_diff, None);
        assert_eq!(parsed[0].mse, None);
        assert!(parsed[1].max_diff.is_some());
    }

    #[test]
    fn csv_round_trip_preserves_counts() {
        let rows: Vec<OffsetRow> = (0..=10)
            .map(|f| row(f, vec![0.0001 * f as f64, -0.012, 0.051, 0.0, 0.023]))
            .collect();
        let report = ConsistencyReport { config: config(), rows: rows.clone() };
        let csv = emit_report(&report, ReportFormat::Csv);
        let parsed = parse_csv(&csv).unwrap();
        for (orig, back) in rows.iter().zip(&parsed) {
            assert_eq!(orig.f, back.f);
            assert_eq!(orig.buckets, back.buckets);
            assert_eq!(orig.within_half_pct, back.within_half_pct);
            assert_eq!(orig.degenerate, back.degenerate);
        }
    }

    #[test]
    fn markdown_contains_all_rows() {
        let rows: Vec<OffsetRow> = (0..=10).map(|f| row(f, vec![0.001])).collect();
        let report = ConsistencyReport { config: config(), rows };
        let md = emit_report(&report, ReportFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 11 + 1);
        assert!(md.contains("N/A"));
    }

    #[test]
    fn median_pools_offstep_rows_only() {
        let mut rows = vec![row(0, vec![0.0; 3])];
        rows.extend((1..=9).map(|f| row(f, vec![0.01 * f as f64; 3])));
        rows.push(row(10, vec![0.5; 3]));
        let report = ConsistencyReport { config: config(), rows };
        let median = report.median_offstep_abs_deviation().unwrap();
        assert!(median > 0.0 && median < 0.1, "median {median}");
    }
}
