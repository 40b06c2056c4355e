//! Result and loss-trace tables, and their aggregation into box-plot statistics.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{ResultRow, TraceRow};

pub const RESULT_COLUMNS: [&str; 9] = ["fold", "scheme", "depth", "mixing", "dropout", "p_l", "seed", "metric", "value"];
/// Columns a report may group by; `metric` is always a grouping key.
pub const GROUP_COLUMNS: [&str; 7] = ["fold", "scheme", "depth", "mixing", "dropout", "p_l", "seed"];
pub const TRACE_COLUMNS: [&str; 4] = ["epoch", "split", "objective", "loss"];
pub const UNDEFINED: &str = "undefined";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other:?}", path.display())),
    })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.fold.to_string(),
            r.scheme.to_string(),
            r.depth.to_string(),
            r.mixing.to_string(),
            format!("{:?}", r.dropout),
            format!("{:?}", r.label_fraction),
            r.seed.to_string(),
            r.metric.clone(),
            r.value.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:?}")),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.split.clone(), r.objective.clone(), format!("{:?}", r.loss)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One results row as text: the seven key columns, the metric name and the value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResult {
    pub keys: [String; 7],
    pub metric: String,
    pub value: Option<f64>,
}

pub fn read_results(path: &Path) -> Result<Vec<RawResult>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Invalid(format!("{}: {other:?}", path.display())),
        })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::Schema(format!(
            "{}: columns {header:?}, expected {RESULT_COLUMNS:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or_default().to_string();
        let raw = field(8);
        let value = if raw == UNDEFINED {
            None
        } else {
            Some(
                raw.parse::<f64>()
                    .map_err(|_| Error::data(path, line, format!("value `{raw}` is neither a number nor `{UNDEFINED}`")))?,
            )
        };
        out.push(RawResult {
            keys: std::array::from_fn(field),
            metric: field(7),
            value,
        });
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub undefined: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub mean: Option<f64>,
    /// Sample standard deviation; needs two values.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub fn summarize_values(values: &[Option<f64>]) -> Summary {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
    let std = mean.filter(|_| n > 1).map(|m| {
        let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Summary {
        n,
        undefined: values.len() - n,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        mean,
        std,
        min: v.first().copied(),
        max: v.last().copied(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Values of the group-by columns, in the requested order.
    pub group: Vec<String>,
    pub metric: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub group_by: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Groups rows by the named columns plus the metric, in sorted key order.
pub fn aggregate(rows: &[RawResult], group_by: &[String], metrics: &[String]) -> Result<Report> {
    let idx: Vec<usize> = group_by
        .iter()
        .map(|g| {
            GROUP_COLUMNS.iter().position(|c| c == g).ok_or_else(|| {
                Error::Config(format!("cannot group by `{g}`; choose from {}", GROUP_COLUMNS.join(", ")))
            })
        })
        .collect::<Result<_>>()?;
    let mut groups: BTreeMap<(Vec<String>, String), Vec<Option<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| metrics.is_empty() || metrics.contains(&r.metric)) {
        let key: Vec<String> = idx.iter().map(|&i| r.keys[i].clone()).collect();
        groups.entry((key, r.metric.clone())).or_default().push(r.value);
    }
    Ok(Report {
        group_by: group_by.to_vec(),
        rows: groups
            .into_iter()
            .map(|((group, metric), values)| ReportRow {
                group,
                metric,
                summary: summarize_values(&values),
            })
            .collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:?}"))
}

const STAT_COLUMNS: [&str; 10] = ["metric", "n", "undefined", "median", "q1", "q3", "mean", "std", "min", "max"];

impl Report {
    fn header(&self) -> Vec<String> {
        self.group_by.iter().cloned().chain(STAT_COLUMNS.iter().map(|s| s.to_string())).collect()
    }

    fn cells(row: &ReportRow) -> Vec<String> {
        let s = &row.summary;
        row.group
            .iter()
            .cloned()
            .chain([row.metric.clone(), s.n.to_string(), s.undefined.to_string()])
            .chain([s.median, s.q1, s.q3, s.mean, s.std, s.min, s.max].map(cell))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(Self::cells(row))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Whitespace-aligned table for the terminal.
    pub fn render_table(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(|r| {
            let mut c = Self::cells(r);
            for v in c.iter_mut().skip(self.group_by.len() + 3) {
                if let Ok(x) = v.parse::<f64>() {
                    *v = format!("{x:.4}");
                }
            }
            c
        }));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        lines
            .iter()
            .map(|l| {
                l.iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
                    + "\n"
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::itnet::MixingKind;
    use crate::objectives::Scheme;

    fn row(fold: usize, scheme: Scheme, metric: &str, value: Option<f64>) -> ResultRow {
        ResultRow {
            fold,
            scheme,
            depth: 2,
            mixing: MixingKind::Linear,
            dropout: 0.0,
            label_fraction: 1.0,
            seed: 0,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert_eq!(quantile(&v, 0.25), Some(1.75));
        assert_eq!(quantile(&v, 0.75), Some(3.25));
        assert_eq!(quantile(&[7.0], 0.25), Some(7.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn summary_skips_undefined() {
        let s = summarize_values(&[Some(1.0), None, Some(3.0)]);
        assert_eq!((s.n, s.undefined), (2, 1));
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.std, Some(2f64.sqrt()));
        assert_eq!(summarize_values(&[Some(1.0)]).std, None);
    }

    #[test]
    fn five_folds_give_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows: Vec<ResultRow> = (0..5).map(|f| row(f, Scheme::Ce, "auroc", Some(0.5 + 0.1 * f as f64))).collect();
        write_results(&p, &rows).unwrap();
        let raw = read_results(&p).unwrap();
        assert_eq!(raw.len(), 5);
        let rep = aggregate(&raw, &["scheme".into()], &[]).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].summary.median, Some(0.7));
        assert_eq!(rep.rows[0].group, vec!["CE".to_string()]);
    }

    #[test]
    fn undefined_values_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&p, &[row(0, Scheme::CeSsl, "f1", None)]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("CE+SSL"));
        assert_eq!(read_results(&p).unwrap()[0].value, None);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "fold,metric,value\n0,auroc,0.5\n").unwrap();
        assert!(matches!(read_results(&p), Err(Error::Schema(_))));
        assert!(aggregate(&[], &["colour".into()], &[]).is_err());
        let empty = aggregate(&[], &["scheme".into()], &[]).unwrap();
        assert!(empty.rows.is_empty());
        assert!(empty.render_table().starts_with("scheme"));
    }
}
