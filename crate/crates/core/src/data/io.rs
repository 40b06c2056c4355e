//! On-disk dataset layout.
//!
//! ```text
//! <root>/schema.txt          key = value manifest (format, modalities, classes)
//! <root>/<obs-id>/<name>.csv one file per modality: header `t,v0,..`, one row per sample
//! <root>/<obs-id>/target.csv optional: header `t,class`
//! ```
//!
//! Observation directories are read in lexicographic order. Values are
//! written with Rust's shortest round-trip float formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, ModalitySeries, Observation, Schema, Target};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvFile};

pub const SCHEMA_FILE: &str = "schema.txt";
pub const TARGET_FILE: &str = "target.csv";
const FORMAT_TAG: &str = "itgpt-dataset/1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub observations: usize,
    /// Total samples per modality, in schema order.
    pub samples: Vec<usize>,
    pub target_samples: usize,
    pub span: Option<(f64, f64)>,
    /// Modality files whose rows had to be re-sorted by timestamp.
    pub resorted: usize,
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    let mut kv = KvFile::default();
    kv.push("format", FORMAT_TAG);
    kv.push(
        "modalities",
        schema
            .modalities
            .iter()
            .map(|(n, d)| format!("{n}:{d}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    kv.push("num_classes", schema.num_classes);
    kv.push("class_names", schema.class_names.join(","));
    fs::write(path, kv.render()).map_err(|e| Error::io(path, e))
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let kv = KvFile::read(path)?;
    let need = |key: &str| {
        kv.get(key)
            .ok_or_else(|| Error::data(path, 0, format!("missing `{key}`")))
    };
    if need("format")? != FORMAT_TAG {
        return Err(Error::data(path, kv.line_of("format"), format!("unsupported format `{}`", need("format")?)));
    }
    let mut modalities = Vec::new();
    for item in need("modalities")?.split(',') {
        let (name, dim) = item
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::data(path, kv.line_of("modalities"), format!("expected name:dim, got `{item}`")))?;
        let dim: usize = dim
            .trim()
            .parse()
            .map_err(|_| Error::data(path, kv.line_of("modalities"), format!("bad dimension in `{item}`")))?;
        modalities.push((name.trim().to_string(), dim));
    }
    let num_classes: usize = parse_value("num_classes", need("num_classes")?)
        .map_err(|e| Error::data(path, kv.line_of("num_classes"), e.to_string()))?;
    let class_names = match kv.get("class_names") {
        Some(s) if !s.is_empty() => s.split(',').map(|c| c.trim().to_string()).collect(),
        _ => (0..num_classes).map(|c| format!("class{c}")).collect(),
    };
    let schema = Schema {
        modalities,
        num_classes,
        class_names,
    };
    schema
        .validate()
        .map_err(|e| Error::data(path, 0, e.to_string()))?;
    Ok(schema)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn write_series(series: &ModalitySeries, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..series.dim()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for (i, &t) in series.times.iter().enumerate() {
        let mut rec = vec![fmt_f64(t)];
        rec.extend(series.values.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_target(target: &Target, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "class"])?;
    for (&t, &c) in target.times.iter().zip(&target.labels) {
        w.write_record([fmt_f64(t), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(Error::Invalid(format!("observation id `{id}` is not a valid directory name")));
    }
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_schema(&dataset.schema, &root.join(SCHEMA_FILE))?;
    for obs in &dataset.observations {
        check_id(&obs.id)?;
        let dir = root.join(&obs.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for series in &obs.modalities {
            write_series(series, &dir.join(format!("{}.csv", series.name)))?;
        }
        if let Some(target) = &obs.target {
            write_target(target, &dir.join(TARGET_FILE))?;
        }
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::data(path, line, format!("non-numeric value `{field}`")))?;
    if !v.is_finite() {
        return Err(Error::data(path, line, format!("non-finite value `{field}`")));
    }
    Ok(v)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Reads one modality file; returns the series and whether rows were re-sorted.
fn read_series(path: &Path, name: &str, dim: usize) -> Result<(ModalitySeries, bool)> {
    let mut reader = csv_reader(path)?;
    let width = reader.headers()?.len();
    if width != dim + 1 {
        return Err(Error::data(
            path,
            1,
            format!("expected {} columns (t + {dim} values), header has {width}", dim + 1),
        ));
    }
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != dim + 1 {
            return Err(Error::data(path, line, format!("expected {} fields, got {}", dim + 1, rec.len())));
        }
        let t = parse_f64(path, line, &rec[0])?;
        let vals = (1..=dim)
            .map(|j| parse_f64(path, line, &rec[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, vals));
    }
    let sorted = rows.windows(2).all(|w| w[0].0 <= w[1].0);
    if !sorted {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let times = rows.iter().map(|r| r.0).collect();
    let data = rows.into_iter().flat_map(|r| r.1).collect::<Vec<_>>();
    let n = data.len() / dim;
    let series = ModalitySeries {
        name: name.to_string(),
        times,
        values: Tensor::matrix(n, dim, data)?,
    };
    Ok((series, !sorted))
}

fn read_target(path: &Path, num_classes: usize) -> Result<(Target, bool)> {
    let mut reader = csv_reader(path)?;
    if reader.headers()?.len() != 2 {
        return Err(Error::data(path, 1, "target file needs columns `t,class`"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::data(path, line, "expected 2 fields"));
        }
        let t = parse_f64(path, line, &rec[0])?;
        let c: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(path, line, format!("class `{}` is not an integer", &rec[1])))?;
        if c >= num_classes {
            return Err(Error::data(path, line, format!("class {c} outside 0..{num_classes}")));
        }
        rows.push((t, c));
    }
    let sorted = rows.windows(2).all(|w| w[0].0 <= w[1].0);
    if !sorted {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok((
        Target {
            times: rows.iter().map(|r| r.0).collect(),
            labels: rows.iter().map(|r| r.1).collect(),
        },
        !sorted,
    ))
}

fn observation_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<(Dataset, LoadReport)> {
    let schema = read_schema(&root.join(SCHEMA_FILE))?;
    let mut report = LoadReport {
        samples: vec![0; schema.modalities.len()],
        ..LoadReport::default()
    };
    let mut observations = Vec::new();
    for dir in observation_dirs(root)? {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::data(&dir, 0, "observation directory name is not UTF-8"))?
            .to_string();
        let expected: Vec<String> = schema
            .modalities
            .iter()
            .map(|(n, _)| format!("{n}.csv"))
            .chain(std::iter::once(TARGET_FILE.to_string()))
            .collect();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let fname = entry.file_name().to_string_lossy().into_owned();
            if fname.ends_with(".csv") && !expected.contains(&fname) {
                return Err(Error::data(entry.path(), 0, "modality not declared in the schema"));
            }
        }
        let mut modalities = Vec::with_capacity(schema.modalities.len());
        for (m, (name, dim)) in schema.modalities.iter().enumerate() {
            let path = dir.join(format!("{name}.csv"));
            if !path.exists() {
                return Err(Error::data(&path, 0, format!("missing file for modality `{name}`")));
            }
            let (series, resorted) = read_series(&path, name, *dim)?;
            report.samples[m] += series.len();
            report.resorted += resorted as usize;
            modalities.push(series);
        }
        let target_path = dir.join(TARGET_FILE);
        let target = if target_path.exists() {
            let (t, resorted) = read_target(&target_path, schema.num_classes)?;
            report.resorted += resorted as usize;
            report.target_samples += t.len();
            Some(t)
        } else {
            None
        };
        let obs = Observation {
            id,
            modalities,
            target,
        };
        if let Some((lo, hi)) = obs.span() {
            report.span = Some(match report.span {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        observations.push(obs);
    }
    report.observations = observations.len();
    let dataset = Dataset::new(schema, observations)?;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let schema = Schema::new(vec![("a".into(), 2), ("b".into(), 1)], 3).unwrap();
        let obs = Observation {
            id: "obs_0".into(),
            modalities: vec![
                ModalitySeries::new(
                    "a",
                    vec![0.1, 0.1, 2.0 / 3.0],
                    Tensor::matrix(3, 2, vec![1e-300, -2.5, 1e17, 0.1 + 0.2, 7.0, -0.0]).unwrap(),
                )
                .unwrap(),
                ModalitySeries::new("b", vec![], Tensor::zeros(&[0, 1])).unwrap(),
            ],
            target: Some(Target {
                times: vec![0.5, 1.0],
                labels: vec![2, 0],
            }),
        };
        Dataset::new(schema, vec![obs]).unwrap()
    }

    #[test]
    fn write_then_load_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        write_dataset(&ds, dir.path()).unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(report.observations, 1);
        assert_eq!(report.samples, vec![3, 0]);
        assert_eq!(report.target_samples, 2);
        assert_eq!(report.resorted, 0);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(tiny().schema, vec![]).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(report.observations, 0);
        assert_eq!(report.samples, vec![0, 0]);
    }

    #[test]
    fn unsorted_rows_are_resorted() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join("obs_0/a.csv"), "t,v0,v1\n2,1,1\n1,0,0\n").unwrap();
        let (back, report) = load_dataset(dir.path()).unwrap();
        assert_eq!(report.resorted, 1);
        assert_eq!(back.observations[0].modalities[0].times, vec![1.0, 2.0]);
        assert_eq!(back.observations[0].modalities[0].values.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn errors_carry_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join("obs_0/a.csv"), "t,v0,v1\n0,1,1\n1,x,0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("a.csv:3") && err.contains("non-numeric"), "{err}");

        fs::write(dir.path().join("obs_0/a.csv"), "t,v0\n0,1\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected 3 columns"), "{err}");

        fs::write(dir.path().join("obs_0/a.csv"), "t,v0,v1\n").unwrap();
        fs::write(dir.path().join("obs_0/zzz.csv"), "t,v0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("not declared"), "{err}");
        fs::remove_file(dir.path().join("obs_0/zzz.csv")).unwrap();

        fs::remove_file(dir.path().join("obs_0/b.csv")).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("missing file"));
    }

    #[test]
    fn schema_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SCHEMA_FILE);
        write_schema(&Schema::compx(), &p).unwrap();
        assert_eq!(read_schema(&p).unwrap(), Schema::compx());
        fs::write(&p, "format = other\n").unwrap();
        assert!(read_schema(&p).is_err());
        fs::write(&p, "format = itgpt-dataset/1\nmodalities = a:x\nnum_classes = 2\n").unwrap();
        assert!(read_schema(&p).unwrap_err().to_string().contains("bad dimension"));
    }
}
