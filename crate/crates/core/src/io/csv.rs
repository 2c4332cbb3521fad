//! CSV sample corpora, training logs and confusion matrices.
//!
//! A CSV corpus is a directory holding
//!
//! * `labels.csv`: `sample_id,label,subject_id`, one row per sample, in
//!   dataset order. `label` is a zero-based class index.
//! * `classes.csv` (optional): `label,name`. Without it classes are named by
//!   their index.
//! * `<sample_id>.csv`: `frame,joint,x,y,z`, one row per (frame, joint).
//!
//! Coordinates are read as 32-bit floats and written with the shortest
//! representation that parses back to the same `f32`, so export followed by
//! import is bitwise stable.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sequence::{Dataset, SkeletonSequence};
use crate::topology::TopologyKind;
use crate::train::{History, Metrics};

pub const SAMPLE_HEADER: [&str; 5] = ["frame", "joint", "x", "y", "z"];
pub const LABEL_HEADER: [&str; 3] = ["sample_id", "label", "subject_id"];
pub const HISTORY_HEADER: [&str; 5] = ["epoch", "lr", "train_loss", "train_acc", "val_acc"];

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, r: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(parse_err(
                    path,
                    1,
                    format!("column {} should be `{want}`, found `{got}`", i + 1),
                ))
            }
            None => return Err(parse_err(path, 1, format!("missing column `{want}`"))),
        }
    }
    if header.len() > expected.len() {
        return Err(parse_err(path, 1, format!("unexpected column `{}`", &header[expected.len()])));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("`{name}` value `{raw}` is not valid")))
}

/// Reads one `frame,joint,x,y,z` file. Every (frame, joint) pair in the
/// dense grid must appear exactly once.
pub fn read_sample(path: &Path, topology: Option<TopologyKind>) -> Result<SkeletonSequence> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &SAMPLE_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let frame: usize = field(path, &rec, 0, "frame")?;
        let joint: usize = field(path, &rec, 1, "joint")?;
        let mut p = [0f32; 3];
        for (k, name) in ["x", "y", "z"].iter().enumerate() {
            p[k] = field(path, &rec, 2 + k, name)?;
        }
        rows.push((line, frame, joint, p));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no coordinate rows"));
    }
    let frames = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let joints = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
    let kind = topology.unwrap_or(match joints {
        25 => TopologyKind::KinectV2,
        20 => TopologyKind::Shared20,
        _ => TopologyKind::Custom,
    });
    let mut seen = vec![false; frames * joints];
    let mut seq = SkeletonSequence::zeros(frames, joints, TopologyKind::Custom);
    for (line, t, j, p) in &rows {
        if std::mem::replace(&mut seen[t * joints + j], true) {
            return Err(parse_err(path, *line, format!("duplicate row for frame {t}, joint {j}")));
        }
        seq.set_point(*t, *j, [p[0] as f64, p[1] as f64, p[2] as f64]);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(parse_err(
            path,
            0,
            format!("missing row for frame {}, joint {}", missing / joints, missing % joints),
        ));
    }
    SkeletonSequence::from_coords(seq.coords().to_vec(), frames, joints, kind)
}

pub fn write_sample(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SAMPLE_HEADER).map_err(|e| csv_err(path, e))?;
    for t in 0..seq.frames() {
        for j in 0..seq.joints() {
            let p = seq.point(t, j);
            w.write_record([
                t.to_string(),
                j.to_string(),
                (p[0] as f32).to_string(),
                (p[1] as f32).to_string(),
                (p[2] as f32).to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Imports a CSV corpus (see the module docs).
pub fn import_dir(dir: impl AsRef<Path>, topology: Option<TopologyKind>, frame_rate: f64) -> Result<Dataset> {
    let dir = dir.as_ref();
    let labels_path = dir.join("labels.csv");
    let mut r = reader(&labels_path)?;
    check_header(&labels_path, &mut r, &LABEL_HEADER)?;
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&labels_path, e))?;
        let id: String = field(&labels_path, &rec, 0, "sample_id")?;
        let label: usize = field(&labels_path, &rec, 1, "label")?;
        let subject: u32 = field(&labels_path, &rec, 2, "subject_id")?;
        let seq = read_sample(&dir.join(format!("{id}.csv")), topology)?;
        samples.push(seq.with_meta(label, subject, frame_rate));
    }
    let classes_path = dir.join("classes.csv");
    let class_names = if classes_path.exists() {
        let mut r = reader(&classes_path)?;
        check_header(&classes_path, &mut r, &["label", "name"])?;
        let mut names = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(&classes_path, e))?;
            let label: usize = field(&classes_path, &rec, 0, "label")?;
            if label != names.len() {
                return Err(parse_err(
                    &classes_path,
                    rec.position().map_or(0, |p| p.line() as usize),
                    format!("labels must be listed in order, expected {}", names.len()),
                ));
            }
            names.push(field::<String>(&classes_path, &rec, 1, "name")?);
        }
        names
    } else {
        let k = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        (0..k).map(|i| i.to_string()).collect()
    };
    let kind = match samples.first() {
        Some(s) => s.topology,
        None => topology.unwrap_or(TopologyKind::Custom),
    };
    Dataset::new(samples, class_names, frame_rate, kind)
}

/// Writes `dataset` as a CSV corpus; sample ids are `s00000`, `s00001`, ….
pub fn export_dir(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let labels_path = dir.join("labels.csv");
    let mut labels = csv::Writer::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
    labels.write_record(LABEL_HEADER).map_err(|e| csv_err(&labels_path, e))?;
    let mut written = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let id = format!("s{i:05}");
        let path = dir.join(format!("{id}.csv"));
        write_sample(s, &path)?;
        labels
            .write_record([id, s.label.to_string(), s.subject_id.to_string()])
            .map_err(|e| csv_err(&labels_path, e))?;
        written.push(path);
    }
    labels.flush()?;
    let classes_path = dir.join("classes.csv");
    let mut classes = csv::Writer::from_path(&classes_path).map_err(|e| csv_err(&classes_path, e))?;
    classes.write_record(["label", "name"]).map_err(|e| csv_err(&classes_path, e))?;
    for (i, name) in dataset.class_names.iter().enumerate() {
        classes
            .write_record([i.to_string(), name.clone()])
            .map_err(|e| csv_err(&classes_path, e))?;
    }
    classes.flush()?;
    Ok(written)
}

/// `epoch,lr,train_loss,train_acc,val_acc`; `val_acc` is empty when there
/// was no validation set.
pub fn history_csv(history: &History) -> String {
    let mut out = HISTORY_HEADER.join(",");
    out.push('\n');
    for r in history {
        let val = r.val.as_ref().map_or(String::new(), |m| m.top1_accuracy.to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.train_accuracy, val
        ));
    }
    out
}

/// K×K count grid with the class names as header row and first column;
/// rows are true classes, columns predictions.
pub fn confusion_csv(metrics: &Metrics, class_names: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\pred".to_string()];
    header.extend(class_names.iter().cloned());
    let _ = w.write_record(&header);
    for (i, row) in metrics.confusion.iter().enumerate() {
        let mut rec = vec![class_names.get(i).cloned().unwrap_or_else(|| i.to_string())];
        rec.extend(row.iter().map(|c| c.to_string()));
        let _ = w.write_record(&rec);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

/// Parses a confusion CSV back into class names and counts.
pub fn read_confusion_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != names.len() + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", names.len() + 1, rec.len())));
        }
        let mut row = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            row.push(field(path, &rec, k + 1, name)?);
        }
        rows.push(row);
    }
    if rows.len() != names.len() {
        return Err(parse_err(path, 0, format!("{} rows for {} classes", rows.len(), names.len())));
    }
    Ok((names, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_import_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let coords: Vec<f64> = (0..36).map(|i| ((i as f64) * 0.377).sin() as f32 as f64).collect();
        let seq = SkeletonSequence::from_coords(coords, 3, 4, TopologyKind::Custom)
            .unwrap()
            .with_meta(1, 5, 30.0);
        let ds = Dataset::new(vec![seq], vec!["a".into(), "b".into()], 30.0, TopologyKind::Custom).unwrap();
        export_dir(&ds, dir.path()).unwrap();
        let back = import_dir(dir.path(), None, 30.0).unwrap();
        assert_eq!(back.samples[0].coords(), ds.samples[0].coords());
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.samples[0].subject_id, 5);
    }

    #[test]
    fn bad_header_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "frame,joint,x,q,z\n0,0,1,2,3\n").unwrap();
        let err = read_sample(&p, None).unwrap_err().to_string();
        assert!(err.contains("`y`") && err.contains("`q`"), "{err}");
    }

    #[test]
    fn confusion_round_trip() {
        let m = Metrics::from_predictions(&[0, 1, 1], &[0, 1, 0], 2, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, confusion_csv(&m, &["a".into(), "b".into()])).unwrap();
        let (names, rows) = read_confusion_csv(&p).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(rows, m.confusion);
    }
}
