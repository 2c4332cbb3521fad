//! NTU RGB+D `.skeleton` text files.
//!
//! ```text
//! <frame count>
//! per frame:
//!   <body count>
//!   per body:
//!     <bodyID> <clipped> <hand conf/state ×4> <restricted> <leanX> <leanY> <tracking>
//!     <joint count>
//!     per joint: x y z depthX depthY colorX colorY orientW orientX orientY orientZ tracking
//! ```
//!
//! Only the camera-space `x y z` columns are kept. Bodies are tracked by
//! their `bodyID` across frames and the main actor (largest motion energy)
//! is selected at import, so every imported sample holds a single body.
//! Labels and subjects come from the `SsssCcccPpppRrrrAaaa` file name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::preprocess::main_actor_index;
use crate::sequence::{Dataset, SkeletonSequence};
use crate::topology::TopologyKind;

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_tokens(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let tokens: Vec<&str> = l.split_whitespace().collect();
            if !tokens.is_empty() {
                return Ok(tokens);
            }
        }
        Err(self.err("unexpected end of file"))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let tokens = self.next_tokens()?;
        if tokens.len() != 1 {
            return Err(self.err(format!("expected a single {what}, found {} fields", tokens.len())));
        }
        tokens[0]
            .parse()
            .map_err(|_| self.err(format!("{what} `{}` is not an integer", tokens[0])))
    }
}

/// Parses one recording and returns its main actor, or `None` when no body
/// is ever tracked.
pub fn parse_skeleton(text: &str, path: &Path) -> Result<Option<SkeletonSequence>> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let frames = lines.count("frame count")?;
    let mut joints: Option<usize> = None;
    // bodyID → per-frame coordinates [x, y, z] × V
    let mut bodies: BTreeMap<String, (usize, Vec<Option<Vec<[f64; 3]>>>)> = BTreeMap::new();
    for t in 0..frames {
        let body_count = lines.count("body count")?;
        for _ in 0..body_count {
            let info = lines.next_tokens()?;
            if info.len() != 10 {
                return Err(lines.err(format!("body header has {} fields, expected 10", info.len())));
            }
            let id = info[0].to_string();
            let v = lines.count("joint count")?;
            match joints {
                None => joints = Some(v),
                Some(prev) if prev != v => {
                    return Err(lines.err(format!("joint count {v} differs from earlier {prev}")));
                }
                _ => {}
            }
            let mut pts = Vec::with_capacity(v);
            for _ in 0..v {
                let row = lines.next_tokens()?;
                if row.len() < 3 {
                    return Err(lines.err(format!("joint row has {} fields, expected at least 3", row.len())));
                }
                let mut p = [0.0; 3];
                for (k, x) in p.iter_mut().enumerate() {
                    *x = row[k]
                        .parse()
                        .map_err(|_| lines.err(format!("coordinate `{}` is not a number", row[k])))?;
                }
                pts.push(p);
            }
            let order = bodies.len();
            let entry = bodies.entry(id).or_insert_with(|| (order, vec![None; frames]));
            entry.1[t] = Some(pts);
        }
    }
    let Some(v) = joints else {
        return Ok(None);
    };
    let topology = match v {
        25 => TopologyKind::KinectV2,
        20 => TopologyKind::KinectV1,
        _ => TopologyKind::Custom,
    };
    // Bodies in order of first appearance, so ties go to the earliest.
    let mut tracks: Vec<_> = bodies.into_values().collect();
    tracks.sort_by_key(|(order, _)| *order);
    let seqs: Vec<SkeletonSequence> = tracks
        .into_iter()
        .map(|(_, track)| {
            let mut seq = SkeletonSequence::zeros(frames, v, topology);
            for (t, pts) in track.iter().enumerate() {
                if let Some(pts) = pts {
                    for (j, p) in pts.iter().enumerate() {
                        seq.set_point(t, j, *p);
                    }
                }
            }
            seq
        })
        .collect();
    let main = main_actor_index(&seqs)?;
    Ok(seqs.into_iter().nth(main))
}

/// Setup, camera, performer, replication and action numbers parsed from
/// an NTU file stem such as `S001C002P003R002A013`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtuName {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: u32,
}

pub fn parse_name(stem: &str) -> Option<NtuName> {
    let mut fields = BTreeMap::new();
    let mut chars = stem.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !c.is_ascii_alphabetic() {
            return None;
        }
        let start = i + 1;
        let mut end = start;
        while let Some(&(j, d)) = chars.peek() {
            if !d.is_ascii_digit() {
                break;
            }
            end = j + 1;
            chars.next();
        }
        fields.insert(c.to_ascii_uppercase(), stem.get(start..end)?.parse::<u32>().ok()?);
    }
    Some(NtuName {
        setup: *fields.get(&'S')?,
        camera: *fields.get(&'C')?,
        performer: *fields.get(&'P')?,
        replication: *fields.get(&'R')?,
        action: *fields.get(&'A')?,
    })
}

#[derive(Debug, Clone)]
pub struct NtuImport {
    pub dataset: Dataset,
    /// Files with no tracked body.
    pub dropped: Vec<PathBuf>,
}

/// Imports every `*.skeleton` file in `dir` (sorted by name). Class `k` is
/// the k-th smallest action number present, named `A###`.
pub fn import_dir(dir: impl AsRef<Path>) -> Result<NtuImport> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "skeleton"))
        .collect();
    files.sort();
    let mut parsed = Vec::new();
    let mut dropped = Vec::new();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let name = parse_name(stem).ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("file name `{stem}` does not follow SsssCcccPpppRrrrAaaa"),
        })?;
        let text = std::fs::read_to_string(&path)?;
        match parse_skeleton(&text, &path)? {
            Some(seq) => parsed.push((name, seq)),
            None => dropped.push(path),
        }
    }
    let actions: Vec<u32> = {
        let mut a: Vec<u32> = parsed.iter().map(|(n, _)| n.action).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    let topology = parsed.first().map_or(TopologyKind::KinectV2, |(_, s)| s.topology);
    let samples = parsed
        .into_iter()
        .map(|(name, seq)| {
            let label = actions.binary_search(&name.action).unwrap_or(0);
            seq.with_meta(label, name.performer, 30.0)
        })
        .collect();
    let class_names = actions.iter().map(|a| format!("A{a:03}")).collect();
    Ok(NtuImport {
        dataset: Dataset::new(samples, class_names, 30.0, topology)?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(id: &str, v: usize, offset: f64) -> String {
        let mut s = format!("{id} 0 1 1 1 1 0 0.1 0.2 2\n{v}\n");
        for j in 0..v {
            s.push_str(&format!(
                "{} {} {} 1 1 1 1 0 0 0 0 2\n",
                offset + j as f64 * 0.01,
                0.5,
                3.0
            ));
        }
        s
    }

    #[test]
    fn picks_the_moving_body() {
        let mut text = String::from("3\n");
        for t in 0..3 {
            text.push_str("2\n");
            text.push_str(&body("111", 25, 0.0));
            text.push_str(&body("222", 25, t as f64 * 0.3));
        }
        let seq = parse_skeleton(&text, Path::new("x.skeleton")).unwrap().unwrap();
        assert_eq!(seq.frames(), 3);
        assert_eq!(seq.topology, TopologyKind::KinectV2);
        assert!((seq.point(2, 0)[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_recording_is_dropped() {
        assert!(parse_skeleton("2\n0\n0\n", Path::new("e.skeleton")).unwrap().is_none());
    }

    #[test]
    fn malformed_row_names_the_line() {
        let text = "1\n1\n111 0 1 1 1 1 0 0.1 0.2 2\n2\n0 0 0 0 0 0 0 0 0 0 0 0\nx 0\n";
        match parse_skeleton(text, Path::new("bad.skeleton")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn file_name_fields() {
        let n = parse_name("S001C002P003R002A013").unwrap();
        assert_eq!((n.performer, n.action, n.camera), (3, 13, 2));
        assert!(parse_name("S001C002").is_none());
    }
}
