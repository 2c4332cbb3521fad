//! Comparison tables over finished runs.
//!
//! JSON metrics files land in a protocol × dataset grid (rows are the
//! `row` field, columns the `column` field); the best cell of each row is
//! flagged with `*`. Confusion CSVs get a per-class accuracy table each.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stgcn::io::csv::read_confusion_csv;

use crate::commands::RunMetrics;

struct Grid {
    rows: Vec<String>,
    cols: Vec<String>,
    /// `cells[r][c]`, later files overwrite earlier ones.
    cells: Vec<Vec<Option<f64>>>,
}

impl Grid {
    fn new() -> Self {
        Grid {
            rows: Vec::new(),
            cols: Vec::new(),
            cells: Vec::new(),
        }
    }

    fn insert(&mut self, row: &str, col: &str, value: f64) {
        let r = match self.rows.iter().position(|x| x == row) {
            Some(r) => r,
            None => {
                self.rows.push(row.to_string());
                self.cells.push(vec![None; self.cols.len()]);
                self.rows.len() - 1
            }
        };
        let c = match self.cols.iter().position(|x| x == col) {
            Some(c) => c,
            None => {
                self.cols.push(col.to_string());
                for line in &mut self.cells {
                    line.push(None);
                }
                self.cols.len() - 1
            }
        };
        self.cells[r][c] = Some(value);
    }

    fn best(&self, r: usize) -> Option<f64> {
        self.cells[r].iter().flatten().copied().reduce(f64::max)
    }

    fn render(&self) -> (String, String) {
        let mut header = vec!["protocol".to_string()];
        header.extend(self.cols.iter().cloned());
        let mut table: Vec<Vec<String>> = vec![header];
        let mut csv = String::from("protocol,dataset,top1_accuracy,best\n");
        for (r, row) in self.rows.iter().enumerate() {
            let best = self.best(r);
            let mut line = vec![row.clone()];
            for (c, col) in self.cols.iter().enumerate() {
                match self.cells[r][c] {
                    Some(v) => {
                        let flag = Some(v) == best;
                        line.push(format!("{:.2}{}", v * 100.0, if flag { "*" } else { "" }));
                        let _ = writeln!(csv, "{},{},{},{}", quote(row), quote(col), v, flag);
                    }
                    None => line.push("-".to_string()),
                }
            }
            table.push(line);
        }
        (align(&table), csv)
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn align(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-class accuracy table for one confusion matrix. Rows whose counts sum
/// to zero are reported as having no samples.
fn confusion_section(path: &Path) -> Result<String> {
    let (names, rows) = read_confusion_csv(path)?;
    let mut table = vec![vec!["class".to_string(), "samples".into(), "correct".into(), "accuracy".into()]];
    let (mut correct, mut total) = (0usize, 0usize);
    for (i, (name, row)) in names.iter().zip(&rows).enumerate() {
        let n: usize = row.iter().sum();
        total += n;
        correct += row[i];
        let acc = if n == 0 { "no samples".to_string() } else { format!("{:.2}", 100.0 * row[i] as f64 / n as f64) };
        table.push(vec![name.clone(), n.to_string(), row[i].to_string(), acc]);
    }
    if total == 0 {
        bail!(stgcn::Error::Empty(format!("{}: confusion matrix has no samples", path.display())));
    }
    table.push(vec![
        "overall".into(),
        total.to_string(),
        correct.to_string(),
        format!("{:.2}", 100.0 * correct as f64 / total as f64),
    ]);
    Ok(format!("{}\n{}", path.display(), align(&table)))
}

pub fn run(out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let mut grid = Grid::new();
    let mut sections = Vec::new();
    for path in inputs {
        if !path.is_file() {
            bail!(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", path.display())
            ));
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let text = std::fs::read_to_string(path)?;
                let m: RunMetrics = serde_json::from_str(&text)
                    .map_err(stgcn::Error::from)
                    .with_context(|| format!("reading metrics {}", path.display()))?;
                grid.insert(&m.row, &m.column, m.top1_accuracy);
            }
            Some("csv") => sections.push(confusion_section(path)?),
            _ => bail!(crate::ConfigError(format!(
                "{}: expected a metrics .json or confusion .csv file",
                path.display()
            ))),
        }
    }
    let mut text = String::new();
    let mut csv = String::new();
    if !grid.rows.is_empty() {
        let (t, c) = grid.render();
        text.push_str("top-1 accuracy (%), * marks the best cell of each row\n");
        text.push_str(&t);
        csv = c;
    }
    for s in sections {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&s);
    }
    print!("{text}");
    std::fs::write(out.join("report.txt"), &text)?;
    if !csv.is_empty() {
        std::fs::write(out.join("report.csv"), &csv)?;
    }
    Ok(())
}
