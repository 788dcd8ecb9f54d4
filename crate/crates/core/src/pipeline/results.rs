use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AngleSource, PipelineError, Task};
use crate::models::{Conditioning, Family};

/// One evaluated run: a row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub seed: u64,
    pub conditioning: Conditioning,
    pub backbone: Family,
    pub task: Task,
    pub angle_source: AngleSource,
    pub split: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1_path: String,
}

pub fn write_results_csv<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), PipelineError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    wr.flush().map_err(|e| PipelineError::Data(e.to_string()))
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ResultRow>, PipelineError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| PipelineError::Data(format!("results row {}: {e}", i + 2))))
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Markdown tables, one per task: conditioning (suffixed with the angle
/// source when predicted) × backbone, cells `acc | macro-F1` in percent,
/// averaged over seeds. Test-split rows are used when present. In each column
/// the best accuracy and the best macro-F1 are bold; displayed ties are all
/// bold.
pub fn render_report(rows: &[ResultRow]) -> Result<String, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::Data("no result rows".into()));
    }
    let use_test = rows.iter().any(|r| r.split == "test");
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| !use_test || r.split == "test").collect();
    type Key = (Conditioning, bool);
    // Sums of accuracy and macro-F1, and the row count.
    type Cell = (f64, f64, usize);
    let mut tasks: BTreeMap<Task, BTreeMap<(Key, Family), Cell>> = BTreeMap::new();
    for r in rows {
        let key = ((r.conditioning, r.angle_source == AngleSource::Predicted), r.backbone);
        let cell = tasks.entry(r.task).or_default().entry(key).or_insert((0.0, 0.0, 0));
        cell.0 += r.accuracy;
        cell.1 += r.macro_f1;
        cell.2 += 1;
    }
    let mut out = String::new();
    for (task, cells) in tasks {
        let mut row_keys: Vec<Key> = cells.keys().map(|(k, _)| *k).collect();
        row_keys.sort();
        row_keys.dedup();
        let mut cols: Vec<Family> = cells.keys().map(|(_, f)| *f).collect();
        cols.sort();
        cols.dedup();
        let shown = |k: &Key, f: Family| {
            cells
                .get(&(*k, f))
                .map(|(a, m, n)| (pct(a / *n as f64), pct(m / *n as f64)))
        };
        let col_best = |f: Family, pick: fn(&(String, String)) -> &String| {
            row_keys
                .iter()
                .filter_map(|k| shown(k, f))
                .map(|c| pick(&c).parse::<f64>().expect("formatted number"))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let _ = writeln!(out, "### {task} (acc | macro-F1, %)\n");
        let _ = write!(out, "| conditioning |");
        for f in &cols {
            let _ = write!(out, " {f} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &cols {
            let _ = write!(out, "---|");
        }
        out.push('\n');
        for k in &row_keys {
            let label = if k.1 {
                format!("{} (predicted)", k.0)
            } else {
                k.0.to_string()
            };
            let _ = write!(out, "| {label} |");
            for &f in &cols {
                match shown(k, f) {
                    Some((a, m)) => {
                        let bold = |s: &str, best: f64| {
                            if s.parse::<f64>().expect("formatted number") == best {
                                format!("**{s}**")
                            } else {
                                s.to_string()
                            }
                        };
                        let a = bold(&a, col_best(f, |c| &c.0));
                        let m = bold(&m, col_best(f, |c| &c.1));
                        let _ = write!(out, " {a} \\| {m} |");
                    }
                    None => {
                        let _ = write!(out, " – |");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: Conditioning, b: Family, seed: u64, acc: f64, f1: f64) -> ResultRow {
        ResultRow {
            config_hash: "abc".into(),
            seed,
            conditioning: c,
            backbone: b,
            task: Task::OneView,
            angle_source: if c == Conditioning::None {
                AngleSource::None
            } else {
                AngleSource::Reference
            },
            split: "test".into(),
            accuracy: acc,
            macro_f1: f1,
            per_class_f1_path: "f1.csv".into(),
        }
    }

    fn table_lines(md: &str) -> Vec<&str> {
        md.lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| conditioning"))
            .collect()
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![row(Conditioning::Cbn, Family::Resnet, 1, 0.8125, 0.8)];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "config_hash,seed,conditioning,backbone,task,angle_source,split,accuracy,macro_f1,per_class_f1_path\n"
        ));
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn grid_pivots_to_four_by_three() {
        let mut rows = Vec::new();
        for (i, c) in Conditioning::ALL.into_iter().enumerate() {
            for (j, b) in Family::ALL.into_iter().enumerate() {
                rows.push(row(c, b, 0, 0.5 + 0.01 * (i + j) as f64, 0.4));
            }
        }
        let md = render_report(&rows).unwrap();
        let lines = table_lines(&md);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.matches(" \\| ").count() == 3));
        // Column maxima are in the last row; every macro-F1 ties, so all are bold.
        for best in ["**53.0**", "**54.0**", "**55.0**"] {
            assert!(lines[3].contains(best), "{md}");
        }
        assert_eq!(md.matches("**40.0**").count(), 12);
    }

    #[test]
    fn single_row_and_seed_average() {
        let md = render_report(&[row(Conditioning::Film, Family::Mlp, 0, 0.9, 0.8)]).unwrap();
        assert_eq!(table_lines(&md), vec!["| film | **90.0** \\| **80.0** |"]);
        let md = render_report(&[
            row(Conditioning::Film, Family::Mlp, 0, 0.9, 0.8),
            row(Conditioning::Film, Family::Mlp, 1, 0.7, 0.6),
        ])
        .unwrap();
        assert_eq!(table_lines(&md), vec!["| film | **80.0** \\| **70.0** |"]);
        assert!(render_report(&[]).is_err());
    }

    #[test]
    fn ties_are_all_bold() {
        let md = render_report(&[
            row(Conditioning::None, Family::Conv, 0, 0.75, 0.7),
            row(Conditioning::Cbn, Family::Conv, 0, 0.75, 0.6),
        ])
        .unwrap();
        let lines = table_lines(&md);
        assert!(lines.iter().all(|l| l.contains("**75.0**")));
        assert!(lines[0].contains("**70.0**") && !lines[1].contains("**60.0**"));
    }
}
