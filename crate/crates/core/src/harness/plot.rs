use std::path::{Path, PathBuf};

use super::sweep::SweepRow;
use super::HarnessError;

pub const RESULTS_HEADER: &str = "policy,k_or_rho,w,b,bleu,ral,al,revision_rate";

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn cells(row: &SweepRow) -> [String; 8] {
    let dash = || "-".to_string();
    [
        row.policy.clone(),
        row.parameter.map_or_else(dash, |p| p.to_string()),
        row.window.map_or_else(dash, |w| w.to_string()),
        row.beam.to_string(),
        format!("{:.6}", row.bleu),
        format!("{:.6}", row.ral),
        format!("{:.6}", row.al),
        format!("{:.6}", row.revision_rate),
    ]
}

/// Writes `rows` in table order under [`RESULTS_HEADER`].
pub fn write_results_csv(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.table_order(b));
    let err = csv_error(path);
    let mut out = csv::Writer::from_path(path).map_err(&err)?;
    out.write_record(RESULTS_HEADER.split(',')).map_err(&err)?;
    for row in sorted {
        out.write_record(cells(row)).map_err(&err)?;
    }
    out.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_timing_csv(
    path: &Path,
    rows: &[SweepRow],
    sentences: usize,
) -> Result<(), HarnessError> {
    let err = csv_error(path);
    let mut out = csv::Writer::from_path(path).map_err(&err)?;
    out.write_record(["policy", "k_or_rho", "w", "b", "sentences", "mean_sentence_ms"])
        .map_err(&err)?;
    for row in rows {
        let c = cells(row);
        let ms = row.mean_sentence_ms.map_or("-".into(), |m| format!("{m:.3}"));
        out.write_record([&c[0], &c[1], &c[2], &c[3], &sentences.to_string(), &ms])
            .map_err(&err)?;
    }
    out.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    let err = csv_error(path);
    let bad = |line: usize, message: String| HarnessError::Csv {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut reader = csv::Reader::from_path(path).map_err(&err)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(&err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(bad(1, format!("expected header {RESULTS_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(&err)?;
        let field = |j: usize| record.get(j).unwrap_or("");
        let opt = |j: usize| -> Result<Option<String>, HarnessError> {
            match field(j) {
                "-" => Ok(None),
                "" => Err(bad(line, format!("missing column {j}"))),
                v => Ok(Some(v.to_string())),
            }
        };
        let num = |j: usize| -> Result<f64, HarnessError> {
            field(j)
                .parse::<f64>()
                .map_err(|e| bad(line, format!("column {j}: {e}")))
        };
        rows.push(SweepRow {
            policy: field(0).to_string(),
            parameter: opt(1)?
                .map(|v| v.parse::<f64>())
                .transpose()
                .map_err(|e| bad(line, format!("k_or_rho: {e}")))?,
            window: opt(2)?
                .map(|v| v.parse::<usize>())
                .transpose()
                .map_err(|e| bad(line, format!("w: {e}")))?,
            beam: field(3)
                .parse()
                .map_err(|e| bad(line, format!("b: {e}")))?,
            bleu: num(4)?,
            ral: num(5)?,
            al: num(6)?,
            revision_rate: num(7)?,
            mean_sentence_ms: None,
        });
    }
    Ok(rows)
}

fn is_policy(row: &SweepRow) -> bool {
    row.window.is_some()
}

/// Writes the three plot tables into `dir` and returns their paths.
///
/// `bleu_vs_ral.csv` holds every row, `revrate_vs_window.csv` the policy and
/// re-translation rows, `revrate_vs_beam.csv` the policy rows.
pub fn emit_plot_data(rows: &[SweepRow], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no results to plot".into()));
    }
    type RowFilter = fn(&SweepRow) -> bool;
    let tables: [(&str, RowFilter); 3] = [
        ("bleu_vs_ral.csv", |_| true),
        ("revrate_vs_window.csv", |r| is_policy(r) || r.policy == "retranslation"),
        ("revrate_vs_beam.csv", is_policy),
    ];
    let mut written = Vec::new();
    for (name, keep) in tables {
        let selected: Vec<SweepRow> = rows.iter().filter(|r| keep(r)).cloned().collect();
        let path = dir.join(name);
        write_results_csv(&path, &selected)?;
        written.push(path);
    }
    Ok(written)
}
