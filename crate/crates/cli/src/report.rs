//! Summary tables comparing evaluated models: WER (percent), Sim-O and
//! Sim-E per reference language plus an unweighted all-language average,
//! and the full cross-lingual WER matrix of every model.

use std::fmt::Write as _;

use lxtts::eval::{EvalCell, EvalMatrix};
use lxtts::metrics::CiSummary;
use lxtts::world::{lang_code, Lang};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Clone, Copy)]
struct Metric {
    title: &'static str,
    key: &'static str,
    lower_is_better: bool,
    pick: fn(&EvalCell) -> Option<&CiSummary>,
    render: fn(f64) -> String,
}

const METRICS: [Metric; 3] = [
    Metric {
        title: "WER (%)",
        key: "wer_pct",
        lower_is_better: true,
        pick: |c| c.wer.as_ref(),
        render: |v| format!("{:.2}", 100.0 * v),
    },
    Metric {
        title: "Sim-O",
        key: "sim_o",
        lower_is_better: false,
        pick: |c| c.sim_o.as_ref(),
        render: |v| format!("{v:.4}"),
    },
    Metric {
        title: "Sim-E",
        key: "sim_e",
        lower_is_better: false,
        pick: |c| c.sim_e.as_ref(),
        render: |v| format!("{v:.4}"),
    },
];

/// One summary row: the mean of every model for one language (or the average).
struct Row {
    label: String,
    values: Vec<Option<f64>>,
}

fn summary_rows(models: &[(&str, &EvalMatrix)], m: Metric) -> Vec<Row> {
    let n_langs = models.first().map_or(0, |(_, x)| x.n_langs);
    let mut rows: Vec<Row> = (0..n_langs)
        .map(|l| Row {
            label: lang_code(l),
            values: models.iter().map(|(_, x)| x.row_mean(Lang(l), m.pick)).collect(),
        })
        .collect();
    let avg = (0..models.len())
        .map(|j| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.values[j]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    rows.push(Row { label: "Avg.".to_string(), values: avg });
    rows
}

/// Indices of the best value in a row; ties are all flagged. Compares the
/// rendered values so flags agree with what the reader sees.
fn best(values: &[Option<f64>], m: Metric) -> Vec<bool> {
    let shown: Vec<Option<f64>> =
        values.iter().map(|v| v.map(|x| (m.render)(x).parse::<f64>().expect("numeric rendering"))).collect();
    let target = shown.iter().flatten().copied().reduce(|a, b| if m.lower_is_better { a.min(b) } else { a.max(b) });
    shown.iter().map(|v| v.is_some() && *v == target).collect()
}

fn cell_text(s: Option<&CiSummary>, m: Metric) -> String {
    match s {
        Some(s) => format!("{} ± {}", (m.render)(s.mean), (m.render)(s.ci95_halfwidth)),
        None => "n/a".to_string(),
    }
}

pub fn markdown(models: &[(&str, &EvalMatrix)]) -> String {
    let mut out = String::from("# Evaluation summary\n");
    for m in METRICS {
        let better = if m.lower_is_better { "lower" } else { "higher" };
        let _ = write!(out, "\n## {} by reference language ({better} is better, best in bold)\n\n| Lang |", m.title);
        for (name, _) in models {
            let _ = write!(out, " {name} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(models.len()));
        out.push('\n');
        for row in summary_rows(models, m) {
            let flags = best(&row.values, m);
            let _ = write!(out, "| {} |", row.label);
            for (v, flag) in row.values.iter().zip(flags) {
                let text = v.map_or("n/a".to_string(), m.render);
                if flag {
                    let _ = write!(out, " **{text}** |");
                } else {
                    let _ = write!(out, " {text} |");
                }
            }
            out.push('\n');
        }
    }
    let wer = METRICS[0];
    for (name, x) in models {
        let _ = write!(out, "\n## {name}: WER (%) by reference (rows) and generated (columns) language\n\n| Ref |");
        for g in 0..x.n_langs {
            let _ = write!(out, " {} |", lang_code(g));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(x.n_langs));
        out.push('\n');
        for r in 0..x.n_langs {
            let _ = write!(out, "| {} |", lang_code(r));
            for c in x.row(Lang(r)) {
                let _ = write!(out, " {} |", cell_text((wer.pick)(c), wer));
            }
            out.push('\n');
        }
    }
    out
}

/// Summary table: `metric,lang,<model>...,best`.
pub fn summary_csv(models: &[(&str, &EvalMatrix)]) -> String {
    let mut out = String::from("metric,lang");
    for (name, _) in models {
        let _ = write!(out, ",{name}");
    }
    out.push_str(",best\n");
    for m in METRICS {
        for row in summary_rows(models, m) {
            let flags = best(&row.values, m);
            let _ = write!(out, "{},{}", m.key, row.label);
            for v in &row.values {
                let _ = write!(out, ",{}", v.map_or(String::new(), m.render));
            }
            let winners: Vec<&str> =
                models.iter().zip(&flags).filter(|(_, &f)| f).map(|((name, _), _)| *name).collect();
            let _ = writeln!(out, ",{}", winners.join("|"));
        }
    }
    out
}

/// Every cell of every model with mean and CI half-width.
pub fn matrix_csv(models: &[(&str, &EvalMatrix)]) -> String {
    let mut out = String::from(
        "model,ref_lang,gen_lang,n,wer_pct,wer_pct_ci95,sim_o,sim_o_ci95,sim_e,sim_e_ci95\n",
    );
    for (name, x) in models {
        for c in &x.cells {
            let _ = write!(out, "{name},{},{},{}", c.ref_lang, c.gen_lang, c.n);
            for m in METRICS {
                match (m.pick)(c) {
                    Some(s) => {
                        let _ = write!(out, ",{},{}", (m.render)(s.mean), (m.render)(s.ci95_halfwidth));
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci(mean: f64) -> Option<CiSummary> {
        Some(CiSummary { n: 2, mean, ci95_halfwidth: 0.01 })
    }

    fn matrix(offset: f64) -> EvalMatrix {
        let n_langs = 2;
        let cells = (0..4)
            .map(|i| EvalCell {
                ref_lang: Lang(i / 2),
                gen_lang: Lang(i % 2),
                n: 2,
                wer: ci(0.1 * i as f64 + offset),
                sim_o: ci(0.9 - offset),
                sim_e: ci(0.95 - offset),
            })
            .collect();
        EvalMatrix { n_langs, cells }
    }

    #[test]
    fn summary_rows_are_row_means() {
        let a = matrix(0.0);
        let rows = summary_rows(&[("SFT", &a)], METRICS[0]);
        assert_eq!(rows.len(), 3);
        assert!((rows[0].values[0].unwrap() - 0.05).abs() < 1e-12);
        assert!((rows[1].values[0].unwrap() - 0.25).abs() < 1e-12);
        assert!((rows[2].values[0].unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn markdown_layout_and_flags() {
        let (a, b) = (matrix(0.05), matrix(0.0));
        let md = markdown(&[("SFT", &a), ("DPO", &b)]);
        let first_table: Vec<&str> = md
            .split("\n## ")
            .nth(1)
            .unwrap()
            .lines()
            .filter(|l| l.starts_with('|') && !l.starts_with("|---"))
            .collect();
        assert_eq!(first_table.len(), 1 + 2 + 1);
        assert_eq!(first_table[1], "| pt | 10.00 | **5.00** |");
        assert!(md.contains("| Avg. | 20.00 | **15.00** |"));
        assert_eq!(md, markdown(&[("SFT", &a), ("DPO", &b)]));
    }

    #[test]
    fn csv_flags_ties() {
        let a = matrix(0.0);
        let csv = summary_csv(&[("SFT", &a), ("DPO", &a)]);
        assert!(csv.starts_with("metric,lang,SFT,DPO,best\nwer_pct,pt,5.00,5.00,SFT|DPO\n"));
        let cells = matrix_csv(&[("DPO", &a)]);
        assert_eq!(cells.lines().count(), 5);
        assert!(cells.contains("DPO,pt,en,2,10.00,1.00,0.9000,0.0100,0.9500,0.0100"));
    }
}
