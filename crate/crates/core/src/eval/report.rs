//! Results table in the layout of the paper's iteration table: one row per
//! iteration, one column per translation direction, then the two Δ rows.

use crate::wakesleep::IterationMetrics;

pub const LEGEND: &str = "* significant vs previous iteration; + significant vs iteration 0; **x** best in column";
const EMPTY: &str = "—";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreCell {
    pub value: f64,
    /// Significant against the previous iteration.
    pub star: bool,
    /// Significant against iteration 0.
    pub dagger: bool,
}

impl ScoreCell {
    pub fn plain(value: f64) -> Self {
        Self {
            value,
            star: false,
            dagger: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportColumn {
    pub label: String,
    /// Row i holds iteration i.
    pub cells: Vec<Option<ScoreCell>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    pub tsv: String,
}

/// Hundredths, so that Δ rows agree with the two-decimal cells they are read from.
fn cents(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

fn fmt_cents(c: i64, signed: bool) -> String {
    let sign = if c < 0 {
        "-"
    } else if signed {
        "+"
    } else {
        ""
    };
    format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
}

impl ReportColumn {
    /// Index of the best row; the earliest wins ties.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<(usize, i64)> = None;
        for (i, c) in self.cells.iter().enumerate() {
            if let Some(c) = c {
                if best.is_none_or(|(_, b)| cents(c.value) > b) {
                    best = Some((i, cents(c.value)));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// best − row `i`, in hundredths, when row `i` exists and is not the only row.
    pub fn delta_cents(&self, i: usize) -> Option<i64> {
        if self.cells.len() < 2 {
            return None;
        }
        let b = self.cells[self.best()?]?;
        let r = (*self.cells.get(i)?)?;
        Some(cents(b.value) - cents(r.value))
    }

    pub fn delta(&self, i: usize) -> Option<f64> {
        self.delta_cents(i).map(|c| c as f64 / 100.0)
    }

    fn cell_text(&self, i: usize) -> String {
        match self.cells[i] {
            None => EMPTY.to_string(),
            Some(c) => {
                let v = fmt_cents(cents(c.value), false);
                let mut s = if self.best() == Some(i) { format!("**{v}**") } else { v };
                if c.star {
                    s.push('*');
                }
                if c.dagger {
                    s.push('+');
                }
                s
            }
        }
    }
}

fn grid(columns: &[ReportColumn]) -> Vec<Vec<String>> {
    let rows = columns.iter().map(|c| c.cells.len()).max().unwrap_or(0);
    let mut g = vec![std::iter::once(String::new())
        .chain(columns.iter().map(|c| c.label.clone()))
        .collect::<Vec<_>>()];
    for i in 0..rows {
        let mut row = vec![format!("Iteration {i}")];
        for c in columns {
            row.push(if i < c.cells.len() {
                c.cell_text(i)
            } else {
                EMPTY.to_string()
            });
        }
        g.push(row);
    }
    for (label, base) in [("Δ(best, Iteration 1)", 1), ("Δ(best, Iteration 0)", 0)] {
        let mut row = vec![label.to_string()];
        for c in columns {
            row.push(c.delta_cents(base).map_or(EMPTY.to_string(), |d| fmt_cents(d, true)));
        }
        g.push(row);
    }
    g
}

/// Renders aligned text and TSV, each ending with the legend line.
pub fn render_table(columns: &[ReportColumn]) -> Report {
    let g = grid(columns);
    let ncol = g[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| g.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    let mut tsv = String::new();
    for row in &g {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            let pad = widths[j] - cell.chars().count();
            if j == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        text.push_str(line.trim_end());
        text.push('\n');
        tsv.push_str(&row.join("\t"));
        tsv.push('\n');
    }
    text.push_str(LEGEND);
    text.push('\n');
    tsv.push_str("# ");
    tsv.push_str(LEGEND);
    tsv.push('\n');
    Report { text, tsv }
}

/// Test-BLEU table for a wake-sleep run; `labels` name the forward and
/// backward directions.
pub fn render_report(metrics: &[IterationMetrics], labels: [&str; 2]) -> Report {
    let column = |label: &str, pick: &dyn Fn(&IterationMetrics) -> &crate::wakesleep::DirectionMetrics| ReportColumn {
        label: label.to_string(),
        cells: metrics
            .iter()
            .map(|m| {
                let d = pick(m);
                d.test_bleu.map(|value| ScoreCell {
                    value,
                    star: d.sig_previous == Some(true),
                    dagger: d.sig_first == Some(true),
                })
            })
            .collect(),
    };
    render_table(&[column(labels[0], &|m| &m.forward), column(labels[1], &|m| &m.backward)])
}
