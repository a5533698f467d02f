//! Per-run summaries and the grouped comparison table.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::fusion::{Arch, ParameterCount};
use crate::losses::Evaluation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    /// Display name, e.g. `AV-SA`.
    pub method: String,
    pub arch: String,
    pub evaluation: Evaluation,
    pub parameters: ParameterCount,
    pub best_epoch: usize,
    pub epochs: usize,
}

impl RunReport {
    pub fn arch(&self) -> Option<Arch> {
        self.arch.parse().ok()
    }
}

pub fn group_title(arch: Arch) -> &'static str {
    match arch {
        Arch::Rnn => "Recurrent Models (RNNs)",
        Arch::Sa => "Self-Attention (SA) Models",
        Arch::Cma => "Cross-Modal Attention (CMA) Models",
    }
}

/// Thousands as `76 K`, millions as `1.2 M`.
pub fn format_count(n: usize) -> String {
    if n >= 1_000_000 {
        format!("{:.1} M", n as f64 / 1e6)
    } else if n >= 1_000 {
        format!("{} K", (n as f64 / 1e3).round())
    } else {
        n.to_string()
    }
}

/// Text table grouped by architecture, runs in input order within a group.
pub fn render_table(runs: &[RunReport]) -> String {
    let header = [
        "Method",
        "Valence",
        "Arousal",
        "Avg.",
        "P_sequence",
        "P_total",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut groups: Vec<(usize, &str)> = Vec::new();
    for arch in Arch::ALL {
        let members: Vec<&RunReport> = runs.iter().filter(|r| r.arch() == Some(arch)).collect();
        if members.is_empty() {
            continue;
        }
        groups.push((rows.len(), group_title(arch)));
        for r in members {
            let e = &r.evaluation;
            rows.push(vec![
                r.method.clone(),
                format!("{:.3}", e.ccc_valence),
                format!("{:.3}", e.ccc_arousal),
                format!("{:.3}", e.average),
                format_count(r.parameters.sequence),
                format_count(r.parameters.total),
            ]);
        }
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let line = |cells: &[String]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells[1..].iter().zip(&widths[1..]) {
            write!(s, "  {c:>w$}").expect("writing to a string");
        }
        s + "\n"
    };
    let rule = "-".repeat(total) + "\n";
    let mut out = line(&header.map(String::from));
    out.push_str(&rule);
    let mut next_group = groups.iter().peekable();
    for (i, row) in rows.iter().enumerate() {
        if let Some(&(_, title)) = next_group.next_if(|(start, _)| *start == i) {
            out.push_str(&format!("{title:^total$}\n"));
        }
        out.push_str(&line(row));
    }
    out
}
