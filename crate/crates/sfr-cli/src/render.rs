//! Mapping from typed CSV rows to the plot files. Both the sweep commands
//! and `sfr report` go through these functions, so regenerated plots are
//! byte-identical to the originals.

use crate::csvio::{SweepMicsRow, SweepRankRow, TrajectoryRow};
use crate::plot::{grouped_bar_plot, line_plot, BarGroup, Series};

/// NMSE-vs-iteration lines, one per rank.
pub fn sweep_rank_plot(rows: &[SweepRankRow]) -> String {
    let mut ranks: Vec<u64> = rows.iter().map(|r| r.rank).collect();
    ranks.dedup();
    let series: Vec<Series> = ranks
        .iter()
        .map(|&rank| Series {
            label: format!("r={rank}"),
            points: rows
                .iter()
                .filter(|r| r.rank == rank)
                .map(|r| (r.iteration as f64, r.nmse_db))
                .collect(),
        })
        .collect();
    line_plot(
        "LoRA adaptation by rank",
        "iteration",
        "NMSE (dB)",
        &series,
    )
}

/// Grouped bars: one group per microphone count, one bar per mode.
pub fn sweep_mics_plot(rows: &[SweepMicsRow]) -> String {
    let mut counts: Vec<u64> = rows.iter().map(|r| r.m_tilde).collect();
    counts.dedup();
    let mut modes: Vec<String> = Vec::new();
    for row in rows {
        if !modes.contains(&row.mode) {
            modes.push(row.mode.clone());
        }
    }
    let groups: Vec<BarGroup> = counts
        .iter()
        .map(|&count| BarGroup {
            label: format!("M~={count}"),
            values: modes
                .iter()
                .map(|mode| {
                    rows.iter()
                        .find(|r| r.m_tilde == count && &r.mode == mode)
                        .map(|r| r.nmse_db)
                        .unwrap_or(0.0)
                })
                .collect(),
        })
        .collect();
    grouped_bar_plot(
        "NMSE vs observed microphones",
        "observed channels",
        "NMSE (dB)",
        &modes,
        &groups,
    )
}

/// The ℓ1 loss trajectory of one run.
pub fn trajectory_loss_plot(name: &str, rows: &[TrajectoryRow]) -> String {
    let series = [Series {
        label: "l1 loss".into(),
        points: rows.iter().map(|r| (r.iteration as f64, r.l1_loss)).collect(),
    }];
    line_plot(
        &format!("{name}: training loss"),
        "iteration",
        "masked l1 loss",
        &series,
    )
}

/// The NMSE trajectory of one run, if it recorded any evaluations.
pub fn trajectory_nmse_plot(name: &str, rows: &[TrajectoryRow]) -> Option<String> {
    let observed: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.observed_nmse_db.map(|v| (r.iteration as f64, v)))
        .collect();
    let full: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.full_nmse_db.map(|v| (r.iteration as f64, v)))
        .collect();
    let mut series = Vec::new();
    if !observed.is_empty() {
        series.push(Series { label: "observed".into(), points: observed });
    }
    if !full.is_empty() {
        series.push(Series { label: "full grid".into(), points: full });
    }
    if series.is_empty() {
        return None;
    }
    Some(line_plot(
        &format!("{name}: reconstruction NMSE"),
        "iteration",
        "NMSE (dB)",
        &series,
    ))
}
