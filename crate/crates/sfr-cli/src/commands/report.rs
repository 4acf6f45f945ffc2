//! `sfr report`: aggregate the CSV artifacts of a run directory into a
//! plain-text summary plus plot files. Running it twice over the same inputs
//! produces byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::csvio::{
    read_rows, AdaptSummaryRow, CrossRoomRow, PretrainSummaryRow, SweepMicsRow, SweepRankRow,
    TrajectoryRow,
};
use crate::error::{CliError, Result};
use crate::render;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "none".into(),
    }
}

/// File-name stem without the `.csv` suffix.
fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

pub fn cmd_report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(CliError::Report(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut csv_files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csv_files.sort();
    if csv_files.is_empty() {
        return Err(CliError::Report(format!(
            "no run CSVs found in {}",
            dir.display()
        )));
    }

    let mut summary = String::new();
    let mut offenders: Vec<String> = Vec::new();
    let _ = writeln!(summary, "run report for {} CSV files", csv_files.len());

    for path in &csv_files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let section = describe_file(dir, path, &name);
        match section {
            Ok(Some(text)) => {
                let _ = writeln!(summary, "\n== {name} ==");
                summary.push_str(&text);
            }
            Ok(None) => {
                let _ = writeln!(summary, "\n== {name} ==\nskipped: unrecognized layout");
            }
            Err(e) => offenders.push(format!("{name}: {e}")),
        }
    }

    if !offenders.is_empty() {
        return Err(CliError::Report(format!(
            "could not aggregate: {}",
            offenders.join("; ")
        )));
    }
    fs::write(dir.join("report.txt"), summary)?;
    println!("report: wrote {}", dir.join("report.txt").display());
    Ok(())
}

/// Build one summary section (and side-effect plots) for a recognized file;
/// `Ok(None)` means the file is not one of ours.
fn describe_file(dir: &Path, path: &Path, name: &str) -> Result<Option<String>> {
    let mut text = String::new();
    if name.ends_with("trajectory.csv") {
        let rows: Vec<TrajectoryRow> = read_rows(path)?;
        let last = rows
            .last()
            .ok_or_else(|| CliError::Report("empty trajectory".into()))?;
        let _ = writeln!(
            text,
            "iterations: {}\nfinal l1_loss: {}\nfinal observed_nmse_db: {}\nfinal full_nmse_db: {}",
            last.iteration,
            last.l1_loss,
            fmt_opt(last.observed_nmse_db),
            fmt_opt(last.full_nmse_db)
        );
        let base = stem(path);
        fs::write(
            dir.join(format!("{base}_loss.svg")),
            render::trajectory_loss_plot(&base, &rows),
        )?;
        if let Some(svg) = render::trajectory_nmse_plot(&base, &rows) {
            fs::write(dir.join(format!("{base}_nmse.svg")), svg)?;
        }
        return Ok(Some(text));
    }
    if name.ends_with("pretrain_summary.csv") {
        let rows: Vec<PretrainSummaryRow> = read_rows(path)?;
        for r in rows {
            let _ = writeln!(
                text,
                "iterations: {}\nl1_loss: {}\nfull_nmse_db: {}\nobserved_nmse_db: {}\nunobserved_nmse_db: {}\nnn_full_nmse_db: {}\nnn_unobserved_nmse_db: {}\nm_tilde: {}\ntrainable_params: {}",
                r.final_iteration,
                r.l1_loss,
                r.full_nmse_db,
                r.observed_nmse_db,
                fmt_opt(r.unobserved_nmse_db),
                r.nn_full_nmse_db,
                fmt_opt(r.nn_unobserved_nmse_db),
                r.m_tilde,
                r.trainable_params
            );
        }
        return Ok(Some(text));
    }
    if name.contains("adapt_") && name.ends_with("summary.csv") {
        let rows: Vec<AdaptSummaryRow> = read_rows(path)?;
        for r in rows {
            let _ = writeln!(
                text,
                "mode: {}\niterations: {}\nl1_loss: {}\nfull_nmse_db: {}\nobserved_nmse_db: {}\nunobserved_nmse_db: {}\nm_tilde: {}\nrank: {}\ntrainable_params: {} ({:.2}% of base)",
                r.mode,
                r.final_iteration,
                r.l1_loss,
                r.full_nmse_db,
                r.observed_nmse_db,
                fmt_opt(r.unobserved_nmse_db),
                r.m_tilde,
                r.rank.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
                r.trainable_params,
                100.0 * r.trainable_fraction
            );
        }
        return Ok(Some(text));
    }
    if name.ends_with("sweep_rank.csv") {
        let rows: Vec<SweepRankRow> = read_rows(path)?;
        if rows.is_empty() {
            return Err(CliError::Report("empty sweep".into()));
        }
        let mut ranks: Vec<u64> = rows.iter().map(|r| r.rank).collect();
        ranks.dedup();
        for rank in ranks {
            let last = rows.iter().filter(|r| r.rank == rank).last().unwrap();
            let _ = writeln!(
                text,
                "r={}: final {} dB at iteration {} ({} trainable params)",
                rank, last.nmse_db, last.iteration, last.trainable_params
            );
        }
        fs::write(dir.join("sweep_rank.svg"), render::sweep_rank_plot(&rows))?;
        return Ok(Some(text));
    }
    if name.ends_with("sweep_mics.csv") {
        let rows: Vec<SweepMicsRow> = read_rows(path)?;
        if rows.is_empty() {
            return Err(CliError::Report("empty sweep".into()));
        }
        for r in &rows {
            let _ = writeln!(text, "M~={} {}: {} dB", r.m_tilde, r.mode, r.nmse_db);
        }
        fs::write(dir.join("sweep_mics.svg"), render::sweep_mics_plot(&rows))?;
        return Ok(Some(text));
    }
    if name.ends_with("cross_room.csv") {
        let rows: Vec<CrossRoomRow> = read_rows(path)?;
        if rows.is_empty() {
            return Err(CliError::Report("empty matrix".into()));
        }
        for r in &rows {
            let _ = writeln!(
                text,
                "{} {} -> {} M~={} {}: {} dB{}",
                r.kind,
                r.pretrain_room,
                r.target_room,
                r.m_tilde,
                r.mode,
                r.nmse_db,
                r.lora_minus_best_db
                    .map(|g| format!(" (lora-best {g} dB)"))
                    .unwrap_or_default()
            );
        }
        return Ok(Some(text));
    }
    Ok(None)
}
