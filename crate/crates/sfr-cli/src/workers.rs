//! Parallel execution of independent sweep cells.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{CliError, Result};

/// Environment variable selecting how many worker threads process sweep
/// cells; unset or invalid values mean sequential execution.
pub const WORKERS_ENV: &str = "SFR_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Run `cells` independent jobs, each producing one result slot. Results are
/// returned in cell order regardless of scheduling, so output assembly stays
/// deterministic; on failure the error of the lowest-indexed failing cell is
/// returned.
pub fn run_cells<T, F>(cells: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_count().min(cells.max(1));
    if workers <= 1 {
        return (0..cells).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..cells).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells {
                    break;
                }
                let result = job(i);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().unwrap();
    let mut out = Vec::with_capacity(cells);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e),
            None => {
                return Err(CliError::invalid(format!("sweep cell {i} never ran")));
            }
        }
    }
    Ok(out)
}
