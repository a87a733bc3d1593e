//! Wall-clock harness: one untimed warm-up, then a fixed number of
//! timed runs summarized by median and min/max spread. Medians need at
//! least two runs; asking for fewer is refused rather than padded.

use std::time::Instant;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Timing {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

pub fn time_runs<F: FnMut()>(runs: usize, mut work: F) -> Result<Timing, CliError> {
    if runs < 2 {
        return Err(CliError::Usage(format!(
            "{runs} run(s) cannot support a median; use --runs 2 or more"
        )));
    }
    work();
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        work();
        samples.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(Timing {
        median,
        min: sorted[0],
        max: *sorted.last().expect("runs >= 2"),
        samples,
    })
}
