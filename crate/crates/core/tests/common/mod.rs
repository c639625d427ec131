//! Shared fixtures for integration tests: a deterministic synthetic daily
//! case corpus with weekday structure and slow epidemic waves.

use std::fmt::Write as _;
use std::path::Path;

use chrono::Datelike;
use epicast::samplers::{normal_draw, seeded_rng};

pub struct CorpusSpec {
    pub region_id: &'static str,
    pub population: u64,
    /// Baseline daily cases at the wave's trough.
    pub baseline: f64,
    /// Wave length in days.
    pub wave: f64,
}

pub const SIX_REGIONS: [CorpusSpec; 6] = [
    CorpusSpec { region_id: "aa", population: 7_300_000, baseline: 900.0, wave: 150.0 },
    CorpusSpec { region_id: "bb", population: 39_500_000, baseline: 4000.0, wave: 180.0 },
    CorpusSpec { region_id: "cc", population: 12_700_000, baseline: 2500.0, wave: 120.0 },
    CorpusSpec { region_id: "dd", population: 6_000_000, baseline: 800.0, wave: 200.0 },
    CorpusSpec { region_id: "ee", population: 8_900_000, baseline: 1500.0, wave: 160.0 },
    CorpusSpec { region_id: "ff", population: 19_500_000, baseline: 3200.0, wave: 140.0 },
];

/// Multiplicative weekday profile with a weekend reporting dip.
const WEEKDAY: [f64; 7] = [1.05, 1.1, 1.08, 1.05, 1.0, 0.85, 0.78];

/// Daily counts: log-sinusoidal waves times a weekday profile times
/// log-normal noise. Deterministic for a given (seed, region).
pub fn synth_counts(spec: &CorpusSpec, start_weekday: usize, days: usize, seed: u64) -> Vec<i64> {
    let mut rng = seeded_rng(seed, &["synth", spec.region_id]);
    (0..days)
        .map(|t| {
            let wave = 0.9 * (2.0 * std::f64::consts::PI * t as f64 / spec.wave).sin();
            let wd = WEEKDAY[(start_weekday + t) % 7];
            let noise = normal_draw(0.0, 0.08, &mut rng).exp();
            (spec.baseline * wave.exp() * wd * noise).round().max(0.0) as i64
        })
        .collect()
}

/// Writes a daily case CSV starting at `start` (an ISO date) covering
/// `days` days for the given regions.
pub fn write_corpus_csv(
    path: &Path,
    regions: &[CorpusSpec],
    start: &str,
    days: usize,
    seed: u64,
) {
    let start_date: chrono::NaiveDate = start.parse().unwrap();
    let start_weekday = start_date.weekday().num_days_from_monday() as usize;
    let mut out = String::from("date,region,cases,population\n");
    for spec in regions {
        let counts = synth_counts(spec, start_weekday, days, seed);
        for (t, c) in counts.iter().enumerate() {
            let d = start_date + chrono::Days::new(t as u64);
            writeln!(out, "{d},{},{c},{}", spec.region_id, spec.population).unwrap();
        }
    }
    std::fs::write(path, out).unwrap();
}
