//! Backtest orchestration: expands (model, region, origin) tasks, runs them
//! in parallel, and turns a completed forecast store into score tables.
//!
//! Every task draws from its own seeded RNG stream keyed by
//! (seed, variant, region, origin), so results do not depend on worker
//! count, execution order, or which tasks were already on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;

use crate::config::{BacktestConfig, ModelVariant};
use crate::corpus::{
    forecast_origins, load_series, preprocess, training_window, ColumnMap, Phase, PhaseSet,
    RegionSeries, TrainingWindow, HORIZON,
};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::gp::{fit_gp, forecast_gp};
use crate::renewal::{
    discretize_gi, fit_renewal_rw, forecast_cori, forecast_renewal_rw,
};
use crate::samplers::{seeded_rng, ChainSpec, StreamRng};
use crate::sarima::{fit_sarima, forecast_sarima};
use crate::scoring::{
    auc, hotspot_label, hotspot_prob, quantile, relative_skill, score_forecast, HotspotRecord,
    RelativeSkillTable, ScoreRecord,
};
use crate::store::{ForecastStore, ManifestEntry, StoreSnapshot, TaskStatus};
use crate::trendcast::{fit_trendcast, forecast_trendcast};

pub const SCORES_FILE: &str = "scores.csv";
pub const HOTSPOTS_FILE: &str = "hotspots.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SKILL_FILE: &str = "relative_skill.csv";
pub const AUC_FILE: &str = "hotspot_auc.csv";
pub const RIBBONS_FILE: &str = "ribbons.csv";
pub const BEST_FILE: &str = "best_choices.csv";

/// Outcome counts for one backtest invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacktestReport {
    pub total: usize,
    /// Tasks computed in this invocation.
    pub completed: usize,
    /// Tasks found already complete on disk.
    pub skipped: usize,
    pub failed: usize,
}

/// Loads, cleans, and filters the case data named by the config.
pub fn load_corpus(config: &BacktestConfig) -> Result<BTreeMap<String, RegionSeries>> {
    let mut all: BTreeMap<String, RegionSeries> =
        load_series(&config.cases_file, &ColumnMap::default())?
            .iter()
            .map(|s| (s.region_id.clone(), preprocess(s)))
            .collect();
    match &config.regions {
        None => Ok(all),
        Some(wanted) => {
            let mut picked = BTreeMap::new();
            for r in wanted {
                let s = all
                    .remove(r)
                    .ok_or_else(|| Error::data(format!("region {r:?} not in the case file")))?;
                picked.insert(r.clone(), s);
            }
            Ok(picked)
        }
    }
}

/// Fits one variant on one window and simulates its forecast. The returned
/// draws carry the variant id.
pub fn fit_and_forecast(
    variant: &ModelVariant,
    window: &TrainingWindow,
    n_draws: usize,
    chains: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<ForecastDraws> {
    let mut fc = match variant {
        ModelVariant::Cori(cfg) => forecast_cori(window, cfg, n_draws, rng)?,
        ModelVariant::RenewalRw { prior, gi } => {
            let gi_point = discretize_gi(gi.mean, gi.sd)?;
            let fit = fit_renewal_rw(window, &gi_point, prior, chains, rng)?;
            forecast_renewal_rw(&fit, n_draws, rng)?
        }
        ModelVariant::Sarima(cfg) => {
            let fit = fit_sarima(window, cfg, chains, rng)?;
            forecast_sarima(&fit, n_draws, rng)?
        }
        ModelVariant::Trend(cfg) => {
            let fit = fit_trendcast(window, cfg, chains, rng)?;
            forecast_trendcast(&fit, n_draws, rng)?
        }
        ModelVariant::Gp(cfg) => {
            let fit = fit_gp(window, cfg, chains, rng)?;
            forecast_gp(&fit, n_draws, rng)?
        }
    };
    fc.model_id = variant.id();
    Ok(fc)
}

struct Task<'a> {
    variant: &'a ModelVariant,
    variant_id: String,
    region_id: String,
    origin: NaiveDate,
}

/// Runs the full grid into `store_root`. Already-complete forecasts are left
/// alone, per-task failures are recorded in the manifest, and the run keeps
/// going.
pub fn run_backtest(config: &BacktestConfig, store_root: &Path) -> Result<BacktestReport> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    if corpus.is_empty() {
        return Err(Error::data("case file holds no regions"));
    }
    let store = ForecastStore::open(store_root)?;
    let variants = config.variants();
    store.write_snapshot(&StoreSnapshot {
        config: config.clone(),
        variants: variants
            .iter()
            .map(|v| (v.id(), v.family().to_string()))
            .collect(),
    })?;

    let mut origins_by_region: BTreeMap<&String, Vec<NaiveDate>> = BTreeMap::new();
    for (region, series) in &corpus {
        origins_by_region.insert(
            region,
            forecast_origins(series, config.first_origin, config.last_origin)?,
        );
    }

    let mut tasks = Vec::new();
    for variant in &variants {
        let variant_id = variant.id();
        for (region, origins) in &origins_by_region {
            for &origin in origins {
                tasks.push(Task {
                    variant,
                    variant_id: variant_id.clone(),
                    region_id: (*region).clone(),
                    origin,
                });
            }
        }
    }

    let (pending, cached): (Vec<&Task>, Vec<&Task>) = tasks.iter().partition(|t| {
        !store.has_forecast(&t.variant_id, &t.region_id, t.origin, config.draws)
    });

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;

    let outcomes: Vec<(usize, std::result::Result<(), String>)> = pool.install(|| {
        pending
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let series = &corpus[&t.region_id];
                let run = || -> Result<()> {
                    let window = training_window(series, t.origin, config.log_offset)?;
                    let mut rng = seeded_rng(
                        config.seed,
                        &["task", &t.variant_id, &t.region_id, &t.origin.to_string()],
                    );
                    let fc = fit_and_forecast(
                        t.variant,
                        &window,
                        config.draws,
                        &config.chains,
                        &mut rng,
                    )?;
                    store.write_forecast(&fc)
                };
                (i, run().map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut failures: BTreeMap<usize, String> = BTreeMap::new();
    for (i, outcome) in outcomes {
        if let Err(reason) = outcome {
            failures.insert(i, reason);
        }
    }

    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(tasks.len());
    for t in &cached {
        entries.push(ManifestEntry {
            model_id: t.variant_id.clone(),
            region_id: t.region_id.clone(),
            origin: t.origin,
            status: TaskStatus::Ok,
            reason: String::new(),
        });
    }
    for (i, t) in pending.iter().enumerate() {
        let (status, reason) = match failures.get(&i) {
            None => (TaskStatus::Ok, String::new()),
            Some(r) => (TaskStatus::Failed, r.clone()),
        };
        entries.push(ManifestEntry {
            model_id: t.variant_id.clone(),
            region_id: t.region_id.clone(),
            origin: t.origin,
            status,
            reason,
        });
    }
    entries.sort_by(|a, b| {
        (&a.model_id, &a.region_id, a.origin).cmp(&(&b.model_id, &b.region_id, b.origin))
    });
    store.write_manifest(&entries)?;

    Ok(BacktestReport {
        total: tasks.len(),
        completed: pending.len() - failures.len(),
        skipped: cached.len(),
        failed: failures.len(),
    })
}

/// Everything run_scoring computes, also written as CSV tables in the store.
pub struct ScoringOutput {
    pub records: Vec<ScoreRecord>,
    pub hotspots: Vec<HotspotRecord>,
    pub skill: RelativeSkillTable,
}

fn fmt_opt_phase(p: &Option<Phase>) -> &str {
    p.as_ref().map(|p| p.as_str()).unwrap_or("")
}

/// Scores every complete forecast in the store against observations and
/// writes the score, hotspot, summary, relative-skill, and hotspot-AUC
/// tables. Errors when a scored target week has no observations.
pub fn run_scoring(
    store: &ForecastStore,
    corpus: &BTreeMap<String, RegionSeries>,
    phases: Option<&PhaseSet>,
) -> Result<ScoringOutput> {
    let snapshot = store.read_snapshot()?;
    let seed = snapshot.config.seed;
    let log_offset = snapshot.config.log_offset;
    let mut entries: Vec<ManifestEntry> = store
        .read_manifest()?
        .into_iter()
        .filter(|e| e.status == TaskStatus::Ok)
        .collect();
    if entries.is_empty() {
        return Err(Error::data("manifest holds no complete forecasts to score"));
    }
    entries.sort_by(|a, b| {
        (&a.model_id, &a.region_id, a.origin).cmp(&(&b.model_id, &b.region_id, b.origin))
    });

    let mut records = Vec::with_capacity(entries.len() * 2);
    let mut hotspot_map: BTreeMap<(String, NaiveDate, u8), (u8, bool, BTreeMap<String, f64>)> =
        BTreeMap::new();
    for e in &entries {
        let series = corpus.get(&e.region_id).ok_or_else(|| {
            Error::data(format!("region {:?} missing from the case data", e.region_id))
        })?;
        let fc = store.read_forecast(&e.model_id, &e.region_id, e.origin, series.population)?;
        let mut rng = seeded_rng(
            seed,
            &["pit", &e.model_id, &e.region_id, &e.origin.to_string()],
        );
        let pair = score_forecast(&fc, series, phases, log_offset, &mut rng)?;
        records.extend(pair);
        for week in 1..=2u8 {
            let target = e.origin + Days::new(7 * week as u64);
            let (label, included) = hotspot_label(series, target)?;
            let prob = hotspot_prob(&fc, series, week)?;
            let slot = hotspot_map
                .entry((e.region_id.clone(), e.origin, week))
                .or_insert_with(|| (label, included, BTreeMap::new()));
            slot.2.insert(e.model_id.clone(), prob);
        }
    }

    let hotspots: Vec<HotspotRecord> = hotspot_map
        .into_iter()
        .map(|((region_id, origin, week), (label, included, probs))| HotspotRecord {
            region_id,
            origin,
            week,
            target: origin + Days::new(7 * week as u64),
            label,
            included,
            probs,
        })
        .collect();

    // Relative skill over targets every model completed.
    let model_ids: Vec<String> = {
        let mut ids: Vec<String> = entries.iter().map(|e| e.model_id.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    };
    let mut by_model: BTreeMap<&String, BTreeMap<(String, NaiveDate, u8), f64>> = BTreeMap::new();
    for r in &records {
        by_model
            .entry(&r.model_id)
            .or_default()
            .insert((r.region_id.clone(), r.origin, r.week), r.crps_log);
    }
    let mut shared: Option<BTreeSet<(String, NaiveDate, u8)>> = None;
    for targets in by_model.values() {
        let keys: BTreeSet<_> = targets.keys().cloned().collect();
        shared = Some(match shared {
            None => keys,
            Some(acc) => acc.intersection(&keys).cloned().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(Error::data(
            "no forecast target was completed by every model; cannot rank",
        ));
    }
    let score_rows: Vec<Vec<f64>> = model_ids
        .iter()
        .map(|m| shared.iter().map(|t| by_model[m][t]).collect())
        .collect();
    let skill = relative_skill(&model_ids, &score_rows)?;

    write_scores(store, &records)?;
    write_hotspots(store, &hotspots, &model_ids)?;
    write_summary(store, &records)?;
    write_skill(store, &skill)?;
    write_hotspot_auc(store, &hotspots, &model_ids)?;

    Ok(ScoringOutput {
        records,
        hotspots,
        skill,
    })
}

fn write_scores(store: &ForecastStore, records: &[ScoreRecord]) -> Result<()> {
    let mut out = String::from(
        "model,region,origin,week,crps_log,pit,covered_50,covered_95,dispersion,bias,phase\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model_id,
            r.region_id,
            r.origin,
            r.week,
            r.crps_log,
            r.pit,
            r.covered_50,
            r.covered_95,
            r.dispersion,
            r.bias,
            fmt_opt_phase(&r.phase)
        )
        .expect("string write");
    }
    store.write_table(SCORES_FILE, &out)
}

/// Reads scores.csv back into records.
pub fn read_scores(store: &ForecastStore) -> Result<Vec<ScoreRecord>> {
    let path = store.table_path(SCORES_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| {
        Error::Store(format!(
            "cannot read {}: {e}; run the score step first",
            path.display()
        ))
    })?;
    let mut records = Vec::new();
    for row in reader.records() {
        let r = row?;
        let parse_f = |i: usize| -> Result<f64> {
            r[i].parse()
                .map_err(|e| Error::Store(format!("scores.csv column {i}: {e}")))
        };
        records.push(ScoreRecord {
            model_id: r[0].to_string(),
            region_id: r[1].to_string(),
            origin: r[2]
                .parse()
                .map_err(|e| Error::Store(format!("scores.csv origin: {e}")))?,
            week: r[3]
                .parse()
                .map_err(|e| Error::Store(format!("scores.csv week: {e}")))?,
            crps_log: parse_f(4)?,
            pit: parse_f(5)?,
            covered_50: &r[6] == "true",
            covered_95: &r[7] == "true",
            dispersion: parse_f(8)?,
            bias: parse_f(9)?,
            phase: if r[10].is_empty() {
                None
            } else {
                Some(
                    Phase::from_str(&r[10])
                        .map_err(|e| Error::Store(format!("scores.csv phase: {e}")))?,
                )
            },
        });
    }
    Ok(records)
}

fn write_hotspots(
    store: &ForecastStore,
    hotspots: &[HotspotRecord],
    model_ids: &[String],
) -> Result<()> {
    let mut out = String::from("region,origin,week,target,label,included");
    for m in model_ids {
        write!(out, ",prob_{m}").expect("string write");
    }
    out.push('\n');
    for h in hotspots {
        write!(
            out,
            "{},{},{},{},{},{}",
            h.region_id, h.origin, h.week, h.target, h.label, h.included
        )
        .expect("string write");
        for m in model_ids {
            match h.probs.get(m) {
                Some(p) => write!(out, ",{p}").expect("string write"),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    store.write_table(HOTSPOTS_FILE, &out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn write_summary(store: &ForecastStore, records: &[ScoreRecord]) -> Result<()> {
    // Grouped mean/median CRPS. Group kinds: overall, region, phase, week.
    let mut groups: BTreeMap<(u8, String, &String), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((0, String::new(), &r.model_id))
            .or_default()
            .push(r.crps_log);
        groups
            .entry((1, r.region_id.clone(), &r.model_id))
            .or_default()
            .push(r.crps_log);
        if let Some(p) = &r.phase {
            groups
                .entry((2, p.as_str().to_string(), &r.model_id))
                .or_default()
                .push(r.crps_log);
        }
        groups
            .entry((3, r.week.to_string(), &r.model_id))
            .or_default()
            .push(r.crps_log);
    }
    let kind_name = ["overall", "region", "phase", "week"];
    let mut out = String::from("model,group_kind,group,n,mean_crps,median_crps\n");
    for ((kind, group, model), crps) in &groups {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            model,
            kind_name[*kind as usize],
            group,
            crps.len(),
            mean(crps),
            quantile(crps, 0.5)
        )
        .expect("string write");
    }
    store.write_table(SUMMARY_FILE, &out)
}

fn write_skill(store: &ForecastStore, skill: &RelativeSkillTable) -> Result<()> {
    let mut out = String::from("kind,model_i,model_j,value\n");
    for (i, mi) in skill.models.iter().enumerate() {
        for (j, mj) in skill.models.iter().enumerate() {
            writeln!(out, "theta,{mi},{mj},{}", skill.theta[i][j]).expect("string write");
        }
    }
    for (i, m) in skill.models.iter().enumerate() {
        writeln!(out, "skill,{m},,{}", skill.skill[i]).expect("string write");
    }
    store.write_table(SKILL_FILE, &out)
}

fn write_hotspot_auc(
    store: &ForecastStore,
    hotspots: &[HotspotRecord],
    model_ids: &[String],
) -> Result<()> {
    let mut out = String::from("model,week,n_pos,n_neg,auc\n");
    for m in model_ids {
        for week in 1..=2u8 {
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            for h in hotspots {
                if h.week != week || !h.included {
                    continue;
                }
                if let Some(&p) = h.probs.get(m) {
                    probs.push(p);
                    labels.push(h.label);
                }
            }
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            let n_neg = labels.len() - n_pos;
            // Single-class target sets have no rank statistic; leave blank.
            let value = match auc(&probs, &labels) {
                Ok(v) => v.to_string(),
                Err(_) => String::new(),
            };
            writeln!(out, "{m},{week},{n_pos},{n_neg},{value}").expect("string write");
        }
    }
    store.write_table(AUC_FILE, &out)
}

/// One family's selected grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BestChoice {
    pub family: String,
    pub model_id: String,
    pub mean_crps: f64,
    pub n_scores: usize,
}

/// Picks the variant with the lowest mean CRPS inside each family; ties go
/// to the lexicographically smallest id. Writes best_choices.csv.
pub fn model_grid_report(store: &ForecastStore) -> Result<Vec<BestChoice>> {
    let snapshot = store.read_snapshot()?;
    let records = read_scores(store)?;
    let mut family_of: BTreeMap<&str, &str> = BTreeMap::new();
    for (id, family) in &snapshot.variants {
        family_of.insert(id, family);
    }
    let mut crps: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
    for r in &records {
        crps.entry(&r.model_id).or_default().push(r.crps_log);
    }
    let mut per_family: BTreeMap<&str, Vec<(&String, f64, usize)>> = BTreeMap::new();
    for (model, scores) in &crps {
        let family = family_of.get(model.as_str()).copied().ok_or_else(|| {
            Error::Store(format!("scored model {model:?} missing from the run snapshot"))
        })?;
        per_family
            .entry(family)
            .or_default()
            .push((model, mean(scores), scores.len()));
    }
    let mut best = Vec::new();
    for (family, mut rows) in per_family {
        rows.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("finite mean CRPS")
                .then_with(|| a.0.cmp(b.0))
        });
        let (model, mean_crps, n_scores) = rows[0];
        best.push(BestChoice {
            family: family.to_string(),
            model_id: model.clone(),
            mean_crps,
            n_scores,
        });
    }
    let mut out = String::from("family,model,mean_crps,n_scores\n");
    for b in &best {
        writeln!(out, "{},{},{},{}", b.family, b.model_id, b.mean_crps, b.n_scores)
            .expect("string write");
    }
    store.write_table(BEST_FILE, &out)?;
    Ok(best)
}

/// Writes per-day forecast quantile ribbons (2.5, 25, 50, 75, 97.5 percent)
/// for every complete forecast. Works from the stored draws alone.
pub fn write_ribbons(store: &ForecastStore) -> Result<usize> {
    let entries: Vec<ManifestEntry> = store
        .read_manifest()?
        .into_iter()
        .filter(|e| e.status == TaskStatus::Ok)
        .collect();
    let mut sorted = entries;
    sorted.sort_by(|a, b| {
        (&a.model_id, &a.region_id, a.origin).cmp(&(&b.model_id, &b.region_id, b.origin))
    });
    let levels = [0.025, 0.25, 0.5, 0.75, 0.975];
    let mut out = String::from("model,region,origin,day,date,q2.5,q25,q50,q75,q97.5\n");
    let mut rows = 0usize;
    for e in &sorted {
        // Population is irrelevant for count quantiles.
        let fc = store.read_forecast(&e.model_id, &e.region_id, e.origin, 1)?;
        for day in 0..HORIZON {
            let col: Vec<f64> = fc.draws.iter().map(|row| row[day]).collect();
            let qs: Vec<String> = levels.iter().map(|&p| quantile(&col, p).to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.model_id,
                e.region_id,
                e.origin,
                day + 1,
                e.origin + Days::new(day as u64 + 1),
                qs.join(",")
            )
            .expect("string write");
            rows += 1;
        }
    }
    store.write_table(RIBBONS_FILE, &out)?;
    Ok(rows)
}
