//! Timestamped feature streams to trajectories.
//!
//! `timeline.csv` holds one row per measurement time with optional feature
//! values; `stays.csv` holds the stay length and outcome. Values are carried
//! forward from the most recent observation, falling back to a per-feature
//! default, and every distinct measurement time starts a new epoch.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{clip_epochs, Epoch, Trajectory};
use crate::error::{invalid, Error, Result};

/// Feature set extracted for the mortality model.
pub const CLINICAL_FEATURES: [&str; 17] = [
    "Capillary refill rate",
    "Diastolic blood pressure",
    "Fraction inspired oxygen",
    "Glascow coma scale eye opening",
    "Glascow coma scale motor response",
    "Glascow coma scale total",
    "Glascow coma scale verbal response",
    "Glucose",
    "Heart Rate",
    "Height",
    "Mean blood pressure",
    "Oxygen saturation",
    "Respiratory rate",
    "Systolic blood pressure",
    "Temperature",
    "Weight",
    "pH",
];

pub const DEFAULT_HORIZON_HOURS: f64 = 120.0;

const TIMELINE_PREFIX: [&str; 3] = ["stay_id", "patient_id", "time_hours"];
const STAYS_HEADER: [&str; 4] = ["stay_id", "patient_id", "length_of_stay_hours", "in_icu_death"];

/// Trajectories plus the names of their covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    pub time_hours: f64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StayRecord {
    pub stay_id: String,
    pub patient_id: String,
    pub length_of_stay_hours: f64,
    pub in_icu_death: bool,
}

/// All timeline rows of one stay, sorted by time (file order kept for ties).
#[derive(Debug, Clone, PartialEq)]
pub struct StayRows {
    pub stay: StayRecord,
    pub rows: Vec<TimelineRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub feature_names: Vec<String>,
    pub groups: Vec<StayRows>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultValueTable {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
}

impl DefaultValueTable {
    pub fn uniform(feature_names: &[String], value: f64) -> Self {
        DefaultValueTable {
            feature_names: feature_names.to_vec(),
            values: vec![value; feature_names.len()],
        }
    }

    /// Reads `feature,value` rows and aligns them with `feature_names`.
    pub fn from_csv<R: Read>(reader: R, feature_names: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["feature", "value"] {
            return Err(Error::Format("defaults header must be `feature,value`".into()));
        }
        let mut table = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let value: f64 = rec[1]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Format(format!("defaults line {line}: `{}` is not a finite number", &rec[1])))?;
            table.insert(rec[0].to_string(), value);
        }
        let values = feature_names
            .iter()
            .map(|f| {
                table
                    .get(f)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("no default value for feature `{f}`")))
            })
            .collect::<Result<_>>()?;
        Ok(DefaultValueTable {
            feature_names: feature_names.to_vec(),
            values,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "feature,value")?;
        for (f, v) in self.feature_names.iter().zip(&self.values) {
            writeln!(out, "{f},{v}")?;
        }
        Ok(())
    }
}

fn parse_number(cell: &str, what: &str, line: u64) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Format(format!("line {line}: {what} `{cell}` is not a finite number")))
}

/// Parses and groups both files. With `features` given, only those columns
/// are read (in that order); otherwise every feature column of the header is.
pub fn parse_timeline<T: Read, S: Read>(timeline: T, stays: S, features: Option<&[String]>) -> Result<Timeline> {
    let records = parse_stays(stays)?;

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(timeline);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[..3] != TIMELINE_PREFIX {
        return Err(Error::Format(
            "timeline header must start with `stay_id,patient_id,time_hours`".into(),
        ));
    }
    let available = &header[3..];
    let feature_names: Vec<String> = match features {
        Some(f) => f.to_vec(),
        None => available.to_vec(),
    };
    let columns: Vec<usize> = feature_names
        .iter()
        .map(|f| {
            available
                .iter()
                .position(|a| a == f)
                .map(|i| i + 3)
                .ok_or_else(|| Error::Format(format!("timeline has no column `{f}`")))
        })
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<String, StayRows> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let stay_id = &rec[0];
        let group = match groups.get_mut(stay_id) {
            Some(g) => g,
            None => {
                let stay = records.get(stay_id).ok_or_else(|| {
                    Error::Format(format!("line {line}: stay `{stay_id}` is not listed in the stays file"))
                })?;
                groups.entry(stay_id.to_string()).or_insert(StayRows {
                    stay: stay.clone(),
                    rows: Vec::new(),
                })
            }
        };
        if group.stay.patient_id != rec[1] {
            return Err(Error::Format(format!(
                "line {line}: stay `{stay_id}` belongs to patient `{}`, not `{}`",
                group.stay.patient_id, &rec[1]
            )));
        }
        let time_hours = parse_number(&rec[2], "time_hours", line)?;
        if time_hours < 0.0 {
            return Err(Error::Format(format!("line {line}: negative time_hours {time_hours}")));
        }
        let values = columns
            .iter()
            .map(|&c| {
                let cell = &rec[c];
                if cell.is_empty() {
                    Ok(None)
                } else {
                    parse_number(cell, &format!("`{}`", header[c]), line).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        group.rows.push(TimelineRow { time_hours, values });
    }
    if let Some(missing) = records.keys().find(|id| !groups.contains_key(*id)) {
        return Err(Error::Format(format!("stay `{missing}` has no timeline rows")));
    }
    let mut groups: Vec<StayRows> = groups.into_values().collect();
    for g in &mut groups {
        g.rows.sort_by(|a, b| a.time_hours.total_cmp(&b.time_hours));
    }
    Ok(Timeline {
        feature_names,
        groups,
    })
}

fn parse_stays<S: Read>(stays: S) -> Result<BTreeMap<String, StayRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(stays);
    if rdr.headers()?.iter().collect::<Vec<_>>() != STAYS_HEADER {
        return Err(Error::Format(format!("stays header must be `{}`", STAYS_HEADER.join(","))));
    }
    let mut records = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let length = parse_number(&rec[2], "length_of_stay_hours", line)?;
        if length <= 0.0 {
            return Err(Error::Format(format!("line {line}: length of stay must be positive")));
        }
        let in_icu_death = match &rec[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Format(format!("line {line}: in_icu_death `{other}` must be 0 or 1")))
            }
        };
        let stay = StayRecord {
            stay_id: rec[0].to_string(),
            patient_id: rec[1].to_string(),
            length_of_stay_hours: length,
            in_icu_death,
        };
        if records.insert(stay.stay_id.clone(), stay).is_some() {
            return Err(Error::Format(format!("line {line}: duplicate stay `{}`", &rec[0])));
        }
    }
    Ok(records)
}

/// Forward-filled epochs for one stay. Rows at or after discharge are ignored.
pub fn forward_fill_impute(group: &StayRows, defaults: &DefaultValueTable) -> Vec<Epoch> {
    let k = defaults.values.len();
    let end = group.stay.length_of_stay_hours;
    let mut current = defaults.values.clone();
    let mut missing = vec![true; k];
    let mut epochs: Vec<Epoch> = Vec::new();

    let rows: Vec<&TimelineRow> = group.rows.iter().filter(|r| r.time_hours < end).collect();
    let mut i = 0;
    let mut start = 0.0;
    loop {
        while i < rows.len() && rows[i].time_hours <= start {
            for (j, v) in rows[i].values.iter().enumerate() {
                if let Some(v) = v {
                    current[j] = *v;
                    missing[j] = false;
                }
            }
            i += 1;
        }
        let stop = rows.get(i).map_or(end, |r| r.time_hours);
        epochs.push(Epoch {
            t_start: start,
            t_end: stop,
            x: current.clone(),
            missing: missing.clone(),
        });
        if i >= rows.len() {
            break;
        }
        start = stop;
    }
    epochs
}

pub fn build_trajectory(group: &StayRows, defaults: &DefaultValueTable) -> Result<Trajectory> {
    Trajectory::new(
        group.stay.stay_id.clone(),
        group.stay.patient_id.clone(),
        forward_fill_impute(group, defaults),
        group.stay.in_icu_death,
    )
}

/// Clips a stay at `horizon`. A stay still running at the horizon is censored
/// there: any later death falls outside the observation window.
pub fn truncate_stay(traj: &Trajectory, horizon: f64) -> Trajectory {
    if traj.end_time <= horizon {
        return traj.clone();
    }
    Trajectory {
        stay_id: traj.stay_id.clone(),
        patient_id: traj.patient_id.clone(),
        epochs: clip_epochs(&traj.epochs, horizon),
        event: false,
        end_time: horizon,
    }
}

/// Partitions stays by patient: unique patient IDs are sorted, shuffled with
/// `seed`, and the first `round(fraction · n)` go to the training side.
pub fn split_by_patient(data: &[Trajectory], train_fraction: f64, seed: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid("train fraction must lie in (0, 1)"));
    }
    let mut patients: Vec<&str> = data.iter().map(|t| t.patient_id.as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    if patients.len() < 2 {
        return Err(invalid("need at least two patients to split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let n_train = ((train_fraction * patients.len() as f64).round() as usize).clamp(1, patients.len() - 1);
    let train_ids: HashSet<&str> = patients[..n_train].iter().copied().collect();
    let (train, test): (Vec<_>, Vec<_>) = data
        .iter()
        .cloned()
        .partition(|t| train_ids.contains(t.patient_id.as_str()));
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub features: Option<Vec<String>>,
    /// `None` substitutes 0.0 for never-observed features.
    pub defaults: Option<DefaultValueTable>,
    pub horizon_hours: f64,
    pub exclude_stays: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            features: None,
            defaults: None,
            horizon_hours: DEFAULT_HORIZON_HOURS,
            exclude_stays: Vec::new(),
        }
    }
}

/// Parse, impute and truncate. Output is ordered by stay_id.
pub fn ingest<T: Read, S: Read>(timeline: T, stays: S, opts: &IngestOptions) -> Result<Dataset> {
    if !(opts.horizon_hours > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    let parsed = parse_timeline(timeline, stays, opts.features.as_deref())?;
    let defaults = match &opts.defaults {
        Some(d) => {
            if d.feature_names != parsed.feature_names {
                return Err(invalid("default table does not match the timeline features"));
            }
            d.clone()
        }
        None => DefaultValueTable::uniform(&parsed.feature_names, 0.0),
    };
    let excluded: HashSet<&str> = opts.exclude_stays.iter().map(String::as_str).collect();
    let trajectories = parsed
        .groups
        .par_iter()
        .filter(|g| !excluded.contains(g.stay.stay_id.as_str()))
        .map(|g| build_trajectory(g, &defaults).map(|t| truncate_stay(&t, opts.horizon_hours)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        feature_names: parsed.feature_names,
        trajectories,
    })
}

pub fn ingest_files(timeline: &Path, stays: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let open = |p: &Path| {
        File::open(p)
            .map(BufReader::new)
            .map_err(|e| Error::Format(format!("cannot open {}: {e}", p.display())))
    };
    ingest(open(timeline)?, open(stays)?, opts)
}

pub fn read_defaults(path: &Path, feature_names: &[String]) -> Result<DefaultValueTable> {
    let file = File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    DefaultValueTable::from_csv(BufReader::new(file), feature_names)
}

/// One row per epoch start carrying the values observed by then; features
/// never observed are left empty. Re-ingesting reproduces the epochs.
pub fn write_timeline<W: Write>(mut out: W, feature_names: &[String], data: &[Trajectory]) -> Result<()> {
    write!(out, "{}", TIMELINE_PREFIX.join(","))?;
    for f in feature_names {
        write!(out, ",{f}")?;
    }
    writeln!(out)?;
    let mut line = String::new();
    for t in data {
        for e in &t.epochs {
            line.clear();
            line.push_str(&format!("{},{},{}", t.stay_id, t.patient_id, e.t_start));
            for (v, m) in e.x.iter().zip(&e.missing) {
                line.push(',');
                if !m {
                    line.push_str(&v.to_string());
                }
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_stays<W: Write>(mut out: W, data: &[Trajectory]) -> Result<()> {
    writeln!(out, "{}", STAYS_HEADER.join(","))?;
    for t in data {
        writeln!(
            out,
            "{},{},{},{}",
            t.stay_id,
            t.patient_id,
            t.end_time,
            u8::from(t.event)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const STAYS: &str = "stay_id,patient_id,length_of_stay_hours,in_icu_death\na,p1,10,0\nb,p2,7.5,1\n";

    #[test]
    fn groups_rows_by_stay_in_time_order() {
        let timeline = "stay_id,patient_id,time_hours,hr,sbp\n\
                        b,p2,3,70,\n\
                        a,p1,6,90,\n\
                        a,p1,0,80,120\n\
                        b,p2,0,,110\n\
                        a,p1,2,,\n";
        let parsed = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).unwrap();
        assert_eq!(parsed.feature_names, names(&["hr", "sbp"]));
        assert_eq!(parsed.groups.len(), 2);
        let times: Vec<f64> = parsed.groups[0].rows.iter().map(|r| r.time_hours).collect();
        assert_eq!(times, vec![0.0, 2.0, 6.0]);
        assert_eq!(parsed.groups[1].stay.stay_id, "b");
    }

    #[test]
    fn unknown_stay_is_named() {
        let timeline = "stay_id,patient_id,time_hours,hr\nzz,p9,0,1\n";
        let err = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let timeline = "stay_id,patient_id,time_hours,hr\na,p1,0,1\nb,p2,0,high\n";
        let err = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("high"), "{msg}");
    }

    #[test]
    fn stay_without_rows_is_an_error() {
        let timeline = "stay_id,patient_id,time_hours,hr\na,p1,0,1\n";
        assert!(parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).is_err());
    }

    #[test]
    fn carry_forward_example() {
        let timeline = "stay_id,patient_id,time_hours,hr\na,p1,0,80\na,p1,6,90\nb,p2,0,\n";
        let parsed = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).unwrap();
        let defaults = DefaultValueTable::uniform(&parsed.feature_names, 86.0);
        let a = build_trajectory(&parsed.groups[0], &defaults).unwrap();
        assert_eq!(a.epochs.len(), 2);
        assert_eq!((a.epochs[0].t_start, a.epochs[0].t_end, a.epochs[0].x[0]), (0.0, 6.0, 80.0));
        assert_eq!((a.epochs[1].t_start, a.epochs[1].t_end, a.epochs[1].x[0]), (6.0, 10.0, 90.0));
        // Never observed: default value, flagged missing throughout.
        let b = build_trajectory(&parsed.groups[1], &defaults).unwrap();
        assert_eq!(b.epochs.len(), 1);
        assert_eq!((b.epochs[0].t_end, b.epochs[0].x[0], b.epochs[0].missing[0]), (7.5, 86.0, true));
        assert!(b.event);
    }

    #[test]
    fn ties_later_row_wins_and_late_first_measurement() {
        let timeline = "stay_id,patient_id,time_hours,hr,sbp\n\
                        a,p1,2,80,100\n\
                        a,p1,2,85,\n\
                        a,p1,12,99,99\n\
                        b,p2,0,1,1\n";
        let parsed = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), None).unwrap();
        let defaults = DefaultValueTable::uniform(&parsed.feature_names, -1.0);
        let a = build_trajectory(&parsed.groups[0], &defaults).unwrap();
        assert_eq!(a.epochs.len(), 2);
        assert_eq!(a.epochs[0].x, vec![-1.0, -1.0]);
        assert_eq!(a.epochs[0].missing, vec![true, true]);
        assert_eq!(a.epochs[1].x, vec![85.0, 100.0]);
        assert_eq!(a.epochs[1].missing, vec![false, false]);
        // The row at t=12 lies beyond discharge at t=10.
        assert_eq!(a.end_time, 10.0);
    }

    #[test]
    fn feature_selection_by_name() {
        let timeline = "stay_id,patient_id,time_hours,hr,sbp\na,p1,0,80,120\nb,p2,0,70,110\n";
        let pick = names(&["sbp"]);
        let parsed = parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), Some(&pick)).unwrap();
        assert_eq!(parsed.groups[0].rows[0].values, vec![Some(120.0)]);
        let bad = names(&["temp"]);
        assert!(parse_timeline(timeline.as_bytes(), STAYS.as_bytes(), Some(&bad)).is_err());
    }

    #[test]
    fn defaults_table_parsing() {
        let f = names(&["hr", "sbp"]);
        let table = DefaultValueTable::from_csv("feature,value\nsbp,118\nhr,86\n".as_bytes(), &f).unwrap();
        assert_eq!(table.values, vec![86.0, 118.0]);
        assert!(DefaultValueTable::from_csv("feature,value\nhr,86\n".as_bytes(), &f).is_err());
        assert!(DefaultValueTable::from_csv("feature,value\nhr,x\nsbp,1\n".as_bytes(), &f).is_err());
    }

    fn stay(id: &str, patient: &str, end: f64, event: bool) -> Trajectory {
        Trajectory::new(
            id,
            patient,
            vec![
                Epoch::observed(0.0, end / 2.0, vec![1.0]),
                Epoch::observed(end / 2.0, end, vec![2.0]),
            ],
            event,
        )
        .unwrap()
    }

    #[test]
    fn truncation_censors_late_deaths() {
        let long = truncate_stay(&stay("a", "p", 200.0, true), 120.0);
        assert_eq!(long.end_time, 120.0);
        assert!(!long.event);
        assert_eq!(long.epochs.last().unwrap().t_end, 120.0);
        let short = stay("b", "p", 80.0, true);
        assert_eq!(truncate_stay(&short, 120.0), short);
    }

    #[test]
    fn patient_level_split() {
        let mut data = Vec::new();
        for p in 0..10 {
            for s in 0..(1 + p % 3) {
                data.push(stay(&format!("{p}-{s}"), &format!("P{p}"), 10.0, false));
            }
        }
        let (train, test) = split_by_patient(&data, 0.8, 42).unwrap();
        let pt = |v: &[Trajectory]| -> HashSet<String> { v.iter().map(|t| t.patient_id.clone()).collect() };
        assert_eq!(pt(&train).len(), 8);
        assert_eq!(pt(&test).len(), 2);
        assert!(pt(&train).is_disjoint(&pt(&test)));
        assert_eq!(train.len() + test.len(), data.len());
        let again = split_by_patient(&data, 0.8, 42).unwrap();
        assert_eq!(again, (train, test));
        assert!(split_by_patient(&data[..1], 0.8, 1).is_err());
        assert!(split_by_patient(&data, 1.0, 1).is_err());
    }
}
