//! Human-evaluation analysis: score rescaling, response-time truncation,
//! per-criterion averages and one-tailed Welch t-tests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("score {0} outside 1..=4")]
    ScoreRange(u8),
    #[error("response time must be positive, got {0}")]
    Time(f64),
    #[error("percentile {0} outside 0..=100")]
    Percentile(f64),
    #[error("no records to aggregate")]
    Empty,
    #[error("degenerate samples: {0}")]
    Degenerate(&'static str),
    #[error("unknown system label {0:?}")]
    System(String),
    #[error("invalid system pair {0:?}")]
    Pair(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Reference,
    Baseline,
    Ours,
}

impl FromStr for System {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reference" => Ok(Self::Reference),
            "baseline" => Ok(Self::Baseline),
            "ours" => Ok(Self::Ours),
            _ => Err(StatsError::System(s.to_string())),
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reference => "reference",
            Self::Baseline => "baseline",
            Self::Ours => "ours",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Creativity,
    Readability,
    Relevance,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Self::Creativity, Self::Readability, Self::Relevance];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub worker: String,
    pub team: String,
    pub time_sec: f64,
    pub system: System,
    pub creativity: u8,
    pub readability: u8,
    pub relevance: u8,
}

impl ResponseRecord {
    pub fn score(&self, c: Criterion) -> u8 {
        match c {
            Criterion::Creativity => self.creativity,
            Criterion::Readability => self.readability,
            Criterion::Relevance => self.relevance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_sec > 0.0) {
            return Err(StatsError::Time(self.time_sec));
        }
        for c in Criterion::ALL {
            let s = self.score(c);
            if !(1..=4).contains(&s) {
                return Err(StatsError::ScoreRange(s));
            }
        }
        Ok(())
    }
}

/// How 1..4 ratings map onto 0..100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rescale {
    /// `(s - 1) / 3 * 100`, anchoring 1 at 0 and 4 at 100.
    #[default]
    Linear,
    /// `s / 4 * 100`.
    Proportional,
}

impl FromStr for Rescale {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "proportional" => Ok(Self::Proportional),
            _ => Err(format!("unknown rescale map {s:?}")),
        }
    }
}

pub fn rescale_with(score: u8, map: Rescale) -> Result<f64> {
    if !(1..=4).contains(&score) {
        return Err(StatsError::ScoreRange(score));
    }
    let s = f64::from(score);
    Ok(match map {
        Rescale::Linear => (s - 1.0) / 3.0 * 100.0,
        Rescale::Proportional => s / 4.0 * 100.0,
    })
}

pub fn rescale(score: u8) -> Result<f64> {
    rescale_with(score, Rescale::Linear)
}

/// Total response time per worker, keyed by worker id.
pub fn worker_times(records: &[ResponseRecord]) -> BTreeMap<&str, f64> {
    let mut times = BTreeMap::new();
    for r in records {
        *times.entry(r.worker.as_str()).or_insert(0.0) += r.time_sec;
    }
    times
}

/// Worker time at percentile `p`: with worker totals sorted ascending,
/// the value at index `min(floor(p·N/100), N-1)`.
pub fn percentile_threshold(records: &[ResponseRecord], p: f64) -> Result<Option<f64>> {
    if !(0.0..=100.0).contains(&p) {
        return Err(StatsError::Percentile(p));
    }
    let mut times: Vec<f64> = worker_times(records).into_values().collect();
    if times.is_empty() {
        return Ok(None);
    }
    times.sort_by(f64::total_cmp);
    let idx = ((p * times.len() as f64 / 100.0).floor() as usize).min(times.len() - 1);
    Ok(Some(times[idx]))
}

/// Drops every record of workers whose total time is strictly below the
/// `p`-th percentile threshold. Ties at the threshold stay.
pub fn truncate_by_time(records: &[ResponseRecord], p: f64) -> Result<Vec<ResponseRecord>> {
    let Some(threshold) = percentile_threshold(records, p)? else {
        return Ok(Vec::new());
    };
    if p == 0.0 {
        return Ok(records.to_vec());
    }
    let times = worker_times(records);
    Ok(records
        .iter()
        .filter(|r| times[r.worker.as_str()] >= threshold)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub creativity: f64,
    pub readability: f64,
    pub relevance: f64,
    pub total: f64,
    pub count: usize,
}

impl SystemScores {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Creativity => self.creativity,
            Criterion::Readability => self.readability,
            Criterion::Relevance => self.relevance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: System,
    pub b: System,
    /// Upper-tail p-value per criterion for `mean(a) > mean(b)`.
    pub creativity: f64,
    pub readability: f64,
    pub relevance: f64,
    /// Same test over each record's mean of the three criteria.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub systems: BTreeMap<System, SystemScores>,
    pub retained: usize,
    pub workers: usize,
    pub tests: Vec<PairTest>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn rescaled(records: &[&ResponseRecord], c: Criterion, map: Rescale) -> Result<Vec<f64>> {
    records.iter().map(|r| rescale_with(r.score(c), map)).collect()
}

fn record_totals(records: &[&ResponseRecord], map: Rescale) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let mut sum = 0.0;
            for c in Criterion::ALL {
                sum += rescale_with(r.score(c), map)?;
            }
            Ok(sum / 3.0)
        })
        .collect()
}

pub fn aggregate(records: &[ResponseRecord]) -> Result<AggregateReport> {
    aggregate_with(records, Rescale::Linear, &[])
}

/// Per-system means on the 0..100 scale, plus Welch tests for each pair.
/// A pair whose samples are degenerate reports a NaN p-value.
pub fn aggregate_with(records: &[ResponseRecord], map: Rescale, pairs: &[(System, System)]) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut by_system: BTreeMap<System, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        by_system.entry(r.system).or_default().push(r);
    }
    let mut systems = BTreeMap::new();
    for (&sys, rs) in &by_system {
        let m: Vec<f64> = Criterion::ALL
            .iter()
            .map(|&c| rescaled(rs, c, map).map(|v| mean(&v)))
            .collect::<Result<_>>()?;
        systems.insert(
            sys,
            SystemScores {
                creativity: m[0],
                readability: m[1],
                relevance: m[2],
                total: (m[0] + m[1] + m[2]) / 3.0,
                count: rs.len(),
            },
        );
    }
    let empty = Vec::new();
    let mut tests = Vec::new();
    for &(a, b) in pairs {
        let ra = by_system.get(&a).unwrap_or(&empty);
        let rb = by_system.get(&b).unwrap_or(&empty);
        let p = |xa: Vec<f64>, xb: Vec<f64>| one_tailed_t_test(&xa, &xb).map(|t| t.p_value).unwrap_or(f64::NAN);
        let crit = |c| -> Result<f64> { Ok(p(rescaled(ra, c, map)?, rescaled(rb, c, map)?)) };
        tests.push(PairTest {
            a,
            b,
            creativity: crit(Criterion::Creativity)?,
            readability: crit(Criterion::Readability)?,
            relevance: crit(Criterion::Relevance)?,
            total: p(record_totals(ra, map)?, record_totals(rb, map)?),
        });
    }
    Ok(AggregateReport {
        systems,
        retained: records.len(),
        workers: worker_times(records).len(),
        tests,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's t-test, upper tail: small p supports `mean(a) > mean(b)`.
pub fn one_tailed_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::Degenerate("each sample needs at least two values"));
    }
    let (va, vb) = (sample_var(a), sample_var(b));
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) || !se2.is_finite() {
        return Err(StatsError::Degenerate("both samples have zero variance"));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::Degenerate("invalid degrees of freedom"))?;
    Ok(WelchResult {
        t,
        df,
        p_value: dist.cdf(-t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub percent: f64,
    pub report: AggregateReport,
}

pub fn default_sweep() -> Vec<f64> {
    (0..=8).map(|i| f64::from(i * 5)).collect()
}

pub fn truncation_sweep(
    records: &[ResponseRecord],
    percents: &[f64],
    map: Rescale,
    pairs: &[(System, System)],
) -> Result<Vec<SweepRow>> {
    percents
        .iter()
        .map(|&p| {
            let kept = truncate_by_time(records, p)?;
            Ok(SweepRow {
                percent: p,
                report: aggregate_with(&kept, map, pairs)?,
            })
        })
        .collect()
}

/// Parses `ours:baseline,ours:reference`.
pub fn parse_pairs(s: &str) -> Result<Vec<(System, System)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| StatsError::Pair(p.to_string()))?;
            Ok((a.parse()?, b.parse()?))
        })
        .collect()
}

/// Reads CSV with header `worker,team,time_sec,system,creativity,readability,relevance`.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ResponseRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: ResponseRecord = row?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Plain-text table of one report.
pub fn format_report(report: &AggregateReport) -> String {
    let mut s = format!(
        "{:<10} {:>10} {:>11} {:>9} {:>7} {:>6}\n",
        "system", "creativity", "readability", "relevance", "total", "n"
    );
    for (sys, m) in &report.systems {
        s += &format!(
            "{:<10} {:>10.2} {:>11.2} {:>9.2} {:>7.2} {:>6}\n",
            sys.to_string(),
            m.creativity,
            m.readability,
            m.relevance,
            m.total,
            m.count
        );
    }
    for t in &report.tests {
        s += &format!(
            "p({} > {}): creativity {:.4} readability {:.4} relevance {:.4} total {:.4}\n",
            t.a, t.b, t.creativity, t.readability, t.relevance, t.total
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(worker: &str, time: f64, system: System, s: (u8, u8, u8)) -> ResponseRecord {
        ResponseRecord {
            worker: worker.into(),
            team: "t".into(),
            time_sec: time,
            system,
            creativity: s.0,
            readability: s.1,
            relevance: s.2,
        }
    }

    fn twenty_workers() -> Vec<ResponseRecord> {
        (1..=20)
            .map(|i| rec(&format!("w{i:02}"), f64::from(i), System::Ours, (2, 3, 4)))
            .collect()
    }

    #[test]
    fn rescale_values() {
        assert_eq!(rescale(1).unwrap(), 0.0);
        assert_eq!(rescale(4).unwrap(), 100.0);
        assert!((rescale(3).unwrap() - 66.667).abs() < 1e-3);
        assert!(rescale(0).is_err());
        assert!(rescale(5).is_err());
        assert_eq!(rescale_with(4, Rescale::Proportional).unwrap(), 100.0);
    }

    #[test]
    fn truncation_on_twenty_workers() {
        let rs = twenty_workers();
        assert_eq!(truncate_by_time(&rs, 0.0).unwrap(), rs);
        let five = truncate_by_time(&rs, 5.0).unwrap();
        assert_eq!(five.len(), 19);
        assert!(five.iter().all(|r| r.worker != "w01"));
        let all = truncate_by_time(&rs, 100.0).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].worker, "w20");
        assert!(truncate_by_time(&rs, 101.0).is_err());
    }

    #[test]
    fn worker_time_is_summed() {
        let rs = vec![
            rec("a", 1.0, System::Ours, (1, 1, 1)),
            rec("a", 9.0, System::Baseline, (1, 1, 1)),
            rec("b", 5.0, System::Ours, (1, 1, 1)),
        ];
        // worker totals a=10, b=5; p=50 → index 1 → 10, so b goes
        let kept = truncate_by_time(&rs, 50.0).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|r| r.worker == "a"));
    }

    #[test]
    fn aggregate_single_record() {
        let r = aggregate(&[rec("w", 1.0, System::Ours, (2, 3, 4))]).unwrap();
        let m = &r.systems[&System::Ours];
        assert!((m.creativity - 100.0 / 3.0).abs() < 1e-9);
        assert!((m.readability - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.relevance, 100.0);
        assert!((m.total - 200.0 / 3.0).abs() < 1e-9);
        assert!(matches!(aggregate(&[]), Err(StatsError::Empty)));
    }

    #[test]
    fn welch_fixture() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0, 1.0, 2.0, 3.0, 4.0];
        let w = one_tailed_t_test(&a, &b).unwrap();
        assert!((w.t - 1.0).abs() < 1e-12);
        assert!((w.df - 8.0).abs() < 1e-12);
        assert!((w.p_value - 0.173).abs() < 1e-3);
        let same = one_tailed_t_test(&a, &a).unwrap();
        assert_eq!(same.t, 0.0);
        assert!((same.p_value - 0.5).abs() < 1e-12);
        assert!(one_tailed_t_test(&[1.0], &a).is_err());
        assert!(one_tailed_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn csv_round() {
        let text = "worker,team,time_sec,system,creativity,readability,relevance\n\
                    w1,t1,12.5,ours,4,3,2\nw2,t1,3,baseline,1,2,3\n";
        let rs = read_csv(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[1].system, System::Baseline);
        let bad = "worker,team,time_sec,system,creativity,readability,relevance\nw1,t1,1,ours,5,1,1\n";
        assert!(read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn pairs_parse() {
        assert_eq!(
            parse_pairs("ours:baseline,ours:reference").unwrap(),
            vec![(System::Ours, System::Baseline), (System::Ours, System::Reference)]
        );
        assert!(parse_pairs("ours").is_err());
    }
}
