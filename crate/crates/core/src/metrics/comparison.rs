//! Control vs. treatment comparison of speaking balance across teams.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bh_fdr_adjust, fair_share_deviation, gini, wilcoxon_one_tailed, Alternative, PairedSample, TestResult};
use crate::capture::MeetingStats;
use crate::error::{Error, Result};
use crate::ids::{MeetingId, TeamId, UserId};
use crate::orchestrator::Condition;

/// Speaking durations of the participants included in one meeting's analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakingDistribution {
    pub meeting_id: MeetingId,
    pub durations_ms: Vec<u64>,
    pub included_ids: Vec<UserId>,
}

impl SpeakingDistribution {
    /// Participants who joined and whose capture stream is complete.
    pub fn from_stats(stats: &MeetingStats) -> Self {
        let (ids, durations) = stats
            .participants
            .iter()
            .filter(|p| p.joined && p.data_complete)
            .map(|p| (p.user_id.clone(), p.total_speaking_ms))
            .unzip();
        Self {
            meeting_id: stats.meeting_id.clone(),
            durations_ms: durations,
            included_ids: ids,
        }
    }

    pub fn gini(&self) -> Result<f64> {
        let values: Vec<f64> = self.durations_ms.iter().map(|d| *d as f64).collect();
        gini(&values)
    }

    pub fn total_ms(&self) -> u64 {
        self.durations_ms.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniPair {
    pub team_id: TeamId,
    pub control_meeting: MeetingId,
    pub treatment_meeting: MeetingId,
    pub control_gini: f64,
    pub treatment_gini: f64,
    /// treatment − control; negative means the treatment meeting was more balanced.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub team_id: TeamId,
    pub meeting_id: MeetingId,
    pub condition: Condition,
    pub user_id: UserId,
    pub speaking_ms: u64,
    pub deviation: Option<f64>,
    /// The balance statistic fed to external mixed-model fitting.
    pub abs_deviation: Option<f64>,
    pub excluded: bool,
}

/// Outcome of a named test: either a result or the reason it could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub result: Option<TestResult>,
    pub error: Option<String>,
    pub p_adjusted: Option<f64>,
}

impl NamedTest {
    fn from_outcome(name: impl Into<String>, outcome: Result<TestResult>) -> Self {
        match outcome {
            Ok(result) => Self {
                name: name.into(),
                result: Some(result),
                error: None,
                p_adjusted: None,
            },
            Err(err) => Self {
                name: name.into(),
                result: None,
                error: Some(format!("{}: {err}", err.code())),
                p_adjusted: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pairs: Vec<GiniPair>,
    pub gini_test: NamedTest,
    pub deviations: Vec<DeviationRow>,
    pub warnings: Vec<String>,
}

/// Pairs each team's control and treatment meeting, computes both Gini
/// coefficients, tests the paired Gini values and tabulates per-participant
/// fair-share deviations. Teams without exactly one meeting per condition
/// are skipped with a warning.
pub fn condition_comparison(meetings: &[MeetingStats], alternative: Alternative) -> ComparisonReport {
    let mut by_team: BTreeMap<&TeamId, (Vec<&MeetingStats>, Vec<&MeetingStats>)> = BTreeMap::new();
    for m in meetings {
        let entry = by_team.entry(&m.team_id).or_default();
        match m.condition {
            Condition::Control => entry.0.push(m),
            Condition::Treatment => entry.1.push(m),
        }
    }

    let mut pairs = Vec::new();
    let mut deviations = Vec::new();
    let mut warnings = Vec::new();
    for (team, (control, treatment)) in by_team {
        if control.len() != 1 || treatment.len() != 1 {
            warnings.push(format!(
                "team {team} skipped: expected one meeting per condition, found {} control and {} treatment",
                control.len(),
                treatment.len()
            ));
            continue;
        }
        let (c, t) = (control[0], treatment[0]);
        let (cd, td) = (SpeakingDistribution::from_stats(c), SpeakingDistribution::from_stats(t));
        let (cg, tg) = match (cd.gini(), td.gini()) {
            (Ok(cg), Ok(tg)) => (cg, tg),
            (Err(e), _) | (_, Err(e)) => {
                warnings.push(format!("team {team} skipped: {e}"));
                continue;
            }
        };
        pairs.push(GiniPair {
            team_id: team.clone(),
            control_meeting: c.meeting_id.clone(),
            treatment_meeting: t.meeting_id.clone(),
            control_gini: cg,
            treatment_gini: tg,
            delta: tg - cg,
        });
        for (stats, dist) in [(c, &cd), (t, &td)] {
            deviations.extend(deviation_rows(stats, dist, &mut warnings));
        }
    }

    let gini_test = if pairs.is_empty() {
        NamedTest::from_outcome(
            "gini",
            Err(Error::validation("no complete control/treatment pairs")),
        )
    } else {
        let sample = PairedSample::new(
            pairs.iter().map(|p| p.team_id.to_string()).collect(),
            pairs.iter().map(|p| p.control_gini).collect(),
            pairs.iter().map(|p| p.treatment_gini).collect(),
        );
        NamedTest::from_outcome("gini", sample.and_then(|s| wilcoxon_one_tailed(&s, alternative)))
    };

    ComparisonReport {
        pairs,
        gini_test,
        deviations,
        warnings,
    }
}

fn deviation_rows(
    stats: &MeetingStats,
    dist: &SpeakingDistribution,
    warnings: &mut Vec<String>,
) -> Vec<DeviationRow> {
    let total = dist.total_ms() as f64;
    let n = dist.included_ids.len();
    dist.included_ids
        .iter()
        .zip(&dist.durations_ms)
        .map(|(user, &ms)| {
            let deviation = match fair_share_deviation(ms as f64, total, n) {
                Ok(d) => Some(d),
                Err(e) => {
                    warnings.push(format!(
                        "participant {user} in meeting {} excluded from fair-share deviation: {e}",
                        stats.meeting_id
                    ));
                    None
                }
            };
            DeviationRow {
                team_id: stats.team_id.clone(),
                meeting_id: stats.meeting_id.clone(),
                condition: stats.condition,
                user_id: user.clone(),
                speaking_ms: ms,
                deviation,
                abs_deviation: deviation.map(f64::abs),
                excluded: deviation.is_none(),
            }
        })
        .collect()
}

/// An extra paired comparison (e.g. a questionnaire construct) carried in the metrics input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSample {
    pub name: String,
    #[serde(flatten)]
    pub sample: PairedSample,
    #[serde(default = "default_sample_alternative")]
    pub alternative: Alternative,
}

fn default_sample_alternative() -> Alternative {
    Alternative::TreatmentGreater
}

/// Input document of the `metrics` command: finalized meeting stats plus
/// optional extra paired samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsInput {
    pub meetings: Vec<MeetingStats>,
    #[serde(default)]
    pub paired_samples: Vec<NamedSample>,
}

impl MetricsInput {
    /// Accepts either a bare array of meeting stats or the full object form.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("metrics input: {e}")))?;
        let parsed = if value.is_array() {
            serde_json::from_value(value).map(|meetings| MetricsInput {
                meetings,
                paired_samples: Vec::new(),
            })
        } else {
            serde_json::from_value(value)
        };
        parsed.map_err(|e| Error::validation(format!("metrics input: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub comparison: ComparisonReport,
    pub tests: Vec<NamedTest>,
    pub fdr_applied: bool,
}

pub fn build_report(input: &MetricsInput, gini_alternative: Alternative, fdr: bool) -> MetricsReport {
    let comparison = condition_comparison(&input.meetings, gini_alternative);
    let mut tests: Vec<NamedTest> = input
        .paired_samples
        .iter()
        .map(|s| NamedTest::from_outcome(s.name.clone(), wilcoxon_one_tailed(&s.sample, s.alternative)))
        .collect();
    let mut report = MetricsReport {
        comparison,
        tests: Vec::new(),
        fdr_applied: fdr,
    };
    if fdr {
        let mut all: Vec<&mut NamedTest> = std::iter::once(&mut report.comparison.gini_test)
            .chain(tests.iter_mut())
            .filter(|t| t.result.is_some())
            .collect();
        let raw: Vec<f64> = all
            .iter()
            .map(|t| t.result.as_ref().map(|r| r.p_value).unwrap_or(1.0))
            .collect();
        if let Ok(adjusted) = bh_fdr_adjust(&raw) {
            for (t, adj) in all.iter_mut().zip(adjusted) {
                t.p_adjusted = Some(adj);
            }
        }
    }
    report.tests = tests;
    report
}

/// Writes `gini_pairs.csv`, `deviations.csv` and `tests.csv` into `dir`.
pub fn export_csv(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_err = |e: csv::Error| Error::Storage(format!("csv: {e}"));

    let mut w = csv::Writer::from_path(dir.join("gini_pairs.csv")).map_err(csv_err)?;
    for pair in &report.comparison.pairs {
        w.serialize(pair).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("deviations.csv")).map_err(csv_err)?;
    for row in &report.comparison.deviations {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("tests.csv")).map_err(csv_err)?;
    w.write_record(["name", "V", "p_value", "p_adjusted", "r", "n_effective", "method", "error"])
        .map_err(csv_err)?;
    for t in std::iter::once(&report.comparison.gini_test).chain(&report.tests) {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let r = t.result.as_ref();
        w.write_record([
            t.name.clone(),
            fmt_opt(r.map(|r| r.v)),
            fmt_opt(r.map(|r| r.p_value)),
            fmt_opt(t.p_adjusted),
            fmt_opt(r.map(|r| r.r)),
            r.map(|r| r.n_effective.to_string()).unwrap_or_default(),
            r.map(|r| format!("{:?}", r.method)).unwrap_or_default(),
            t.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
