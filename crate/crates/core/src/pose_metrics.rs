//! Pose correction from a matched-filter shift and the evaluation metrics.

use std::fmt::Write as _;

use crate::error::{LprError, Result};
use crate::geometry::{normalize_yaw, Pose2D};

/// Localization output for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose2D,
    pub reference_id: u64,
    /// Pose of the matched reference, kept to score the uncorrected estimate.
    pub reference_pose: Pose2D,
    /// Yaw of the query relative to the matched reference, in `[0, 360)`.
    pub theta_match: f64,
    pub score: f64,
    /// Set when the query descriptor had no occupied cells.
    pub low_confidence: bool,
}

impl PoseEstimate {
    /// The matched reference position with the corrected yaw, i.e. the
    /// estimate without the translation correction.
    pub fn uncorrected(&self) -> Pose2D {
        Pose2D::new(
            self.reference_pose.x,
            self.reference_pose.y,
            self.reference_pose.yaw + self.theta_match,
        )
    }
}

/// Corrects the matched reference pose by the in-frame shift:
/// `p_q = p_r + R(yaw_r) · shift`, `yaw_q = yaw_r + theta_match`.
pub fn shift_to_pose(reference: &Pose2D, shift: (f64, f64), theta_match: f64) -> Pose2D {
    let (x, y) = reference.apply(shift.0, shift.1);
    Pose2D::new(x, y, reference.yaw + theta_match)
}

pub fn rte(est: &Pose2D, gt: &Pose2D) -> f64 {
    est.distance(gt)
}

/// Absolute wrapped yaw difference in degrees, within `[0, 180]`.
pub fn rre(est: &Pose2D, gt: &Pose2D) -> f64 {
    normalize_yaw(gt.yaw - est.yaw).abs()
}

/// Thresholds for a successful pose estimate; both comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessCriteria {
    pub max_rte: f64,
    pub max_rre: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            max_rte: 2.0,
            max_rre: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub query_id: u64,
    pub estimate: PoseEstimate,
    /// Pose that was scored: the corrected estimate or, when evaluating
    /// uncorrected matches, the reference position.
    pub scored_pose: Pose2D,
    pub ground_truth: Pose2D,
    pub rte: f64,
    pub rre: f64,
    pub within_threshold: bool,
}

impl EvalRecord {
    pub fn new(query_id: u64, estimate: PoseEstimate, ground_truth: Pose2D, threshold: f64) -> Self {
        Self::scoring(query_id, estimate, estimate.pose, ground_truth, threshold)
    }

    /// Record that scores `scored_pose` instead of the corrected estimate.
    pub fn scoring(
        query_id: u64,
        estimate: PoseEstimate,
        scored_pose: Pose2D,
        ground_truth: Pose2D,
        threshold: f64,
    ) -> Self {
        let e = rte(&scored_pose, &ground_truth);
        Self {
            query_id,
            estimate,
            scored_pose,
            ground_truth,
            rte: e,
            rre: rre(&scored_pose, &ground_truth),
            within_threshold: e <= threshold,
        }
    }
}

/// Fraction of queries whose top-1 estimate lies within `threshold` meters.
pub fn recall_at_1(records: &[EvalRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(LprError::Missing("no evaluation records".into()));
    }
    let hits = records.iter().filter(|r| r.rte <= threshold).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRate {
    pub rate: f64,
    /// True when there were no positives; `rate` is then 0.
    pub undefined: bool,
}

/// Success rate over `positives` (records already judged true positives).
pub fn success_rate(positives: &[EvalRecord], criteria: &SuccessCriteria) -> SuccessRate {
    if positives.is_empty() {
        log::warn!("success rate requested with zero positives");
        return SuccessRate {
            rate: 0.0,
            undefined: true,
        };
    }
    let ok = positives
        .iter()
        .filter(|r| r.rte < criteria.max_rte && r.rre < criteria.max_rre)
        .count();
    SuccessRate {
        rate: ok as f64 / positives.len() as f64,
        undefined: false,
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<MeanStd> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub recall_at_1: f64,
    /// `None` when there are no positives.
    pub rte: Option<MeanStd>,
    pub rre: Option<MeanStd>,
    pub success_rate: SuccessRate,
    pub queries: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub threshold: f64,
}

pub fn aggregate(records: &[EvalRecord], threshold: f64, criteria: &SuccessCriteria) -> Result<EvalReport> {
    let recall = recall_at_1(records, threshold)?;
    let positives: Vec<EvalRecord> = records.iter().filter(|r| r.rte <= threshold).copied().collect();
    Ok(EvalReport {
        recall_at_1: recall,
        rte: mean_std(positives.iter().map(|r| r.rte)),
        rre: mean_std(positives.iter().map(|r| r.rre)),
        success_rate: success_rate(&positives, criteria),
        queries: records.len(),
        true_positives: positives.len(),
        false_positives: records.len() - positives.len(),
        threshold,
    })
}

impl EvalReport {
    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        let fmt = |m: Option<MeanStd>| match m {
            Some(m) => format!("{:.4} / {:.4}", m.mean, m.std),
            None => "n/a".to_string(),
        };
        let sr = if self.success_rate.undefined {
            "n/a (no positives)".to_string()
        } else {
            format!("{:.2}%", 100.0 * self.success_rate.rate)
        };
        let mut s = String::new();
        let _ = writeln!(s, "queries: {}", self.queries);
        let _ = writeln!(s, "true positives: {}", self.true_positives);
        let _ = writeln!(s, "false positives: {}", self.false_positives);
        let _ = writeln!(s, "recall@1 ({} m): {:.2}%", self.threshold, 100.0 * self.recall_at_1);
        let _ = writeln!(s, "RTE mean/std (m): {}", fmt(self.rte));
        let _ = writeln!(s, "RRE mean/std (deg): {}", fmt(self.rre));
        let _ = writeln!(s, "SR: {sr}");
        s
    }
}

pub const REPORT_HEADER: &str = "query_id,ref_id,x_est,y_est,yaw_est,x_gt,y_gt,yaw_gt,rte,rre,within,score";

/// Report CSV with one row per record, in the given order.
pub fn report_csv(records: &[EvalRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(REPORT_HEADER);
    s.push('\n');
    for r in records {
        let e = &r.scored_pose;
        let g = &r.ground_truth;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            r.query_id,
            r.estimate.reference_id,
            e.x,
            e.y,
            e.yaw,
            g.x,
            g.y,
            g.yaw,
            r.rte,
            r.rre,
            r.within_threshold as u8,
            r.estimate.score
        );
    }
    s
}
