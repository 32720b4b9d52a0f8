//! Segmentation and collaboration metrics over per-sample traces.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gating::Decision;
use crate::tensor::SemanticMask;

/// Minimum fused-minus-edge IoU gain for a sample to count as hard.
pub const HARD_INPUT_GAIN: f64 = 0.1;

/// Per-class IoU; `None` marks classes absent from both masks.
pub fn iou_per_class(pred: &SemanticMask, truth: &SemanticMask) -> Result<Vec<Option<f64>>> {
    if pred.height() != truth.height()
        || pred.width() != truth.width()
        || pred.class_count() != truth.class_count()
    {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{}x{} vs truth {}x{}x{}",
            pred.class_count(),
            pred.height(),
            pred.width(),
            truth.class_count(),
            truth.height(),
            truth.width()
        )));
    }
    let m = pred.class_count();
    let mut inter = vec![0usize; m];
    let mut union = vec![0usize; m];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    Ok(inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect())
}

/// Mean IoU over the classes present in either mask.
pub fn mean_iou(pred: &SemanticMask, truth: &SemanticMask) -> Result<f64> {
    let present: Vec<f64> = iou_per_class(pred, truth)?.into_iter().flatten().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn hard_input_truth(iou_fused: f64, iou_edge: f64) -> bool {
    // tolerate representation error so that e.g. 0.7 - 0.6 counts
    iou_fused - iou_edge >= HARD_INPUT_GAIN - 1e-12
}

/// One processed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sample: usize,
    pub task: usize,
    pub decision: Decision,
    pub confidence: f64,
    pub iou_edge: f64,
    pub iou_fused: f64,
    pub latency_s: f64,
}

impl TraceRecord {
    pub fn emitted_iou(&self) -> f64 {
        match self.decision {
            Decision::Edge => self.iou_edge,
            Decision::Cloud => self.iou_fused,
        }
    }

    pub fn hard_truth(&self) -> bool {
        hard_input_truth(self.iou_fused, self.iou_edge)
    }
}

fn nonempty(trace: &[TraceRecord]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    Ok(trace.len() as f64)
}

/// Mean IoU of whichever output each sample emitted.
pub fn collab_miou(trace: &[TraceRecord]) -> Result<f64> {
    let n = nonempty(trace)?;
    Ok(trace.iter().map(TraceRecord::emitted_iou).sum::<f64>() / n)
}

/// Cloud upload rate.
pub fn cur(trace: &[TraceRecord]) -> Result<f64> {
    let n = nonempty(trace)?;
    Ok(trace
        .iter()
        .filter(|r| r.decision == Decision::Cloud)
        .count() as f64
        / n)
}

pub fn avg_latency(trace: &[TraceRecord]) -> Result<f64> {
    let n = nonempty(trace)?;
    Ok(trace.iter().map(|r| r.latency_s).sum::<f64>() / n)
}

/// Rank AUC of low confidence as a detector of hard inputs; ties count half.
pub fn gate_auc(trace: &[TraceRecord]) -> Result<f64> {
    let scored: Vec<(f64, bool)> = trace
        .iter()
        .map(|r| (r.confidence, r.hard_truth()))
        .collect();
    auc_low_is_positive(&scored)
}

/// AUC for `(score, positive)` pairs where lower scores indicate positives.
pub fn auc_low_is_positive(scored: &[(f64, bool)]) -> Result<f64> {
    let positives = scored.iter().filter(|(_, p)| *p).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidValue(
            "AUC needs both hard and easy samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // average descending ranks: a positive earns credit for every negative scored above it
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if scored[k].1 {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    let u_low = rank_sum - p * (p + 1.0) / 2.0;
    Ok(1.0 - u_low / (p * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    /// Task index, or `None` for the whole-stream aggregate.
    pub task: Option<usize>,
    pub samples: usize,
    pub miou: f64,
    pub cur: f64,
    pub avg_latency_s: f64,
}

impl TaskRecord {
    fn from_trace(task: Option<usize>, trace: &[TraceRecord]) -> Result<Self> {
        Ok(Self {
            task,
            samples: trace.len(),
            miou: collab_miou(trace)?,
            cur: cur(trace)?,
            avg_latency_s: avg_latency(trace)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub tasks: Vec<TaskRecord>,
    pub aggregate: Option<TaskRecord>,
    pub trace: Vec<TraceRecord>,
    /// Number of training rounds executed.
    pub updates: usize,
}

impl RunReport {
    /// Groups the trace by task, in order of first appearance.
    pub fn from_trace(trace: Vec<TraceRecord>, updates: usize) -> Result<Self> {
        if trace.is_empty() {
            return Ok(Self {
                updates,
                ..Self::default()
            });
        }
        let mut task_ids: Vec<usize> = Vec::new();
        for r in &trace {
            if !task_ids.contains(&r.task) {
                task_ids.push(r.task);
            }
        }
        let tasks = task_ids
            .iter()
            .map(|&t| {
                let part: Vec<TraceRecord> =
                    trace.iter().filter(|r| r.task == t).cloned().collect();
                TaskRecord::from_trace(Some(t), &part)
            })
            .collect::<Result<_>>()?;
        let aggregate = Some(TaskRecord::from_trace(None, &trace)?);
        Ok(Self {
            tasks,
            aggregate,
            trace,
            updates,
        })
    }

    pub fn miou(&self) -> Option<f64> {
        self.aggregate.as_ref().map(|a| a.miou)
    }

    pub fn cur(&self) -> Option<f64> {
        self.aggregate.as_ref().map(|a| a.cur)
    }

    /// Columns `task,samples,miou,cur,avg_latency_s`; the aggregate row is
    /// labelled `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,samples,miou,cur,avg_latency_s\n");
        for rec in self.tasks.iter().chain(&self.aggregate) {
            let task = rec
                .task
                .map_or_else(|| "all".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "{task},{},{:.6},{:.6},{:.6}",
                rec.samples, rec.miou, rec.cur, rec.avg_latency_s
            );
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out =
            String::from("sample,decision,confidence,iou_edge,iou_fused,latency_s,hard_truth\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.sample,
                r.decision.name(),
                r.confidence,
                r.iou_edge,
                r.iou_fused,
                r.latency_s,
                r.hard_truth()
            );
        }
        out
    }

    /// Structured text mirror of the task records.
    pub fn to_structured_text(&self) -> String {
        let record = |r: &TaskRecord| {
            format!(
                "{{\"samples\": {}, \"miou\": {:.6}, \"cur\": {:.6}, \"avg_latency_s\": {:.6}}}",
                r.samples, r.miou, r.cur, r.avg_latency_s
            )
        };
        let mut out = String::from("{\n  \"tasks\": [\n");
        for (i, t) in self.tasks.iter().enumerate() {
            let sep = if i + 1 < self.tasks.len() { "," } else { "" };
            let _ = writeln!(
                out,
                "    {{\"task\": {}, \"record\": {}}}{sep}",
                t.task.unwrap_or_default(),
                record(t)
            );
        }
        out.push_str("  ],\n");
        match &self.aggregate {
            Some(a) => {
                let _ = writeln!(out, "  \"aggregate\": {},", record(a));
            }
            None => out.push_str("  \"aggregate\": null,\n"),
        }
        let _ = writeln!(out, "  \"updates\": {}\n}}", self.updates);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(labels: &[usize]) -> SemanticMask {
        SemanticMask::new(2, 2, 2, labels.to_vec()).unwrap()
    }

    fn rec(
        decision: Decision,
        confidence: f64,
        iou_edge: f64,
        iou_fused: f64,
        latency_s: f64,
    ) -> TraceRecord {
        TraceRecord {
            sample: 0,
            task: 0,
            decision,
            confidence,
            iou_edge,
            iou_fused,
            latency_s,
        }
    }

    #[test]
    fn iou_identical_masks() {
        let m = mask(&[0, 1, 1, 1]);
        assert_eq!(iou_per_class(&m, &m).unwrap(), vec![Some(1.0), Some(1.0)]);
        let single = mask(&[1, 1, 1, 1]);
        assert_eq!(
            iou_per_class(&single, &single).unwrap(),
            vec![None, Some(1.0)]
        );
        assert_eq!(mean_iou(&single, &single).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint_masks() {
        let a = mask(&[0, 0, 0, 0]);
        let b = mask(&[1, 1, 1, 1]);
        assert_eq!(iou_per_class(&a, &b).unwrap(), vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn iou_hand_example() {
        let ious = iou_per_class(&mask(&[0, 0, 1, 1]), &mask(&[0, 1, 1, 1])).unwrap();
        assert_eq!(ious, vec![Some(0.5), Some(2.0 / 3.0)]);
        let miou = mean_iou(&mask(&[0, 0, 1, 1]), &mask(&[0, 1, 1, 1])).unwrap();
        assert!((miou - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn iou_rejects_mismatch() {
        let other = SemanticMask::filled(3, 2, 2, 0).unwrap();
        assert!(iou_per_class(&mask(&[0; 4]), &other).is_err());
    }

    #[test]
    fn collab_and_cur() {
        let edge = vec![
            rec(Decision::Edge, 0.9, 0.4, 0.9, 1.0),
            rec(Decision::Edge, 0.9, 0.6, 0.9, 1.0),
        ];
        assert!((collab_miou(&edge).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cur(&edge).unwrap(), 0.0);
        let cloud = vec![
            rec(Decision::Cloud, 0.1, 0.4, 0.8, 5.0),
            rec(Decision::Cloud, 0.1, 0.4, 1.0, 5.0),
        ];
        assert!((collab_miou(&cloud).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(cur(&cloud).unwrap(), 1.0);
        let mixed = vec![
            rec(Decision::Edge, 0.9, 0.8, 0.9, 2.0),
            rec(Decision::Cloud, 0.2, 0.3, 0.7, 4.0),
            rec(Decision::Edge, 0.8, 0.6, 0.6, 2.0),
            rec(Decision::Cloud, 0.1, 0.5, 0.9, 4.0),
        ];
        // emitted: 0.8, 0.7, 0.6, 0.9
        assert!((collab_miou(&mixed).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(cur(&mixed).unwrap(), 0.5);
        assert_eq!(avg_latency(&mixed).unwrap(), 3.0);
        assert!(collab_miou(&[]).is_err());
        assert!(cur(&[]).is_err());
        assert!(avg_latency(&[]).is_err());
    }

    #[test]
    fn cur_and_latency_on_table_constants() {
        let trace: Vec<_> = (0..10_000)
            .map(|i| {
                if i < 3712 {
                    rec(Decision::Cloud, 0.0, 0.0, 0.0, 5.11)
                } else {
                    rec(Decision::Edge, 1.0, 0.0, 0.0, 1.12)
                }
            })
            .collect();
        assert!((cur(&trace).unwrap() - 0.3712).abs() < 1e-12);
        assert!((avg_latency(&trace).unwrap() - 2.60).abs() < 0.005);
    }

    #[test]
    fn hard_input_examples() {
        assert!(hard_input_truth(0.8, 0.6));
        assert!(!hard_input_truth(0.8, 0.75));
        assert!(hard_input_truth(0.7, 0.6));
    }

    fn scored(pairs: &[(f64, bool)]) -> Vec<TraceRecord> {
        pairs
            .iter()
            .map(|&(c, hard)| rec(Decision::Edge, c, if hard { 0.0 } else { 1.0 }, 1.0, 1.0))
            .collect()
    }

    #[test]
    fn auc_examples() {
        let perfect = scored(&[(0.1, true), (0.2, true), (0.8, false), (0.9, false)]);
        assert_eq!(gate_auc(&perfect).unwrap(), 1.0);
        let ties = scored(&[(0.5, true), (0.5, true), (0.5, false), (0.5, false)]);
        assert_eq!(gate_auc(&ties).unwrap(), 0.5);
        let one_inversion = scored(&[(0.1, true), (0.6, true), (0.5, false), (0.9, false)]);
        assert_eq!(gate_auc(&one_inversion).unwrap(), 0.75);
        assert!(gate_auc(&scored(&[(0.1, true), (0.2, true)])).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let pairs: Vec<(f64, bool)> = pairs.into_iter().map(|(c, h)| (f64::from(c) / 5.0, h)).collect();
            let pos: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
            let neg: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
            prop_assume!(!pos.is_empty() && !neg.is_empty());
            let mut credit = 0.0;
            for &p in &pos {
                for &n in &neg {
                    credit += if p < n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                }
            }
            let brute = credit / (pos.len() * neg.len()) as f64;
            prop_assert!((auc_low_is_positive(&pairs).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn iou_symmetric(a in prop::collection::vec(0usize..3, 9), b in prop::collection::vec(0usize..3, 9)) {
            let a = SemanticMask::new(3, 3, 3, a).unwrap();
            let b = SemanticMask::new(3, 3, 3, b).unwrap();
            prop_assert_eq!(iou_per_class(&a, &b).unwrap(), iou_per_class(&b, &a).unwrap());
            let m = mean_iou(&a, &b).unwrap();
            prop_assert_eq!(m == 1.0, a == b);
        }
    }

    #[test]
    fn report_groups_by_task() {
        let mut trace = Vec::new();
        for i in 0..6 {
            let mut r = rec(
                if i % 2 == 0 {
                    Decision::Cloud
                } else {
                    Decision::Edge
                },
                0.5,
                0.5,
                1.0,
                if i % 2 == 0 { 4.0 } else { 2.0 },
            );
            r.sample = i;
            r.task = i / 4;
            trace.push(r);
        }
        let report = RunReport::from_trace(trace, 2).unwrap();
        assert_eq!(report.tasks.len(), 2);
        assert_eq!(report.tasks.iter().map(|t| t.samples).sum::<usize>(), 6);
        let agg = report.aggregate.as_ref().unwrap();
        assert_eq!(agg.cur, 0.5);
        assert_eq!(agg.avg_latency_s, 3.0);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("all,6,"));
        assert_eq!(report.trace_csv().lines().count(), 7);
        assert!(report.to_structured_text().contains("\"updates\": 2"));
        let empty = RunReport::from_trace(Vec::new(), 0).unwrap();
        assert!(empty.aggregate.is_none());
        assert_eq!(empty.to_csv().lines().count(), 1);
    }
}
