//! Recall@K and rSum.

use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use crate::data::{Direction, GroundTruth, RankingList};
use crate::error::{Error, Result};

/// Cut-offs reported per direction.
pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

/// Recall at one cut-off plus query accounting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recall {
    /// Percentage in `[0, 100]` over evaluated queries.
    pub percent: f64,
    pub evaluated: usize,
    /// Queries without any ground-truth match; never counted.
    pub excluded: usize,
}

/// Percentage of queries with at least one relevant item among their first
/// `k` items. Queries whose ground truth is empty are excluded and reported.
pub fn recall_at_k(rankings: &[RankingList], truth: &GroundTruth, k: usize) -> Result<Recall> {
    if k == 0 {
        return Err(Error::Config("recall cut-off k must be at least 1".into()));
    }
    let (mut hits, mut evaluated, mut excluded) = (0usize, 0usize, 0usize);
    for r in rankings {
        if r.is_empty() {
            return Err(Error::RejectedInput(format!("empty ranking for {}", r.query)));
        }
        if truth.positives(r.query).is_empty() {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        if r.items.iter().take(k).any(|&it| truth.is_relevant(r.query, it)) {
            hits += 1;
        }
    }
    let percent = if evaluated == 0 {
        0.0
    } else {
        100.0 * hits as f64 / evaluated as f64
    };
    Ok(Recall {
        percent,
        evaluated,
        excluded,
    })
}

/// Sum of recall values.
pub fn rsum(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// R@{1,5,10} for one direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DirectionRecall {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

impl DirectionRecall {
    pub fn values(&self) -> [f64; 3] {
        [self.r1, self.r5, self.r10]
    }

    pub fn evaluate(rankings: &[RankingList], truth: &GroundTruth) -> Result<Self> {
        let r = |k| recall_at_k(rankings, truth, k);
        let (a, b, c) = (r(1)?, r(5)?, r(10)?);
        Ok(Self {
            r1: a.percent,
            r5: b.percent,
            r10: c.percent,
            evaluated: a.evaluated,
            excluded: a.excluded,
        })
    }
}

/// Recall for both directions and their rSum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub i2t: DirectionRecall,
    pub t2i: DirectionRecall,
    pub rsum: f64,
}

/// Keys of [`EvalReport::entries`], in output order.
pub const REPORT_KEYS: [&str; 12] = [
    "i2t_r1",
    "i2t_r5",
    "i2t_r10",
    "t2i_r1",
    "t2i_r5",
    "t2i_r10",
    "rsum",
    "i2t_queries",
    "t2i_queries",
    "i2t_excluded",
    "t2i_excluded",
    "queries",
];

impl EvalReport {
    pub fn new(i2t: DirectionRecall, t2i: DirectionRecall) -> Self {
        let mut values = [0.0; 6];
        values[..3].copy_from_slice(&i2t.values());
        values[3..].copy_from_slice(&t2i.values());
        Self {
            i2t,
            t2i,
            rsum: rsum(&values),
        }
    }

    pub fn evaluate(
        i2t: &[RankingList],
        t2i: &[RankingList],
        truth: &GroundTruth,
    ) -> Result<Self> {
        Ok(Self::new(
            DirectionRecall::evaluate(i2t, truth)?,
            DirectionRecall::evaluate(t2i, truth)?,
        ))
    }

    pub fn direction(&self, dir: Direction) -> &DirectionRecall {
        match dir {
            Direction::I2T => &self.i2t,
            Direction::T2I => &self.t2i,
        }
    }

    pub fn recalls(&self) -> [f64; 6] {
        let [a, b, c] = self.i2t.values();
        let [d, e, f] = self.t2i.values();
        [a, b, c, d, e, f]
    }

    /// Every reported value keyed as in [`REPORT_KEYS`].
    pub fn entries(&self) -> [(&'static str, f64); 12] {
        let r = self.recalls();
        let vals = [
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
            self.rsum,
            self.i2t.evaluated as f64,
            self.t2i.evaluated as f64,
            self.i2t.excluded as f64,
            self.t2i.excluded as f64,
            (self.i2t.evaluated + self.t2i.evaluated) as f64,
        ];
        let mut out = [("", 0.0); 12];
        for (slot, (k, v)) in out.iter_mut().zip(REPORT_KEYS.iter().zip(vals)) {
            *slot = (k, v);
        }
        out
    }

    /// Flat `key=value` block, full precision.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Human-readable table, one decimal place.
    pub fn to_table(&self) -> String {
        let r = self.recalls();
        let mut s = String::new();
        let _ = writeln!(s, "        R@1    R@5    R@10");
        let _ = writeln!(s, "i2t  {:6.1} {:6.1} {:6.1}", r[0], r[1], r[2]);
        let _ = writeln!(s, "t2i  {:6.1} {:6.1} {:6.1}", r[3], r[4], r[5]);
        let _ = writeln!(s, "rSum {:.1}", self.rsum);
        s
    }
}

/// Side-by-side comparison of a base and a re-ranked report with per-metric
/// deltas.
pub fn comparison_table(base: &EvalReport, reranked: &EvalReport) -> String {
    let names = ["i2t R@1", "i2t R@5", "i2t R@10", "t2i R@1", "t2i R@5", "t2i R@10"];
    let (a, b) = (base.recalls(), reranked.recalls());
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8}", "metric", "base", "rerank", "delta");
    for i in 0..6 {
        let _ = writeln!(s, "{:<10} {:>8.1} {:>8.1} {:>+8.1}", names[i], a[i], b[i], b[i] - a[i]);
    }
    let _ = writeln!(
        s,
        "{:<10} {:>8.1} {:>8.1} {:>+8.1}",
        "rSum",
        base.rsum,
        reranked.rsum,
        reranked.rsum - base.rsum
    );
    s
}
