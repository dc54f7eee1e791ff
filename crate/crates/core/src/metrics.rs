//! Pareto dominance, front extraction, hypervolume and convergence monitors.

use crate::error::{Error, Result};
use crate::minnorm::{criticality_measure, DEFAULT_TOL};
use crate::problems::MooProblem;
use crate::record::RunRecord;

/// Objective vector tagged with the run or population member it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectivePoint {
    pub values: Vec<f64>,
    pub source: usize,
}

impl ObjectivePoint {
    pub fn new(values: Vec<f64>, source: usize) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("objective point must be non-empty and finite"));
        }
        Ok(ObjectivePoint { values, source })
    }
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

fn front_indices_2d(points: &[ObjectivePoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&points[i].values, &points[j].values);
        a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
    });
    let mut keep = Vec::new();
    let mut best = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        // group of equal first objective; only its smallest second value can survive
        let f0 = points[order[g]].values[0];
        let mut end = g;
        while end < order.len() && points[order[end]].values[0] == f0 {
            end += 1;
        }
        let low = points[order[g]].values[1];
        if low < best {
            keep.extend(order[g..end].iter().copied().filter(|&i| points[i].values[1] == low));
            best = low;
        }
        g = end;
    }
    keep.sort_unstable();
    keep
}

/// Indices of points not dominated by any other, in input order.
pub fn front_indices(points: &[ObjectivePoint]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    if points.iter().all(|p| p.values.len() == 2) {
        return front_indices_2d(points);
    }
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(&q.values, &points[i].values)))
        .collect()
}

pub fn extract_front(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
    front_indices(points).into_iter().map(|i| points[i].clone()).collect()
}

fn check_reference(front: &[Vec<f64>], reference: &[f64]) -> Result<()> {
    for p in front {
        if p.len() != reference.len() {
            return Err(Error::shape("hypervolume", format!("point of length {} vs reference {}", p.len(), reference.len())));
        }
        if !dominates(p, reference) {
            return Err(Error::invalid(format!("point {p:?} does not dominate reference {reference:?}")));
        }
    }
    Ok(())
}

fn area_2d(points: &mut [(f64, f64)], rx: f64, ry: f64) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut floor = ry;
    for &(x, y) in points.iter() {
        if y < floor {
            area += (rx - x) * (floor - y);
            floor = y;
        }
    }
    area
}

/// Area dominated by `front` and bounded by `reference`.
pub fn hypervolume_2d(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    if reference.len() != 2 {
        return Err(Error::shape("hypervolume_2d", "reference must have two entries"));
    }
    check_reference(front, reference)?;
    let mut pts: Vec<(f64, f64)> = front.iter().map(|p| (p[0], p[1])).collect();
    Ok(area_2d(&mut pts, reference[0], reference[1]))
}

/// Volume dominated by a three-objective front, by slicing along the
/// third objective.
pub fn hypervolume_3d(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    if reference.len() != 3 {
        return Err(Error::shape("hypervolume_3d", "reference must have three entries"));
    }
    check_reference(front, reference)?;
    let mut pts: Vec<&Vec<f64>> = front.iter().collect();
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut vol = 0.0;
    for i in 0..pts.len() {
        let top = if i + 1 < pts.len() { pts[i + 1][2] } else { reference[2] };
        let depth = top - pts[i][2];
        if depth <= 0.0 {
            continue;
        }
        let mut slice: Vec<(f64, f64)> = pts[..=i].iter().map(|p| (p[0], p[1])).collect();
        vol += depth * area_2d(&mut slice, reference[0], reference[1]);
    }
    Ok(vol)
}

/// Dispatches on the number of objectives (2 or 3).
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    match reference.len() {
        2 => hypervolume_2d(front, reference),
        3 => hypervolume_3d(front, reference),
        m => Err(Error::Unsupported(format!("hypervolume for {m} objectives"))),
    }
}

/// Componentwise maximum over all fronts, widened by `margin` times its
/// absolute value (at least `margin`).
pub fn shared_reference(fronts: &[&[Vec<f64>]], margin: f64) -> Result<Vec<f64>> {
    let mut it = fronts.iter().flat_map(|f| f.iter());
    let first = it.next().ok_or_else(|| Error::invalid("no points to build a reference from"))?;
    let mut r = first.clone();
    for p in it {
        for (ri, v) in r.iter_mut().zip(p) {
            *ri = ri.max(*v);
        }
    }
    Ok(r.into_iter().map(|v| v + margin * v.abs().max(1.0)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorEntry {
    pub k: usize,
    pub alpha: f64,
    pub criticality_sq: f64,
    pub partial_sum: f64,
}

/// Weighted squared-criticality partial sums of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorSeries {
    pub entries: Vec<MonitorEntry>,
}

impl MonitorSeries {
    pub fn total(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.partial_sum)
    }

    /// Increase of the partial sum over the last `fraction` of the steps,
    /// relative to its final value. Zero for an empty or all-zero series.
    pub fn tail_increment_ratio(&self, fraction: f64) -> f64 {
        let n = self.entries.len();
        let total = self.total();
        if n == 0 || total == 0.0 {
            return 0.0;
        }
        let cut = ((n as f64) * (1.0 - fraction)).floor() as usize;
        let before = if cut == 0 { 0.0 } else { self.entries[cut - 1].partial_sum };
        (total - before) / total
    }

    /// Smallest criticality seen, with its step.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.entries
            .iter()
            .min_by(|a, b| a.criticality_sq.total_cmp(&b.criticality_sq))
            .map(|e| (e.k, e.criticality_sq.sqrt()))
    }
}

/// Recomputes the exact criticality at every recorded iterate. Step `k`
/// pairs `alpha_k` with the iterate it started from, `x_{k-1}`.
pub fn theorem_monitor(run: &RunRecord, problem: &dyn MooProblem) -> Result<MonitorSeries> {
    let mut series = MonitorSeries::default();
    let mut sum = 0.0;
    for pair in run.rows.windows(2) {
        let (prev, row) = (&pair[0], &pair[1]);
        let x = prev
            .iterate
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("row {} has no recorded iterate", prev.k)))?;
        let c = criticality_measure(problem, x, DEFAULT_TOL)?;
        let c2 = c * c;
        sum += row.alpha * c2;
        series.entries.push(MonitorEntry {
            k: row.k,
            alpha: row.alpha,
            criticality_sq: c2,
            partial_sum: sum,
        });
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticPair;
    use crate::record::TraceRow;

    fn pts(v: &[[f64; 2]]) -> Vec<ObjectivePoint> {
        v.iter().enumerate().map(|(i, p)| ObjectivePoint::new(p.to_vec(), i).unwrap()).collect()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 1.0], &[2.0, 2.0]));
        assert!(!dominates(&[1.0, 2.0], &[2.0, 1.0]));
        assert!(!dominates(&[1.0, 2.0], &[1.0, 2.0]));
    }

    #[test]
    fn front_examples() {
        let same = pts(&[[1.0, 1.0]; 4]);
        assert_eq!(front_indices(&same), vec![0, 1, 2, 3]);
        let line = pts(&[[0.0, 3.0], [2.0, 1.0], [1.0, 2.0], [3.0, 0.0]]);
        assert_eq!(front_indices(&line), vec![0, 1, 2, 3]);
        let mixed = pts(&[[2.0, 2.0], [1.0, 3.0], [1.0, 1.0], [1.0, 1.0], [0.5, 4.0]]);
        assert_eq!(front_indices(&mixed), vec![2, 3, 4]);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(&[vec![0.0, 0.0]], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(hypervolume_2d(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[2.0, 2.0]).unwrap(), 3.0);
        assert_eq!(hypervolume_2d(&[], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(hypervolume_2d(&[vec![3.0, 0.0]], &[2.0, 2.0]).is_err());
        let cube = hypervolume_3d(&[vec![0.0, 0.0, 0.0]], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cube, 6.0);
        // two boxes 2x1x1 and 1x2x1 overlapping in a unit cube
        let v = hypervolume_3d(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]], &[2.0, 2.0, 1.0]).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn monitor_on_critical_run_is_zero() {
        let q = QuadraticPair::new(vec![0.0], vec![1.0], 0.0).unwrap();
        let mut rec = RunRecord::default();
        for k in 0..5 {
            let mut r = TraceRow::initial(q.eval(&[0.5]).unwrap(), Some(vec![0.5]));
            r.k = k;
            r.alpha = 0.1;
            rec.rows.push(r);
        }
        let s = theorem_monitor(&rec, &q).unwrap();
        assert_eq!(s.entries.len(), 4);
        assert_eq!(s.total(), 0.0);
        assert!(theorem_monitor(&RunRecord::default(), &q).unwrap().entries.is_empty());
    }
}
