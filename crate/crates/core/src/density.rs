//! Occupation-measure estimation and distributional diagnostics.
//!
//! The invariant measure on M x S is estimated by a time-averaged histogram:
//! every recorded trajectory sample after burn-in deposits weight `sample_dt`
//! into its (spatial bin, state) cell. Histograms are the primary estimator
//! (rather than kernel density estimates) because total-variation comparisons
//! and singularity witnesses are exact on them. Mass falling outside the box
//! is tracked, not dropped, so normalization stays honest for unbounded state
//! spaces.

use std::io;

use thiserror::Error;

use crate::pdmp::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("histogram needs at least one axis, matching bins, and at least one state")]
    BadShape,
    #[error("bounds axis {axis} must satisfy lo < hi")]
    BadBounds { axis: usize },
    #[error("bins on axis {axis} must be positive")]
    BadBins { axis: usize },
    #[error("histograms have different boxes, bins, or state counts")]
    ShapeMismatch,
    #[error("point dimension {got} does not match histogram dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("burn-in {burn_in} must be below the trajectory total time {total_time}")]
    BurnInTooLong { burn_in: f64, total_time: f64 },
    #[error("no samples remain after burn-in")]
    EmptySampleSet,
    #[error("histogram has zero total weight")]
    ZeroWeight,
}

/// Box-binned, time-weighted estimate of a measure on M x S.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationHistogram {
    bounds: Vec<(f64, f64)>,
    bins: Vec<usize>,
    n_states: usize,
    /// Indexed `spatial_flat * n_states + state`.
    mass: Vec<f64>,
    total_weight: f64,
    out_of_box_weight: f64,
}

impl OccupationHistogram {
    pub fn new(
        bounds: Vec<(f64, f64)>,
        bins: Vec<usize>,
        n_states: usize,
    ) -> Result<Self, DensityError> {
        if bounds.is_empty() || bounds.len() != bins.len() || n_states == 0 {
            return Err(DensityError::BadShape);
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            let ok = lo.is_finite() && hi.is_finite() && lo < hi;
            if !ok {
                return Err(DensityError::BadBounds { axis });
            }
        }
        for (axis, &b) in bins.iter().enumerate() {
            if b == 0 {
                return Err(DensityError::BadBins { axis });
            }
        }
        let spatial: usize = bins.iter().product();
        Ok(OccupationHistogram {
            bounds,
            bins,
            n_states,
            mass: vec![0.0; spatial * n_states],
            total_weight: 0.0,
            out_of_box_weight: 0.0,
        })
    }

    /// The product of the uniform spatial measure on the box and the uniform
    /// state distribution, normalized to total weight 1.
    pub fn uniform(
        bounds: Vec<(f64, f64)>,
        bins: Vec<usize>,
        n_states: usize,
    ) -> Result<Self, DensityError> {
        let mut h = Self::new(bounds, bins, n_states)?;
        let cells = h.mass.len();
        let w = 1.0 / cells as f64;
        for m in h.mass.iter_mut() {
            *m = w;
        }
        h.total_weight = 1.0;
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn out_of_box_weight(&self) -> f64 {
        self.out_of_box_weight
    }

    pub fn spatial_cells(&self) -> usize {
        self.bins.iter().product()
    }

    fn spatial_index(&self, point: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for (axis, &v) in point.iter().enumerate() {
            let (lo, hi) = self.bounds[axis];
            if !(v >= lo && v < hi) {
                return None;
            }
            let b = self.bins[axis];
            let idx = (((v - lo) / (hi - lo)) * b as f64) as usize;
            flat = flat * b + idx.min(b - 1);
        }
        Some(flat)
    }

    /// Deposits `weight` at (point, state); out-of-box points feed the
    /// overflow cell.
    pub fn add_weight(&mut self, point: &[f64], state: usize, weight: f64) {
        debug_assert_eq!(point.len(), self.dim());
        debug_assert!(state < self.n_states);
        self.total_weight += weight;
        match self.spatial_index(point) {
            Some(flat) => self.mass[flat * self.n_states + state] += weight,
            None => self.out_of_box_weight += weight,
        }
    }

    /// Merges another histogram of identical shape into this one.
    pub fn merge(&mut self, other: &OccupationHistogram) -> Result<(), DensityError> {
        if self.bounds != other.bounds || self.bins != other.bins || self.n_states != other.n_states
        {
            return Err(DensityError::ShapeMismatch);
        }
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.total_weight += other.total_weight;
        self.out_of_box_weight += other.out_of_box_weight;
        Ok(())
    }

    /// In-box cell masses (indexed `spatial_flat * n_states + state`).
    pub fn cell_masses(&self) -> &[f64] {
        &self.mass
    }

    /// Normalized probabilities per cell plus the out-of-box share.
    pub fn normalized(&self) -> Result<(Vec<f64>, f64), DensityError> {
        if self.total_weight <= 0.0 {
            return Err(DensityError::ZeroWeight);
        }
        let p = self.mass.iter().map(|m| m / self.total_weight).collect();
        Ok((p, self.out_of_box_weight / self.total_weight))
    }

    /// Total mass per state (out-of-box mass excluded), normalized.
    pub fn state_masses(&self) -> Result<Vec<f64>, DensityError> {
        if self.total_weight <= 0.0 {
            return Err(DensityError::ZeroWeight);
        }
        let mut out = vec![0.0; self.n_states];
        for (i, m) in self.mass.iter().enumerate() {
            out[i % self.n_states] += m;
        }
        for v in out.iter_mut() {
            *v /= self.total_weight;
        }
        Ok(out)
    }

    /// Count of spatial cells holding positive mass in any state.
    pub fn occupied_spatial_cells(&self) -> usize {
        self.mass
            .chunks_exact(self.n_states)
            .filter(|c| c.iter().any(|&m| m > 0.0))
            .count()
    }

    /// CSV export: `state,bin_index_1..bin_index_n,mass`, nonzero cells only,
    /// states and bin indices 1-based.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "state")?;
        for i in 1..=self.dim() {
            write!(w, ",bin_index_{i}")?;
        }
        writeln!(w, ",mass")?;
        let n = self.dim();
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let state = i % self.n_states;
            let mut flat = i / self.n_states;
            let mut idx = vec![0usize; n];
            for axis in (0..n).rev() {
                idx[axis] = flat % self.bins[axis];
                flat /= self.bins[axis];
            }
            write!(w, "{}", state + 1)?;
            for v in idx {
                write!(w, ",{}", v + 1)?;
            }
            writeln!(w, ",{}", crate::fmt::f64_17(m))?;
        }
        Ok(())
    }
}

/// Time-averaged occupation histogram over one or more trajectories. Samples
/// at times `>= burn_in` each contribute their trajectory's `sample_dt` as
/// weight.
pub fn occupation_histogram(
    trajectories: &[Trajectory],
    bounds: Vec<(f64, f64)>,
    bins: Vec<usize>,
    burn_in: f64,
) -> Result<OccupationHistogram, DensityError> {
    if trajectories.is_empty() {
        return Err(DensityError::EmptySampleSet);
    }
    let n_states = trajectories
        .iter()
        .flat_map(|t| t.segments.iter().map(|s| s.state))
        .max()
        .map_or(1, |s| s + 1);
    let mut hist = OccupationHistogram::new(bounds, bins, n_states)?;
    for traj in trajectories {
        if traj.dim != hist.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: hist.dim(),
                got: traj.dim,
            });
        }
        if burn_in >= traj.total_time {
            return Err(DensityError::BurnInTooLong {
                burn_in,
                total_time: traj.total_time,
            });
        }
        for (t, state, p) in traj.samples() {
            if t >= burn_in {
                hist.add_weight(p, state, traj.sample_dt);
            }
        }
    }
    if hist.total_weight() <= 0.0 {
        return Err(DensityError::EmptySampleSet);
    }
    Ok(hist)
}

/// Histogram of endpoint draws, unit weight per sample.
pub fn endpoint_histogram(
    samples: &[(Vec<f64>, usize)],
    bounds: Vec<(f64, f64)>,
    bins: Vec<usize>,
) -> Result<OccupationHistogram, DensityError> {
    let n_states = samples.iter().map(|(_, s)| s + 1).max().unwrap_or(1);
    let mut hist = OccupationHistogram::new(bounds, bins, n_states)?;
    for (p, state) in samples {
        if p.len() != hist.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: hist.dim(),
                got: p.len(),
            });
        }
        hist.add_weight(p, *state, 1.0);
    }
    Ok(hist)
}

/// Total-variation distance between two normalized histograms of identical
/// shape; the out-of-box mass counts as one extra cell.
pub fn tv_distance(a: &OccupationHistogram, b: &OccupationHistogram) -> Result<f64, DensityError> {
    if a.bounds != b.bounds || a.bins != b.bins || a.n_states != b.n_states {
        return Err(DensityError::ShapeMismatch);
    }
    let (pa, oa) = a.normalized()?;
    let (pb, ob) = b.normalized()?;
    let sum: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() + (oa - ob).abs();
    Ok(0.5 * sum)
}

/// Time-weighted fraction of time spent in each state, summed over the
/// trajectories. Panics on an empty slice.
pub fn state_occupation(trajectories: &[Trajectory]) -> Vec<f64> {
    assert!(
        !trajectories.is_empty(),
        "state occupation needs at least one trajectory"
    );
    let k = trajectories
        .iter()
        .flat_map(|t| t.segments.iter().map(|s| s.state))
        .max()
        .map_or(1, |s| s + 1);
    let mut out = vec![0.0; k];
    let mut total = 0.0;
    for traj in trajectories {
        for (state, d) in traj.state_durations(k).into_iter().enumerate() {
            out[state] += d;
        }
        total += traj.total_time;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::FieldExpr;
    use crate::flow::Manifold;
    use crate::pdmp::SwitchingSystem;

    fn unit_box(n: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); n]
    }

    fn torus2(rates: (f64, f64)) -> SwitchingSystem {
        SwitchingSystem::new(
            Manifold::Torus(2),
            vec![
                FieldExpr::constant(&[1.0, 0.0]),
                FieldExpr::constant(&[0.0, 1.0]),
            ],
            vec![rates.0, rates.1],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap()
    }

    fn zero_system() -> SwitchingSystem {
        SwitchingSystem::new(
            Manifold::Torus(2),
            vec![FieldExpr::zero(2), FieldExpr::zero(2)],
            vec![1.0, 1.0],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_field_mass_lands_in_one_spatial_cell() {
        let sys = zero_system();
        let traj = sys.sample_path(&[0.31, 0.72], 0, 10.0, 1, 0.01).unwrap();
        let hist = occupation_histogram(&[traj], unit_box(2), vec![20, 20], 0.0).unwrap();
        assert_eq!(hist.occupied_spatial_cells(), 1);
        assert_eq!(hist.out_of_box_weight(), 0.0);
    }

    #[test]
    fn normalized_masses_sum_to_one() {
        let sys = torus2((1.0, 1.0));
        let traj = sys.sample_path(&[0.0, 0.0], 0, 50.0, 3, 0.01).unwrap();
        let hist = occupation_histogram(&[traj], unit_box(2), vec![10, 10], 5.0).unwrap();
        let (p, oob) = hist.normalized().unwrap();
        let sum: f64 = p.iter().sum::<f64>() + oob;
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogramming_is_additive_over_trajectories() {
        let sys = torus2((1.0, 1.0));
        let a = sys.sample_path(&[0.0, 0.0], 0, 20.0, 1, 0.05).unwrap();
        let b = sys.sample_path(&[0.5, 0.5], 1, 20.0, 2, 0.05).unwrap();
        let combined =
            occupation_histogram(&[a.clone(), b.clone()], unit_box(2), vec![8, 8], 0.0).unwrap();
        let mut merged = occupation_histogram(&[a], unit_box(2), vec![8, 8], 0.0).unwrap();
        merged
            .merge(&occupation_histogram(&[b], unit_box(2), vec![8, 8], 0.0).unwrap())
            .unwrap();
        // Summation order differs, so compare up to rounding.
        for (x, y) in combined.cell_masses().iter().zip(merged.cell_masses()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((combined.total_weight() - merged.total_weight()).abs() < 1e-9);
        assert!(tv_distance(&combined, &merged).unwrap() < 1e-12);
    }

    #[test]
    fn tv_distance_of_histogram_with_itself_is_zero() {
        let sys = torus2((1.0, 1.0));
        let traj = sys.sample_path(&[0.0, 0.0], 0, 30.0, 5, 0.05).unwrap();
        let h = occupation_histogram(&[traj], unit_box(2), vec![8, 8], 0.0).unwrap();
        assert_eq!(tv_distance(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn tv_distance_of_disjoint_histograms_is_one() {
        let mut a = OccupationHistogram::new(unit_box(1), vec![4], 1).unwrap();
        let mut b = OccupationHistogram::new(unit_box(1), vec![4], 1).unwrap();
        a.add_weight(&[0.1], 0, 2.0);
        b.add_weight(&[0.9], 0, 5.0);
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tv_distance_rejects_shape_mismatch() {
        let a = OccupationHistogram::uniform(unit_box(1), vec![4], 1).unwrap();
        let b = OccupationHistogram::uniform(unit_box(1), vec![5], 1).unwrap();
        assert!(matches!(
            tv_distance(&a, &b),
            Err(DensityError::ShapeMismatch)
        ));
    }

    #[test]
    fn out_of_box_mass_is_tracked() {
        let mut h = OccupationHistogram::new(vec![(0.0, 1.0)], vec![2], 1).unwrap();
        h.add_weight(&[0.5], 0, 1.0);
        h.add_weight(&[3.0], 0, 1.0);
        assert_eq!(h.total_weight(), 2.0);
        assert_eq!(h.out_of_box_weight(), 1.0);
        let (p, oob) = h.normalized().unwrap();
        assert!((p.iter().sum::<f64>() + oob - 1.0).abs() < 1e-15);
    }

    #[test]
    fn state_occupation_symmetric_rates() {
        let sys = torus2((1.0, 1.0));
        let trajs: Vec<_> = (0..4)
            .map(|s| sys.sample_path(&[0.0, 0.0], 0, 2500.0, s, 1.0).unwrap())
            .collect();
        let occ = state_occupation(&trajs);
        assert!((occ[0] - 0.5).abs() < 0.01, "occupation {occ:?}");
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_occupation_asymmetric_rates() {
        let sys = torus2((1.0, 2.0));
        let trajs: Vec<_> = (0..4)
            .map(|s| sys.sample_path(&[0.0, 0.0], 0, 2500.0, s, 1.0).unwrap())
            .collect();
        let occ = state_occupation(&trajs);
        assert!((occ[0] - 2.0 / 3.0).abs() < 0.02, "occupation {occ:?}");
    }

    #[test]
    fn endpoint_histogram_identical_samples_fill_one_cell() {
        let samples = vec![(vec![0.25, 0.75], 0); 50];
        let h = endpoint_histogram(&samples, unit_box(2), vec![10, 10]).unwrap();
        assert_eq!(h.occupied_spatial_cells(), 1);
        assert_eq!(h.total_weight(), 50.0);
    }

    #[test]
    fn burn_in_must_leave_samples() {
        let sys = torus2((1.0, 1.0));
        let traj = sys.sample_path(&[0.0, 0.0], 0, 5.0, 1, 0.1).unwrap();
        assert!(matches!(
            occupation_histogram(&[traj], unit_box(2), vec![4, 4], 10.0),
            Err(DensityError::BurnInTooLong { .. })
        ));
    }

    #[test]
    fn csv_export_round_trips_masses() {
        let mut h = OccupationHistogram::new(unit_box(2), vec![3, 3], 2).unwrap();
        h.add_weight(&[0.1, 0.9], 1, 2.5);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "state,bin_index_1,bin_index_2,mass");
        let row = lines.next().unwrap();
        assert!(row.starts_with("2,1,3,"), "row {row}");
        assert!(row.ends_with("e0"));
    }
}
