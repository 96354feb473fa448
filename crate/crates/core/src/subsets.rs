//! Bitmask subset algebra over a fixed ordered set of binary variables,
//! with the zeta and Möbius transforms that connect "all-ones" margin
//! probabilities to joint cell probabilities.
//!
//! Cells of `{0,1}^k` and subsets of the ground set share the same encoding:
//! bit `i` of a mask corresponds to the `i`-th variable of the [`VarSet`],
//! so cell masks enumerate in the order `00, 10, 01, 11` for two variables.

use std::fmt;

use crate::error::{Error, Result};

/// Hard cap on ground-set size: dense `2^k` storage stays cheap below this.
pub const MAX_VARS: usize = 16;

/// Tolerance below which a slightly negative inverted cell is treated as
/// floating-point noise and clamped to zero.
pub const COHERENCE_TOL: f64 = 1e-10;

/// A subset of a [`VarSet`], encoded as a bitmask over the variable order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Subset(pub u16);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn singleton(var: usize) -> Subset {
        Subset(1 << var)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    /// The mask interpreted as a dense array index.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, var: usize) -> bool {
        self.0 & (1 << var) != 0
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn intersect(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn minus(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    pub fn with(self, var: usize) -> Subset {
        Subset(self.0 | (1 << var))
    }

    /// Indices of the member variables, ascending.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_VARS).filter(move |i| bits & (1 << i) != 0)
    }
}

/// A finite ordered set of distinct binary variable names. Subset masks and
/// cell indices are defined relative to this order, fixed at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSet {
    names: Vec<String>,
}

impl VarSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() > MAX_VARS {
            return Err(Error::Capacity(names.len()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::DuplicateLabel(String::new()));
            }
            if names[..i].contains(n) {
                return Err(Error::DuplicateLabel(n.clone()));
            }
        }
        Ok(VarSet { names })
    }

    pub fn empty() -> Self {
        VarSet { names: Vec::new() }
    }

    pub fn arity(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Mask with every variable present.
    pub fn full(&self) -> Subset {
        if self.names.is_empty() {
            Subset::EMPTY
        } else {
            Subset(((1u32 << self.names.len()) - 1) as u16)
        }
    }

    pub fn n_cells(&self) -> usize {
        1 << self.names.len()
    }

    /// All `2^arity` subset masks in increasing numeric order.
    pub fn subsets(&self) -> impl Iterator<Item = Subset> {
        (0..self.n_cells() as u16).map(Subset)
    }

    /// Nonempty subsets in increasing numeric order.
    pub fn nonempty_subsets(&self) -> impl Iterator<Item = Subset> {
        (1..self.n_cells() as u16).map(Subset)
    }

    pub fn subset_of(&self, names: &[&str]) -> Result<Subset> {
        let mut mask = Subset::EMPTY;
        for n in names {
            match self.index_of(n) {
                Some(i) => mask = mask.with(i),
                None => return Err(Error::UnknownVariable((*n).to_string())),
            }
        }
        Ok(mask)
    }

    /// Human-readable label for a subset, e.g. `{a,b}`.
    pub fn label(&self, subset: Subset) -> String {
        let parts: Vec<&str> = subset.members().map(|i| self.name(i)).collect();
        format!("{{{}}}", parts.join(","))
    }

    /// Cell label as a 0/1 assignment, e.g. `a=1,b=0`.
    pub fn cell_label(&self, cell: Subset) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}={}", n, u8::from(cell.contains(i))))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.names.join(","))
    }
}

/// All-ones margin probabilities `value(B) = P(all variables in B equal 1)`,
/// stored densely over every subset of a `k`-variable ground set. The empty
/// set entry is pinned to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    values: Vec<f64>,
}

impl MarginVector {
    /// Wraps raw margin values, checking the fixed empty-set entry and the
    /// range each entry must live in to be a probability.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_power_of_two() || values.len() > (1 << MAX_VARS) {
            return Err(Error::InvalidDistribution(format!(
                "margin vector length {} is not a power of two within capacity",
                values.len()
            )));
        }
        if (values[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "empty-set margin must be 1, got {}",
                values[0]
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(-COHERENCE_TOL..=1.0 + 1e-9).contains(&v) {
                return Err(Error::IncoherentMargins {
                    cell: format!("margin #{i}"),
                    value: v,
                });
            }
        }
        Ok(MarginVector { values })
    }

    pub fn arity(&self) -> usize {
        self.values.len().trailing_zeros() as usize
    }

    pub fn value(&self, subset: Subset) -> f64 {
        self.values[subset.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn validate_cells(cells: &[f64]) -> Result<Vec<f64>> {
    if !cells.len().is_power_of_two() || cells.len() > (1 << MAX_VARS) {
        return Err(Error::InvalidDistribution(format!(
            "cell vector length {} is not a power of two within capacity",
            cells.len()
        )));
    }
    let sum: f64 = cells.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!(
            "cells sum to {sum}, expected 1"
        )));
    }
    let mut out = Vec::with_capacity(cells.len());
    for (i, &c) in cells.iter().enumerate() {
        if !c.is_finite() || c < -COHERENCE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "cell #{i} is negative ({c})"
            )));
        }
        out.push(c.max(0.0));
    }
    Ok(out)
}

/// Zeta transform: margins from cells, `value(B) = Σ_{cells ⊇ B} cell`.
///
/// `cells[m]` is the probability of the 0/1 cell whose ones are the mask `m`.
pub fn zeta_transform(cells: &[f64]) -> Result<MarginVector> {
    let mut values = validate_cells(cells)?;
    let k = values.len().trailing_zeros();
    // Superset-sum dynamic program, one bit at a time.
    for bit in 0..k {
        let step = 1usize << bit;
        for mask in 0..values.len() {
            if mask & step == 0 {
                values[mask] += values[mask | step];
            }
        }
    }
    values[0] = 1.0; // exact, absorbs the sum-to-one rounding
    MarginVector::from_values(values)
}

/// Möbius inversion: cell probabilities from margins by inclusion–exclusion,
/// `cell(1_B, 0_rest) = Σ_{D ⊇ B} (−1)^{|D∖B|} value(D)`.
///
/// Exact inverse of [`zeta_transform`]. Cells below `−COHERENCE_TOL` mean the
/// margins do not come from any distribution; values in `(−COHERENCE_TOL, 0)`
/// are clamped to zero.
pub fn moebius_invert(margins: &MarginVector) -> Result<Vec<f64>> {
    let mut cells = margins.values.clone();
    let k = cells.len().trailing_zeros();
    for bit in 0..k {
        let step = 1usize << bit;
        for mask in 0..cells.len() {
            if mask & step == 0 {
                cells[mask] -= cells[mask | step];
            }
        }
    }
    for (i, c) in cells.iter_mut().enumerate() {
        if *c < -COHERENCE_TOL {
            return Err(Error::IncoherentMargins {
                cell: format!("#{i}"),
                value: *c,
            });
        }
        if *c < 0.0 {
            *c = 0.0;
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn varset_rejects_duplicates_and_capacity() {
        assert!(matches!(
            VarSet::new(["a", "a"]),
            Err(Error::DuplicateLabel(_))
        ));
        let many: Vec<String> = (0..17).map(|i| format!("v{i}")).collect();
        assert!(matches!(VarSet::new(many), Err(Error::Capacity(17))));
    }

    #[test]
    fn subset_enumeration_order() {
        let one = VarSet::new(["a"]).unwrap();
        assert_eq!(one.subsets().collect::<Vec<_>>(), vec![Subset(0), Subset(1)]);

        let two = VarSet::new(["a", "b"]).unwrap();
        assert_eq!(
            two.subsets().collect::<Vec<_>>(),
            vec![Subset(0), Subset(1), Subset(2), Subset(3)]
        );

        let three = VarSet::new(["a", "b", "c"]).unwrap();
        assert_eq!(three.subsets().count(), 8);
    }

    #[test]
    fn zeta_uniform_two_vars() {
        let m = zeta_transform(&[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(m.value(Subset(0)), 1.0);
        assert_abs_diff_eq!(m.value(Subset(1)), 0.5);
        assert_abs_diff_eq!(m.value(Subset(2)), 0.5);
        assert_abs_diff_eq!(m.value(Subset(3)), 0.25);
    }

    #[test]
    fn zeta_point_mass_all_ones() {
        let m = zeta_transform(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        for s in VarSet::new(["a", "b"]).unwrap().subsets() {
            assert_abs_diff_eq!(m.value(s), 1.0);
        }
    }

    #[test]
    fn zeta_hand_summed() {
        // cells in (00,10,01,11) order
        let m = zeta_transform(&[0.3, 0.2, 0.1, 0.4]).unwrap();
        assert_abs_diff_eq!(m.value(Subset(1)), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(m.value(Subset(2)), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.value(Subset(3)), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn moebius_hand_inclusion_exclusion() {
        let m = MarginVector::from_values(vec![1.0, 0.6, 0.5, 0.4]).unwrap();
        let cells = moebius_invert(&m).unwrap();
        let expect = [0.3, 0.2, 0.1, 0.4];
        for (c, e) in cells.iter().zip(expect) {
            assert_abs_diff_eq!(*c, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn moebius_degenerate_point_mass() {
        let m = MarginVector::from_values(vec![1.0; 8]).unwrap();
        let cells = moebius_invert(&m).unwrap();
        assert_abs_diff_eq!(cells[7], 1.0);
        assert_eq!(cells[..7].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn moebius_rejects_incoherent() {
        // pairwise margin larger than a univariate one cannot happen
        let m = MarginVector::from_values(vec![1.0, 0.2, 0.3, 0.3]).unwrap();
        assert!(matches!(
            moebius_invert(&m),
            Err(Error::IncoherentMargins { .. })
        ));
    }

    #[test]
    fn zeta_rejects_bad_distributions() {
        assert!(matches!(
            zeta_transform(&[0.5, 0.6, -0.3, 0.2]),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            zeta_transform(&[0.5, 0.4]),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn transforms_match_naive_definitions() {
        // fixed pseudo-random distribution over 3 variables
        let raw = [0.11, 0.04, 0.17, 0.08, 0.22, 0.05, 0.2, 0.13];
        let sum: f64 = raw.iter().sum();
        let cells: Vec<f64> = raw.iter().map(|c| c / sum).collect();
        let m = zeta_transform(&cells).unwrap();
        for b in 0..8u16 {
            let naive: f64 = (0..8u16)
                .filter(|c| Subset(b).is_subset_of(Subset(*c)))
                .map(|c| cells[c as usize])
                .sum();
            assert_abs_diff_eq!(m.value(Subset(b)), naive, epsilon = 1e-14);
        }
        let inv = moebius_invert(&m).unwrap();
        for b in 0..8u16 {
            let naive: f64 = (0..8u16)
                .filter(|&d| Subset(b).is_subset_of(Subset(d)))
                .map(|d| {
                    let sign = if (Subset(d).minus(Subset(b))).len().is_multiple_of(2) {
                        1.0
                    } else {
                        -1.0
                    };
                    sign * m.value(Subset(d))
                })
                .sum();
            assert_abs_diff_eq!(inv[b as usize], naive, epsilon = 1e-14);
        }
    }

    #[test]
    fn margin_monotone_under_inclusion() {
        let raw = [0.3, 0.05, 0.1, 0.02, 0.25, 0.08, 0.15, 0.05];
        let m = zeta_transform(&raw).unwrap();
        for b in 0..8u16 {
            for d in 0..8u16 {
                if Subset(b).is_subset_of(Subset(d)) {
                    assert!(m.value(Subset(b)) >= m.value(Subset(d)) - 1e-15);
                }
            }
        }
    }
}
