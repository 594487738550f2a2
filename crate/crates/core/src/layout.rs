//! Packing of the free parameters into a flat vector.
//!
//! The free parameters are `phi_{x,m}` for `m < M` and the off-diagonal
//! rates `q_{xy,m}`; alpha is estimated separately and is not part of the
//! vector. Canonical order: all phi entries (state outer, regime inner),
//! then rates grouped by regime, row-major over `(x, y != x)` within each
//! regime. The dimension is `p(M-1) + M p(p-1)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamIndex {
    Phi { x: usize, m: usize },
    Rate { x: usize, y: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamLayout {
    p: usize,
    nm: usize,
}

impl ParamLayout {
    pub fn new(p: usize, nm: usize) -> Self {
        Self { p, nm }
    }

    pub fn for_model(theta: &ModelParams) -> Self {
        Self::new(theta.n_states(), theta.n_regimes())
    }

    pub fn n_states(&self) -> usize {
        self.p
    }

    pub fn n_regimes(&self) -> usize {
        self.nm
    }

    pub fn n_phi(&self) -> usize {
        self.p * (self.nm - 1)
    }

    pub fn dim(&self) -> usize {
        self.n_phi() + self.nm * self.p * (self.p - 1)
    }

    pub fn phi_index(&self, x: usize, m: usize) -> usize {
        debug_assert!(m + 1 < self.nm);
        x * (self.nm - 1) + m
    }

    pub fn rate_index(&self, x: usize, y: usize, m: usize) -> usize {
        debug_assert!(x != y);
        let col = if y < x { y } else { y - 1 };
        self.n_phi() + (m * self.p + x) * (self.p - 1) + col
    }

    pub fn index(&self, i: usize) -> ParamIndex {
        let np = self.n_phi();
        if i < np {
            let w = self.nm - 1;
            ParamIndex::Phi { x: i / w, m: i % w }
        } else {
            let r = i - np;
            let per_row = self.p - 1;
            let col = r % per_row;
            let row = r / per_row;
            let x = row % self.p;
            let m = row / self.p;
            let y = if col < x { col } else { col + 1 };
            ParamIndex::Rate { x, y, m }
        }
    }

    pub fn label(&self, i: usize) -> String {
        match self.index(i) {
            ParamIndex::Phi { x, m } => format!("phi_{{{},{}}}", x + 1, m + 1),
            ParamIndex::Rate { x, y, m } if self.p < 10 => {
                format!("q_{{{}{},{}}}", x + 1, y + 1, m + 1)
            }
            ParamIndex::Rate { x, y, m } => format!("q_{{{}-{},{}}}", x + 1, y + 1, m + 1),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.label(i)).collect()
    }
}

/// Flat vector of free parameters in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl FreeParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} free parameters, got {}",
                layout.dim(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn pack(theta: &ModelParams) -> FreeParamVector {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (layout.p, layout.nm);
    let mut values = Vec::with_capacity(layout.dim());
    for x in 0..p {
        for m in 0..nm - 1 {
            values.push(theta.phi(x, m));
        }
    }
    for m in 0..nm {
        for x in 0..p {
            for y in 0..p {
                if x != y {
                    values.push(theta.q(x, y, m));
                }
            }
        }
    }
    FreeParamVector { layout, values }
}

/// Rebuilds full parameters from a free vector and a separately held alpha.
/// Fails if the vector lies outside the parameter space.
pub fn unpack(v: &FreeParamVector, alpha: &[f64]) -> Result<ModelParams> {
    unpack_values(v.layout, &v.values, alpha)
}

pub fn unpack_values(layout: ParamLayout, values: &[f64], alpha: &[f64]) -> Result<ModelParams> {
    let (p, nm) = (layout.p, layout.nm);
    if values.len() != layout.dim() || alpha.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "layout ({p}, {nm}) needs {} values and {p} alpha entries",
            layout.dim()
        )));
    }
    let mut phi = vec![0.0; p * nm];
    for x in 0..p {
        let mut acc = 0.0;
        for m in 0..nm - 1 {
            let v = values[layout.phi_index(x, m)];
            phi[x * nm + m] = v;
            acc += v;
        }
        phi[x * nm + nm - 1] = 1.0 - acc;
    }
    let mut q = vec![0.0; nm * p * p];
    let mut i = layout.n_phi();
    for m in 0..nm {
        for x in 0..p {
            for y in 0..p {
                if x != y {
                    q[(m * p + x) * p + y] = values[i];
                    i += 1;
                }
            }
        }
    }
    ModelParams::from_parts(alpha.to_vec(), phi, q, p, nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_model;
    use proptest::prelude::*;

    #[test]
    fn reference_layout_has_24_entries() {
        let v = pack(&reference_model());
        assert_eq!(v.len(), 24);
        assert_eq!(v.values()[0], 0.5);
        assert_eq!(v.values()[1], 0.3);
        assert_eq!(v.values()[6], 1.2);
        let labels = v.layout().labels();
        assert_eq!(labels[0], "phi_{1,1}");
        assert_eq!(labels[5], "phi_{3,2}");
        assert_eq!(labels[6], "q_{12,1}");
        assert_eq!(labels[11], "q_{32,1}");
        assert_eq!(labels[23], "q_{32,3}");
    }

    #[test]
    fn single_regime_has_only_rates() {
        let theta = ModelParams::new(
            vec![0.5, 0.5],
            vec![vec![1.0], vec![1.0]],
            vec![vec![vec![-1.0, 1.0], vec![2.0, -2.0]]],
        )
        .unwrap();
        let v = pack(&theta);
        assert_eq!(v.values(), &[1.0, 2.0]);
    }

    #[test]
    fn index_mapping_is_inverse_of_positions() {
        for (p, nm) in [(2, 1), (2, 2), (3, 3), (4, 2), (5, 5)] {
            let layout = ParamLayout::new(p, nm);
            for i in 0..layout.dim() {
                let back = match layout.index(i) {
                    ParamIndex::Phi { x, m } => layout.phi_index(x, m),
                    ParamIndex::Rate { x, y, m } => layout.rate_index(x, y, m),
                };
                assert_eq!(back, i);
            }
        }
    }

    #[test]
    fn unpack_rejects_outside_space() {
        let mut v = pack(&reference_model()).into_values();
        v[0] = 0.9; // phi_{1,1} + phi_{1,2} > 1
        let layout = ParamLayout::new(3, 3);
        assert!(unpack_values(layout, &v, &[1.0 / 3.0; 3]).is_err());
    }

    fn arb_model() -> impl Strategy<Value = ModelParams> {
        (2usize..5, 1usize..4).prop_flat_map(|(p, nm)| {
            (
                proptest::collection::vec(0.05f64..1.0, p * nm),
                proptest::collection::vec(0.01f64..10.0, nm * p * p),
                proptest::collection::vec(0.05f64..1.0, p),
            )
                .prop_map(move |(w, rates, a)| {
                    let asum: f64 = a.iter().sum();
                    let phi = (0..p)
                        .map(|x| {
                            let row = &w[x * nm..(x + 1) * nm];
                            let s: f64 = row.iter().sum();
                            row.iter().map(|v| v / s).collect()
                        })
                        .collect();
                    let q = (0..nm)
                        .map(|m| {
                            (0..p)
                                .map(|x| (0..p).map(|y| rates[(m * p + x) * p + y]).collect())
                                .collect()
                        })
                        .collect();
                    ModelParams::new(a.iter().map(|v| v / asum).collect(), phi, q).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pack_unpack_round_trip(theta in arb_model()) {
            let v = pack(&theta);
            let back = unpack(&v, theta.alpha()).unwrap();
            prop_assert_eq!(&back, &theta);
            prop_assert_eq!(pack(&back), v);
        }
    }
}
