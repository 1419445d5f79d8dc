//! Layer curves: saturation/maximum layers, group averages and difference
//! curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("curve `{curve}` has {found} layers, expected {expected}")]
    LengthMismatch {
        curve: String,
        expected: usize,
        found: usize,
    },
    #[error("no curves to aggregate")]
    Empty,
    #[error("curve has no layers")]
    NoLayers,
}

/// Normalized performance per layer, layer 0 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub curve_id: String,
    pub values: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LayerCurve {
    pub fn new(curve_id: impl Into<String>, values: Vec<f64>, stds: Vec<f64>) -> Result<Self, LayerError> {
        let curve_id = curve_id.into();
        if values.len() != stds.len() {
            return Err(LayerError::LengthMismatch {
                curve: curve_id,
                expected: values.len(),
                found: stds.len(),
            });
        }
        Ok(LayerCurve {
            curve_id,
            values,
            stds,
        })
    }

    /// Curve with zero std at every layer.
    pub fn from_values(curve_id: impl Into<String>, values: Vec<f64>) -> Self {
        let stds = vec![0.0; values.len()];
        LayerCurve {
            curve_id: curve_id.into(),
            values,
            stds,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationResult {
    /// `None` when the curve is degenerate.
    pub saturation_layer: Option<usize>,
    pub maximum_layer: usize,
    pub peak_value: f64,
    pub threshold_ratio: f64,
    /// Peak is not positive, so a ratio threshold is meaningless.
    pub degenerate: bool,
}

/// First layer reaching `threshold_ratio * peak`, and the earliest argmax.
pub fn saturation_layer(curve: &LayerCurve, threshold_ratio: f64) -> Result<SaturationResult, LayerError> {
    if curve.values.is_empty() {
        return Err(LayerError::NoLayers);
    }
    let mut maximum_layer = 0;
    let mut peak = curve.values[0];
    for (l, &v) in curve.values.iter().enumerate().skip(1) {
        if v > peak {
            peak = v;
            maximum_layer = l;
        }
    }
    let degenerate = !(peak > 0.0);
    let saturation = if degenerate {
        None
    } else {
        let threshold = threshold_ratio * peak;
        curve.values.iter().position(|&v| v >= threshold)
    };
    Ok(SaturationResult {
        saturation_layer: saturation,
        maximum_layer,
        peak_value: peak,
        threshold_ratio,
        degenerate,
    })
}

/// Unweighted per-layer mean of member curves; the std at each layer is the
/// population std of member values there.
pub fn aggregate_curves(curve_id: impl Into<String>, curves: &[LayerCurve]) -> Result<LayerCurve, LayerError> {
    let first = curves.first().ok_or(LayerError::Empty)?;
    let n_layers = first.n_layers();
    for c in curves {
        if c.n_layers() != n_layers {
            return Err(LayerError::LengthMismatch {
                curve: c.curve_id.clone(),
                expected: n_layers,
                found: c.n_layers(),
            });
        }
    }
    let k = curves.len() as f64;
    let mut values = Vec::with_capacity(n_layers);
    let mut stds = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        // sorted summation keeps the result independent of member order
        let mut layer: Vec<f64> = curves.iter().map(|c| c.values[l]).collect();
        layer.sort_by(f64::total_cmp);
        let mean = layer.iter().sum::<f64>() / k;
        let var = layer.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        values.push(mean);
        stds.push(var.sqrt());
    }
    Ok(LayerCurve {
        curve_id: curve_id.into(),
        values,
        stds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    pub curve_id: String,
    pub values: Vec<f64>,
    pub std_diff: Vec<f64>,
}

/// Element-wise `a - b` with quadrature-combined std.
pub fn difference_curve(a: &LayerCurve, b: &LayerCurve) -> Result<DifferenceCurve, LayerError> {
    if a.n_layers() != b.n_layers() {
        return Err(LayerError::LengthMismatch {
            curve: b.curve_id.clone(),
            expected: a.n_layers(),
            found: b.n_layers(),
        });
    }
    Ok(DifferenceCurve {
        curve_id: format!("{}-{}", a.curve_id, b.curve_id),
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
        std_diff: a
            .stds
            .iter()
            .zip(&b.stds)
            .map(|(sa, sb)| (sa * sa + sb * sb).sqrt())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crafted_curve() {
        let c = LayerCurve::from_values("t", vec![0.2, 0.5, 0.93, 0.95, 0.96, 1.0]);
        let s = saturation_layer(&c, DEFAULT_THRESHOLD_RATIO).unwrap();
        assert_eq!(s.saturation_layer, Some(3));
        assert_eq!(s.maximum_layer, 5);
        assert_eq!(s.peak_value, 1.0);
    }

    #[test]
    fn constant_and_decreasing() {
        let c = LayerCurve::from_values("t", vec![0.8; 7]);
        let s = saturation_layer(&c, 0.95).unwrap();
        assert_eq!((s.saturation_layer, s.maximum_layer), (Some(0), 0));
        let c = LayerCurve::from_values("t", vec![1.0, 0.9, 0.8]);
        let s = saturation_layer(&c, 0.95).unwrap();
        assert_eq!((s.saturation_layer, s.maximum_layer), (Some(0), 0));
    }

    #[test]
    fn non_positive_peak_is_degenerate() {
        let c = LayerCurve::from_values("t", vec![0.0, -0.1, 0.0]);
        let s = saturation_layer(&c, 0.95).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.saturation_layer, None);
        assert_eq!(s.maximum_layer, 0);
    }

    #[test]
    fn aggregate_examples() {
        let a = LayerCurve::from_values("a", vec![0.0, 1.0]);
        let b = LayerCurve::from_values("b", vec![1.0, 0.0]);
        let m = aggregate_curves("m", &[a.clone(), b]).unwrap();
        assert_eq!(m.values, vec![0.5, 0.5]);
        assert_eq!(m.stds, vec![0.5, 0.5]);
        let same = aggregate_curves("s", &[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.values, a.values);
        assert_eq!(same.stds, vec![0.0, 0.0]);
        assert_eq!(aggregate_curves("e", &[]), Err(LayerError::Empty));
        let short = LayerCurve::from_values("c", vec![1.0]);
        assert!(aggregate_curves("x", &[a, short]).is_err());
    }

    #[test]
    fn three_four_five() {
        let a = LayerCurve::new("a", vec![0.5], vec![0.3]).unwrap();
        let b = LayerCurve::new("b", vec![0.5], vec![0.4]).unwrap();
        let d = difference_curve(&a, &b).unwrap();
        assert_eq!(d.std_diff, vec![0.5]);
        assert_eq!(d.values, vec![0.0]);
        let s = LayerCurve::new("s", vec![0.1, 0.2], vec![0.2, 0.2]).unwrap();
        let d = difference_curve(&s, &s).unwrap();
        assert_eq!(d.values, vec![0.0, 0.0]);
        assert!((d.std_diff[0] - 0.2 * 2f64.sqrt()).abs() < 1e-15);
    }

    fn curve_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 1..24)
    }

    proptest! {
        #[test]
        fn scale_invariance(values in curve_strategy(), scale in 0.01f64..100.0) {
            let c = LayerCurve::from_values("c", values.clone());
            let scaled = LayerCurve::from_values("c", values.iter().map(|v| v * scale).collect());
            let a = saturation_layer(&c, 0.95).unwrap();
            let b = saturation_layer(&scaled, 0.95).unwrap();
            prop_assert_eq!(a.maximum_layer, b.maximum_layer);
            prop_assert_eq!(a.degenerate, b.degenerate);
            // threshold crossings can move only through rounding at exact ties
            if let (Some(x), Some(y)) = (a.saturation_layer, b.saturation_layer) {
                let t = 0.95 * a.peak_value;
                let near_tie = values.iter().any(|v| ((v - t) / t).abs() < 1e-12);
                prop_assert!(x == y || near_tie);
            }
        }

        #[test]
        fn saturation_never_after_first_argmax(values in curve_strategy()) {
            let s = saturation_layer(&LayerCurve::from_values("c", values), 0.95).unwrap();
            if let Some(sat) = s.saturation_layer {
                prop_assert!(sat <= s.maximum_layer);
            }
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            curves in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..8),
            rot in 0usize..8,
        ) {
            let cs: Vec<LayerCurve> = curves.iter().enumerate()
                .map(|(i, v)| LayerCurve::from_values(format!("c{i}"), v.clone())).collect();
            let mut permuted = cs.clone();
            permuted.rotate_left(rot % cs.len());
            permuted.reverse();
            prop_assert_eq!(aggregate_curves("m", &cs).unwrap(), aggregate_curves("m", &permuted).unwrap());
        }

        #[test]
        fn self_difference_is_zero(values in curve_strategy()) {
            let c = LayerCurve::from_values("c", values);
            let d = difference_curve(&c, &c).unwrap();
            prop_assert!(d.values.iter().all(|&v| v == 0.0));
        }
    }
}
