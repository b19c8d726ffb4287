//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only ever evaluates forward values, so it stays
//! independent of the backward rules it is checking.

use rand::seq::index::sample;
use rand::Rng;

use super::{NumericsError, ParameterSet, Tape, Tensor, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so exact zeros compare sanely.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative disagreement of the forward and backward one-sided differences
/// above which a coordinate is tested for a kink (ReLU at zero and the like).
pub const KINK_TOL: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest error, as `(tensor label, flat index)`.
    pub worst: Option<(String, usize)>,
    /// Coordinates left out because the step crosses a non-differentiable
    /// point, where central differences do not estimate any gradient.
    pub kinks: usize,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, idx: usize, err: f64) {
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((label.to_string(), idx));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Compares tape gradients of a scalar function against central differences,
/// both for every named parameter and for every tensor in `inputs`.
///
/// `f` receives the tape, the (possibly perturbed) parameters and one input
/// leaf per entry of `inputs`. When `coords_per_tensor` is set, only that many
/// randomly chosen coordinates of each tensor are checked. Coordinates whose
/// step crosses a kink are counted in `kinks` instead of compared.
pub fn check<F>(
    params: &ParameterSet,
    inputs: &[Tensor],
    f: F,
    coords_per_tensor: Option<usize>,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape, &ParameterSet, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |ps: &ParameterSet, ins: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars = ins
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, ps, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.input(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut tape, params, &vars)?;
    let f0 = tape.value(loss).data()[0];
    let all = tape.backward_all(loss)?;
    let param_grads = tape.backward(loss)?;

    let pick = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<usize> {
        match coords_per_tensor {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        }
    };

    // Central difference at `FD_STEP`, or None when the step crosses a kink.
    // For smooth f the one-sided differences disagree by about `h f''`, which
    // halves with the step; a kink within the step breaks that scaling at one
    // of h, h/2 or h/4.
    let probe =
        |at: &dyn Fn(f64) -> Result<f64, NumericsError>| -> Result<Option<f64>, NumericsError> {
            let gap = |h: f64| -> Result<(f64, f64, f64), NumericsError> {
                let (p, m) = (at(h)?, at(-h)?);
                let (fwd, bwd) = ((p - f0) / h, (f0 - m) / h);
                Ok((fwd - bwd, fwd.abs().max(bwd.abs()), (p - m) / (2.0 * h)))
            };
            // cancellation noise of the gaps, at the smallest step scaled by 4
            let noise = 64.0 * f64::EPSILON * f0.abs().max(1.0) / FD_STEP;
            let (d1, scale, numeric) = gap(FD_STEP)?;
            if d1.abs() <= KINK_TOL * scale.max(REL_FLOOR) + noise {
                return Ok(Some(numeric));
            }
            let (d2, _, _) = gap(FD_STEP / 2.0)?;
            let (d4, _, _) = gap(FD_STEP / 4.0)?;
            let tol = 0.1 * d1.abs() + noise;
            let linear = (d1 - 2.0 * d2).abs() <= tol && (d1 - 4.0 * d4).abs() <= tol;
            Ok(linear.then_some(numeric))
        };

    let mut report = GradCheckReport::default();
    for (name, t) in params.iter() {
        let Some(analytic) = param_grads.get(name) else {
            continue;
        };
        for idx in pick(t.len(), rng) {
            let at = |h: f64| {
                let mut ps = params.clone();
                ps.get_mut(name).expect("exists").data_mut()[idx] += h;
                eval(&ps, inputs)
            };
            match probe(&at)? {
                Some(numeric) => {
                    report.record(name, idx, relative_error(analytic.data()[idx], numeric))
                }
                None => report.kinks += 1,
            }
        }
    }
    for (k, (t, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = all
            .get(v.index())
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        for idx in pick(t.len(), rng) {
            let at = |h: f64| {
                let mut ins = inputs.to_vec();
                ins[k].data_mut()[idx] += h;
                eval(params, &ins)
            };
            match probe(&at)? {
                Some(numeric) => report.record(
                    &format!("input{k}"),
                    idx,
                    relative_error(analytic.data()[idx], numeric),
                ),
                None => report.kinks += 1,
            }
        }
    }
    Ok(report)
}

/// Uniform random tensor in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("shape matches data")
}
