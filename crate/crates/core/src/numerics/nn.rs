//! Neural building blocks over the tape: affine layers, MLPs and a GRU cell.
//!
//! Blocks only hold parameter names; the weights live in a [`ParameterSet`]
//! so that whole models can be copied, checkpointed and optimised as one map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Unary, Var};
use super::{NumericsError, ParameterSet};

/// Negative slope used for every leaky ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn unary(self) -> Unary {
        match self {
            Activation::Relu => Unary::LeakyRelu(0.0),
            Activation::LeakyRelu => Unary::LeakyRelu(LEAKY_SLOPE),
            Activation::Tanh => Unary::Tanh,
            Activation::Sigmoid => Unary::Sigmoid,
            Activation::Identity => Unary::Identity,
        }
    }
}

/// `x · W (+ b)` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let layer = Self::named(prefix, in_dim, out_dim, bias);
        params.init_xavier(&layer.weight, in_dim, out_dim, rng);
        if let Some(b) = &layer.bias {
            params.init_zeros(b, &[1, out_dim]);
        }
        layer
    }

    /// Refers to existing parameters without initialising them.
    pub fn named(prefix: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: bias.then(|| format!("{prefix}.b")),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: Var,
    ) -> Result<Var, NumericsError> {
        let w = tape.param(params, &self.weight)?;
        let y = tape.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.param(params, b)?;
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of affine layers with an activation between them; the last layer is
/// linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists input width followed by each layer's output width.
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(params, &format!("{prefix}.l{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers, activation }
    }

    pub fn named(prefix: &str, widths: &[usize], activation: Activation) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::named(&format!("{prefix}.l{i}"), w[0], w[1], true))
            .collect();
        Self { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: Var,
    ) -> Result<Var, NumericsError> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim() {
            return Err(NumericsError::Shape(format!(
                "mlp expects {} inputs, got {cols}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.unary(self.activation.unary(), h)?;
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ([x, h]·W_z + b_z)
/// r  = σ([x, h]·W_r + b_r)
/// ĥ  = tanh([x, r⊙h]·W_h + b_h)
/// h' = (1 − z)⊙ĥ + z⊙h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub update_gate: Linear,
    pub reset_gate: Linear,
    pub candidate: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = input_dim + hidden_dim;
        Self {
            update_gate: Linear::init(params, &format!("{prefix}.z"), d, hidden_dim, true, rng),
            reset_gate: Linear::init(params, &format!("{prefix}.r"), d, hidden_dim, true, rng),
            candidate: Linear::init(params, &format!("{prefix}.h"), d, hidden_dim, true, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn named(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let d = input_dim + hidden_dim;
        Self {
            update_gate: Linear::named(&format!("{prefix}.z"), d, hidden_dim, true),
            reset_gate: Linear::named(&format!("{prefix}.r"), d, hidden_dim, true),
            candidate: Linear::named(&format!("{prefix}.h"), d, hidden_dim, true),
            input_dim,
            hidden_dim,
        }
    }

    /// `x: [n, input_dim]`, `h: [n, hidden_dim]` → `[n, hidden_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: Var,
        h: Var,
    ) -> Result<Var, NumericsError> {
        let (tx, th) = (tape.value(x), tape.value(h));
        if tx.cols() != self.input_dim || th.cols() != self.hidden_dim || tx.rows() != th.rows() {
            return Err(NumericsError::Shape(format!(
                "gru expects [n, {}] and [n, {}], got {:?} and {:?}",
                self.input_dim,
                self.hidden_dim,
                tx.shape(),
                th.shape()
            )));
        }
        let xh = tape.concat_cols(&[x, h])?;
        let z = self.update_gate.forward(tape, params, xh)?;
        let z = tape.sigmoid(z)?;
        let r = self.reset_gate.forward(tape, params, xh)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let cand = self.candidate.forward(tape, params, xrh)?;
        let cand = tape.tanh(cand)?;
        // h' = ĥ + z⊙(h − ĥ)
        let diff = tape.sub(h, cand)?;
        let gated = tape.mul(z, diff)?;
        tape.add(cand, gated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gru_halves_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let gru = GruCell::init(&mut ps, "gru", 3, 4, &mut rng);
        let names: Vec<String> = ps.names().cloned().collect();
        for n in names {
            for v in ps.get_mut(&n).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.3, -1.0, 2.0])).unwrap();
        let h = tape.constant(Tensor::row(&[1.0, -2.0, 0.5, 4.0])).unwrap();
        let out = gru.forward(&mut tape, &ps, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn gru_zero_state_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        let gru = GruCell::init(&mut ps, "gru", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let h = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
        let out = gru.forward(&mut tape, &ps, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        let gru = GruCell::init(&mut ps, "gru", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
        let h = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(gru.forward(&mut tape, &ps, x, h).is_err());
    }

    #[test]
    fn mlp_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::init(&mut ps, "m", &[3, 3], Activation::Relu, &mut rng);
        ps.insert("m.l0.w", Tensor::identity(3));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, -2.0, 3.0])).unwrap();
        let y = mlp.forward(&mut tape, &ps, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);

        let mlp2 = Mlp::init(&mut ps, "z", &[3, 5, 2], Activation::Tanh, &mut rng);
        ps.insert("z.l0.w", Tensor::zeros(&[3, 5]));
        ps.insert("z.l1.w", Tensor::zeros(&[5, 2]));
        let y = mlp2.forward(&mut tape, &ps, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
        let bad = tape.constant(Tensor::row(&[1.0])).unwrap();
        assert!(mlp2.forward(&mut tape, &ps, bad).is_err());
    }
}
