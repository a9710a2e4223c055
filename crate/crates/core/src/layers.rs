//! Recurrent and dense building blocks: LSTM stacks, linear heads, and
//! frame splicing.

use rand::Rng;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::seed::param_rng;

/// Uniform init in [-k, k] with k = 1/sqrt(fan_in), seeded per name.
fn uniform_init(seed: u64, name: &str, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let k = 1.0 / (fan_in as f64).sqrt();
    let mut rng = param_rng(seed, name);
    let data = (0..rows * cols).map(|_| rng.gen_range(-k..k)).collect();
    Tensor::from_vec(data, &[rows, cols]).expect("sized buffer")
}

/// Per-frame affine map `x . w + b` with no nonlinearity.
#[derive(Clone)]
pub struct Linear {
    /// `in_dim x out_dim`
    pub weight: Tensor,
    /// `1 x out_dim`
    pub bias: Tensor,
}

impl Linear {
    pub fn init(seed: u64, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            weight: uniform_init(seed, &format!("{name}.w"), in_dim, out_dim, in_dim),
            bias: Tensor::zeros(&[1, out_dim]),
        }
    }

    pub fn new(weight: Tensor, bias: Tensor) -> Result<Linear> {
        if weight.shape().len() != 2
            || bias.shape().len() != 2
            || bias.shape()[0] != 1
            || bias.shape()[1] != weight.shape()[1]
        {
            return Err(Error::ShapeMismatch {
                op: "linear_params",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        let projected = seq.matmul(&self.weight)?;
        // Broadcast the bias row over T frames through a ones column, so the
        // gradient reaches the bias by plain matmul transposition.
        let t = projected.shape()[0];
        let ones = Tensor::filled(&[t, 1], 1.0);
        projected.add(&ones.matmul(&self.bias)?)
    }

    pub fn for_each_param(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}.w"), &self.weight);
        f(format!("{prefix}.b"), &self.bias);
    }

    pub fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.w"), &mut self.weight);
        f(format!("{prefix}.b"), &mut self.bias);
    }

    fn bind(&self, graph: &Graph) -> Linear {
        Linear {
            weight: graph.leaf(&self.weight),
            bias: graph.leaf(&self.bias),
        }
    }
}

/// One LSTM layer: packed gate weights `(in+hidden) x 4*hidden` in
/// input/forget/cell/output order, bias `1 x 4*hidden`.
#[derive(Clone)]
struct LstmLayer {
    w: Tensor,
    b: Tensor,
}

/// A stack of LSTM layers; layer 0 consumes `input_dim`, deeper layers
/// consume `hidden_dim`. Hidden and cell states start at zero for every
/// sequence (utterances are independent recordings).
#[derive(Clone)]
pub struct LstmStack {
    layers: Vec<LstmLayer>,
    input_dim: usize,
    hidden_dim: usize,
}

impl LstmStack {
    pub fn init(
        seed: u64,
        name: &str,
        num_layers: usize,
        input_dim: usize,
        hidden_dim: usize,
    ) -> LstmStack {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_dim = if l == 0 { input_dim } else { hidden_dim };
            let w = uniform_init(
                seed,
                &format!("{name}.{l}.w"),
                in_dim + hidden_dim,
                4 * hidden_dim,
                in_dim + hidden_dim,
            );
            // Forget-gate bias at 1.0 keeps the cell state alive early on.
            let mut bias = vec![0.0; 4 * hidden_dim];
            bias[hidden_dim..2 * hidden_dim].fill(1.0);
            let b = Tensor::from_vec(bias, &[1, 4 * hidden_dim]).expect("sized buffer");
            layers.push(LstmLayer { w, b });
        }
        LstmStack {
            layers,
            input_dim,
            hidden_dim,
        }
    }

    /// Build a stack from explicit gate parameters, layer by layer:
    /// weight `(in+hidden) x 4*hidden`, bias `1 x 4*hidden`.
    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        params: Vec<(Tensor, Tensor)>,
    ) -> Result<LstmStack> {
        if params.is_empty() {
            return Err(Error::InvalidShape {
                op: "lstm_params",
                message: "need at least one layer".to_string(),
            });
        }
        for (l, (w, b)) in params.iter().enumerate() {
            let in_dim = if l == 0 { input_dim } else { hidden_dim };
            let w_ok = w.shape() == [in_dim + hidden_dim, 4 * hidden_dim];
            let b_ok = b.shape() == [1, 4 * hidden_dim];
            if !w_ok || !b_ok {
                return Err(Error::ShapeMismatch {
                    op: "lstm_params",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(LstmStack {
            layers: params.into_iter().map(|(w, b)| LstmLayer { w, b }).collect(),
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Run the stack over a `T x input_dim` sequence; returns the last
    /// layer's hidden sequence `T x hidden_dim`.
    pub fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        if seq.shape().len() != 2 || seq.shape()[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "lstm_forward",
                lhs: seq.shape().to_vec(),
                rhs: vec![seq.num_rows(), self.input_dim],
            });
        }
        let t_len = seq.shape()[0];
        if t_len == 0 {
            return Err(Error::InvalidShape {
                op: "lstm_forward",
                message: "sequence must have at least one frame".to_string(),
            });
        }
        let h_dim = self.hidden_dim;
        let mut layer_in = seq.clone();
        for layer in &self.layers {
            let mut h = Tensor::zeros(&[1, h_dim]);
            let mut c = Tensor::zeros(&[1, h_dim]);
            let mut outputs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let x_t = layer_in.slice(0, t, 1)?;
                let joined = Tensor::concat(&[&x_t, &h], 1)?;
                let gates = joined.matmul(&layer.w)?.add(&layer.b)?;
                let i = gates.slice(1, 0, h_dim)?.sigmoid();
                let f = gates.slice(1, h_dim, h_dim)?.sigmoid();
                let g = gates.slice(1, 2 * h_dim, h_dim)?.tanh();
                let o = gates.slice(1, 3 * h_dim, h_dim)?.sigmoid();
                c = f.mul(&c)?.add(&i.mul(&g)?)?;
                h = o.mul(&c.tanh())?;
                outputs.push(h.clone());
            }
            let refs: Vec<&Tensor> = outputs.iter().collect();
            layer_in = Tensor::concat(&refs, 0)?;
        }
        Ok(layer_in)
    }

    pub fn for_each_param(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(format!("{prefix}.{l}.w"), &layer.w);
            f(format!("{prefix}.{l}.b"), &layer.b);
        }
    }

    pub fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.{l}.w"), &mut layer.w);
            f(format!("{prefix}.{l}.b"), &mut layer.b);
        }
    }

    fn bind(&self, graph: &Graph) -> LstmStack {
        LstmStack {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: graph.leaf(&l.w),
                    b: graph.leaf(&l.b),
                })
                .collect(),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Bind a whole component to a graph so its parameters become tracked leaves.
pub(crate) trait Bind {
    fn bind(&self, graph: &Graph) -> Self;
}

impl Bind for Linear {
    fn bind(&self, graph: &Graph) -> Linear {
        Linear::bind(self, graph)
    }
}

impl Bind for LstmStack {
    fn bind(&self, graph: &Graph) -> LstmStack {
        LstmStack::bind(self, graph)
    }
}

/// Concatenate each frame with its +-context neighbours along the feature
/// axis; out-of-range neighbours replicate the edge frame. Output is
/// `T x (2*context+1)*D` with the centre block equal to the input frame.
pub fn splice(seq: &Tensor, context: usize) -> Result<Tensor> {
    if seq.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op: "splice",
            message: format!("expected a T x D matrix, got {:?}", seq.shape()),
        });
    }
    let t_len = seq.shape()[0];
    if t_len == 0 {
        return Err(Error::InvalidShape {
            op: "splice",
            message: "sequence must have at least one frame".to_string(),
        });
    }
    if context == 0 {
        return Ok(seq.clone());
    }
    let mut blocks = Vec::with_capacity(2 * context + 1);
    for shift in -(context as isize)..=(context as isize) {
        blocks.push(shifted_rows(seq, shift)?);
    }
    let refs: Vec<&Tensor> = blocks.iter().collect();
    Tensor::concat(&refs, 1)
}

/// Rows moved by `shift` with edge replication: row t of the result is
/// row clamp(t+shift) of the input.
fn shifted_rows(seq: &Tensor, shift: isize) -> Result<Tensor> {
    let t_len = seq.shape()[0] as isize;
    if shift == 0 {
        return Ok(seq.clone());
    }
    let pad = shift.unsigned_abs().min(t_len as usize);
    let kept = (t_len as usize) - pad;
    let mut parts: Vec<Tensor> = Vec::new();
    if shift < 0 {
        let first = seq.slice(0, 0, 1)?;
        for _ in 0..pad {
            parts.push(first.clone());
        }
        if kept > 0 {
            parts.push(seq.slice(0, 0, kept)?);
        }
    } else {
        if kept > 0 {
            parts.push(seq.slice(0, pad, kept)?);
        }
        let last = seq.slice(0, (t_len as usize) - 1, 1)?;
        for _ in 0..pad {
            parts.push(last.clone());
        }
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_weight_lstm_outputs_zero() {
        let h = 3;
        let params = vec![(Tensor::zeros(&[2 + h, 4 * h]), Tensor::zeros(&[1, 4 * h]))];
        let stack = LstmStack::from_params(2, h, params).unwrap();
        let seq = matrix(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let out = stack.forward(&seq).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_is_causal() {
        let stack = LstmStack::init(9, "t", 1, 2, 3);
        let first = matrix(&[&[0.4, -0.7]]);
        let both = matrix(&[&[0.4, -0.7], &[1.0, 1.0]]);
        let out1 = stack.forward(&first).unwrap();
        let out2 = stack.forward(&both).unwrap();
        assert_eq!(out1.row(0), out2.row(0));
    }

    #[test]
    fn lstm_output_shape_tracks_sequence_length() {
        let stack = LstmStack::init(3, "t", 2, 4, 5);
        for t in [1usize, 2, 7] {
            let seq = Tensor::filled(&[t, 4], 0.3);
            assert_eq!(stack.forward(&seq).unwrap().shape(), &[t, 5]);
        }
    }

    #[test]
    fn lstm_rejects_wrong_input_dim() {
        let stack = LstmStack::init(3, "t", 1, 4, 5);
        assert!(stack.forward(&Tensor::zeros(&[2, 3])).is_err());
        assert!(stack.forward(&Tensor::zeros(&[0, 4])).is_err());
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let eye = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let head = Linear::new(eye, Tensor::zeros(&[1, 2])).unwrap();
        let seq = matrix(&[&[3.0, -1.0], &[0.25, 8.0]]);
        assert_eq!(head.forward(&seq).unwrap().data(), seq.data());
    }

    #[test]
    fn linear_zero_weight_repeats_bias() {
        let head = Linear::new(
            Tensor::zeros(&[3, 2]),
            Tensor::from_vec(vec![0.5, -2.0], &[1, 2]).unwrap(),
        )
        .unwrap();
        let out = head.forward(&Tensor::filled(&[4, 3], 9.0)).unwrap();
        for t in 0..4 {
            assert_eq!(out.row(t), &[0.5, -2.0]);
        }
    }

    #[test]
    fn linear_matches_matmul_plus_add() {
        let head = Linear::init(11, "t", 3, 2);
        let seq = matrix(&[&[0.1, -0.4, 2.0], &[1.5, 0.0, -0.3]]);
        let by_head = head.forward(&seq).unwrap();
        let by_hand = seq.matmul(&head.weight).unwrap();
        // Bias is zero at init, so the affine map reduces to the matmul.
        assert_eq!(by_head.data(), by_hand.data());
    }

    #[test]
    fn splice_context_zero_is_identity() {
        let seq = matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(splice(&seq, 0).unwrap().data(), seq.data());
    }

    #[test]
    fn splice_single_frame_replicates_edges() {
        let seq = matrix(&[&[7.0, -3.0]]);
        let out = splice(&seq, 2).unwrap();
        assert_eq!(out.shape(), &[1, 10]);
        assert_eq!(
            out.data(),
            &[7.0, -3.0, 7.0, -3.0, 7.0, -3.0, 7.0, -3.0, 7.0, -3.0]
        );
    }

    #[test]
    fn splice_three_frames_context_one() {
        let (a, b, c) = ([1.0, 10.0], [2.0, 20.0], [3.0, 30.0]);
        let seq = matrix(&[&a, &b, &c]);
        let out = splice(&seq, 1).unwrap();
        assert_eq!(out.shape(), &[3, 6]);
        assert_eq!(out.row(0), &[1.0, 10.0, 1.0, 10.0, 2.0, 20.0]);
        assert_eq!(out.row(1), &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        assert_eq!(out.row(2), &[2.0, 20.0, 3.0, 30.0, 3.0, 30.0]);
    }

    #[test]
    fn splice_center_block_is_the_input_frame() {
        let seq = Tensor::from_vec((0..12).map(f64::from).collect(), &[4, 3]).unwrap();
        let context = 2;
        let out = splice(&seq, context).unwrap();
        for t in 0..4 {
            assert_eq!(&out.row(t)[context * 3..(context + 1) * 3], seq.row(t));
        }
    }
}
