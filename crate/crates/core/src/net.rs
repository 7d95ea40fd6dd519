//! The gated DGM network.
//!
//! With `x` the input row and `S` the hidden state:
//!
//! ```text
//! S1      = tanh(x W1 + b1)
//! Z, G, R = tanh(x U + S W + b)            (one triple of weights per gate)
//! H       = tanh(x Uh + (S * R) Wh + bh)
//! S'      = (1 - G) * H + Z * S
//! f       = S W_out + b_out
//! ```
//!
//! `*` is the element-wise product. Every gate in every layer owns its own
//! bias, including `bh`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, tanh, Tape, Tensor, Var};
use crate::error::{Error, Result};

const GATES: [char; 4] = ['z', 'g', 'r', 'h'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    /// Nodes per hidden layer.
    pub width: usize,
    /// Number of gated layers.
    pub layers: usize,
}

impl NetworkShape {
    pub fn new(input_dim: usize, width: usize, layers: usize) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::Config(format!(
                "network needs positive input_dim and width, got {input_dim} and {width}"
            )));
        }
        Ok(NetworkShape {
            input_dim,
            width,
            layers,
        })
    }

    /// 50 nodes, 3 gated layers.
    pub fn with_defaults(input_dim: usize) -> Self {
        NetworkShape {
            input_dim,
            width: 50,
            layers: 3,
        }
    }

    /// Name, rows and columns of each parameter block in storage order.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let (d, m) = (self.input_dim, self.width);
        let mut out = vec![("W1".to_string(), d, m), ("b1".to_string(), 1, m)];
        for l in 1..=self.layers {
            for g in GATES {
                out.push((format!("U{g}{l}"), d, m));
                out.push((format!("W{g}{l}"), m, m));
                out.push((format!("b{g}{l}"), 1, m));
            }
        }
        out.push(("W_out".to_string(), m, 1));
        out.push(("b_out".to_string(), 1, 1));
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    shape: NetworkShape,
    blocks: Vec<Tensor>,
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Self {
        let blocks = shape
            .blocks()
            .into_iter()
            .map(|(_, r, c)| Tensor::zeros(r, c))
            .collect();
        NetworkParams { shape, blocks }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init_xavier(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = shape
            .blocks()
            .into_iter()
            .map(|(name, r, c)| {
                if name.starts_with('b') {
                    Tensor::zeros(r, c)
                } else {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| rng.random_range(-bound..=bound))
                }
            })
            .collect();
        NetworkParams { shape, blocks }
    }

    pub fn from_blocks(shape: NetworkShape, blocks: Vec<Tensor>) -> Result<Self> {
        let expected = shape.blocks();
        if expected.len() != blocks.len() {
            return Err(Error::Shape {
                op: "network blocks",
                lhs: vec![expected.len()],
                rhs: vec![blocks.len()],
            });
        }
        for ((_, r, c), b) in expected.iter().zip(&blocks) {
            if b.shape() != [*r, *c] {
                return Err(Error::Shape {
                    op: "network blocks",
                    lhs: vec![*r, *c],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(NetworkParams { shape, blocks })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Tensor] {
        &mut self.blocks
    }

    pub fn block_name(&self, i: usize) -> String {
        self.shape
            .blocks()
            .get(i)
            .map(|b| b.0.clone())
            .unwrap_or_else(|| format!("#{i}"))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Tensor::is_finite)
    }

    pub fn eval(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.shape.input_dim {
            return Err(Error::Dimension {
                expected: self.shape.input_dim,
                found: input.len(),
            });
        }
        let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
        Ok(self.eval_batch(&x)?[0])
    }

    /// Evaluates every row of `inputs` (`n x input_dim`).
    ///
    /// Performs the same floating-point operations in the same order as the
    /// tape built by [`build_network`], so results agree bit-for-bit.
    pub fn eval_batch(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = (inputs.rows(), inputs.cols());
        if d != self.shape.input_dim {
            return Err(Error::Dimension {
                expected: self.shape.input_dim,
                found: d,
            });
        }
        let m = self.shape.width;
        let x = inputs.data();
        let b = &self.blocks;

        let mut s = vec![0.0; n * m];
        gemm(n, d, m, x, false, b[0].data(), false, 0.0, &mut s);
        add_bias_tanh(&mut s, b[1].data());

        let mut xu = vec![0.0; n * m];
        let mut sw = vec![0.0; n * m];
        let mut gates = [vec![0.0; n * m], vec![0.0; n * m], vec![0.0; n * m]];
        let mut sr = vec![0.0; n * m];
        for l in 0..self.shape.layers {
            let base = 2 + l * 12;
            for (gi, gate) in gates.iter_mut().enumerate() {
                let k = base + gi * 3;
                gemm(n, d, m, x, false, b[k].data(), false, 0.0, &mut xu);
                gemm(n, m, m, &s, false, b[k + 1].data(), false, 0.0, &mut sw);
                for ((o, u), w) in gate.iter_mut().zip(&xu).zip(&sw) {
                    *o = u + w;
                }
                add_bias_tanh(gate, b[k + 2].data());
            }
            let [z, g, r] = &gates;
            for ((o, si), ri) in sr.iter_mut().zip(&s).zip(r) {
                *o = si * ri;
            }
            let k = base + 9;
            gemm(n, d, m, x, false, b[k].data(), false, 0.0, &mut xu);
            gemm(n, m, m, &sr, false, b[k + 1].data(), false, 0.0, &mut sw);
            let mut h = vec![0.0; n * m];
            for ((o, u), w) in h.iter_mut().zip(&xu).zip(&sw) {
                *o = u + w;
            }
            add_bias_tanh(&mut h, b[k + 2].data());
            for i in 0..n * m {
                let a = (1.0 - g[i]) * h[i];
                let c = z[i] * s[i];
                s[i] = a + c;
            }
        }

        let k = b.len() - 2;
        let mut out = vec![0.0; n];
        gemm(n, m, 1, &s, false, b[k].data(), false, 0.0, &mut out);
        let bias = b[k + 1].data()[0];
        out.iter_mut().for_each(|o| *o += bias);
        Ok(out)
    }

    /// Reparametrises so the new network at `x` equals the old one at
    /// `x + shift * e_coord`, by folding the shift into every bias that
    /// sits next to an input matrix.
    pub fn shift_input(&mut self, coord: usize, shift: f64) -> Result<()> {
        if coord >= self.shape.input_dim {
            return Err(Error::Dimension {
                expected: self.shape.input_dim,
                found: coord + 1,
            });
        }
        let mut pairs = vec![(0, 1)];
        for l in 0..self.shape.layers {
            let base = 2 + l * 12;
            pairs.extend((0..4).map(|g| (base + g * 3, base + g * 3 + 2)));
        }
        for (u, b) in pairs {
            let row = self.blocks[u].row(coord).to_vec();
            for (bias, w) in self.blocks[b].data_mut().iter_mut().zip(row) {
                *bias += shift * w;
            }
        }
        Ok(())
    }

    pub fn input_derivs(
        &self,
        input: &[f64],
        request: &DerivRequest,
        fd_step: f64,
    ) -> Result<InputDerivs> {
        if input.len() != self.shape.input_dim {
            return Err(Error::Dimension {
                expected: self.shape.input_dim,
                found: input.len(),
            });
        }
        input_derivs(self, input, request, fd_step)
    }
}

fn add_bias_tanh(v: &mut [f64], bias: &[f64]) {
    let m = bias.len();
    for row in v.chunks_mut(m) {
        for (o, c) in row.iter_mut().zip(bias) {
            *o = tanh(*o + c);
        }
    }
}

/// Records the network on `tape` for the input rows `x`.
///
/// Returns the parameter vars in block order and the `n x 1` output.
pub fn build_network(tape: &mut Tape, x: Var, shape: NetworkShape) -> Result<(Vec<Var>, Var)> {
    let blocks = shape.blocks();
    let params: Vec<Var> = blocks.iter().map(|(_, r, c)| tape.param(*r, *c)).collect();

    let gate = |tape: &mut Tape, u: Var, w: Var, b: Var, state: Var| -> Result<Var> {
        let xu = tape.matmul(x, u)?;
        let sw = tape.matmul(state, w)?;
        let sum = tape.add(xu, sw)?;
        let pre = tape.add_bias(sum, b)?;
        tape.tanh(pre)
    };

    let s1 = tape.matmul(x, params[0])?;
    let s1 = tape.add_bias(s1, params[1])?;
    let mut s = tape.tanh(s1)?;
    for l in 0..shape.layers {
        let p = &params[2 + l * 12..2 + (l + 1) * 12];
        let z = gate(tape, p[0], p[1], p[2], s)?;
        let g = gate(tape, p[3], p[4], p[5], s)?;
        let r = gate(tape, p[6], p[7], p[8], s)?;
        let sr = tape.mul(s, r)?;
        let h = gate(tape, p[9], p[10], p[11], sr)?;
        let one_minus_g = tape.affine(g, -1.0, 1.0)?;
        let a = tape.mul(one_minus_g, h)?;
        let c = tape.mul(z, s)?;
        s = tape.add(a, c)?;
    }
    let k = params.len() - 2;
    let out = tape.matmul(s, params[k])?;
    let out = tape.add_bias(out, params[k + 1])?;
    Ok((params, out))
}

/// A scalar function of an input vector: a trained network or an analytic
/// stand-in used to check downstream numerics.
pub trait ScalarField {
    fn input_dim(&self) -> usize;

    fn eval_point(&self, input: &[f64]) -> f64;

    fn eval_points(&self, points: &Tensor) -> Vec<f64> {
        (0..points.rows())
            .map(|r| self.eval_point(points.row(r)))
            .collect()
    }
}

impl ScalarField for NetworkParams {
    fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    fn eval_point(&self, input: &[f64]) -> f64 {
        self.eval(input).expect("input dimension checked by caller")
    }

    fn eval_points(&self, points: &Tensor) -> Vec<f64> {
        self.eval_batch(points)
            .expect("input dimension checked by caller")
    }
}

/// Closure-backed [`ScalarField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64> ScalarField for FnField<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn eval_point(&self, input: &[f64]) -> f64 {
        (self.f)(input)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DerivRequest {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub cross: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputDerivs {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub cross: Vec<f64>,
}

/// Central-difference input derivatives with step `h`.
///
/// First: `(f(x+h) - f(x-h)) / 2h`; second: `(f(x+h) - 2f(x) + f(x-h)) / h^2`;
/// cross: `(f(++) - f(+-) - f(-+) + f(--)) / 4h^2`.
pub fn input_derivs(
    f: &dyn ScalarField,
    input: &[f64],
    request: &DerivRequest,
    h: f64,
) -> Result<InputDerivs> {
    let dim = f.input_dim();
    if input.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: input.len(),
        });
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!("fd_step must be positive, got {h}")));
    }
    let coords = request
        .first
        .iter()
        .chain(&request.second)
        .chain(request.cross.iter().flat_map(|(a, b)| [a, b]));
    for &c in coords {
        if c >= dim {
            return Err(Error::Dimension {
                expected: dim,
                found: c + 1,
            });
        }
    }

    let mut points: Vec<Vec<f64>> = vec![input.to_vec()];
    let shifted = |moves: &[(usize, f64)]| {
        let mut p = input.to_vec();
        for &(c, d) in moves {
            p[c] += d;
        }
        p
    };
    for &c in request.first.iter().chain(&request.second) {
        points.push(shifted(&[(c, h)]));
        points.push(shifted(&[(c, -h)]));
    }
    for &(a, b) in &request.cross {
        for (sa, sb) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
            points.push(shifted(&[(a, sa), (b, sb)]));
        }
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let vals = f.eval_points(&Tensor::new(vec![points.len(), dim], flat)?);

    let centre = vals[0];
    let mut k = 1;
    let mut out = InputDerivs::default();
    for _ in &request.first {
        out.first.push((vals[k] - vals[k + 1]) / (2.0 * h));
        k += 2;
    }
    for _ in &request.second {
        out.second
            .push((vals[k] - 2.0 * centre + vals[k + 1]) / (h * h));
        k += 2;
    }
    for _ in &request.cross {
        out.cross
            .push((vals[k] - vals[k + 1] - vals[k + 2] + vals[k + 3]) / (4.0 * h * h));
        k += 4;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_closed_form() {
        // W1,b1: d*M + M; per layer 4 gates of (d*M + M*M + M); out: M + 1
        let (d, m, l) = (4usize, 50usize, 3usize);
        let expected = d * m + m + l * 4 * (d * m + m * m + m) + m + 1;
        assert_eq!(expected, 33301);
        assert_eq!(NetworkShape::new(d, m, l).unwrap().param_count(), expected);
    }

    #[test]
    fn xavier_is_seeded_and_bounded() {
        let shape = NetworkShape::new(4, 20, 2).unwrap();
        let a = NetworkParams::init_xavier(shape, 11);
        let b = NetworkParams::init_xavier(shape, 11);
        let c = NetworkParams::init_xavier(shape, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for ((name, r, cols), t) in shape.blocks().iter().zip(a.blocks()) {
            if name.starts_with('b') {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let bound = (6.0 / (r + cols) as f64).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn zero_params_give_zero() {
        let p = NetworkParams::zeros(NetworkShape::new(3, 5, 2).unwrap());
        assert_eq!(p.eval(&[0.3, -1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = NetworkParams::zeros(NetworkShape::new(3, 5, 1).unwrap());
        assert!(matches!(
            p.eval(&[1.0, 2.0]),
            Err(Error::Dimension {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn finite_on_bounded_inputs() {
        let p = NetworkParams::init_xavier(NetworkShape::with_defaults(4), 3);
        for k in 0..50 {
            let x: Vec<f64> = (0..4)
                .map(|i| 10.0 * ((k * 4 + i) as f64 * 0.77).sin())
                .collect();
            assert!(p.eval(&x).unwrap().is_finite());
        }
    }

    #[test]
    fn no_gated_layers_is_affine_in_first_state() {
        let shape = NetworkShape::new(2, 3, 0).unwrap();
        let p = NetworkParams::init_xavier(shape, 5);
        let x = [0.4, -0.7];
        let b = p.blocks();
        let mut expected = b[3].data()[0];
        for j in 0..3 {
            let pre = x[0] * b[0].get(0, j) + x[1] * b[0].get(1, j) + b[1].data()[j];
            expected += pre.tanh() * b[2].get(j, 0);
        }
        assert!((p.eval(&x).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn tape_matches_plain_eval_bitwise() {
        let shape = NetworkShape::new(4, 7, 2).unwrap();
        let p = NetworkParams::init_xavier(shape, 9);
        let x = Tensor::from_fn(5, 4, |r, c| ((r * 4 + c) as f64 * 0.37).cos());
        let mut tape = Tape::new();
        let xi = tape.input(5, 4);
        let (_, out) = build_network(&mut tape, xi, shape).unwrap();
        let feeds: Vec<&Tensor> = p.blocks().iter().collect();
        tape.forward(&[&x], &feeds).unwrap();
        assert_eq!(tape.value(out).data(), p.eval_batch(&x).unwrap().as_slice());
    }

    #[test]
    fn fd_slope_is_stable_under_halving() {
        let p = NetworkParams::init_xavier(NetworkShape::with_defaults(4), 21);
        let x = [0.3, 0.1, -0.2, 0.25];
        let req = DerivRequest {
            first: vec![1],
            ..Default::default()
        };
        let d1 = p.input_derivs(&x, &req, 1e-3).unwrap().first[0];
        let d2 = p.input_derivs(&x, &req, 5e-4).unwrap().first[0];
        assert!((d1 - d2).abs() < 1e-6 * (1.0 + d1.abs()));
        // a 1e-7 nudge moves the output by about slope * 1e-7
        let mut xp = x;
        xp[1] += 1e-7;
        let diff = p.eval(&xp).unwrap() - p.eval(&x).unwrap();
        assert!((diff - d2 * 1e-7).abs() < 1e-12);
    }

    #[test]
    fn quadratic_is_exact() {
        let f = FnField::new(2, |x: &[f64]| x[1] * x[1]);
        let req = DerivRequest {
            first: vec![1],
            second: vec![1],
            ..Default::default()
        };
        let d = input_derivs(&f, &[0.0, 3.0], &req, 1e-3).unwrap();
        assert!((d.first[0] - 6.0).abs() < 1e-9);
        assert!((d.second[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn sine_second_derivative_at_zero() {
        let f = FnField::new(2, |x: &[f64]| x[1].sin());
        let req = DerivRequest {
            second: vec![1],
            ..Default::default()
        };
        let h = 1e-3;
        let d = input_derivs(&f, &[0.0, 0.0], &req, h).unwrap();
        assert!(d.second[0].abs() <= h * h);
    }

    #[test]
    fn bilinear_cross_is_exact() {
        let f = FnField::new(2, |x: &[f64]| x[0] * x[1]);
        let req = DerivRequest {
            cross: vec![(0, 1)],
            ..Default::default()
        };
        let d = input_derivs(&f, &[0.7, -0.2], &req, 1e-3).unwrap();
        assert!((d.cross[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn second_difference_converges_at_order_two() {
        let f = FnField::new(1, |x: &[f64]| x[0].exp());
        let req = DerivRequest {
            second: vec![0],
            ..Default::default()
        };
        let x = [0.3];
        let err = |h: f64| (input_derivs(&f, &x, &req, h).unwrap().second[0] - 0.3f64.exp()).abs();
        let ratio = err(0.04) / err(0.02);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_step_and_coord() {
        let f = FnField::new(2, |x: &[f64]| x[0]);
        let req = DerivRequest {
            first: vec![0],
            ..Default::default()
        };
        assert!(input_derivs(&f, &[0.0, 0.0], &req, 0.0).is_err());
        let bad = DerivRequest {
            first: vec![2],
            ..Default::default()
        };
        assert!(input_derivs(&f, &[0.0, 0.0], &bad, 1e-3).is_err());
    }

    #[test]
    fn shifted_input_matches_shifted_evaluation() {
        let mut net = NetworkParams::init_xavier(NetworkShape::new(3, 6, 2).unwrap(), 8);
        let before = net.clone();
        net.shift_input(0, 0.4).unwrap();
        for p in [[0.1, -0.3, 0.5], [0.7, 0.2, -0.9]] {
            let moved = [p[0] + 0.4, p[1], p[2]];
            assert!((net.eval(&p).unwrap() - before.eval(&moved).unwrap()).abs() < 1e-14);
        }
        assert!(net.shift_input(3, 0.1).is_err());
    }
}
