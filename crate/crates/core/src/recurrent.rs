//! GRU cell, directional sequence runs, and exact backprop through time.
//!
//! Cell (reset applied before the candidate's recurrent product):
//!
//! ```text
//! z  = σ(x W_z + h̃ U_z + b_z)
//! r  = σ(x W_r + h̃ U_r + b_r)
//! c  = tanh(x W_h + (r ⊙ h̃) U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```
//!
//! where `h̃` is `h` multiplied by the per-sequence recurrent dropout mask
//! during training, and `h` itself otherwise.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numerics::{
    mat_vec_acc, outer_acc, sigmoid_scalar, vec_mat_acc, Parameter, Parameterized, Tensor,
};

/// Default hidden size.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

/// One GRU direction: nine tensors, `W_*` are `E × D`, `U_*` are `D × D`, `b_*` have length `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParameters {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Parameter,
    pub u_z: Parameter,
    pub b_z: Parameter,
    pub w_r: Parameter,
    pub u_r: Parameter,
    pub b_r: Parameter,
    pub w_h: Parameter,
    pub u_h: Parameter,
    pub b_h: Parameter,
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Parameter {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Parameter::new(Tensor::matrix(rows, cols, values).expect("sized"))
}

impl GruParameters {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Parameter::zeros(&[input_dim, hidden_dim]);
        let u = || Parameter::zeros(&[hidden_dim, hidden_dim]);
        let b = || Parameter::zeros(&[hidden_dim]);
        GruParameters {
            input_dim,
            hidden_dim,
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut dyn RngCore) -> Self {
        let mut p = GruParameters::zeros(input_dim, hidden_dim);
        p.w_z = glorot(input_dim, hidden_dim, rng);
        p.u_z = glorot(hidden_dim, hidden_dim, rng);
        p.w_r = glorot(input_dim, hidden_dim, rng);
        p.u_r = glorot(hidden_dim, hidden_dim, rng);
        p.w_h = glorot(input_dim, hidden_dim, rng);
        p.u_h = glorot(hidden_dim, hidden_dim, rng);
        p
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Parameter); 9] {
        [
            ("W_z", &self.w_z),
            ("U_z", &self.u_z),
            ("b_z", &self.b_z),
            ("W_r", &self.w_r),
            ("U_r", &self.u_r),
            ("b_r", &self.b_r),
            ("W_h", &self.w_h),
            ("U_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut Parameter); 9] {
        [
            ("W_z", &mut self.w_z),
            ("U_z", &mut self.u_z),
            ("b_z", &mut self.b_z),
            ("W_r", &mut self.w_r),
            ("U_r", &mut self.u_r),
            ("b_r", &mut self.b_r),
            ("W_h", &mut self.w_h),
            ("U_h", &mut self.u_h),
            ("b_h", &mut self.b_h),
        ]
    }
}

impl Parameterized for GruParameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        for (n, p) in self.tensors() {
            f(n, p);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        for (n, p) in self.tensors_mut() {
            f(n, p);
        }
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / p_keep`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub scale: Vec<f64>,
    pub p_keep: f64,
}

impl DropoutMask {
    pub fn sample(len: usize, drop_prob: f64, rng: &mut dyn RngCore) -> Self {
        let p_keep = 1.0 - drop_prob;
        let scale = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < p_keep {
                    1.0 / p_keep
                } else {
                    0.0
                }
            })
            .collect();
        DropoutMask { scale, p_keep }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scale).map(|(a, s)| a * s).collect()
    }
}

/// Training-time randomness for one forward pass.
pub struct Dropout<'a> {
    pub rng: &'a mut dyn RngCore,
    pub recurrent: f64,
    pub head: f64,
}

impl Dropout<'_> {
    pub(crate) fn recurrent_mask(&mut self, len: usize) -> Option<DropoutMask> {
        (self.recurrent > 0.0).then(|| DropoutMask::sample(len, self.recurrent, self.rng))
    }

    pub(crate) fn head_mask(&mut self, len: usize) -> Option<DropoutMask> {
        (self.head > 0.0).then(|| DropoutMask::sample(len, self.head, self.rng))
    }
}

/// Activations cached for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    /// `h_prev` after the recurrent mask.
    pub h_in: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Everything needed to back-propagate one directional run.
#[derive(Clone, Debug, PartialEq)]
pub struct GruTrace {
    pub direction: Direction,
    /// Steps in processing order.
    pub steps: Vec<StepCache>,
    pub mask: Option<DropoutMask>,
}

impl GruTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sequence position (0-based) handled by processing step `s`.
    fn position(&self, s: usize) -> usize {
        match self.direction {
            Direction::LeftToRight => s,
            Direction::RightToLeft => self.steps.len() - 1 - s,
        }
    }
}

fn check_shapes(params: &GruParameters, x: &[f64], h: &[f64]) -> Result<()> {
    if x.len() != params.input_dim || h.len() != params.hidden_dim {
        return Err(Error::Dimension(format!(
            "GRU(E={}, D={}) got input of length {} and state of length {}",
            params.input_dim,
            params.hidden_dim,
            x.len(),
            h.len()
        )));
    }
    Ok(())
}

/// One GRU step.
pub fn gru_cell_forward(
    params: &GruParameters,
    x: &[f64],
    h_prev: &[f64],
    rec_mask: Option<&DropoutMask>,
) -> Result<(Vec<f64>, StepCache)> {
    check_shapes(params, x, h_prev)?;
    Ok(cell_forward_unchecked(params, x, h_prev, rec_mask))
}

fn cell_forward_unchecked(
    params: &GruParameters,
    x: &[f64],
    h_prev: &[f64],
    rec_mask: Option<&DropoutMask>,
) -> (Vec<f64>, StepCache) {
    let h_in = match rec_mask {
        Some(m) => m.apply(h_prev),
        None => h_prev.to_vec(),
    };
    let gate = |w: &Parameter, u: &Parameter, b: &Parameter, hh: &[f64], act: fn(f64) -> f64| {
        let mut a = b.value.values().to_vec();
        vec_mat_acc(x, w.value.values(), &mut a);
        vec_mat_acc(hh, u.value.values(), &mut a);
        a.iter_mut().for_each(|v| *v = act(*v));
        a
    };
    let z = gate(&params.w_z, &params.u_z, &params.b_z, &h_in, sigmoid_scalar);
    let r = gate(&params.w_r, &params.u_r, &params.b_r, &h_in, sigmoid_scalar);
    let rh: Vec<f64> = r.iter().zip(&h_in).map(|(a, b)| a * b).collect();
    let c = gate(&params.w_h, &params.u_h, &params.b_h, &rh, f64::tanh);
    let h: Vec<f64> = (0..h_prev.len())
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * c[k])
        .collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        h_in,
        z,
        r,
        c,
        h: h.clone(),
    };
    (h, cache)
}

/// Output of a directional run.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalRun {
    /// `states[j]` is the state after consuming position `j` (0-based),
    /// in position order for both directions.
    pub states: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
    pub trace: GruTrace,
}

/// Run over the rows of `inputs` (`N × E`) in the given direction from a zero state.
///
/// With `dropout`, one recurrent mask is sampled for the whole sequence.
pub fn run_directional(
    params: &GruParameters,
    inputs: &Tensor,
    direction: Direction,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<DirectionalRun> {
    let n = inputs.rows();
    if n > 0 && inputs.cols() != params.input_dim {
        return Err(Error::Dimension(format!(
            "inputs have width {}, GRU expects {}",
            inputs.cols(),
            params.input_dim
        )));
    }
    let d = params.hidden_dim;
    let mask = dropout.and_then(|dr| dr.recurrent_mask(d));
    let mut h = vec![0.0; d];
    let mut steps = Vec::with_capacity(n);
    let mut states = vec![Vec::new(); n];
    for s in 0..n {
        let pos = match direction {
            Direction::LeftToRight => s,
            Direction::RightToLeft => n - 1 - s,
        };
        let (h_next, cache) = cell_forward_unchecked(params, inputs.row(pos), &h, mask.as_ref());
        steps.push(cache);
        states[pos] = h_next.clone();
        h = h_next;
    }
    Ok(DirectionalRun {
        states,
        final_state: h,
        trace: GruTrace {
            direction,
            steps,
            mask,
        },
    })
}

/// Back-propagate through a directional run.
///
/// `upstream` is `N × D` in position order: the loss gradient with respect to
/// each emitted state. Parameter gradients accumulate into `params`; the
/// return value is the gradient with respect to the inputs (`N × E`).
pub fn gru_backward(
    params: &mut GruParameters,
    trace: &GruTrace,
    upstream: &Tensor,
) -> Result<Tensor> {
    backward_impl(params, trace, upstream, true).map(|g| g.expect("input gradients requested"))
}

/// As [`gru_backward`], skipping the input-gradient computation.
pub fn gru_backward_params(
    params: &mut GruParameters,
    trace: &GruTrace,
    upstream: &Tensor,
) -> Result<()> {
    backward_impl(params, trace, upstream, false).map(|_| ())
}

/// `N × D` upstream that is zero except at the run's final state.
pub fn final_state_upstream(trace: &GruTrace, hidden_dim: usize, grad: &[f64]) -> Tensor {
    let n = trace.len();
    let mut up = Tensor::zeros(&[n, hidden_dim]);
    if n > 0 {
        let pos = trace.position(n - 1);
        up.row_mut(pos).copy_from_slice(grad);
    }
    up
}

fn backward_impl(
    params: &mut GruParameters,
    trace: &GruTrace,
    upstream: &Tensor,
    want_inputs: bool,
) -> Result<Option<Tensor>> {
    let n = trace.len();
    let d = params.hidden_dim;
    let e = params.input_dim;
    if upstream.rows() != n || (n > 0 && upstream.cols() != d) {
        return Err(Error::Dimension(format!(
            "trace has {n} steps of width {d}, upstream has shape {:?}",
            upstream.shape()
        )));
    }
    let mut dx_all = want_inputs.then(|| Tensor::zeros(&[n, e]));
    let mut carry = vec![0.0; d];
    let mut da_z = vec![0.0; d];
    let mut da_r = vec![0.0; d];
    let mut da_c = vec![0.0; d];
    for s in (0..n).rev() {
        let st = &trace.steps[s];
        let pos = trace.position(s);
        let dh: Vec<f64> = upstream
            .row(pos)
            .iter()
            .zip(&carry)
            .map(|(a, b)| a + b)
            .collect();

        let mut dh_prev = vec![0.0; d];
        for k in 0..d {
            let dz = dh[k] * (st.c[k] - st.h_prev[k]);
            let dc = dh[k] * st.z[k];
            dh_prev[k] = dh[k] * (1.0 - st.z[k]);
            da_z[k] = dz * st.z[k] * (1.0 - st.z[k]);
            da_c[k] = dc * (1.0 - st.c[k] * st.c[k]);
        }

        // candidate
        let rh: Vec<f64> = st.r.iter().zip(&st.h_in).map(|(a, b)| a * b).collect();
        outer_acc(&st.x, &da_c, params.w_h.gradient.values_mut());
        outer_acc(&rh, &da_c, params.u_h.gradient.values_mut());
        add_into(params.b_h.gradient.values_mut(), &da_c);
        let mut d_rh = vec![0.0; d];
        mat_vec_acc(params.u_h.value.values(), &da_c, &mut d_rh);

        let mut dh_in = vec![0.0; d];
        for k in 0..d {
            let dr = d_rh[k] * st.h_in[k];
            da_r[k] = dr * st.r[k] * (1.0 - st.r[k]);
            dh_in[k] = d_rh[k] * st.r[k];
        }

        outer_acc(&st.x, &da_z, params.w_z.gradient.values_mut());
        outer_acc(&st.h_in, &da_z, params.u_z.gradient.values_mut());
        add_into(params.b_z.gradient.values_mut(), &da_z);
        mat_vec_acc(params.u_z.value.values(), &da_z, &mut dh_in);

        outer_acc(&st.x, &da_r, params.w_r.gradient.values_mut());
        outer_acc(&st.h_in, &da_r, params.u_r.gradient.values_mut());
        add_into(params.b_r.gradient.values_mut(), &da_r);
        mat_vec_acc(params.u_r.value.values(), &da_r, &mut dh_in);

        if let Some(dx_all) = dx_all.as_mut() {
            let dx = dx_all.row_mut(pos);
            mat_vec_acc(params.w_z.value.values(), &da_z, dx);
            mat_vec_acc(params.w_r.value.values(), &da_r, dx);
            mat_vec_acc(params.w_h.value.values(), &da_c, dx);
        }

        match &trace.mask {
            Some(m) => {
                for k in 0..d {
                    dh_prev[k] += dh_in[k] * m.scale[k];
                }
            }
            None => add_into(&mut dh_prev, &dh_in),
        }
        carry = dh_prev;
    }
    Ok(dx_all)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(vals: [f64; 9]) -> GruParameters {
        let mut p = GruParameters::zeros(1, 1);
        for ((_, t), v) in p.tensors_mut().into_iter().zip(vals) {
            t.value.values_mut()[0] = v;
        }
        p
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar transcription of the cell with order (W_z,U_z,b_z,W_r,U_r,b_r,W_h,U_h,b_h).
    fn scalar_cell(v: [f64; 9], x: f64, h: f64) -> f64 {
        let z = sig(v[0] * x + v[1] * h + v[2]);
        let r = sig(v[3] * x + v[4] * h + v[5]);
        let c = (v[6] * x + v[7] * r * h + v[8]).tanh();
        (1.0 - z) * h + z * c
    }

    #[test]
    fn zero_cell_fixed_points() {
        let p = GruParameters::zeros(3, 2);
        let (h, _) = gru_cell_forward(&p, &[1.0, 2.0, 3.0], &[0.0, 0.0], None).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        let (h, c) = gru_cell_forward(&p, &[1.0, 2.0, 3.0], &[0.8, -0.4], None).unwrap();
        assert_eq!(c.z, vec![0.5, 0.5]);
        assert_eq!(c.c, vec![0.0, 0.0]);
        assert_eq!(h, vec![0.4, -0.2]);
        assert!(gru_cell_forward(&p, &[1.0], &[0.0, 0.0], None).is_err());
    }

    #[test]
    fn scalar_cell_matches_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v: [f64; 9] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let (x, h) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (out, _) = gru_cell_forward(&scalar_params(v), &[x], &[h], None).unwrap();
            assert!((out[0] - scalar_cell(v, x, h)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_zero_runs() {
        let p = GruParameters::zeros(2, 3);
        let run =
            run_directional(&p, &Tensor::zeros(&[0, 2]), Direction::LeftToRight, None).unwrap();
        assert_eq!(run.final_state, vec![0.0; 3]);
        assert!(run.states.is_empty());
        let inputs = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let run = run_directional(&p, &inputs, Direction::RightToLeft, None).unwrap();
        assert!(run.states.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn reversal_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParameters::init(4, 3, &mut rng);
        let n = 5;
        let vals: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inputs = Tensor::matrix(n, 4, vals.clone()).unwrap();
        let mut rev = Vec::new();
        for i in (0..n).rev() {
            rev.extend_from_slice(&vals[i * 4..(i + 1) * 4]);
        }
        let reversed = Tensor::matrix(n, 4, rev).unwrap();
        let rl = run_directional(&p, &inputs, Direction::RightToLeft, None).unwrap();
        let lr = run_directional(&p, &reversed, Direction::LeftToRight, None).unwrap();
        for j in 0..n {
            assert_eq!(rl.states[j], lr.states[n - 1 - j]);
        }
        assert_eq!(rl.final_state, lr.final_state);
    }

    #[test]
    fn eval_runs_are_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = GruParameters::init(3, 4, &mut rng);
        let inputs = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = run_directional(&p, &inputs, Direction::LeftToRight, None).unwrap();
        let b = run_directional(&p, &inputs, Direction::LeftToRight, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recurrent_mask_constant_across_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParameters::init(2, 16, &mut rng);
        let inputs = Tensor::matrix(2, 2, vec![0.5, -0.5, 1.0, 0.25]).unwrap();
        let mut drng = ChaCha8Rng::seed_from_u64(9);
        let mut dropout = Dropout {
            rng: &mut drng,
            recurrent: 0.5,
            head: 0.0,
        };
        let run = run_directional(&p, &inputs, Direction::LeftToRight, Some(&mut dropout)).unwrap();
        let mask = run.trace.mask.as_ref().unwrap();
        assert!(mask.scale.iter().all(|&s| s == 0.0 || s == 2.0));
        for st in &run.trace.steps {
            assert_eq!(st.h_in, mask.apply(&st.h_prev));
        }
        // the second step's h_in is masked by the same mask as the first
        let s1 = &run.trace.steps[1];
        for k in 0..16 {
            if mask.scale[k] == 0.0 {
                assert_eq!(s1.h_in[k], 0.0);
            } else {
                assert_eq!(s1.h_in[k], s1.h_prev[k] * 2.0);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GruParameters::init(2, 3, &mut rng);
        let inputs = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let run = run_directional(&p, &inputs, Direction::LeftToRight, None).unwrap();
        let dx = gru_backward(&mut p, &run.trace, &Tensor::zeros(&[3, 3])).unwrap();
        assert!(dx.values().iter().all(|&v| v == 0.0));
        p.visit_params(&mut |_, q| assert!(q.gradient.values().iter().all(|&v| v == 0.0)));
        assert!(gru_backward(&mut p, &run.trace, &Tensor::zeros(&[2, 3])).is_err());
    }

    /// Symbolic derivative of the one-step scalar GRU output with respect to
    /// each of its nine parameters and the input.
    fn scalar_symbolic(v: [f64; 9], x: f64, h: f64) -> ([f64; 9], f64) {
        let z = sig(v[0] * x + v[1] * h + v[2]);
        let r = sig(v[3] * x + v[4] * h + v[5]);
        let c = (v[6] * x + v[7] * r * h + v[8]).tanh();
        let dz = (c - h) * z * (1.0 - z);
        let dc = z * (1.0 - c * c);
        let dr = dc * v[7] * h * r * (1.0 - r);
        let grads = [
            dz * x,
            dz * h,
            dz,
            dr * x,
            dr * h,
            dr,
            dc * x,
            dc * r * h,
            dc,
        ];
        let dx = dz * v[0] + dr * v[3] + dc * v[6];
        (grads, dx)
    }

    #[test]
    fn one_step_scalar_backward_matches_symbolic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let v: [f64; 9] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
            let x = rng.gen_range(-1.0..1.0);
            let mut p = scalar_params(v);
            let inputs = Tensor::matrix(1, 1, vec![x]).unwrap();
            // h_prev is the zero state in a run; check the cell directly for nonzero h
            let run = run_directional(&p, &inputs, Direction::LeftToRight, None).unwrap();
            let dx = gru_backward(
                &mut p,
                &run.trace,
                &Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            )
            .unwrap();
            let (expected, edx) = scalar_symbolic(v, x, 0.0);
            for ((_, t), e) in p.tensors().into_iter().zip(expected) {
                assert!((t.gradient.values()[0] - e).abs() < 1e-10);
            }
            assert!((dx.values()[0] - edx).abs() < 1e-10);

            // nonzero previous state via a hand-built trace
            let h = rng.gen_range(-1.0..1.0);
            let mut p = scalar_params(v);
            let (_, cache) = gru_cell_forward(&p, &[x], &[h], None).unwrap();
            let trace = GruTrace {
                direction: Direction::LeftToRight,
                steps: vec![cache],
                mask: None,
            };
            gru_backward(&mut p, &trace, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
            let (expected, _) = scalar_symbolic(v, x, h);
            for ((_, t), e) in p.tensors().into_iter().zip(expected) {
                assert!((t.gradient.values()[0] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn multi_step_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut p = GruParameters::init(3, 2, &mut rng);
        let inputs =
            Tensor::matrix(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let weights: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for dir in [Direction::LeftToRight, Direction::RightToLeft] {
            // loss = Σ_j <w_j, states[j]>
            let loss = |p: &GruParameters| {
                let run = run_directional(p, &inputs, dir, None).unwrap();
                run.states
                    .iter()
                    .flatten()
                    .zip(&weights)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            p.zero_grads();
            let run = run_directional(&p, &inputs, dir, None).unwrap();
            let up = Tensor::matrix(4, 2, weights.clone()).unwrap();
            gru_backward(&mut p, &run.trace, &up).unwrap();
            let numeric = finite_diff_gradients(&mut p, loss, 1e-5);
            let mut k = 0;
            p.visit_params(&mut |name, q| {
                for (a, b) in q.gradient.values().iter().zip(numeric[k].1.values()) {
                    let rel = crate::numerics::relative_error(*a, *b);
                    assert!(rel < 1e-5, "{name}: {a} vs {b}");
                }
                k += 1;
            });
        }
    }
}
