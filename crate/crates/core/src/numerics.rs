//! Dense double-precision tensors, activations, the 3-way softmax and
//! cross-entropy, Adam, and a central-difference gradient oracle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows of a 2-d tensor (length of a 1-d tensor).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of columns of a 2-d tensor; 1 for vectors.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bit-level checksum (FNV-1a over the IEEE bit patterns and the shape).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for &d in &self.shape {
            mix(d as u64);
        }
        for v in &self.values {
            mix(v.to_bits());
        }
        h
    }
}

/// Standard matrix product of two 2-d tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.values[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.values[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// `out += x · W` where `x` has length `rows(W)` and `W` is row-major `rows × out.len()`.
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let m = out.len();
    debug_assert_eq!(x.len() * m, w.len());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let w_row = &w[i * m..(i + 1) * m];
        for (o, &wv) in out.iter_mut().zip(w_row) {
            *o += xi * wv;
        }
    }
}

/// `out += W · y` (W row-major `out.len() × y.len()`), i.e. back-propagation through `x · W`.
pub(crate) fn mat_vec_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let m = y.len();
    debug_assert_eq!(out.len() * m, w.len());
    for (i, o) in out.iter_mut().enumerate() {
        let w_row = &w[i * m..(i + 1) * m];
        *o += w_row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `g += xᵀ · y` for a row-major `x.len() × y.len()` gradient.
pub(crate) fn outer_acc(x: &[f64], y: &[f64], g: &mut [f64]) {
    let m = y.len();
    debug_assert_eq!(x.len() * m, g.len());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let g_row = &mut g[i * m..(i + 1) * m];
        for (gv, &yv) in g_row.iter_mut().zip(y) {
            *gv += xi * yv;
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Sentiment label in {-1, 0, +1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Neutral,
    Positive,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Negative, Label::Neutral, Label::Positive];

    /// Position in a `[neg, neu, pos]` triple.
    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Neutral => 1,
            Label::Positive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn value(self) -> i64 {
        self.index() as i64 - 1
    }

    pub fn from_value(v: i64) -> Result<Label> {
        match v {
            -1 => Ok(Label::Negative),
            0 => Ok(Label::Neutral),
            1 => Ok(Label::Positive),
            other => Err(Error::Label(other)),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i64(self.value())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_value(v).map_err(serde::de::Error::custom)
    }
}

/// A distribution over (negative, neutral, positive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTriple {
    pub p_neg: f64,
    pub p_neu: f64,
    pub p_pos: f64,
}

impl ProbabilityTriple {
    pub const UNIFORM: ProbabilityTriple = ProbabilityTriple {
        p_neg: 1.0 / 3.0,
        p_neu: 1.0 / 3.0,
        p_pos: 1.0 / 3.0,
    };

    pub fn new(p_neg: f64, p_neu: f64, p_pos: f64) -> Result<Self> {
        let t = ProbabilityTriple {
            p_neg,
            p_neu,
            p_pos,
        };
        let in_range = t
            .as_array()
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        if !in_range || (t.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("not a probability triple: {t:?}")));
        }
        Ok(t)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_neg, self.p_neu, self.p_pos]
    }

    pub fn get(&self, label: Label) -> f64 {
        self.as_array()[label.index()]
    }

    pub fn sum(&self) -> f64 {
        self.p_neg + self.p_neu + self.p_pos
    }

    /// Most probable label; ties go to neutral, then negative, then positive.
    pub fn argmax(&self) -> Label {
        let mut best = Label::Neutral;
        for cand in [Label::Negative, Label::Positive] {
            if self.get(cand) > self.get(best) {
                best = cand;
            }
        }
        best
    }

    /// Expected label value `Σ k·p_k` in [-1, 1].
    pub fn expected_value(&self) -> f64 {
        self.p_pos - self.p_neg
    }

    /// Arithmetic mean of several distributions.
    pub fn mean(items: &[ProbabilityTriple]) -> Result<ProbabilityTriple> {
        if items.is_empty() {
            return Err(Error::Input("cannot average zero distributions".into()));
        }
        let n = items.len() as f64;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for t in items {
            a += t.p_neg;
            b += t.p_neu;
            c += t.p_pos;
        }
        Ok(ProbabilityTriple {
            p_neg: a / n,
            p_neu: b / n,
            p_pos: c / n,
        })
    }
}

fn softmax3_raw(logits: [f64; 3]) -> ProbabilityTriple {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let s = e[0] + e[1] + e[2];
    ProbabilityTriple {
        p_neg: e[0] / s,
        p_neu: e[1] / s,
        p_pos: e[2] / s,
    }
}

/// Max-subtracted softmax over exactly three logits.
pub fn softmax3(logits: &Tensor) -> Result<ProbabilityTriple> {
    match logits.values() {
        [a, b, c] => Ok(softmax3_raw([*a, *b, *c])),
        other => Err(Error::Dimension(format!(
            "softmax3 needs 3 logits, got {}",
            other.len()
        ))),
    }
}

pub(crate) fn softmax3_array(logits: [f64; 3]) -> ProbabilityTriple {
    softmax3_raw(logits)
}

/// `-ln p[gold]`; probabilities are floored at the smallest normal f64.
pub fn cross_entropy(pred: &ProbabilityTriple, gold: i64) -> Result<f64> {
    let gold = Label::from_value(gold)?;
    Ok(cross_entropy_label(pred, gold))
}

pub(crate) fn cross_entropy_label(pred: &ProbabilityTriple, gold: Label) -> f64 {
    -pred.get(gold).max(f64::MIN_POSITIVE).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub gradient: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter {
            gradient: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Parameter::new(Tensor::zeros(shape))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.gradient.fill(0.0);
    }

    pub fn scale_grad(&mut self, factor: f64) {
        self.gradient
            .values_mut()
            .iter_mut()
            .for_each(|g| *g *= factor);
    }

    /// One bias-corrected Adam update, then the gradient is zeroed.
    ///
    /// A gradient that is identically zero leaves value and moments untouched
    /// (only `step_count` advances), so parameters outside the current loss
    /// graph never drift on accumulated momentum.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.gradient.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step_count += 1;
        if self.gradient.values().iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let g = self.gradient.values();
        let m = self.adam_m.values_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = self.adam_v.values_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (self.adam_m.values(), self.adam_v.values());
        for ((x, &mi), &vi) in self.value.values_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        self.zero_grad();
        Ok(())
    }
}

/// Anything that owns a fixed, ordered set of named parameters.
///
/// Aliased parameters must be visited once.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }

    /// Total scalar count over distinct parameters.
    fn count_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Bitwise checksum over every parameter value.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0;
        self.visit_params(&mut |_, p| {
            h = h.rotate_left(7) ^ p.value.checksum();
        });
        h
    }
}

impl Parameterized for Parameter {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        f("param", self)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f("param", self)
    }
}

fn nudge<M: Parameterized + ?Sized>(model: &mut M, param: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_params_mut(&mut |_, p| {
        if k == param {
            p.value.values_mut()[index] += delta;
        }
        k += 1;
    });
}

fn set_scalar<M: Parameterized + ?Sized>(model: &mut M, param: usize, index: usize, v: f64) {
    let mut k = 0;
    model.visit_params_mut(&mut |_, p| {
        if k == param {
            p.value.values_mut()[index] = v;
        }
        k += 1;
    });
}

/// Central-difference gradient of `loss` with respect to every scalar of
/// every parameter, in visiting order. The model is restored exactly.
pub fn finite_diff_gradients<M, F>(
    model: &mut M,
    mut loss: F,
    epsilon: f64,
) -> Vec<(String, Tensor)>
where
    M: Parameterized + ?Sized,
    F: FnMut(&M) -> f64,
{
    let mut layout = Vec::new();
    model.visit_params(&mut |n, p| layout.push((n.to_string(), p.value.clone())));
    let mut out = Vec::with_capacity(layout.len());
    for (k, (name, original)) in layout.into_iter().enumerate() {
        let mut grad = Tensor::zeros(original.shape());
        for j in 0..original.len() {
            let x0 = original.values()[j];
            nudge(model, k, j, epsilon);
            let up = loss(model);
            set_scalar(model, k, j, x0);
            nudge(model, k, j, -epsilon);
            let down = loss(model);
            set_scalar(model, k, j, x0);
            grad.values_mut()[j] = (up - down) / (2.0 * epsilon);
        }
        out.push((name, grad));
    }
    out
}

/// Elementwise relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn matmul_cases() {
        let m = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&Tensor::identity(3), &m).unwrap(), m);

        let r = Tensor::matrix(3, 4, (0..12).map(|x| x as f64 * 0.37 - 1.0).collect()).unwrap();
        assert_eq!(
            matmul(&Tensor::zeros(&[2, 3]), &r).unwrap(),
            Tensor::zeros(&[2, 4])
        );

        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(f64::tanh(0.0), 0.0);
        assert!((sigmoid_scalar(50.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid_scalar(-800.0) >= 0.0);
        let t = sigmoid(&Tensor::vector(vec![-1000.0, 0.0, 1000.0]));
        assert!(t.is_finite());
    }

    #[test]
    fn softmax_cases() {
        let u = softmax3(&Tensor::vector(vec![0.0; 3])).unwrap();
        for p in u.as_array() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let c = softmax3(&Tensor::vector(vec![123.4; 3])).unwrap();
        for p in c.as_array() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let l = softmax3(&Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        assert_abs_diff_eq!(l.p_neg, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.p_neu, 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.p_pos, 3.0 / 6.0, epsilon = 1e-15);
        assert!(softmax3(&Tensor::vector(vec![0.0; 4])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let eps = 1e-12;
        let onehot = ProbabilityTriple::new(eps / 2.0, eps / 2.0, 1.0 - eps).unwrap();
        assert!(cross_entropy(&onehot, 1).unwrap() < 1e-11);
        for g in [-1, 0, 1] {
            assert_abs_diff_eq!(
                cross_entropy(&ProbabilityTriple::UNIFORM, g).unwrap(),
                3f64.ln(),
                epsilon = 1e-15
            );
        }
        let p = ProbabilityTriple::new(0.5, 0.25, 0.25).unwrap();
        assert_abs_diff_eq!(cross_entropy(&p, -1).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(cross_entropy(&p, 2), Err(Error::Label(2))));
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(ProbabilityTriple::UNIFORM.argmax(), Label::Neutral);
        let t = ProbabilityTriple::new(0.4, 0.2, 0.4).unwrap();
        assert_eq!(t.argmax(), Label::Negative);
        let t = ProbabilityTriple::new(0.3, 0.2, 0.5).unwrap();
        assert_eq!(t.argmax(), Label::Positive);
    }

    /// Independent scalar Adam used as the reference.
    fn scalar_adam(mut x: f64, grads: &[f64], cfg: &AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        x
    }

    #[test]
    fn adam_cases() {
        let cfg = AdamConfig::default();
        let mut p = Parameter::new(Tensor::vector(vec![1.0, -2.0]));
        p.adam_step(&cfg).unwrap();
        assert_eq!(p.value.values(), &[1.0, -2.0]);
        assert_eq!(p.step_count, 1);

        let mut p = Parameter::new(Tensor::vector(vec![1.0]));
        p.gradient.values_mut()[0] = 1.0;
        p.adam_step(&cfg).unwrap();
        assert!((p.value.values()[0] - 0.999).abs() < 1e-6);
        assert_eq!(p.gradient.values(), &[0.0]);

        let mut p = Parameter::new(Tensor::vector(vec![0.3]));
        for _ in 0..2 {
            p.gradient.values_mut()[0] = 0.7;
            p.adam_step(&cfg).unwrap();
        }
        let reference = scalar_adam(0.3, &[0.7, 0.7], &cfg);
        assert!((p.value.values()[0] - reference).abs() < 1e-12);

        let mut p = Parameter::new(Tensor::vector(vec![0.0]));
        p.gradient.values_mut()[0] = f64::NAN;
        assert!(matches!(p.adam_step(&cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn finite_diff_polynomial_and_constant() {
        let mut p = Parameter::new(Tensor::vector(vec![3.0]));
        let g = finite_diff_gradients(&mut p, |p| p.value.values()[0].powi(2), 1e-4);
        assert!((g[0].1.values()[0] - 6.0).abs() < 1e-6);
        assert_eq!(p.value.values(), &[3.0]);

        let mut p = Parameter::new(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let g = finite_diff_gradients(&mut p, |_| 4.2, 1e-4);
        assert!(g[0].1.values().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            a in -50.0..50.0f64, b in -50.0..50.0f64, c in -50.0..50.0f64, shift in -100.0..100.0f64
        ) {
            let p = softmax3(&Tensor::vector(vec![a, b, c])).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            let q = softmax3(&Tensor::vector(vec![a + shift, b + shift, c + shift])).unwrap();
            for (x, y) in p.as_array().iter().zip(q.as_array()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_non_negative(a in -30.0..30.0f64, b in -30.0..30.0f64, c in -30.0..30.0f64, g in -1i64..=1) {
            let p = softmax3(&Tensor::vector(vec![a, b, c])).unwrap();
            prop_assert!(cross_entropy(&p, g).unwrap() >= 0.0);
        }

        #[test]
        fn adam_zero_gradient_is_fixed_point(
            x in proptest::collection::vec(-10.0..10.0f64, 1..6),
            warm in proptest::collection::vec(-1.0..1.0f64, 0..4),
        ) {
            let cfg = AdamConfig::default();
            let mut p = Parameter::new(Tensor::vector(x.clone()));
            for g in &warm {
                p.gradient.fill(*g);
                p.adam_step(&cfg).unwrap();
            }
            let before = p.value.clone();
            p.adam_step(&cfg).unwrap();
            prop_assert_eq!(before, p.value);
        }
    }
}
