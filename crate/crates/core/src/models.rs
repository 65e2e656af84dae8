//! The whole-passage auxiliary model, the multi-task main model (and its
//! shared-GRU ablation), and the two-GRU target-dependent baseline, with
//! hand-derived backward passes.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cross_entropy_label, mat_vec_acc, outer_acc, softmax3_array, vec_mat_acc, Label, Parameter,
    Parameterized, ProbabilityTriple, Tensor,
};
use crate::recurrent::{
    final_state_upstream, glorot, gru_backward_params, run_directional, Direction, DirectionalRun,
    Dropout, DropoutMask, GruParameters, GruTrace,
};

/// Model family tag, as used in checkpoints and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "aux")]
    Aux,
    #[serde(rename = "tdgru")]
    Tdgru,
    #[serde(rename = "tdft")]
    Tdft,
    #[serde(rename = "naive-mtl")]
    NaiveMtl,
    #[serde(rename = "mttdsc")]
    Mttdsc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Aux,
        Variant::Tdgru,
        Variant::Tdft,
        Variant::NaiveMtl,
        Variant::Mttdsc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Aux => "aux",
            Variant::Tdgru => "tdgru",
            Variant::Tdft => "tdft",
            Variant::NaiveMtl => "naive-mtl",
            Variant::Mttdsc => "mttdsc",
        }
    }

    /// Whether the variant predicts target-level labels.
    pub fn is_targeted(self) -> bool {
        self != Variant::Aux
    }

    pub fn uses_aux_data(self) -> bool {
        matches!(
            self,
            Variant::Aux | Variant::Tdft | Variant::NaiveMtl | Variant::Mttdsc
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// 1-based inclusive target span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
}

impl TargetSpan {
    pub fn single(i: usize) -> Self {
        TargetSpan { start: i, end: i }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.start < 1 || self.start > self.end || self.end > n {
            return Err(Error::Input(format!(
                "target span {}..={} out of range for {n} tokens",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Fully connected output layer `feature · W + b` with `W ∈ R^{F×3}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w: Parameter,
    pub b: Parameter,
}

impl Head {
    pub fn zeros(width: usize) -> Self {
        Head {
            w: Parameter::zeros(&[width, 3]),
            b: Parameter::zeros(&[3]),
        }
    }

    pub fn init(width: usize, rng: &mut dyn RngCore) -> Self {
        Head {
            w: glorot(width, 3, rng),
            b: Parameter::zeros(&[3]),
        }
    }

    pub fn width(&self) -> usize {
        self.w.shape()[0]
    }

    fn logits(&self, feature: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        out.copy_from_slice(self.b.value.values());
        vec_mat_acc(feature, self.w.value.values(), &mut out);
        out
    }

    /// Accumulates head gradients and returns the gradient w.r.t. the (post-dropout) feature.
    fn backward(&mut self, feature: &[f64], dlogits: &[f64; 3]) -> Vec<f64> {
        outer_acc(feature, dlogits, self.w.gradient.values_mut());
        for (g, d) in self.b.gradient.values_mut().iter_mut().zip(dlogits) {
            *g += d;
        }
        let mut df = vec![0.0; feature.len()];
        mat_vec_acc(self.w.value.values(), dlogits, &mut df);
        df
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&format!("{prefix}.W"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&format!("{prefix}.W"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

fn visit_gru(prefix: &str, g: &GruParameters, f: &mut dyn FnMut(&str, &Parameter)) {
    g.visit_params(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

fn visit_gru_mut(prefix: &str, g: &mut GruParameters, f: &mut dyn FnMut(&str, &mut Parameter)) {
    g.visit_params_mut(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

/// Head input after optional dropout, plus the resulting distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    /// Feature vector before dropout.
    pub feature: Vec<f64>,
    pub mask: Option<DropoutMask>,
    pub logits: [f64; 3],
    pub probs: ProbabilityTriple,
}

impl HeadTrace {
    fn run(head: &Head, feature: Vec<f64>, dropout: Option<&mut Dropout<'_>>) -> Self {
        let mask = dropout.and_then(|d| d.head_mask(feature.len()));
        let used = match &mask {
            Some(m) => m.apply(&feature),
            None => feature.clone(),
        };
        let logits = head.logits(&used);
        HeadTrace {
            feature,
            mask,
            logits,
            probs: softmax3_array(logits),
        }
    }

    fn used_feature(&self) -> Vec<f64> {
        match &self.mask {
            Some(m) => m.apply(&self.feature),
            None => self.feature.clone(),
        }
    }

    pub fn loss(&self, gold: Label) -> f64 {
        cross_entropy_label(&self.probs, gold)
    }

    /// Back through softmax-cross-entropy and the head; returns d(loss)/d(feature before dropout).
    fn backward(&self, head: &mut Head, gold: Label, scale: f64) -> Result<Vec<f64>> {
        if head.width() != self.feature.len() {
            return Err(Error::Usage(format!(
                "trace feature width {} does not match head width {}",
                self.feature.len(),
                head.width()
            )));
        }
        let p = self.probs.as_array();
        let mut dlogits = [0.0; 3];
        for k in 0..3 {
            let onehot = if k == gold.index() { 1.0 } else { 0.0 };
            dlogits[k] = scale * (p[k] - onehot);
        }
        let mut df = head.backward(&self.used_feature(), &dlogits);
        if let Some(m) = &self.mask {
            for (d, s) in df.iter_mut().zip(&m.scale) {
                *d *= s;
            }
        }
        Ok(df)
    }
}

fn rows_slice(inputs: &Tensor, from: usize, to: usize) -> Tensor {
    let e = inputs.cols();
    let vals = inputs.values()[from * e..to * e].to_vec();
    Tensor::matrix(to - from, e, vals).expect("slice of a valid matrix")
}

fn check_width(inputs: &Tensor, e: usize) -> Result<()> {
    if inputs.shape().len() != 2 || inputs.cols() != e {
        return Err(Error::Dimension(format!(
            "token matrix {:?} does not have width {e}",
            inputs.shape()
        )));
    }
    Ok(())
}

fn reborrow<'a, 'b>(d: &'a mut Option<&mut Dropout<'b>>) -> Option<&'a mut Dropout<'b>> {
    d.as_mut().map(|x| &mut **x)
}

// ---------------------------------------------------------------------------
// auxiliary whole-passage model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct AuxModel {
    pub gru_lr: GruParameters,
    pub gru_rl: GruParameters,
    /// `W_aux ∈ R^{2D×3}` and its bias.
    pub head: Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxTrace {
    pub lr: GruTrace,
    pub rl: GruTrace,
    pub head: HeadTrace,
}

impl AuxModel {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        AuxModel {
            gru_lr: GruParameters::zeros(input_dim, hidden),
            gru_rl: GruParameters::zeros(input_dim, hidden),
            head: Head::zeros(2 * hidden),
        }
    }

    pub fn init(input_dim: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        AuxModel {
            gru_lr: GruParameters::init(input_dim, hidden, rng),
            gru_rl: GruParameters::init(input_dim, hidden, rng),
            head: Head::init(2 * hidden, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru_lr.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.gru_lr.input_dim
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.hidden_dim();
        if self.gru_rl.hidden_dim != d
            || self.gru_rl.input_dim != self.input_dim()
            || self.head.width() != 2 * d
        {
            return Err(Error::Config(
                "auxiliary model widths are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

/// Whole-passage prediction from the position-averaged concatenation
/// `[lr[i-1], rl[i+1]]`, with out-of-range states equal to zero.
pub fn aux_forward(
    model: &AuxModel,
    passage: &Tensor,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(ProbabilityTriple, AuxTrace)> {
    let n = passage.rows();
    if n == 0 {
        return Err(Error::Input(
            "auxiliary passage must contain at least one token".into(),
        ));
    }
    check_width(passage, model.input_dim())?;
    let d = model.hidden_dim();
    let lr = run_directional(
        &model.gru_lr,
        passage,
        Direction::LeftToRight,
        reborrow(&mut dropout),
    )?;
    let rl = run_directional(
        &model.gru_rl,
        passage,
        Direction::RightToLeft,
        reborrow(&mut dropout),
    )?;
    let mut pooled = vec![0.0; 2 * d];
    let inv = 1.0 / n as f64;
    for state in &lr.states[..n - 1] {
        for (acc, v) in pooled[..d].iter_mut().zip(state) {
            *acc += v;
        }
    }
    for state in &rl.states[1..] {
        for (acc, v) in pooled[d..].iter_mut().zip(state) {
            *acc += v;
        }
    }
    pooled.iter_mut().for_each(|v| *v *= inv);
    let head = HeadTrace::run(&model.head, pooled, dropout);
    Ok((
        head.probs,
        AuxTrace {
            lr: lr.trace,
            rl: rl.trace,
            head,
        },
    ))
}

/// Accumulate `scale · ∂CE/∂θ` into the auxiliary GRUs and head.
pub fn aux_backward(model: &mut AuxModel, trace: &AuxTrace, gold: Label, scale: f64) -> Result<()> {
    let d = model.hidden_dim();
    let n = trace.lr.len();
    if trace.rl.len() != n || trace.head.feature.len() != 2 * d {
        return Err(Error::Usage(
            "auxiliary trace does not match this model".into(),
        ));
    }
    let df = trace.head.backward(&mut model.head, gold, scale)?;
    let inv = 1.0 / n as f64;
    let mut up_lr = Tensor::zeros(&[n, d]);
    for j in 0..n - 1 {
        for (u, g) in up_lr.row_mut(j).iter_mut().zip(&df[..d]) {
            *u = g * inv;
        }
    }
    let mut up_rl = Tensor::zeros(&[n, d]);
    for j in 1..n {
        for (u, g) in up_rl.row_mut(j).iter_mut().zip(&df[d..]) {
            *u = g * inv;
        }
    }
    gru_backward_params(&mut model.gru_lr, &trace.lr, &up_lr)?;
    gru_backward_params(&mut model.gru_rl, &trace.rl, &up_rl)?;
    Ok(())
}

impl Parameterized for AuxModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        visit_gru("aux.lr", &self.gru_lr, f);
        visit_gru("aux.rl", &self.gru_rl, f);
        self.head.visit("aux.head", f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        visit_gru_mut("aux.lr", &mut self.gru_lr, f);
        visit_gru_mut("aux.rl", &mut self.gru_rl, f);
        self.head.visit_mut("aux.head", f);
    }
}

// ---------------------------------------------------------------------------
// multi-task main model
// ---------------------------------------------------------------------------

/// Main-task GRUs plus the auxiliary model they are coupled with.
///
/// When `main_grus` is `None` the main task reuses the auxiliary GRUs
/// (the shared-GRU ablation).
#[derive(Clone, Debug, PartialEq)]
pub struct MttdscModel {
    pub aux: AuxModel,
    pub main_grus: Option<(GruParameters, GruParameters)>,
    /// `W_main ∈ R^{4D×3}` and its bias.
    pub head: Head,
    /// Set once auxiliary pre-training has run; joint training requires it.
    pub aux_pretrained: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MainTrace {
    pub aux_lr: GruTrace,
    pub main_lr: GruTrace,
    pub aux_rl: GruTrace,
    pub main_rl: GruTrace,
    pub head: HeadTrace,
}

impl MttdscModel {
    pub fn init(input_dim: usize, hidden: usize, shared_grus: bool, rng: &mut dyn RngCore) -> Self {
        let aux = AuxModel::init(input_dim, hidden, rng);
        let main_grus = (!shared_grus).then(|| {
            (
                GruParameters::init(input_dim, hidden, rng),
                GruParameters::init(input_dim, hidden, rng),
            )
        });
        MttdscModel {
            aux,
            main_grus,
            head: Head::init(4 * hidden, rng),
            aux_pretrained: false,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, shared_grus: bool) -> Self {
        MttdscModel {
            aux: AuxModel::zeros(input_dim, hidden),
            main_grus: (!shared_grus).then(|| {
                (
                    GruParameters::zeros(input_dim, hidden),
                    GruParameters::zeros(input_dim, hidden),
                )
            }),
            head: Head::zeros(4 * hidden),
            aux_pretrained: false,
        }
    }

    pub fn shared_grus(&self) -> bool {
        self.main_grus.is_none()
    }

    pub fn variant(&self) -> Variant {
        if self.shared_grus() {
            Variant::NaiveMtl
        } else {
            Variant::Mttdsc
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.aux.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.aux.input_dim()
    }

    pub fn main_lr(&self) -> &GruParameters {
        self.main_grus
            .as_ref()
            .map(|g| &g.0)
            .unwrap_or(&self.aux.gru_lr)
    }

    pub fn main_rl(&self) -> &GruParameters {
        self.main_grus
            .as_ref()
            .map(|g| &g.1)
            .unwrap_or(&self.aux.gru_rl)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.aux.validate()?;
        if self.head.width() != 4 * self.hidden_dim() {
            return Err(Error::Config(format!(
                "main head width {} must be 4D = {}",
                self.head.width(),
                4 * self.hidden_dim()
            )));
        }
        Ok(())
    }

    /// Parameters that only the main loss reaches: the main GRUs (if not shared) and the main head.
    pub fn visit_main_only(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        if let Some((lr, rl)) = &self.main_grus {
            visit_gru("main.lr", lr, f);
            visit_gru("main.rl", rl, f);
        }
        self.head.visit("main.head", f);
    }
}

/// Target-level prediction from the four context states
/// `[aux_lr, main_lr, aux_rl, main_rl]`; the target token itself feeds no run.
pub fn main_forward(
    model: &MttdscModel,
    tokens: &Tensor,
    target: TargetSpan,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(ProbabilityTriple, MainTrace)> {
    let n = tokens.rows();
    target.check(n)?;
    check_width(tokens, model.input_dim())?;
    let left = rows_slice(tokens, 0, target.start - 1);
    let right = rows_slice(tokens, target.end, n);
    let run = |g: &GruParameters,
               x: &Tensor,
               dir,
               d: Option<&mut Dropout<'_>>|
     -> Result<DirectionalRun> { run_directional(g, x, dir, d) };
    let aux_lr = run(
        &model.aux.gru_lr,
        &left,
        Direction::LeftToRight,
        reborrow(&mut dropout),
    )?;
    let main_lr = run(
        model.main_lr(),
        &left,
        Direction::LeftToRight,
        reborrow(&mut dropout),
    )?;
    let aux_rl = run(
        &model.aux.gru_rl,
        &right,
        Direction::RightToLeft,
        reborrow(&mut dropout),
    )?;
    let main_rl = run(
        model.main_rl(),
        &right,
        Direction::RightToLeft,
        reborrow(&mut dropout),
    )?;
    let mut feature = Vec::with_capacity(4 * model.hidden_dim());
    for r in [&aux_lr, &main_lr, &aux_rl, &main_rl] {
        feature.extend_from_slice(&r.final_state);
    }
    let head = HeadTrace::run(&model.head, feature, dropout);
    Ok((
        head.probs,
        MainTrace {
            aux_lr: aux_lr.trace,
            main_lr: main_lr.trace,
            aux_rl: aux_rl.trace,
            main_rl: main_rl.trace,
            head,
        },
    ))
}

/// Accumulate `scale · ∂CE/∂θ` into the main head, the main GRUs and the auxiliary GRUs.
pub fn main_backward(
    model: &mut MttdscModel,
    trace: &MainTrace,
    gold: Label,
    scale: f64,
) -> Result<()> {
    let d = model.hidden_dim();
    if trace.head.feature.len() != 4 * d {
        return Err(Error::Usage("main trace does not match this model".into()));
    }
    let df = trace.head.backward(&mut model.head, gold, scale)?;
    let part = |k: usize| &df[k * d..(k + 1) * d];
    let up = |t: &GruTrace, k: usize| final_state_upstream(t, d, part(k));
    gru_backward_params(&mut model.aux.gru_lr, &trace.aux_lr, &up(&trace.aux_lr, 0))?;
    gru_backward_params(&mut model.aux.gru_rl, &trace.aux_rl, &up(&trace.aux_rl, 2))?;
    let (main_lr, main_rl) = match model.main_grus.as_mut() {
        Some((lr, rl)) => (lr, rl),
        None => (&mut model.aux.gru_lr, &mut model.aux.gru_rl),
    };
    gru_backward_params(main_lr, &trace.main_lr, &up(&trace.main_lr, 1))?;
    gru_backward_params(main_rl, &trace.main_rl, &up(&trace.main_rl, 3))?;
    Ok(())
}

impl Parameterized for MttdscModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        self.aux.visit_params(f);
        self.visit_main_only(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.aux.visit_params_mut(f);
        if let Some((lr, rl)) = &mut self.main_grus {
            visit_gru_mut("main.lr", lr, f);
            visit_gru_mut("main.rl", rl, f);
        }
        self.head.visit_mut("main.head", f);
    }
}

// ---------------------------------------------------------------------------
// two-GRU target-dependent baseline
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TdgruModel {
    pub gru_lr: GruParameters,
    pub gru_rl: GruParameters,
    /// `W_td ∈ R^{2D×3}` and its bias.
    pub head: Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdgruTrace {
    pub lr: GruTrace,
    pub rl: GruTrace,
    pub head: HeadTrace,
}

impl TdgruModel {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        TdgruModel {
            gru_lr: GruParameters::init(input_dim, hidden, rng),
            gru_rl: GruParameters::init(input_dim, hidden, rng),
            head: Head::init(2 * hidden, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        TdgruModel {
            gru_lr: GruParameters::zeros(input_dim, hidden),
            gru_rl: GruParameters::zeros(input_dim, hidden),
            head: Head::zeros(2 * hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru_lr.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.gru_lr.input_dim
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.head.width() != 2 * self.hidden_dim() || self.gru_rl.hidden_dim != self.hidden_dim()
        {
            return Err(Error::Config(
                "target-dependent model widths are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

/// Left run over `1..=end`, right run over `start..=N`; the target is included on both sides.
pub fn tdgru_forward(
    model: &TdgruModel,
    tokens: &Tensor,
    target: TargetSpan,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(ProbabilityTriple, TdgruTrace)> {
    let n = tokens.rows();
    target.check(n)?;
    check_width(tokens, model.input_dim())?;
    let left = rows_slice(tokens, 0, target.end);
    let right = rows_slice(tokens, target.start - 1, n);
    let lr = run_directional(
        &model.gru_lr,
        &left,
        Direction::LeftToRight,
        reborrow(&mut dropout),
    )?;
    let rl = run_directional(
        &model.gru_rl,
        &right,
        Direction::RightToLeft,
        reborrow(&mut dropout),
    )?;
    let mut feature = lr.final_state.clone();
    feature.extend_from_slice(&rl.final_state);
    let head = HeadTrace::run(&model.head, feature, dropout);
    Ok((
        head.probs,
        TdgruTrace {
            lr: lr.trace,
            rl: rl.trace,
            head,
        },
    ))
}

pub fn tdgru_backward(
    model: &mut TdgruModel,
    trace: &TdgruTrace,
    gold: Label,
    scale: f64,
) -> Result<()> {
    let d = model.hidden_dim();
    if trace.head.feature.len() != 2 * d {
        return Err(Error::Usage(
            "target-dependent trace does not match this model".into(),
        ));
    }
    let df = trace.head.backward(&mut model.head, gold, scale)?;
    let up_lr = final_state_upstream(&trace.lr, d, &df[..d]);
    let up_rl = final_state_upstream(&trace.rl, d, &df[d..]);
    gru_backward_params(&mut model.gru_lr, &trace.lr, &up_lr)?;
    gru_backward_params(&mut model.gru_rl, &trace.rl, &up_rl)?;
    Ok(())
}

impl Parameterized for TdgruModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        visit_gru("td.lr", &self.gru_lr, f);
        visit_gru("td.rl", &self.gru_rl, f);
        self.head.visit("td.head", f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        visit_gru_mut("td.lr", &mut self.gru_lr, f);
        visit_gru_mut("td.rl", &mut self.gru_rl, f);
        self.head.visit_mut("td.head", f);
    }
}

/// Start a target-dependent model from auxiliary GRU weights with a fresh head.
pub fn tdft_init(aux: &AuxModel, hidden: usize, rng: &mut dyn RngCore) -> Result<TdgruModel> {
    if aux.hidden_dim() != hidden {
        return Err(Error::Config(format!(
            "auxiliary GRUs have hidden size {}, requested {hidden}",
            aux.hidden_dim()
        )));
    }
    let fresh = |g: &GruParameters| {
        let mut g = g.clone();
        g.visit_params_mut(&mut |_, p| *p = Parameter::new(p.value.clone()));
        g
    };
    Ok(TdgruModel {
        gru_lr: fresh(&aux.gru_lr),
        gru_rl: fresh(&aux.gru_rl),
        head: Head::init(2 * hidden, rng),
    })
}

// ---------------------------------------------------------------------------
// variant-erased bundle
// ---------------------------------------------------------------------------

/// Any trainable variant.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelBundle {
    Aux(AuxModel),
    /// Target-dependent baseline; `fine_tuned` marks the TDFT variant.
    Tdgru {
        model: TdgruModel,
        fine_tuned: bool,
    },
    Mttdsc(MttdscModel),
}

impl ModelBundle {
    /// Freshly initialized model of the given variant.
    ///
    /// TDFT starts as an auxiliary model; fine-tuning later swaps in a
    /// target-dependent model built by [`tdft_init`].
    pub fn init(variant: Variant, input_dim: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        match variant {
            Variant::Aux | Variant::Tdft => {
                ModelBundle::Aux(AuxModel::init(input_dim, hidden, rng))
            }
            Variant::Tdgru => ModelBundle::Tdgru {
                model: TdgruModel::init(input_dim, hidden, rng),
                fine_tuned: false,
            },
            Variant::NaiveMtl => {
                ModelBundle::Mttdsc(MttdscModel::init(input_dim, hidden, true, rng))
            }
            Variant::Mttdsc => {
                ModelBundle::Mttdsc(MttdscModel::init(input_dim, hidden, false, rng))
            }
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            ModelBundle::Aux(_) => Variant::Aux,
            ModelBundle::Tdgru {
                fine_tuned: false, ..
            } => Variant::Tdgru,
            ModelBundle::Tdgru {
                fine_tuned: true, ..
            } => Variant::Tdft,
            ModelBundle::Mttdsc(m) => m.variant(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelBundle::Aux(m) => m.input_dim(),
            ModelBundle::Tdgru { model, .. } => model.input_dim(),
            ModelBundle::Mttdsc(m) => m.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            ModelBundle::Aux(m) => m.hidden_dim(),
            ModelBundle::Tdgru { model, .. } => model.hidden_dim(),
            ModelBundle::Mttdsc(m) => m.hidden_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelBundle::Aux(m) => m.validate(),
            ModelBundle::Tdgru { model, .. } => model.validate(),
            ModelBundle::Mttdsc(m) => m.validate(),
        }
    }
}

/// Anything that produces eval-mode distributions: a single model or an ensemble.
pub trait Predictor {
    fn variant(&self) -> Variant;
    fn predict_targeted(&self, tokens: &Tensor, target: TargetSpan) -> Result<ProbabilityTriple>;
    fn predict_passage(&self, tokens: &Tensor) -> Result<ProbabilityTriple>;
}

impl Predictor for ModelBundle {
    fn variant(&self) -> Variant {
        ModelBundle::variant(self)
    }

    fn predict_targeted(&self, tokens: &Tensor, target: TargetSpan) -> Result<ProbabilityTriple> {
        match self {
            ModelBundle::Tdgru { model, .. } => Ok(tdgru_forward(model, tokens, target, None)?.0),
            ModelBundle::Mttdsc(m) => Ok(main_forward(m, tokens, target, None)?.0),
            ModelBundle::Aux(_) => Err(Error::Usage(
                "an auxiliary (whole-passage) model cannot score targeted instances".into(),
            )),
        }
    }

    fn predict_passage(&self, tokens: &Tensor) -> Result<ProbabilityTriple> {
        match self {
            ModelBundle::Aux(m) => Ok(aux_forward(m, tokens, None)?.0),
            other => Err(Error::Usage(format!(
                "a {} model cannot score whole-passage instances",
                other.variant()
            ))),
        }
    }
}

impl Parameterized for ModelBundle {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        match self {
            ModelBundle::Aux(m) => m.visit_params(f),
            ModelBundle::Tdgru { model, .. } => model.visit_params(f),
            ModelBundle::Mttdsc(m) => m.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        match self {
            ModelBundle::Aux(m) => m.visit_params_mut(f),
            ModelBundle::Tdgru { model, .. } => model.visit_params_mut(f),
            ModelBundle::Mttdsc(m) => m.visit_params_mut(f),
        }
    }
}
