//! Central-difference verification of every hand-derived backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{
    aux_backward, aux_forward, main_backward, main_forward, tdgru_backward, tdgru_forward,
    AuxModel, MttdscModel, TargetSpan, TdgruModel, Variant,
};
use crate::numerics::{finite_diff_gradients, relative_error, Label, Parameterized, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckProfile {
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
    pub targeted: usize,
    pub passages: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckProfile {
    fn default() -> Self {
        GradcheckProfile {
            hidden: 4,
            embed: 8,
            vocab: 30,
            targeted: 10,
            passages: 5,
            min_len: 3,
            max_len: 8,
            epsilon: 1e-4,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub variant: Variant,
    pub parameters: usize,
    pub max_relative_error: f64,
    /// Parameter holding the worst scalar.
    pub worst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }
}

struct Fixture {
    targeted: Vec<(Tensor, TargetSpan, Label)>,
    passages: Vec<(Tensor, Label)>,
}

fn fixture(p: &GradcheckProfile, rng: &mut ChaCha8Rng) -> Fixture {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let vocab: Vec<Vec<f64>> = (0..p.vocab)
        .map(|_| (0..p.embed).map(|_| normal.sample(rng)).collect())
        .collect();
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(p.min_len..=p.max_len);
        let mut values = Vec::with_capacity(n * p.embed);
        for _ in 0..n {
            values.extend_from_slice(&vocab[rng.gen_range(0..p.vocab)]);
        }
        Tensor::matrix(n, p.embed, values).expect("consistent rows")
    };
    let label = |rng: &mut ChaCha8Rng| Label::ALL[rng.gen_range(0..3)];
    let targeted = (0..p.targeted)
        .map(|k| {
            let x = sentence(rng);
            let n = x.rows();
            // cycle through first token, last token, an interior multi-token span, and a random one
            let span = match k % 4 {
                0 => TargetSpan::single(1),
                1 => TargetSpan::single(n),
                2 => TargetSpan {
                    start: 2,
                    end: n - 1,
                },
                _ => TargetSpan::single(rng.gen_range(1..=n)),
            };
            (x, span, label(rng))
        })
        .collect();
    let passages = (0..p.passages)
        .map(|_| (sentence(rng), label(rng)))
        .collect();
    Fixture { targeted, passages }
}

/// Replace every parameter with N(0, 0.5) draws so biases and heads are exercised too.
fn randomize<M: Parameterized>(m: &mut M, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, 0.5).expect("valid sigma");
    m.visit_params_mut(&mut |_, p| {
        for v in p.value.values_mut() {
            *v = normal.sample(rng);
        }
    });
}

fn compare<M: Parameterized>(
    variant: Variant,
    model: &mut M,
    backward: impl Fn(&mut M) -> Result<()>,
    loss: impl Fn(&M) -> f64,
    epsilon: f64,
) -> Result<GradcheckEntry> {
    model.zero_grads();
    backward(model)?;
    let mut analytic = Vec::new();
    model.visit_params(&mut |n, p| analytic.push((n.to_string(), p.gradient.clone())));
    let numeric = finite_diff_gradients(model, loss, epsilon);
    let mut worst = (0.0, String::new());
    for ((name, a), (_, b)) in analytic.iter().zip(&numeric) {
        for (x, y) in a.values().iter().zip(b.values()) {
            let e = relative_error(*x, *y);
            if e > worst.0 || worst.1.is_empty() {
                worst = (e, name.clone());
            }
        }
    }
    model.zero_grads();
    Ok(GradcheckEntry {
        variant,
        parameters: model.count_parameters(),
        max_relative_error: worst.0,
        worst: worst.1,
    })
}

fn aux_loss(m: &AuxModel, f: &Fixture) -> f64 {
    f.passages
        .iter()
        .map(|(x, y)| {
            aux_forward(m, x, None)
                .expect("valid fixture")
                .1
                .head
                .loss(*y)
        })
        .sum()
}

fn joint_loss(m: &MttdscModel, f: &Fixture) -> f64 {
    let main: f64 = f
        .targeted
        .iter()
        .map(|(x, s, y)| {
            main_forward(m, x, *s, None)
                .expect("valid fixture")
                .1
                .head
                .loss(*y)
        })
        .sum();
    main + aux_loss(&m.aux, f)
}

fn check_mtl(
    shared: bool,
    p: &GradcheckProfile,
    f: &Fixture,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckEntry> {
    let mut m = MttdscModel::zeros(p.embed, p.hidden, shared);
    randomize(&mut m, rng);
    let variant = m.variant();
    compare(
        variant,
        &mut m,
        |m| {
            for (x, y) in &f.passages {
                let (_, t) = aux_forward(&m.aux, x, None)?;
                aux_backward(&mut m.aux, &t, *y, 1.0)?;
            }
            for (x, s, y) in &f.targeted {
                let (_, t) = main_forward(m, x, *s, None)?;
                main_backward(m, &t, *y, 1.0)?;
            }
            Ok(())
        },
        |m| joint_loss(m, f),
        p.epsilon,
    )
}

/// Checks MTTDSC (both loss graphs summed), NaiveMTL, TDGRU and the auxiliary model.
pub fn run_gradcheck(p: &GradcheckProfile) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let f = fixture(p, &mut rng);
    let mut entries = vec![
        check_mtl(false, p, &f, &mut rng)?,
        check_mtl(true, p, &f, &mut rng)?,
    ];

    let mut td = TdgruModel::zeros(p.embed, p.hidden);
    randomize(&mut td, &mut rng);
    entries.push(compare(
        Variant::Tdgru,
        &mut td,
        |m| {
            for (x, s, y) in &f.targeted {
                let (_, t) = tdgru_forward(m, x, *s, None)?;
                tdgru_backward(m, &t, *y, 1.0)?;
            }
            Ok(())
        },
        |m| {
            f.targeted
                .iter()
                .map(|(x, s, y)| {
                    tdgru_forward(m, x, *s, None)
                        .expect("valid fixture")
                        .1
                        .head
                        .loss(*y)
                })
                .sum()
        },
        p.epsilon,
    )?);

    let mut aux = AuxModel::zeros(p.embed, p.hidden);
    randomize(&mut aux, &mut rng);
    entries.push(compare(
        Variant::Aux,
        &mut aux,
        |m| {
            for (x, y) in &f.passages {
                let (_, t) = aux_forward(m, x, None)?;
                aux_backward(m, &t, *y, 1.0)?;
            }
            Ok(())
        },
        |m| aux_loss(m, &f),
        p.epsilon,
    )?);

    Ok(GradcheckReport {
        tolerance: p.tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_profile_passes() {
        let p = GradcheckProfile {
            targeted: 4,
            passages: 2,
            ..Default::default()
        };
        let r = run_gradcheck(&p).unwrap();
        assert_eq!(r.entries.len(), 4);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn fixture_covers_both_edges() {
        let p = GradcheckProfile::default();
        let f = fixture(&p, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(f.targeted.iter().any(|(_, s, _)| s.start == 1));
        assert!(f.targeted.iter().any(|(x, s, _)| s.end == x.rows()));
        assert!(f
            .targeted
            .iter()
            .all(|(x, _, _)| (3..=8).contains(&x.rows())));
    }
}
