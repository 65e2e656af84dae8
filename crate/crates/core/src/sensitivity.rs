//! Word-level sensitivity by UNK occlusion, rendered as HTML or ANSI heatmaps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datasets::TargetedInstance;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::Predictor;

/// Drops below this probability are left uncolored.
pub const NOISE_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    /// 1-based token position.
    pub position: usize,
    pub token: String,
    pub drop_pos: f64,
    pub drop_neg: f64,
}

/// Probability drops of the polar labels when each context token is replaced
/// by the UNK (zero) vector. Target tokens get no record.
pub fn occlusion_scores<P: Predictor + ?Sized>(
    model: &P,
    instance: &TargetedInstance,
    table: &EmbeddingTable,
) -> Result<Vec<SensitivityRecord>> {
    instance.validate()?;
    if !model.variant().is_targeted() {
        return Err(Error::Usage(format!(
            "{} models have no target; occlusion needs a target-dependent model",
            model.variant()
        )));
    }
    let span = instance.span();
    let tokens = table.embed_sequence(&instance.tokens);
    let baseline = model.predict_targeted(&tokens, span)?;
    let mut records = Vec::with_capacity(instance.tokens.len() - span.width());
    for (j, token) in instance.tokens.iter().enumerate() {
        let position = j + 1;
        if (span.start..=span.end).contains(&position) {
            continue;
        }
        let mut occluded = tokens.clone();
        occluded.row_mut(j).fill(0.0);
        let p = model.predict_targeted(&occluded, span)?;
        records.push(SensitivityRecord {
            position,
            token: token.clone(),
            drop_pos: baseline.p_pos - p.p_pos,
            drop_neg: baseline.p_neg - p.p_neg,
        });
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shade {
    Positive,
    Negative,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapFormat {
    Html,
    Ansi,
}

/// Colors and intensities for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDocument {
    pub tokens: Vec<String>,
    pub target_start: usize,
    pub target_end: usize,
    pub records: Vec<SensitivityRecord>,
    /// Per record: color and opacity in [0, 1].
    pub shades: Vec<(Shade, f64)>,
    /// Largest drop in the instance, the opacity denominator.
    pub max_drop: f64,
    pub noise_floor: f64,
}

impl HeatmapDocument {
    pub fn new(records: &[SensitivityRecord], instance: &TargetedInstance) -> Self {
        let max_drop = records
            .iter()
            .map(|r| r.drop_pos.max(r.drop_neg))
            .fold(0.0_f64, f64::max);
        let shades = records
            .iter()
            .map(|r| {
                let (shade, magnitude) = if r.drop_pos > r.drop_neg && r.drop_pos > NOISE_FLOOR {
                    (Shade::Positive, r.drop_pos)
                } else if r.drop_neg > r.drop_pos && r.drop_neg > NOISE_FLOOR {
                    (Shade::Negative, r.drop_neg)
                } else {
                    return (Shade::None, 0.0);
                };
                (shade, (magnitude / max_drop).min(1.0))
            })
            .collect();
        HeatmapDocument {
            tokens: instance.tokens.clone(),
            target_start: instance.target_start,
            target_end: instance.target_end,
            records: records.to_vec(),
            shades,
            max_drop,
            noise_floor: NOISE_FLOOR,
        }
    }

    fn record_at(&self, position: usize) -> Option<(&SensitivityRecord, (Shade, f64))> {
        self.records
            .iter()
            .position(|r| r.position == position)
            .map(|k| (&self.records[k], self.shades[k]))
    }

    fn is_target(&self, position: usize) -> bool {
        (self.target_start..=self.target_end).contains(&position)
    }

    pub fn to_html(&self) -> String {
        let mut out = String::new();
        out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>word sensitivity</title>\n</head>\n");
        let _ = writeln!(
            out,
            "<body style=\"font-family:monospace;font-size:16px;line-height:2\">\n<p data-max-drop=\"{}\" data-noise-floor=\"{}\">",
            self.max_drop, self.noise_floor
        );
        for (j, token) in self.tokens.iter().enumerate() {
            let position = j + 1;
            let text = escape_html(token);
            if self.is_target(position) {
                let _ = writeln!(
                    out,
                    "<span data-position=\"{position}\" data-target=\"true\" style=\"text-decoration:underline;font-weight:bold\">{text}</span>"
                );
                continue;
            }
            let (r, (shade, opacity)) = self
                .record_at(position)
                .expect("every context token has a record");
            let style = match shade {
                Shade::Positive => {
                    format!(" style=\"background-color:rgba(0,160,0,{opacity:.3})\"")
                }
                Shade::Negative => {
                    format!(" style=\"background-color:rgba(200,0,0,{opacity:.3})\"")
                }
                Shade::None => String::new(),
            };
            let _ = writeln!(
                out,
                "<span data-position=\"{position}\" data-drop-pos=\"{}\" data-drop-neg=\"{}\"{style}>{text}</span>",
                r.drop_pos, r.drop_neg
            );
        }
        out.push_str("</p>\n</body>\n</html>\n");
        out
    }

    /// 8-color terminal rendering: green/red foreground, bold at opacity ≥ 0.5.
    pub fn to_ansi(&self) -> String {
        let mut parts = Vec::with_capacity(self.tokens.len());
        for (j, token) in self.tokens.iter().enumerate() {
            let position = j + 1;
            if self.is_target(position) {
                parts.push(format!("\x1b[4m{token}\x1b[0m"));
                continue;
            }
            let (_, (shade, opacity)) = self
                .record_at(position)
                .expect("every context token has a record");
            let bold = if opacity >= 0.5 { "1;" } else { "" };
            parts.push(match shade {
                Shade::Positive => format!("\x1b[{bold}32m{token}\x1b[0m"),
                Shade::Negative => format!("\x1b[{bold}31m{token}\x1b[0m"),
                Shade::None => token.clone(),
            });
        }
        let mut s = parts.join(" ");
        s.push('\n');
        s
    }
}

pub fn render_heatmap(
    records: &[SensitivityRecord],
    instance: &TargetedInstance,
    format: HeatmapFormat,
) -> String {
    let doc = HeatmapDocument::new(records, instance);
    match format {
        HeatmapFormat::Html => doc.to_html(),
        HeatmapFormat::Ansi => doc.to_ansi(),
    }
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelBundle, MttdscModel};
    use crate::numerics::{Label, Parameterized};

    fn instance(tokens: &[&str], start: usize, end: usize) -> TargetedInstance {
        TargetedInstance {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            target_start: start,
            target_end: end,
            label: Label::Neutral,
        }
    }

    fn table() -> EmbeddingTable {
        let rows = vec![
            ("good".to_string(), vec![1.0, 0.0, 0.0, 0.0]),
            ("the".to_string(), vec![0.0, 1.0, 0.0, 0.0]),
            ("film".to_string(), vec![0.0, 0.0, 1.0, 0.0]),
            ("was".to_string(), vec![0.0, 0.0, 0.0, 1.0]),
        ];
        EmbeddingTable::from_rows(4, rows).unwrap()
    }

    #[test]
    fn zero_model_has_zero_drops() {
        let m = ModelBundle::Mttdsc(MttdscModel::zeros(4, 3, false));
        let inst = instance(&["the", "good", "film", "was"], 3, 3);
        let recs = occlusion_scores(&m, &inst, &table()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.drop_pos == 0.0 && r.drop_neg == 0.0));
        let html = render_heatmap(&recs, &inst, HeatmapFormat::Html);
        assert!(!html.contains("background-color"));
    }

    #[test]
    fn record_count_excludes_target_span() {
        let m = ModelBundle::Mttdsc(MttdscModel::zeros(4, 2, false));
        let inst = instance(&["the", "good", "film", "was", "good"], 2, 4);
        let recs = occlusion_scores(&m, &inst, &table()).unwrap();
        assert_eq!(
            recs.iter().map(|r| r.position).collect::<Vec<_>>(),
            vec![1, 5]
        );
    }

    #[test]
    fn single_positive_word_is_full_green() {
        let inst = instance(&["the", "good", "film"], 3, 3);
        let recs = vec![
            SensitivityRecord {
                position: 1,
                token: "the".into(),
                drop_pos: 0.0,
                drop_neg: 0.0,
            },
            SensitivityRecord {
                position: 2,
                token: "good".into(),
                drop_pos: 0.3,
                drop_neg: -0.1,
            },
        ];
        let html = render_heatmap(&recs, &inst, HeatmapFormat::Html);
        assert_eq!(html.matches("rgba(0,160,0,1.000)").count(), 1);
        assert_eq!(html.matches("background-color").count(), 1);
        assert!(html.contains("text-decoration:underline"));
        let ansi = render_heatmap(&recs, &inst, HeatmapFormat::Ansi);
        assert_eq!(ansi, "the \x1b[1;32mgood\x1b[0m \x1b[4mfilm\x1b[0m\n");
    }

    #[test]
    fn below_floor_is_uncolored() {
        let inst = instance(&["a", "b"], 2, 2);
        let recs = vec![SensitivityRecord {
            position: 1,
            token: "a".into(),
            drop_pos: 0.005,
            drop_neg: 0.0,
        }];
        let doc = HeatmapDocument::new(&recs, &inst);
        assert_eq!(doc.shades, vec![(Shade::None, 0.0)]);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(
            escape_html("<a href=\"x\">&'"),
            "&lt;a href=&quot;x&quot;&gt;&amp;&#39;"
        );
    }

    #[test]
    fn passage_models_are_rejected() {
        let m = ModelBundle::Aux(crate::models::AuxModel::zeros(4, 2));
        let inst = instance(&["the", "film"], 2, 2);
        assert!(matches!(
            occlusion_scores(&m, &inst, &table()),
            Err(Error::Usage(_))
        ));
        let before = m.checksum();
        let _ = occlusion_scores(&m, &inst, &table());
        assert_eq!(before, m.checksum());
    }
}
