use std::path::Path;

use mttdsc::datasets::TargetedInstance;
use mttdsc::numerics::Label;
use mttdsc::sensitivity::{render_heatmap, HeatmapFormat, SensitivityRecord};

fn record(position: usize, token: &str, drop_pos: f64, drop_neg: f64) -> SensitivityRecord {
    SensitivityRecord {
        position,
        token: token.into(),
        drop_pos,
        drop_neg,
    }
}

/// Set `UPDATE_GOLDEN=1` to regenerate after an intentional format change, then review the diff.
#[test]
fn html_matches_golden_file() {
    let instance = TargetedInstance {
        tokens: [
            "honestly", "the", "new", "iphone", "is", "<great>", "&", "cheap",
        ]
        .map(String::from)
        .to_vec(),
        target_start: 3,
        target_end: 4,
        label: Label::Positive,
    };
    let records = vec![
        record(1, "honestly", 0.004, -0.002),
        record(2, "the", -0.0125, 0.03),
        record(5, "is", 0.0, 0.0),
        record(6, "<great>", 0.42, -0.31),
        record(7, "&", 0.011, 0.0105),
        record(8, "cheap", 0.105, 0.02),
    ];
    let html = render_heatmap(&records, &instance, HeatmapFormat::Html);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/heatmap.html");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &html).unwrap();
    }
    assert_eq!(html, std::fs::read_to_string(&path).unwrap());
}
