use std::io::Write;

use cose::commands;
use cose::ingest::{convert, SourceFormat};
use cose_core::checkpoint::load_checkpoint;
use cose_core::codec::CodecConfig;
use cose_core::ink::{load_drawings, InkFormat};
use cose_core::relational::RelationalConfig;
use cose_core::train::{LrSchedule, TrainConfig};
use cose_core::ModelConfig;

#[test]
fn quickdraw_ingest_resamples_and_normalizes() {
    let src = concat!(
        r#"{"word": "cat", "drawing": [[[0, 20, 40], [0, 0, 10], [0, 10, 40]], [[5, 5], [0, 40]]]}"#,
        "\n\n",
        r#"{"word": "dog", "drawing": [[[0, 10], [0, 20]]]}"#,
        "\n"
    );
    let out = convert(src.as_bytes(), SourceFormat::Quickdraw).unwrap();
    assert_eq!(out.len(), 2);
    let first = &out[0];
    // Timed stroke: samples at 0, 20, 40 ms; untimed stroke kept as is.
    assert_eq!(first.strokes()[0].len(), 3);
    assert_eq!(first.strokes()[1].len(), 2);
    let [_, y0, _, y1] = first.bounding_box();
    assert!((y1 - y0 - 1.0).abs() < 1e-12);
    let mid = first.strokes()[0].points()[1];
    // (0,0)@0 -> (20,0)@10 -> (40,10)@40: at 20 ms, a third of the way along the second segment.
    assert!((mid.x - (20.0 + 20.0 / 3.0) / 40.0).abs() < 1e-12 && (mid.y - (10.0 / 3.0) / 40.0).abs() < 1e-12);
}

#[test]
fn didi_ingest_reports_bad_lines() {
    let src = "{\"drawing\": [[[0, 1], [0, 1], [0, 20]]]}\n{\"drawing\": [[[0, 1], [0, 1]]]}\n";
    let err = convert(src.as_bytes(), SourceFormat::Didi).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.ndjson");
    commands::synth(6, 3, None, &data).unwrap();
    assert_eq!(load_drawings(&data, InkFormat::Ndjson).unwrap().len(), 6);

    let cfg = TrainConfig {
        model: ModelConfig {
            codec: CodecConfig { enc_layers: 1, d_model: 8, d_ff: 16, heads: 2, dec_layers: 2, dec_width: 16, dec_components: 3, ..Default::default() },
            relational: RelationalConfig { layers: 1, d_model: 8, d_ff: 16, heads: 2, gmm_components: 4, ..Default::default() },
        },
        batch_size: 6,
        lr_schedule: LrSchedule::Constant { lr: 1e-3 },
        total_steps: 5,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let cfg_path = dir.path().join("config.json");
    std::fs::File::create(&cfg_path).unwrap().write_all(serde_json::to_string(&cfg).unwrap().as_bytes()).unwrap();
    let cfg = commands::read_train_config(Some(&cfg_path)).unwrap();

    let ckpt_dir = dir.path().join("ckpt");
    let mut metrics = Vec::new();
    let path = commands::train(&data, cfg, Some(9), &ckpt_dir, &mut metrics).unwrap();
    assert_eq!(path, ckpt_dir.join("checkpoint.json"));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(metrics).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["step"], i + 1);
        for key in ["recon_nll", "pos_nll", "emb_nll", "lr"] {
            assert!(l[key].as_f64().unwrap().is_finite(), "{key}");
        }
    }
    let ck = load_checkpoint(&ckpt_dir).unwrap();
    assert_eq!((ck.step, ck.config.seed), (5, 9));

    let report_path = dir.path().join("report.json");
    let report = commands::eval(&ckpt_dir, &data, 0, &report_path).unwrap();
    let on_disk: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(on_disk["recon_cd"].as_f64().unwrap(), report.recon_cd);
    assert_eq!(on_disk["per_drawing"].as_array().unwrap().len(), 6);
    let again = commands::eval(&ckpt_dir, &data, 0, &report_path).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
}
