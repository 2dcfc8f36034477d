use std::collections::{BTreeMap, BTreeSet};

use flarewatch::classify::{Label, LabelSource};
use flarewatch::features::FeatureVector;
use flarewatch::geometry::ObjectClass;
use flarewatch::labeling::{rule_label, LabelRecord};
use flarewatch::pipeline::{
    emit_scatter_plot, extract_samples, label_samples, read_feature_log, run_training, simulated_frames,
    verify_alert, EfficiencyModel, FeatureLogWriter, FrameProcessor, LabelingMode, Monitor, MonitorConfig,
    PipelineError, ProcessorConfig, TrainingOptions,
};
use flarewatch::segment::{segment_box, SegmenterConfig};
use flarewatch::simulator::{preset, render_frame, Preset, Scene};

fn rule_records(presets: &[Preset]) -> Vec<LabelRecord> {
    let mut records = Vec::new();
    for p in presets {
        let scene = Scene::new(preset(*p)).unwrap();
        let samples = extract_samples(simulated_frames(scene), ProcessorConfig::default()).unwrap();
        let pending = label_samples(&samples, &LabelingMode::Rule, None).unwrap();
        records.extend(pending.into_iter().map(|p| LabelRecord {
            frame: p.frame,
            track_id: p.track_id,
            features: p.features,
            label: p.label.unwrap(),
            source: p.source,
            transcript: None,
        }));
    }
    records
}

fn trained_model() -> EfficiencyModel {
    let records = rule_records(&[Preset::CleanHigh, Preset::SmokyLow]);
    run_training(&records, &TrainingOptions::default()).unwrap().model
}

#[test]
fn rule_labels_follow_preset_regime() {
    for (p, want) in [(Preset::CleanHigh, Label::High), (Preset::SmokyLow, Label::Low)] {
        let records = rule_records(&[p]);
        assert!(records.len() >= 190, "{p:?}: {}", records.len());
        assert!(records.iter().all(|r| r.label == want), "{p:?}");
    }
}

#[test]
fn training_on_two_regimes_is_balanced_and_perfect() {
    let records = rule_records(&[Preset::CleanHigh, Preset::SmokyLow]);
    let high = records.iter().filter(|r| r.label == Label::High).count();
    assert_eq!(high * 2, records.len());
    let out = run_training(&records, &TrainingOptions::default()).unwrap();
    let selected = &out.comparison.rows[out.comparison.selected];
    assert_eq!(selected.test.accuracy, 1.0);
    assert_eq!(out.feature_log.len(), records.len());
}

#[test]
fn empty_input_is_a_training_data_error() {
    let err = run_training(&[], &TrainingOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::TrainingData(_)));
    assert_eq!(err.exit_code(), 2);
    let one_class: Vec<_> = (0..5)
        .map(|i| LabelRecord {
            frame: None,
            track_id: None,
            features: FeatureVector::new(0.1 * i as f64, 0.5, 3.0),
            label: Label::High,
            source: LabelSource::Rule,
            transcript: None,
        })
        .collect();
    assert!(matches!(
        run_training(&one_class, &TrainingOptions::default()),
        Err(PipelineError::TrainingData(_))
    ));
}

fn monitor_run(model: &EfficiencyModel, p: Preset, cfg: MonitorConfig) -> (Vec<u8>, Vec<flarewatch::pipeline::Alert>) {
    let mut monitor = Monitor::new(model.clone(), cfg, ProcessorConfig::default()).unwrap();
    let mut log = FeatureLogWriter::new(Vec::new()).unwrap();
    let mut alerts = Vec::new();
    for r in Scene::new(preset(p)).unwrap() {
        let status = monitor.process(&r.frame, &r.annotation).unwrap();
        for row in &status.rows {
            log.write(row).unwrap();
        }
        alerts.extend(status.alerts);
        assert!(monitor.tracked_state_len() <= 2 * preset(p).stacks.len());
    }
    (log.into_inner().unwrap(), alerts)
}

#[test]
fn monitor_alerts_only_on_low_regime() {
    let model = trained_model();
    let cfg = MonitorConfig::default();
    let (_, clean) = monitor_run(&model, Preset::CleanHigh, cfg);
    assert!(clean.is_empty());
    let (log, smoky) = monitor_run(&model, Preset::SmokyLow, cfg);
    assert!(!smoky.is_empty());
    assert!(smoky[0].last_frame >= cfg.alert_window);
    let rows = read_feature_log(log.as_slice()).unwrap();
    for a in &smoky {
        assert!(verify_alert(a, &rows, cfg.alert_window), "{a:?}");
    }
    // cool-down spaces repeated alerts
    for w in smoky.windows(2) {
        assert!(w[1].last_frame >= w[0].last_frame + cfg.cooldown);
    }
}

#[test]
fn three_stacks_alerts_name_the_smoky_stack() {
    let model = trained_model();
    let (_, alerts) = monitor_run(&model, Preset::ThreeStacks, MonitorConfig::default());
    assert!(!alerts.is_empty());
    let ids: BTreeSet<u64> = alerts.iter().map(|a| a.track_id).collect();
    assert_eq!(ids.len(), 1);

    // map the alerting track to a ground-truth stack
    let mut processor = FrameProcessor::new(ProcessorConfig::default()).unwrap();
    let spec = preset(Preset::ThreeStacks);
    let mut owner = BTreeMap::new();
    for r in Scene::new(spec).unwrap().take(20) {
        for o in processor.process(&r.frame, &r.annotation).unwrap().observations {
            let best = r
                .truth
                .stacks
                .iter()
                .max_by(|a, b| {
                    o.bbox
                        .iou(&a.flame_bbox.unwrap())
                        .total_cmp(&o.bbox.iou(&b.flame_bbox.unwrap()))
                })
                .unwrap();
            owner.insert(o.track_id, best.stack_id);
        }
    }
    let id = *ids.iter().next().unwrap();
    assert_eq!(owner[&id], 2);
}

#[test]
fn monitor_output_is_byte_identical() {
    let model = trained_model();
    let a = monitor_run(&model, Preset::ThreeStacks, MonitorConfig::default());
    let b = monitor_run(&model, Preset::ThreeStacks, MonitorConfig::default());
    assert_eq!(a, b);
}

#[test]
fn tracking_identity_on_crossing_flames() {
    let mut processor = FrameProcessor::new(ProcessorConfig::default()).unwrap();
    let mut mapping: BTreeMap<u64, u64> = BTreeMap::new();
    for r in Scene::new(preset(Preset::CrossingNearMiss)).unwrap() {
        for o in processor.process(&r.frame, &r.annotation).unwrap().observations {
            let stack = r
                .truth
                .stacks
                .iter()
                .find(|s| s.flame_bbox.is_some_and(|b| b.iou(&o.bbox) > 0.5))
                .expect("reported flame matches a stack")
                .stack_id;
            assert_eq!(*mapping.entry(o.track_id).or_insert(stack), stack);
        }
    }
    assert_eq!(mapping.len(), 2);
}

#[test]
fn box_segmentation_matches_ground_truth() {
    for p in [Preset::CleanHigh, Preset::SmokyLow, Preset::ThreeStacks, Preset::Windy] {
        let spec = preset(p);
        for i in [0, 50, 150] {
            let r = render_frame(&spec, i);
            for (k, d) in r.annotation.detections.iter().enumerate() {
                if d.class != ObjectClass::Flame {
                    continue;
                }
                let truth = r.annotation.mask_for(k).unwrap();
                let seg = segment_box(&r.frame, &d.bbox, &SegmenterConfig::default()).unwrap();
                assert!(!seg.degenerate);
                let iou = seg.mask.iou(truth);
                assert!(iou >= 0.9, "{p:?} frame {i}: IoU {iou}");
            }
        }
    }
}

#[test]
fn features_without_masks_come_from_segmentation() {
    let spec = preset(Preset::CleanHigh);
    let mut with = FrameProcessor::new(ProcessorConfig::default()).unwrap();
    let mut without = FrameProcessor::new(ProcessorConfig::default()).unwrap();
    for r in Scene::new(spec).unwrap().take(10) {
        let a = with.process(&r.frame, &r.annotation).unwrap();
        let mut stripped = r.annotation.clone();
        stripped.masks = None;
        let b = without.process(&r.frame, &stripped).unwrap();
        assert_eq!(a.observations.len(), b.observations.len());
        for (x, y) in a.observations.iter().zip(&b.observations) {
            let (fx, fy) = (x.features.as_ref().unwrap(), y.features.as_ref().unwrap());
            assert!((fx.rgb_index - fy.rgb_index).abs() < 0.02);
            assert!((fx.flame_angle - fy.flame_angle).abs() < 2.0);
            assert!(rule_label(fy) == Label::High);
        }
    }
}

#[test]
fn model_file_roundtrip() {
    let model = trained_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = EfficiencyModel::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.to_json(), std::fs::read_to_string(&path).unwrap());

    let text = model.to_json();
    let truncated = &text[..text.len() / 2];
    assert!(matches!(EfficiencyModel::from_json(truncated), Err(PipelineError::Parse { .. })));
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(matches!(
        EfficiencyModel::from_json(&bumped),
        Err(PipelineError::ModelVersion { found: 2, expected: 1 })
    ));
}

#[test]
fn model_predictions_survive_roundtrip() {
    use rand::{Rng, SeedableRng};
    let model = trained_model();
    let loaded = EfficiencyModel::from_json(&model.to_json()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let f = FeatureVector::new(
            rng.random_range(0.0..3.0),
            rng.random_range(0.3..0.7),
            rng.random_range(0.0..90.0),
        );
        assert_eq!(model.classify(&f), loaded.classify(&f));
    }
}

#[test]
fn scatter_plot_is_deterministic() {
    let samples = [([-1.89, 0.21], Label::High), ([1.89, 0.30], Label::Low)];
    assert_eq!(emit_scatter_plot(&samples), emit_scatter_plot(&samples));
}
