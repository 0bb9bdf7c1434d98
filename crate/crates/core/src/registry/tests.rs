use std::fs;
use std::path::Path;
use std::time::Duration;

use super::*;
use crate::privacy::{privacy_report, OutputStatistics};
use crate::unlearn::Method;

fn small_spec() -> WorkspaceSpec {
    WorkspaceSpec {
        dataset: DatasetSpec {
            seed: 3,
            n_classes: 4,
            n_per_class: 40,
            dim: 6,
            forget_class: 1,
            ..DatasetSpec::default()
        },
        hidden_widths: vec![16, 8],
        train: TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        },
    }
}

fn registry(dir: Option<&Path>, workers: usize) -> Registry {
    Registry::new(RegistryOptions {
        data_dir: dir.map(Path::to_path_buf),
        max_workers: workers,
    })
    .unwrap()
}

fn grid(method: &str, epochs: Vec<usize>, lrs: Vec<f64>) -> HyperGrid {
    HyperGrid {
        base_model_id: ORIGINAL_ID.into(),
        method: method.into(),
        epochs,
        lrs,
        batch_sizes: vec![16],
        seed: 11,
        method_params: BTreeMap::new(),
    }
}

fn build(reg: &Registry, ws: &str, g: &HyperGrid) -> Vec<JobStatus> {
    let jobs = reg.submit_build(ws, g).unwrap();
    reg.wait_jobs(&jobs).unwrap()
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn argmax_accuracy(model: &Mlp, data: &crate::dataset::LabeledDataset, idx: &[usize]) -> f64 {
    let logits = model.logits(&data.features).unwrap();
    let hits = idx
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == data.labels[i]
        })
        .count();
    hits as f64 / idx.len() as f64
}

#[test]
fn create_trains_two_reference_models_and_reuses_them() {
    let reg = registry(None, 2);
    let info = reg.create_workspace(&small_spec()).unwrap();
    assert_eq!(info.model_count, 2);
    let models = reg.list_models(&info.id, &ListQuery::default()).unwrap();
    let kinds: Vec<(String, ModelKind)> = models.iter().map(|r| (r.id.clone(), r.kind)).collect();
    assert_eq!(
        kinds,
        vec![(ORIGINAL_ID.to_string(), ModelKind::Original), (RETRAINED_ID.to_string(), ModelKind::Retrained)]
    );
    let first = reg.model_params(&info.id, ORIGINAL_ID).unwrap();
    let again = reg.create_workspace(&small_spec()).unwrap();
    assert_eq!(again, info);
    assert!(Arc::ptr_eq(&first, &reg.model_params(&info.id, ORIGINAL_ID).unwrap()));
    assert_eq!(reg.list_workspaces().len(), 1);
}

#[test]
fn workspace_on_disk_is_reused_by_a_fresh_registry() {
    let tmp = tempfile::tempdir().unwrap();
    let info = registry(Some(tmp.path()), 1).create_workspace(&small_spec()).unwrap();
    let reg = registry(Some(tmp.path()), 1);
    assert_eq!(reg.create_workspace(&small_spec()).unwrap(), info);
    let fresh = References::train(&small_spec()).unwrap().references;
    assert_eq!(*reg.model_params(&info.id, ORIGINAL_ID).unwrap(), *fresh.original);
}

#[test]
fn forget_class_out_of_range_is_rejected() {
    let mut spec = small_spec();
    spec.dataset.forget_class = 4;
    let err = registry(None, 1).create_workspace(&spec).unwrap_err();
    assert!(err.to_string().contains("forget"), "{err}");
}

#[test]
fn grid_of_six_gives_six_jobs_and_ids_in_grid_order() {
    let reg = registry(None, 3);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    let g = grid("ft", vec![1, 2, 3], vec![0.01, 0.05]);
    let done = build(&reg, &ws, &g);
    assert_eq!(done.len(), 6);
    let expanded = expand_grid(&g).unwrap();
    for (i, (status, cfg)) in done.iter().zip(&expanded).enumerate() {
        assert_eq!(status.state, JobState::Done, "{:?}", status.error);
        let id = format!("ft-{:04}", i + 1);
        assert_eq!(status.model_ids, vec![id.clone()]);
        assert_eq!(&status.config, cfg);
        let record = reg.model(&ws, &id).unwrap();
        assert_eq!(record.config, RecordConfig::Unlearn(cfg.clone()));
        assert_eq!(record.base_model_id.as_deref(), Some(ORIGINAL_ID));
        assert_eq!(record.history.len(), cfg.epochs);
        assert_eq!(status.progress, Progress { completed: cfg.epochs, total: cfg.epochs });
    }
    assert_eq!(reg.workspace_info(&ws).unwrap().model_count, 8);
}

#[test]
fn peak_concurrency_respects_worker_limit() {
    let reg = registry(None, 2);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    build(&reg, &ws, &grid("ft", vec![4, 5, 6], vec![0.01, 0.02]));
    let peak = reg.peak_concurrency();
    assert!((1..=2).contains(&peak), "peak {peak}");
}

#[test]
fn diverging_job_is_marked_failed_without_a_model() {
    let reg = registry(None, 2);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    let done = build(&reg, &ws, &grid("ga", vec![5], vec![1e6]));
    assert_eq!(done[0].state, JobState::Failed);
    assert!(done[0].error.as_deref().is_some_and(|e| !e.is_empty()));
    assert!(done[0].model_ids.is_empty());
    assert!(reg.model(&ws, "ga-0001").is_err());
    assert_eq!(reg.workspace_info(&ws).unwrap().model_count, 2);
}

#[test]
fn unknown_method_workspace_and_base_are_not_found() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    assert!(matches!(reg.submit_build(&ws, &grid("nope", vec![1], vec![0.1])), Err(Error::NotFound { kind: "method", .. })));
    assert!(matches!(reg.submit_build("missing", &grid("ft", vec![1], vec![0.1])), Err(Error::NotFound { kind: "workspace", .. })));
    let mut g = grid("ft", vec![1], vec![0.1]);
    g.base_model_id = "ft-0099".into();
    assert!(matches!(reg.submit_build(&ws, &g), Err(Error::NotFound { kind: "model", .. })));
    assert!(matches!(reg.job("job-999999"), Err(Error::NotFound { kind: "job", .. })));
}

#[test]
fn job_events_stream_every_epoch() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    let jobs = reg.submit_build(&ws, &grid("rl", vec![4], vec![0.01])).unwrap();
    let id = &jobs[0].job_id;
    let mut events = Vec::new();
    loop {
        let (fresh, state) = reg.job_events(id, events.len(), Duration::from_secs(5)).unwrap();
        events.extend(fresh);
        if state.is_terminal() {
            let (tail, _) = reg.job_events(id, events.len(), Duration::ZERO).unwrap();
            events.extend(tail);
            assert_eq!(state, JobState::Done);
            break;
        }
    }
    let epochs: Vec<usize> = events.iter().map(|e| e.epoch).filter(|&e| e > 0).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert!(events.iter().all(|e| &e.job_id == id && (0.0..=1.0).contains(&e.ua)));
}

#[test]
fn listing_sorts_and_filters() {
    let reg = registry(None, 2);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    build(&reg, &ws, &grid("ft", vec![1, 3], vec![0.05]));
    build(&reg, &ws, &grid("rl", vec![2], vec![0.02]));
    let desc = reg.list_models(&ws, &ListQuery::parse(Some("-WCPS"), None).unwrap()).unwrap();
    assert_eq!(desc.len(), 5);
    assert!(desc.windows(2).all(|w| w[0].summary.wcps >= w[1].summary.wcps));
    let asc = reg.list_models(&ws, &ListQuery::parse(Some("ua"), None).unwrap()).unwrap();
    assert!(asc.windows(2).all(|w| w[0].summary.ua <= w[1].summary.ua));
    let ft: Vec<String> = reg
        .list_models(&ws, &ListQuery::parse(None, Some("ft")).unwrap())
        .unwrap()
        .into_iter()
        .map(|r| r.id)
        .collect();
    assert_eq!(ft, vec!["ft-0001", "ft-0002"]);
    let originals = reg.list_models(&ws, &ListQuery::parse(None, Some("original")).unwrap()).unwrap();
    assert_eq!(originals.len(), 1);
    assert!(ListQuery::parse(Some("bogus"), None).is_err());
}

#[test]
fn stored_summaries_match_recomputed_metrics() {
    let reg = registry(None, 2);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    build(&reg, &ws, &grid("scrub", vec![2], vec![0.05]));
    build(&reg, &ws, &grid("ga", vec![1], vec![0.05]));
    let p = reg.partition(&ws).unwrap();
    let retrained = reg.model_params(&ws, RETRAINED_ID).unwrap();
    let forget = p.forget_train_set();
    let reference = OutputStatistics::compute(&retrained, &forget.features, &p.forget_train).unwrap();
    for record in reg.list_models(&ws, &ListQuery::default()).unwrap() {
        let model = reg.model_params(&ws, &record.id).unwrap();
        let s = record.summary;
        let expect = [
            (s.ua, argmax_accuracy(&model, &p.train, &p.forget_train)),
            (s.ra, argmax_accuracy(&model, &p.train, &p.retain_train)),
            (s.tua, argmax_accuracy(&model, &p.test, &p.forget_test)),
            (s.tra, argmax_accuracy(&model, &p.test, &p.retain_test)),
        ];
        for (stored, fresh) in expect {
            assert!((stored - fresh).abs() <= 1e-9, "{}: {stored} vs {fresh}", record.id);
        }
        let stats = OutputStatistics::compute(&model, &forget.features, &p.forget_train).unwrap();
        let wcps = privacy_report(&reference, &stats).unwrap().wcps;
        assert!((s.wcps - wcps).abs() <= 1e-9, "{}", record.id);
        assert!(s.rt_seconds >= 0.0);
    }
    assert_eq!(reg.model(&ws, RETRAINED_ID).unwrap().summary.wcps, 1.0);
}

#[test]
fn comparisons_are_antisymmetric_and_cached() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    build(&reg, &ws, &grid("ft", vec![2], vec![0.05]));

    let same = reg.compare(&ws, "ft-0001", "ft-0001").unwrap();
    assert!(same.class_diff_train.diff.iter().chain(&same.class_diff_test.diff).all(|d| *d == 0.0));
    assert_eq!(same.class_diff_train.retain_avg_diff, 0.0);

    let rr = reg.compare(&ws, RETRAINED_ID, RETRAINED_ID).unwrap();
    assert_eq!(rr.a.privacy.wcps, 1.0);

    let ab = reg.compare(&ws, RETRAINED_ID, ORIGINAL_ID).unwrap();
    let ba = reg.compare(&ws, ORIGINAL_ID, RETRAINED_ID).unwrap();
    assert_eq!((ab.model_a.as_str(), ab.model_b.as_str()), (RETRAINED_ID, ORIGINAL_ID));
    assert_eq!(ab.clone().swapped(), ba);
    for (x, y) in ab.class_diff_train.diff.iter().zip(&ba.class_diff_train.diff) {
        assert_eq!(*x, -*y);
    }
    assert_eq!(ab.a, ba.b);
    assert_eq!(reg.compare(&ws, ORIGINAL_ID, RETRAINED_ID).unwrap(), ba);
    assert!(reg.compare(&ws, ORIGINAL_ID, "nope").is_err());
}

#[test]
fn attack_detail_is_consistent_with_the_report() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    let summary = reg.model(&ws, ORIGINAL_ID).unwrap().summary;
    let mut min_ps = f64::INFINITY;
    for statistic in Statistic::ALL {
        for direction in [AttackDirection::GeqIsRetrained, AttackDirection::LeqIsRetrained] {
            let d = reg.attack_detail(&ws, ORIGINAL_ID, statistic, direction).unwrap();
            assert_eq!(d.wcps, summary.wcps);
            assert!(d.privacy_score >= d.wcps);
            assert_eq!(d.privacy_score, d.sweep.privacy_score.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(d.sample_ids.len(), d.unlearned_values.len());
            assert_eq!(d.retrained_values.len(), d.unlearned_values.len());
            min_ps = min_ps.min(d.privacy_score);
        }
    }
    assert_eq!(min_ps, summary.wcps);
}

#[test]
fn upload_round_trips_and_checks_architecture() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    let original = reg.model_params(&ws, ORIGINAL_ID).unwrap();
    let record = reg.upload_model(&ws, &original.serialize().unwrap(), Some("copy".into())).unwrap();
    assert_eq!(record.id, "upload-0001");
    assert_eq!(record.kind, ModelKind::Uploaded);
    let base = reg.model(&ws, ORIGINAL_ID).unwrap().summary;
    assert_eq!((record.summary.ua, record.summary.ra, record.summary.wcps), (base.ua, base.ra, base.wcps));

    let mut other = small_spec();
    other.hidden_widths = vec![16];
    let wrong = Mlp::init(&other.arch(), 1).unwrap();
    assert!(reg.upload_model(&ws, &wrong.serialize().unwrap(), None).is_err());
    assert!(reg.upload_model(&ws, "{not json", None).is_err());
    assert_eq!(reg.workspace_info(&ws).unwrap().model_count, 3);
}

#[test]
fn custom_method_runs_through_the_pool() {
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    reg.register_custom_method("identity", |m, _, _| Ok((m.clone(), Vec::new()))).unwrap();
    assert!(reg.methods().contains(&"identity".to_string()));
    assert!(reg.register_custom_method("ft", |m, _, _| Ok((m.clone(), Vec::new()))).is_err());
    let done = build(&reg, &ws, &grid("identity", vec![1], vec![0.1]));
    assert_eq!(done[0].state, JobState::Done, "{:?}", done[0].error);
    let rec = reg.model(&ws, "identity-0001").unwrap();
    assert_eq!(rec.summary.wcps, reg.model(&ws, ORIGINAL_ID).unwrap().summary.wcps);
}

#[test]
fn save_load_save_is_byte_identical() {
    let data = tempfile::tempdir().unwrap();
    let reg = registry(Some(data.path()), 2);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    build(&reg, &ws, &grid(Method::Gu.id(), vec![2], vec![0.05]));
    reg.compare(&ws, "gu-0001", ORIGINAL_ID).unwrap();

    let first = tempfile::tempdir().unwrap();
    reg.save_workspace(&ws, first.path()).unwrap();
    assert_eq!(files_under(first.path()), files_under(&data.path().join(&ws)));

    let other = registry(None, 1);
    let info = other.load_workspace(first.path()).unwrap();
    assert_eq!(info, reg.workspace_info(&ws).unwrap());
    let second = tempfile::tempdir().unwrap();
    other.save_workspace(&ws, second.path()).unwrap();
    let (a, b) = (files_under(first.path()), files_under(second.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
    assert!(a.contains_key(&format!("reports/{}", ComparisonReport::file_name("gu-0001", ORIGINAL_ID))));

    let reloaded = registry(Some(data.path()), 1);
    assert_eq!(reloaded.load_all().unwrap(), vec![info]);
    assert_eq!(reloaded.list_models(&ws, &ListQuery::default()).unwrap(), reg.list_models(&ws, &ListQuery::default()).unwrap());
    let next = reloaded.upload_model(&ws, &reg.model_params(&ws, ORIGINAL_ID).unwrap().serialize().unwrap(), None).unwrap();
    assert_eq!(next.id, "upload-0002");
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    reg.save_workspace(&ws, dir.path()).unwrap();
    fs::remove_file(dir.path().join(store::checkpoint_rel(RETRAINED_ID))).unwrap();
    let err = registry(None, 1).load_workspace(dir.path()).unwrap_err();
    assert!(matches!(&err, Error::NotFound { kind: "checkpoint", id } if id == RETRAINED_ID), "{err}");
}

#[test]
fn corrupt_record_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry(None, 1);
    let ws = reg.create_workspace(&small_spec()).unwrap().id;
    reg.save_workspace(&ws, dir.path()).unwrap();
    fs::write(dir.path().join("models/original.record.json"), "{\"id\": 3}").unwrap();
    let err = registry(None, 1).load_workspace(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("original.record.json"), "{err}");
}
