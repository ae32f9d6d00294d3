use std::ffi::{CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use cosinet::corpus::QuestionGroup;
use cosinet::embed::EmbeddingTable;
use cosinet::eval::evaluate;
use cosinet::model::io::save_model;
use cosinet::model::{ContextKind, Cosinet, CosinetConfig, ModelScorer};
use cosinet_ffi::*;

const JSONL: &str = r#"{"question_id":"a","question":"who wrote the book ?","candidates":[{"text":"the book is old","label":0},{"text":"the author wrote it","label":1},{"text":"nothing","label":0}]}
{"question_id":"b","question":"where is paris ?","candidates":[{"text":"paris is in france","label":1},{"text":"a city","label":0}]}
{"question_id":"c","question":"unanswered ?","candidates":[{"text":"no","label":0}]}
"#;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cosinet_last_error()) }.to_str().unwrap().to_owned()
}

fn table() -> EmbeddingTable {
    let words = ["who", "wrote", "the", "book", "?", "author", "it", "where", "is", "paris", "in", "france", "a", "city"];
    EmbeddingTable::from_entries(
        3,
        words.iter().enumerate().map(|(i, w)| (w.to_string(), vec![i as f32 * 0.1, 1.0 - i as f32 * 0.05, (i % 3) as f32])),
    )
    .unwrap()
}

fn write_fixtures(dir: &Path) -> (CString, CString, Cosinet<f32>) {
    let data = dir.join("d.jsonl");
    fs::write(&data, JSONL).unwrap();
    let model = Cosinet::<f32>::new(CosinetConfig {
        embedding_dim: 3,
        conv_hidden: 4,
        kernel_width: 2,
        context: ContextKind::Birnn,
        seed: 1,
    })
    .unwrap();
    let path = dir.join("m.bin");
    save_model(&path, &model, &table()).unwrap();
    (cpath(&data), cpath(&path), model)
}

#[test]
fn dataset_baseline_and_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model_path, model) = write_fixtures(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(cosinet_dataset_load(data.as_ptr(), &mut ds), CosinetStatus::Ok);
        let mut n = 0;
        assert_eq!(cosinet_dataset_len(ds, &mut n), CosinetStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(cosinet_dataset_group_len(ds, 0, &mut n), CosinetStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(cosinet_dataset_group_len(ds, 2, &mut n), CosinetStatus::OutOfRange);

        let mut m = CosinetMetrics::default();
        assert_eq!(cosinet_baseline_evaluate(ds, CosinetBaseline::ReciprocalRank, &mut m), CosinetStatus::Ok);
        assert_eq!((m.map, m.mrr, m.p_at_1, m.n_questions), (75.0, 75.0, 50.0, 2));

        let mut handle = ptr::null_mut();
        assert_eq!(cosinet_model_load(model_path.as_ptr(), &mut handle), CosinetStatus::Ok);
        let mut count = 0;
        assert_eq!(cosinet_model_param_count(handle, &mut count), CosinetStatus::Ok);
        assert_eq!(count, model.param_count());

        // matches the library evaluation on the same groups
        let groups: Vec<QuestionGroup> = cosinet::corpus::ingest_jsonl(dir.path().join("d.jsonl")).unwrap().groups;
        let t = table();
        let expected = evaluate(&ModelScorer { model: &model, table: &t }, &groups).unwrap();
        assert_eq!(cosinet_model_evaluate(handle, ds, &mut m), CosinetStatus::Ok);
        assert_eq!((m.map, m.mrr, m.p_at_1), (expected.map, expected.mrr, expected.p_at_1));

        let mut scores = [0.0f64; 3];
        let mut written = 0;
        assert_eq!(cosinet_model_score_group(handle, ds, 0, scores.as_mut_ptr(), 2, &mut written), CosinetStatus::BufferTooSmall);
        assert_eq!(written, 3);
        assert!(last_error().contains("buffer holds 2"));
        assert_eq!(cosinet_model_score_group(handle, ds, 0, scores.as_mut_ptr(), 3, &mut written), CosinetStatus::Ok);
        assert_eq!(scores.to_vec(), model.score_group(&groups[0], &t).unwrap());
        assert_eq!(cosinet_model_score_group(handle, ds, 9, scores.as_mut_ptr(), 3, &mut written), CosinetStatus::OutOfRange);

        cosinet_model_free(handle);
        cosinet_dataset_free(ds);
    }
}

#[test]
fn failures_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _, _) = write_fixtures(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = cpath(&dir.path().join("missing.jsonl"));
        assert_eq!(cosinet_dataset_load(missing.as_ptr(), &mut ds), CosinetStatus::Io);
        assert!(ds.is_null());
        assert!(last_error().contains("missing.jsonl"));

        let bad = dir.path().join("bad.jsonl");
        fs::write(&bad, "{not json}\n").unwrap();
        assert_eq!(cosinet_dataset_load(cpath(&bad).as_ptr(), &mut ds), CosinetStatus::Parse);

        let mut model = ptr::null_mut();
        assert_eq!(cosinet_model_load(data.as_ptr(), &mut model), CosinetStatus::ModelFile);
        assert!(model.is_null());
        assert_eq!(cosinet_dataset_load(ptr::null(), &mut ds), CosinetStatus::NullPointer);
        assert_eq!(cosinet_dataset_load(data.as_ptr(), ptr::null_mut()), CosinetStatus::NullPointer);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(cosinet_dataset_load(invalid.as_ptr().cast(), &mut ds), CosinetStatus::InvalidUtf8);

        let mut count = 0;
        assert_eq!(cosinet_param_count(CosinetContext::Bilstm, &mut count), CosinetStatus::Ok);
        assert_eq!(count, 1_805_101);
        assert_eq!(last_error(), "");
    }
}
