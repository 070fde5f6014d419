//! Exercises the C surface exactly as a foreign caller would: raw pointers,
//! status codes and manual frees.

use std::ffi::{CStr, CString};
use std::ptr;

use auricle_ffi::*;

fn last_error_text() -> String {
    unsafe {
        let ptr = auricle_last_error();
        assert!(!ptr.is_null(), "expected an error message");
        let text = CStr::from_ptr(ptr).to_string_lossy().into_owned();
        auricle_string_free(ptr);
        text
    }
}

#[test]
fn version_is_non_null() {
    let v = auricle_version();
    assert!(!v.is_null());
    let text = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
    assert!(!text.is_empty());
}

#[test]
fn peak_dbfs_values_and_errors() {
    unsafe {
        let samples = [0.5f64, -0.1];
        let mut out = 0.0f64;
        assert_eq!(
            auricle_peak_dbfs(samples.as_ptr(), samples.len(), &mut out),
            AuricleStatus::Ok
        );
        assert!((out - (-6.0206)).abs() < 0.0005);

        // empty segment is a domain error with a readable message
        assert_eq!(
            auricle_peak_dbfs(samples.as_ptr(), 0, &mut out),
            AuricleStatus::Domain
        );
        assert!(last_error_text().contains("empty"));

        assert_eq!(
            auricle_peak_dbfs(ptr::null(), 2, &mut out),
            AuricleStatus::InvalidArgument
        );
    }
}

#[test]
fn iqr_filter_drops_outlier() {
    unsafe {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 100.0];
        let mut out = [0.0f64; 10];
        let mut out_len = 0usize;
        assert_eq!(
            auricle_iqr_filter(values.as_ptr(), values.len(), out.as_mut_ptr(), &mut out_len),
            AuricleStatus::Ok
        );
        assert_eq!(out_len, 9);
        assert_eq!(&out[..9], &values[..9]);

        // non-finite inputs are rejected rather than crashing
        let bad = [1.0, f64::NAN, 3.0];
        assert_eq!(
            auricle_iqr_filter(bad.as_ptr(), bad.len(), out.as_mut_ptr(), &mut out_len),
            AuricleStatus::InvalidArgument
        );
    }
}

#[test]
fn welch_p_value_matches_library() {
    unsafe {
        let mut p = -1.0f64;
        assert_eq!(
            auricle_welch_p_value(30, 0.0, 0.01, 30, 10.0, 0.01, &mut p),
            AuricleStatus::Ok
        );
        assert!(p < 1e-12, "p = {p}");

        // undefined test surfaces as a runtime-class failure
        assert_eq!(
            auricle_welch_p_value(1, 0.0, 1.0, 30, 0.0, 1.0, &mut p),
            AuricleStatus::Runtime
        );
    }
}

#[test]
fn dataset_handle_roundtrip() {
    use auricle::bench::{write_dataset, Dataset, QAItem, TaskKind};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pitch.jsonl");
    let items: Vec<QAItem> = [0usize, 0, 1]
        .iter()
        .enumerate()
        .map(|(i, &g)| QAItem {
            id: format!("p{i}"),
            task: TaskKind::Pitch,
            question: "Higher?".into(),
            choices: vec!["higher".into(), "lower".into()],
            answer: g,
            metadata: Default::default(),
        })
        .collect();
    write_dataset(&Dataset::new(TaskKind::Pitch, items).unwrap(), &path).unwrap();

    unsafe {
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut AuricleDataset = ptr::null_mut();
        assert_eq!(
            auricle_dataset_open(c_path.as_ptr(), &mut handle),
            AuricleStatus::Ok
        );
        assert_eq!(auricle_dataset_len(handle), 3);
        let task = CStr::from_ptr(auricle_dataset_task(handle));
        assert_eq!(task.to_str().unwrap(), "pitch");
        let mut acc = 0.0f64;
        assert_eq!(
            auricle_dataset_majority_accuracy(handle, &mut acc),
            AuricleStatus::Ok
        );
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        auricle_dataset_free(handle);

        // missing file maps to an io status
        let missing = CString::new("/nonexistent/file.jsonl").unwrap();
        let mut handle: *mut AuricleDataset = ptr::null_mut();
        assert_eq!(
            auricle_dataset_open(missing.as_ptr(), &mut handle),
            AuricleStatus::Io
        );
    }
}

#[test]
fn engine_generates_trace_json() {
    use auricle::spanprep::{CLOSE_DELIM, OPEN_DELIM};
    use auricle::tinylm::{Checkpoint, LMConfig, TinyLm, Tokenizer};

    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.json");
    let tokenizer = Tokenizer::ascii()
        .with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])
        .unwrap();
    let model = TinyLm::new(LMConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        ffn_mult: 2,
        max_seq_len: 64,
        vocab_size: tokenizer.vocab_size(),
        seed: 9,
    })
    .unwrap();
    Checkpoint::capture(&model, &tokenizer)
        .save(&model_path)
        .unwrap();

    unsafe {
        let c_model = CString::new(model_path.to_str().unwrap()).unwrap();
        let mut engine: *mut AuricleEngine = ptr::null_mut();
        assert_eq!(
            auricle_engine_open(c_model.as_ptr(), ptr::null(), ptr::null(), &mut engine),
            AuricleStatus::Ok
        );

        let prompt = CString::new("say something").unwrap();
        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(
            auricle_engine_generate(engine, prompt.as_ptr(), 8, 2, &mut json),
            AuricleStatus::Ok
        );
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        let trace: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(trace["tokens"].as_array().unwrap().len() > 0);
        assert_eq!(trace["prompt_len"].as_u64().unwrap(), 13);
        auricle_string_free(json);

        // repeated generation is deterministic
        let mut json2: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(
            auricle_engine_generate(engine, prompt.as_ptr(), 8, 2, &mut json2),
            AuricleStatus::Ok
        );
        assert_eq!(text, CStr::from_ptr(json2).to_str().unwrap());
        auricle_string_free(json2);
        auricle_engine_free(engine);

        // bad encoder spec is a config error
        let bad_spec = CString::new("fourier:9").unwrap();
        let mut engine: *mut AuricleEngine = ptr::null_mut();
        assert_eq!(
            auricle_engine_open(c_model.as_ptr(), ptr::null(), bad_spec.as_ptr(), &mut engine),
            AuricleStatus::Config
        );
        assert!(last_error_text().contains("encoder spec"));
    }
}
