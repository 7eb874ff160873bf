use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use wogma::checkpoint::{self, CheckpointInfo};
use wogma::graph::SkeletonGraph;
use wogma::{Model, TrainConfig};
use wogma_ffi::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        tau: 4,
        stride: 4,
        max_frames: 16,
        hidden: 8,
        feature_dim: 8,
        graph_channels: 4,
        scales: 2,
        ..TrainConfig::default()
    }
}

fn saved_model(dir: &Path) -> (Model, CString) {
    let model = Model::new(small_config(), SkeletonGraph::default_skeleton(), 4).unwrap();
    let path = dir.join("m.ckpt");
    checkpoint::save(&path, &model, CheckpointInfo { epoch: 0, seed: 4 }).unwrap();
    (model, CString::new(path.to_str().unwrap()).unwrap())
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { wogma_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn clip(len: usize, phase: f64) -> Vec<f64> {
    (0..len).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()
}

#[test]
fn stream_matches_rust_model() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    unsafe {
        let mut handle = ptr::null_mut();
        assert_eq!(wogma_model_load(path.as_ptr(), &mut handle), WogmaStatus::Ok);
        let len = wogma_model_clip_len(handle);
        assert_eq!(len, model.clip_len());
        assert_eq!(wogma_model_clip_frames(handle), 4);
        assert_eq!(wogma_model_joints(handle), 18);
        assert_eq!(wogma_model_num_outputs(handle), 2);

        let mut stream = ptr::null_mut();
        assert_eq!(wogma_stream_new(handle, &mut stream), WogmaStatus::Ok);
        // the stream keeps the model alive
        wogma_model_free(handle);

        let mut state = model.start_stream();
        for k in 0..3 {
            let c = clip(len, k as f64);
            let mut probs = [0.0; 2];
            let status = wogma_stream_push_clip(stream, c.as_ptr(), c.len(), probs.as_mut_ptr(), probs.len());
            assert_eq!(status, WogmaStatus::Ok);
            let want = model.push_clip(&mut state, &c).unwrap();
            assert_eq!(&probs[..], &want[..]);
        }
        assert_eq!(wogma_stream_clips_seen(stream), 3);
        wogma_stream_free(stream);
    }
}

#[test]
fn errors_leave_state_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    unsafe {
        let mut handle = ptr::null_mut();
        assert_eq!(wogma_model_load(path.as_ptr(), &mut handle), WogmaStatus::Ok);
        let mut stream = ptr::null_mut();
        assert_eq!(wogma_stream_new(handle, &mut stream), WogmaStatus::Ok);
        let len = wogma_model_clip_len(handle);
        let mut probs = [0.0; 2];

        let short = clip(len - 1, 0.0);
        let status = wogma_stream_push_clip(stream, short.as_ptr(), short.len(), probs.as_mut_ptr(), 2);
        assert_eq!(status, WogmaStatus::InvalidArgument);
        assert!(last_error().contains("values"), "{}", last_error());

        let mut bad = clip(len, 0.0);
        bad[3] = f64::NAN;
        let status = wogma_stream_push_clip(stream, bad.as_ptr(), bad.len(), probs.as_mut_ptr(), 2);
        assert_eq!(status, WogmaStatus::Numeric);

        let good = clip(len, 0.0);
        let status = wogma_stream_push_clip(stream, good.as_ptr(), good.len(), probs.as_mut_ptr(), 1);
        assert_eq!(status, WogmaStatus::InvalidArgument);
        let status = wogma_stream_push_clip(stream, ptr::null(), len, probs.as_mut_ptr(), 2);
        assert_eq!(status, WogmaStatus::NullArgument);
        assert_eq!(wogma_stream_clips_seen(stream), 0);

        wogma_stream_free(stream);
        wogma_model_free(handle);
    }
}

#[test]
fn load_failures_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let garbage_path = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage_path, b"not a checkpoint").unwrap();
    let garbage = CString::new(garbage_path.to_str().unwrap()).unwrap();
    unsafe {
        let mut handle = ptr::null_mut();
        assert_eq!(wogma_model_load(missing.as_ptr(), &mut handle), WogmaStatus::Io);
        assert!(handle.is_null());
        assert_eq!(wogma_model_load(garbage.as_ptr(), &mut handle), WogmaStatus::Format);
        assert!(!last_error().is_empty());
        assert_eq!(wogma_model_load(ptr::null(), &mut handle), WogmaStatus::NullArgument);
        assert_eq!(last_error(), "path is null");
        assert_eq!(wogma_model_clip_len(ptr::null()), 0);
        wogma_model_free(ptr::null_mut());
        wogma_stream_free(ptr::null_mut());
    }
}

#[test]
fn iou_and_message_truncation() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(wogma_temporal_iou(1, 10, 6, 15, &mut v), WogmaStatus::Ok);
        assert_eq!(v, 1.0 / 3.0);
        assert_eq!(wogma_temporal_iou(5, 1, 6, 15, &mut v), WogmaStatus::InvalidArgument);
        let full = wogma_last_error_message(ptr::null_mut(), 0);
        let mut small = [1 as c_char; 4];
        assert_eq!(wogma_last_error_message(small.as_mut_ptr(), 4), full);
        assert_eq!(small[3], 0);
    }
}

/// The checked-in header must compile as C and declare every export.
#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/wogma.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "wogma_model_load",
        "wogma_model_free",
        "wogma_model_clip_len",
        "wogma_model_clip_frames",
        "wogma_model_joints",
        "wogma_model_num_outputs",
        "wogma_stream_new",
        "wogma_stream_push_clip",
        "wogma_stream_clips_seen",
        "wogma_stream_free",
        "wogma_temporal_iou",
        "wogma_last_error_message",
    ] {
        assert!(text.contains(&format!(" {name}(")), "{name} missing from header");
    }
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"wogma.h\"\n\
         int probe(const char *p) {\n\
           WogmaModel *m = NULL;\n\
           WogmaStatus s = wogma_model_load(p, &m);\n\
           if (s != WOGMA_STATUS_OK) return (int)s;\n\
           size_t n = wogma_model_clip_len(m);\n\
           wogma_model_free(m);\n\
           return (int)n;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping C compile, no compiler ({cc}): {e}"),
    }
}
