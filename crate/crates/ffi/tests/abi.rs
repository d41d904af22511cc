use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mtkit_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    mtk_string_free(p);
    s
}

#[test]
fn scorer_matches_the_core_corpus_functions() {
    let pairs = [
        ("the cat is on the mat", "the cat sat on the mat"),
        ("a quick brown fox jumps", "the quick brown fox jumped"),
        ("hello there general", "hello there general kenobi"),
    ];
    let hyps: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    unsafe {
        let s = mtk_scorer_new(MtkTokenizer::Mteval13a);
        for (h, r) in pairs {
            assert_eq!(mtk_scorer_add(s, c(h).as_ptr(), c(r).as_ptr()), MtkStatus::Ok);
        }
        let (mut bleu, mut chrf) = (0.0, 0.0);
        assert_eq!(mtk_scorer_bleu(s, &mut bleu), MtkStatus::Ok);
        assert_eq!(mtk_scorer_chrf(s, &mut chrf), MtkStatus::Ok);
        assert_eq!(mtk_scorer_len(s), 3);
        mtk_scorer_free(s);
        assert_eq!(bleu, mtkit::metrics::corpus_bleu(&hyps, &refs).unwrap());
        assert_eq!(chrf, mtkit::metrics::corpus_chrf(&hyps, &refs).unwrap());
    }
}

#[test]
fn errors_set_a_thread_local_message() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(mtk_sentence_chrf(ptr::null(), c("x").as_ptr(), &mut out), MtkStatus::NullPointer);
        assert!(take(mtk_last_error()).contains("hyp"));
        let bad = [0xffu8, 0];
        assert_eq!(mtk_sentence_chrf(bad.as_ptr().cast(), c("x").as_ptr(), &mut out), MtkStatus::InvalidUtf8);
        // Success clears the message.
        assert_eq!(mtk_sentence_chrf(c("x").as_ptr(), c("x").as_ptr(), &mut out), MtkStatus::Ok);
        assert!(mtk_last_error().is_null());
        // Another thread has its own slot.
        assert_eq!(mtk_sentence_chrf(ptr::null(), c("x").as_ptr(), &mut out), MtkStatus::NullPointer);
        std::thread::spawn(|| assert!(mtk_last_error().is_null())).join().unwrap();
        assert!(!mtk_last_error().is_null());
    }
}

#[test]
fn prompt_builder_renders_few_shot_layouts() {
    unsafe {
        let b = mtk_prompt_new(MtkTemplate::FewShot2, c("German").as_ptr(), c("English").as_ptr());
        assert!(!b.is_null());
        let mut out = ptr::null_mut();
        assert_eq!(mtk_prompt_render(b, c("Hallo").as_ptr(), &mut out), MtkStatus::InvalidArgument);
        assert!(take(mtk_last_error()).contains("shot_count_mismatch"));
        assert_eq!(mtk_prompt_add_shot(b, c("Guten Morgen.").as_ptr(), c("Good morning.").as_ptr()), MtkStatus::Ok);
        assert_eq!(mtk_prompt_render(b, c("Hallo").as_ptr(), &mut out), MtkStatus::Ok);
        assert_eq!(
            take(out),
            "Consider the following 1 translations from German to English.\nExample 1\nSource: Guten Morgen.\nTarget: Good morning.\n\nTranslate the source text from German to English.\nSource: Hallo\nTarget:"
        );
        for _ in 0..4 {
            assert_eq!(mtk_prompt_add_shot(b, c("a").as_ptr(), c("b").as_ptr()), MtkStatus::Ok);
        }
        assert_eq!(mtk_prompt_add_shot(b, c("a").as_ptr(), c("b").as_ptr()), MtkStatus::InvalidArgument);
        mtk_prompt_free(b);
        assert!(mtk_prompt_new(MtkTemplate::ZeroShot, ptr::null(), c("English").as_ptr()).is_null());
    }
}

#[test]
fn postprocess_and_filter() {
    unsafe {
        let mut text = ptr::null_mut();
        let mut finish = MtkFinish::Eos;
        assert_eq!(mtk_postprocess(c("  Hi there").as_ptr(), c("stop").as_ptr(), ptr::null(), &mut text, &mut finish), MtkStatus::Ok);
        assert_eq!((take(text).as_str(), finish), ("Hi there", MtkFinish::Eos));
        assert_eq!(mtk_postprocess(c(" Hi").as_ptr(), c("stop").as_ptr(), c("\n").as_ptr(), &mut text, &mut finish), MtkStatus::Ok);
        assert_eq!((take(text).as_str(), finish), ("Hi", MtkFinish::NewlineTruncated));
        assert_eq!(mtk_postprocess(c(" Hi").as_ptr(), c("length").as_ptr(), ptr::null(), &mut text, &mut finish), MtkStatus::Ok);
        assert_eq!((take(text).as_str(), finish), ("Hi", MtkFinish::LengthCapped));

        let mut d = MtkFilterDecision::Keep;
        let cases = [
            ((0.85, 0.80, 0.80), MtkFilterDecision::Keep),
            ((0.8499, 0.9, 0.9), MtkFilterDecision::DropBicleanerLow),
            ((0.9, 0.7999, 0.9), MtkFilterDecision::DropKiwiFwdLow),
            ((0.9, 0.9, 0.7999), MtkFilterDecision::DropKiwiRevLow),
            ((0.9, f64::NAN, 0.9), MtkFilterDecision::DropMissingScore),
        ];
        for ((b, f, r), want) in cases {
            assert_eq!(mtk_filter_decision(b, f, r, 0.85, 0.80, &mut d), MtkStatus::Ok);
            assert_eq!(d, want, "{b} {f} {r}");
        }
        assert_eq!(mtk_filter_decision(0.9, 0.9, 0.9, 1.5, 0.8, &mut d), MtkStatus::InvalidArgument);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mtk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles the C smoke program against the generated header and the
/// static library. Skipped when no C compiler or archive is available.
#[test]
fn c_program_links_against_the_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmtkit_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: {} or {cc} not available", lib.display());
        return;
    }
    let out = tempfile_path("mtkit_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}-{}", std::process::id()))
}
