//! C ABI over the `mtkit` core.
//!
//! Conventions:
//! * Every fallible function returns an [`MtkStatus`]; results go through
//!   out-pointers. On failure [`mtk_last_error`] describes the problem.
//! * Strings crossing the boundary are NUL-terminated UTF-8. Strings
//!   returned by the library are owned by the caller and must be released
//!   with [`mtk_string_free`].
//! * Handles (`MtkScorer`, `MtkPromptBuilder`) are opaque, created by a
//!   `*_new` function and released by the matching `*_free`. A handle must
//!   not be used from two threads at once; distinct handles are independent.
//! * Panics never unwind into C; they surface as `MTK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mtkit::corpus::{filter_scores, DropReason, FilterConfig, FilterDecision, ThresholdRule};
use mtkit::generation::{postprocess, EndpointStop, Finish};
use mtkit::metrics::{
    bleu_from_stats, bleu_segment_stats, chrf_from_stats, chrf_segment_stats, sentence_bleu_with, sentence_chrf,
    BleuConfig, BleuStats, BleuTokenizer, ChrfStats,
};
use mtkit::templates::{render, PromptSpec, Shot, TemplateId, MAX_SHOTS};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    EmptyCorpus = 4,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkTokenizer {
    /// Default BLEU tokenization.
    Mteval13a = 0,
    /// Chinese: CJK characters become separate tokens.
    Zh = 1,
    /// Whitespace split only.
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkTemplate {
    ZeroShot = 0,
    FewShot1 = 1,
    FewShot2 = 2,
    FewShot3 = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkFinish {
    Eos = 0,
    NewlineTruncated = 1,
    LengthCapped = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkFilterDecision {
    Keep = 0,
    DropMissingScore = 1,
    DropBicleanerLow = 2,
    DropKiwiFwdLow = 3,
    DropKiwiRevLow = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(MtkStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: MtkStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, recording errors and containing panics.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> MtkStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MtkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(MtkStatus::NullPointer, format!("{name} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(MtkStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(MtkStatus::NullPointer, format!("{name} is NULL")))
}

fn to_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .or_else(|_| fail(MtkStatus::InvalidArgument, "result contains a NUL byte"))
}

fn tokenizer(t: MtkTokenizer) -> BleuTokenizer {
    match t {
        MtkTokenizer::Mteval13a => BleuTokenizer::Mteval13a,
        MtkTokenizer::Zh => BleuTokenizer::Zh,
        MtkTokenizer::None => BleuTokenizer::None,
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn mtk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the calling thread's last error message, or NULL if the last
/// call succeeded. Free with [`mtk_string_free`].
#[no_mangle]
pub extern "C" fn mtk_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mtk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Sentence-level BLEU (exponential smoothing, effective order) on 0..100.
///
/// # Safety
/// `hyp` and `reference` must be valid NUL-terminated strings, `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtk_sentence_bleu(
    hyp: *const c_char,
    reference: *const c_char,
    tok: MtkTokenizer,
    out: *mut c_double,
) -> MtkStatus {
    guard(|| {
        let (h, r) = (str_arg(hyp, "hyp")?, str_arg(reference, "reference")?);
        *out_arg(out, "out")? = sentence_bleu_with(h, r, &BleuConfig::sentence().with_tokenizer(tokenizer(tok)));
        Ok(())
    })
}

/// Sentence-level chrF (character 6-grams, beta 2) on 0..100.
///
/// # Safety
/// As for [`mtk_sentence_bleu`].
#[no_mangle]
pub unsafe extern "C" fn mtk_sentence_chrf(
    hyp: *const c_char,
    reference: *const c_char,
    out: *mut c_double,
) -> MtkStatus {
    guard(|| {
        let (h, r) = (str_arg(hyp, "hyp")?, str_arg(reference, "reference")?);
        *out_arg(out, "out")? = sentence_chrf(h, r);
        Ok(())
    })
}

/// Accumulates sufficient statistics for corpus BLEU and chrF.
pub struct MtkScorer {
    tokenizer: BleuTokenizer,
    bleu: BleuStats,
    chrf: ChrfStats,
    segments: usize,
}

/// New empty corpus scorer. Never returns NULL.
#[no_mangle]
pub extern "C" fn mtk_scorer_new(tok: MtkTokenizer) -> *mut MtkScorer {
    Box::into_raw(Box::new(MtkScorer {
        tokenizer: tokenizer(tok),
        bleu: BleuStats::default(),
        chrf: ChrfStats::default(),
        segments: 0,
    }))
}

/// Adds one hypothesis/reference pair.
///
/// # Safety
/// `scorer` must be a live handle; the strings must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtk_scorer_add(
    scorer: *mut MtkScorer,
    hyp: *const c_char,
    reference: *const c_char,
) -> MtkStatus {
    guard(|| {
        let s = out_arg(scorer, "scorer")?;
        let (h, r) = (str_arg(hyp, "hyp")?, str_arg(reference, "reference")?);
        s.bleu += bleu_segment_stats(h, r, s.tokenizer);
        s.chrf += chrf_segment_stats(h, r);
        s.segments += 1;
        Ok(())
    })
}

/// Number of pairs added so far.
///
/// # Safety
/// `scorer` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn mtk_scorer_len(scorer: *const MtkScorer) -> usize {
    scorer.as_ref().map_or(0, |s| s.segments)
}

fn nonempty(s: &MtkScorer) -> FfiResult<&MtkScorer> {
    if s.segments == 0 {
        return fail(MtkStatus::EmptyCorpus, "no segments added");
    }
    Ok(s)
}

/// Unsmoothed corpus BLEU over everything added.
///
/// # Safety
/// `scorer` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mtk_scorer_bleu(scorer: *const MtkScorer, out: *mut c_double) -> MtkStatus {
    guard(|| {
        let s = nonempty(scorer.as_ref().ok_or(Failure(MtkStatus::NullPointer, "scorer is NULL".into()))?)?;
        let cfg = BleuConfig::corpus().with_tokenizer(s.tokenizer);
        *out_arg(out, "out")? = bleu_from_stats(&s.bleu, &cfg).score;
        Ok(())
    })
}

/// Corpus chrF over everything added.
///
/// # Safety
/// `scorer` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mtk_scorer_chrf(scorer: *const MtkScorer, out: *mut c_double) -> MtkStatus {
    guard(|| {
        let s = nonempty(scorer.as_ref().ok_or(Failure(MtkStatus::NullPointer, "scorer is NULL".into()))?)?;
        *out_arg(out, "out")? = chrf_from_stats(&s.chrf);
        Ok(())
    })
}

/// Releases a scorer. NULL is ignored.
///
/// # Safety
/// `scorer` must come from [`mtk_scorer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtk_scorer_free(scorer: *mut MtkScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// Collects example shots for one prompt layout.
pub struct MtkPromptBuilder {
    template: TemplateId,
    source_language: String,
    target_language: String,
    shots: Vec<Shot>,
}

/// New prompt builder for display-name languages ("German", "English").
/// Returns NULL on invalid arguments; see [`mtk_last_error`].
///
/// # Safety
/// The language strings must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mtk_prompt_new(
    template: MtkTemplate,
    source_language: *const c_char,
    target_language: *const c_char,
) -> *mut MtkPromptBuilder {
    let mut handle = ptr::null_mut();
    guard(|| {
        let template = match template {
            MtkTemplate::ZeroShot => TemplateId::ZeroShot,
            MtkTemplate::FewShot1 => TemplateId::FewShot1,
            MtkTemplate::FewShot2 => TemplateId::FewShot2,
            MtkTemplate::FewShot3 => TemplateId::FewShot3,
        };
        handle = Box::into_raw(Box::new(MtkPromptBuilder {
            template,
            source_language: str_arg(source_language, "source_language")?.to_string(),
            target_language: str_arg(target_language, "target_language")?.to_string(),
            shots: Vec::new(),
        }));
        Ok(())
    });
    handle
}

/// Appends an example pair.
///
/// # Safety
/// `builder` must be a live handle; the strings must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtk_prompt_add_shot(
    builder: *mut MtkPromptBuilder,
    source: *const c_char,
    target: *const c_char,
) -> MtkStatus {
    guard(|| {
        let b = out_arg(builder, "builder")?;
        if b.shots.len() >= MAX_SHOTS {
            return fail(MtkStatus::InvalidArgument, format!("at most {MAX_SHOTS} shots"));
        }
        b.shots.push(Shot {
            source: str_arg(source, "source")?.to_string(),
            target: str_arg(target, "target")?.to_string(),
        });
        Ok(())
    })
}

/// Renders the prompt for `source`. The builder keeps its shots, so it can
/// render several sources.
///
/// # Safety
/// `builder` must be a live handle, `source` valid, `out` a valid pointer.
/// The string stored in `*out` must be freed with [`mtk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mtk_prompt_render(
    builder: *const MtkPromptBuilder,
    source: *const c_char,
    out: *mut *mut c_char,
) -> MtkStatus {
    guard(|| {
        let b = builder
            .as_ref()
            .ok_or(Failure(MtkStatus::NullPointer, "builder is NULL".into()))?;
        let out = out_arg(out, "out")?;
        let spec = PromptSpec {
            template: b.template,
            source_language: b.source_language.clone(),
            target_language: b.target_language.clone(),
            source: str_arg(source, "source")?.to_string(),
            shots: b.shots.clone(),
        };
        let text = render(&spec).or_else(|e| fail(MtkStatus::InvalidArgument, e.to_string()))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Releases a prompt builder. NULL is ignored.
///
/// # Safety
/// `builder` must come from [`mtk_prompt_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtk_prompt_free(builder: *mut MtkPromptBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// Extracts the translation from a raw completion: leading whitespace is
/// stripped and the text is cut at the first line break.
///
/// `finish_reason` and `stop_reason` are the endpoint's fields and may be
/// NULL.
///
/// # Safety
/// `raw` must be valid; `out_text` and `out_finish` valid pointers. The
/// string stored in `*out_text` must be freed with [`mtk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mtk_postprocess(
    raw: *const c_char,
    finish_reason: *const c_char,
    stop_reason: *const c_char,
    out_text: *mut *mut c_char,
    out_finish: *mut MtkFinish,
) -> MtkStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let finish_reason = opt_str_arg(finish_reason, "finish_reason")?;
        let stop_reason = opt_str_arg(stop_reason, "stop_reason")?;
        let (out_text, out_finish) = (out_arg(out_text, "out_text")?, out_arg(out_finish, "out_finish")?);
        let stop = EndpointStop::from_reasons(finish_reason, stop_reason);
        let (text, finish) = postprocess(raw, &stop);
        *out_text = to_c_string(text)?;
        *out_finish = match finish {
            Finish::Eos => MtkFinish::Eos,
            Finish::NewlineTruncated => MtkFinish::NewlineTruncated,
            Finish::LengthCapped => MtkFinish::LengthCapped,
        };
        Ok(())
    })
}

/// Applies the conjunctive filter rule (`score >= threshold` on all three
/// scores). NaN marks an absent score, which always drops the segment.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtk_filter_decision(
    bicleaner: c_double,
    kiwi_fwd: c_double,
    kiwi_rev: c_double,
    bicleaner_min: c_double,
    kiwi_min: c_double,
    out: *mut MtkFilterDecision,
) -> MtkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        for (name, v) in [("bicleaner_min", bicleaner_min), ("kiwi_min", kiwi_min)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(MtkStatus::InvalidArgument, format!("{name}={v} outside [0,1]"));
            }
        }
        let cfg = FilterConfig {
            bicleaner_min,
            kiwi_min,
            rule: ThresholdRule::AtLeast,
            ..FilterConfig::default()
        };
        let present = |v: f64| (!v.is_nan()).then_some(v);
        *out = match filter_scores(present(bicleaner), present(kiwi_fwd), present(kiwi_rev), &cfg) {
            FilterDecision::Keep => MtkFilterDecision::Keep,
            FilterDecision::Drop(DropReason::MissingScore) => MtkFilterDecision::DropMissingScore,
            FilterDecision::Drop(DropReason::BicleanerLow) => MtkFilterDecision::DropBicleanerLow,
            FilterDecision::Drop(DropReason::KiwiFwdLow) => MtkFilterDecision::DropKiwiFwdLow,
            FilterDecision::Drop(DropReason::KiwiRevLow) => MtkFilterDecision::DropKiwiRevLow,
        };
        Ok(())
    })
}
