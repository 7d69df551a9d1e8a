use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use kgseek_ffi::*;

const FILMS: &str = "GL\tdirected\tSW\nGL\tdirected\tESB\nSW\tstarred\tMH\nSW\tstarred\tHF\nESB\tstarred\tMH\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn text(p: *const std::ffi::c_char) -> String {
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn films() -> *mut KgsGraph {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { kgs_graph_parse(c(FILMS).as_ptr(), false, &mut g) }, KgsStatus::Ok);
    g
}

#[test]
fn oracle_seek_through_the_abi() {
    unsafe {
        let g = films();
        assert_eq!(kgs_graph_num_entities(g), 5);
        assert_eq!(kgs_graph_num_relations(g), 3);
        assert_eq!(kgs_graph_num_edges(g), 5);

        let mut s = ptr::null_mut();
        assert_eq!(kgs_scorer_oracle(g, c("directed starred").as_ptr(), &mut s), KgsStatus::Ok);
        let mut r = ptr::null_mut();
        let st = kgs_seek(g, s, c("GL").as_ptr(), c("who starred in films by [GL]").as_ptr(), 1, 2, 1, &mut r);
        assert_eq!(st, KgsStatus::Ok, "{}", text(kgs_last_error()));
        assert_eq!(kgs_result_len(r), 1);
        assert_eq!(text(kgs_result_sequence(r, 0)), "self directed starred");
        assert!(kgs_result_sequence(r, 1).is_null());
        assert!(kgs_result_nll(r, 1).is_nan());
        // Hop 1 has the single option `directed`; hop 2 splits off epsilon to `self`.
        let expected_nll = -(1.0 - 1e-3f64).ln();
        assert!((kgs_result_nll(r, 0) - expected_nll).abs() < 1e-9);
        let names: Vec<String> = (0..kgs_result_num_candidates(r)).map(|i| text(kgs_result_candidate(r, i))).collect();
        assert_eq!(names, ["MH", "HF"]);
        assert_eq!(kgs_result_scorer_calls(r), 3);

        kgs_result_free(r);
        kgs_scorer_free(s);
        kgs_graph_free(g);
    }
}

#[test]
fn uniform_seek_ranks_k_sequences() {
    unsafe {
        let g = films();
        let mut s = ptr::null_mut();
        assert_eq!(kgs_scorer_uniform(&mut s), KgsStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(kgs_seek(g, s, c("GL").as_ptr(), ptr::null(), 4, 3, 2, &mut r), KgsStatus::Ok);
        assert_eq!(kgs_result_len(r), 2);
        assert!(kgs_result_nll(r, 0) <= kgs_result_nll(r, 1));
        kgs_result_free(r);
        kgs_scorer_free(s);
        kgs_graph_free(g);
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        let g = films();
        let mut s = ptr::null_mut();
        kgs_scorer_uniform(&mut s);
        let mut r = ptr::null_mut();

        assert_eq!(kgs_seek(g, s, c("Nobody").as_ptr(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::BadInput);
        assert!(text(kgs_last_error()).contains("Nobody"));
        assert!(r.is_null());

        assert_eq!(kgs_seek(g, s, c("GL").as_ptr(), ptr::null(), 1, 2, 2, &mut r), KgsStatus::BadInput);
        assert!(text(kgs_last_error()).contains("k=2"));
        assert_eq!(kgs_seek(g, s, c("").as_ptr(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::BadInput);
        assert_eq!(kgs_seek(ptr::null(), s, c("GL").as_ptr(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::NullArgument);
        assert_eq!(kgs_seek(g, s, c("GL").as_ptr(), ptr::null(), 4, 2, 1, ptr::null_mut()), KgsStatus::NullArgument);

        let bad_utf8 = [0xffu8, 0];
        assert_eq!(kgs_seek(g, s, bad_utf8.as_ptr().cast(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::InvalidUtf8);

        let mut o = ptr::null_mut();
        assert_eq!(kgs_scorer_oracle(g, c("produced").as_ptr(), &mut o), KgsStatus::BadInput);
        assert_eq!(kgs_scorer_oracle(g, c(" | ").as_ptr(), &mut o), KgsStatus::BadInput);

        let mut g2 = ptr::null_mut();
        assert_eq!(kgs_graph_load(c("/nonexistent/graph.tsv").as_ptr(), false, &mut g2), KgsStatus::Io);
        assert!(text(kgs_last_error()).contains("/nonexistent/graph.tsv"));
        assert_eq!(kgs_graph_parse(c("a\tb\n").as_ptr(), false, &mut g2), KgsStatus::BadInput);

        // Success clears the message.
        assert_eq!(kgs_seek(g, s, c("GL").as_ptr(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::Ok);
        assert_eq!(text(kgs_last_error()), "");

        kgs_result_free(r);
        kgs_scorer_free(s);
        kgs_graph_free(g);
        kgs_graph_free(ptr::null_mut());
        assert_eq!(kgs_result_len(ptr::null()), 0);
    }
}

#[test]
fn checkpoint_scorer_is_tied_to_its_graph() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let graph = kgseek::kg::parse_triples(FILMS.as_bytes(), false).unwrap();
    let cfg = kgseek::scorer::ModelConfig { dim: 8, ..Default::default() };
    kgseek::scorer::FeaturizedModel::new(&graph, cfg).save(&path).unwrap();
    let path = c(path.to_str().unwrap());
    unsafe {
        let g = films();
        let mut s = ptr::null_mut();
        assert_eq!(kgs_scorer_load(g, path.as_ptr(), &mut s), KgsStatus::Ok, "{}", text(kgs_last_error()));
        let mut r = ptr::null_mut();
        assert_eq!(kgs_seek(g, s, c("GL").as_ptr(), c("what did [GL] direct").as_ptr(), 4, 2, 2, &mut r), KgsStatus::Ok);
        assert!(kgs_result_len(r) >= 1);
        kgs_result_free(r);

        let mut other = ptr::null_mut();
        assert_eq!(kgs_graph_parse(c("a\tdirected\tb\nb\tstarred\tc\n").as_ptr(), false, &mut other), KgsStatus::Ok);
        assert_eq!(kgs_seek(other, s, c("a").as_ptr(), ptr::null(), 4, 2, 1, &mut r), KgsStatus::BadInput);

        let mut inv = ptr::null_mut();
        assert_eq!(kgs_graph_parse(c(FILMS).as_ptr(), true, &mut inv), KgsStatus::Ok);
        let mut s2 = ptr::null_mut();
        assert_eq!(kgs_scorer_load(inv, path.as_ptr(), &mut s2), KgsStatus::Checkpoint);

        let junk = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(junk.path(), b"junk").unwrap();
        let junk_path = c(junk.path().to_str().unwrap());
        assert_eq!(kgs_scorer_load(g, junk_path.as_ptr(), &mut s2), KgsStatus::Checkpoint);

        kgs_scorer_free(s);
        kgs_graph_free(other);
        kgs_graph_free(inv);
        kgs_graph_free(g);
    }
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(kgs_graph_load(c("/nonexistent").as_ptr(), false, &mut g), KgsStatus::Io);
    }
    let other = std::thread::spawn(|| text(kgs_last_error())).join().unwrap();
    assert_eq!(other, "");
    assert!(!text(kgs_last_error()).is_empty());
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kgseek.h");
    let body = std::fs::read_to_string(&header).unwrap();
    for f in ["kgs_graph_load", "kgs_seek", "kgs_result_sequence", "kgs_last_error", "KGS_STATUS_SCORER_CONTRACT"] {
        assert!(body.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"kgseek.h\"\nint main(void) { KgsGraph *g = 0; KgsStatus s = kgs_graph_load(\"x\", false, &g); return s == KGS_STATUS_OK; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(header.parent().unwrap()).arg(&src).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "kgseek.h"

int main(void) {
    const char *triples = "GL\tdirected\tSW\nGL\tdirected\tESB\nSW\tstarred\tMH\nSW\tstarred\tHF\nESB\tstarred\tMH\n";
    KgsGraph *g = NULL;
    KgsScorer *s = NULL;
    KgsResult *r = NULL;
    if (kgs_graph_parse(triples, false, &g) != KGS_STATUS_OK) return 10;
    if (kgs_scorer_oracle(g, "directed starred", &s) != KGS_STATUS_OK) return 11;
    if (kgs_seek(g, s, "GL", "who starred in films by [GL]", 1, 2, 1, &r) != KGS_STATUS_OK) return 12;
    printf("%s|%zu|%llu\n", kgs_result_sequence(r, 0), kgs_result_num_candidates(r),
           (unsigned long long)kgs_result_scorer_calls(r));
    KgsResult *bad = NULL;
    if (kgs_seek(g, s, "Nobody", NULL, 1, 2, 1, &bad) != KGS_STATUS_BAD_INPUT) return 13;
    printf("%s\n", kgs_last_error());
    kgs_result_free(r);
    kgs_scorer_free(s);
    kgs_graph_free(g);
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap();
    if !lib_dir.join("libkgseek_ffi.a").exists() {
        eprintln!("static library not built; skipping");
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let Ok(build) = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-o")
        .arg(&bin)
        .arg(lib_dir.join("libkgseek_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let out = String::from_utf8(run.stdout).unwrap();
    assert_eq!(out, "self directed starred|2|3\nunknown entity 'Nobody'\n");
}
