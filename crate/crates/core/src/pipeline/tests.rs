use std::fs;

use super::config::parse_taus;
use super::*;
use crate::distribution::ErrorCurve;

#[test]
fn settings_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    fs::write(
        &path,
        "# sweep\nperspectives = tok,obj\ntau.tok = 50\nn_p = 1\nalpha = 0.5\nlexicon = words/nouns.txt\n\nseed=9\n",
    )
    .unwrap();
    let mut s = Settings::default();
    s.apply_file(&path).unwrap();
    assert_eq!(s.perspectives, [Perspective::Token, Perspective::Object]);
    assert_eq!(s.tau(Perspective::Token), 50);
    assert_eq!(s.tau(Perspective::Object), 304);
    assert_eq!(s.n_p, Some(1));
    assert_eq!(s.alpha, 0.5);
    assert_eq!(s.seed, 9);
    assert_eq!(s.lexicon.as_deref(), Some(dir.path().join("words/nouns.txt").as_path()));
    // a later flag wins over the file
    s.set("seed", "11").unwrap();
    s.set("tau", "tok=7,int=3").unwrap();
    assert_eq!(s.seed, 11);
    assert_eq!((s.tau(Perspective::Token), s.tau(Perspective::Interrogation)), (7, 3));

    let mut echo = Settings::default();
    for (k, v) in s.to_pairs() {
        echo.set(&k, &v).unwrap();
    }
    assert_eq!(echo, s);
}

#[test]
fn settings_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, "seed = 1\nno_such_key = 2\n").unwrap();
    let err = Settings::default().apply_file(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    fs::write(&path, "seed\n").unwrap();
    assert!(matches!(
        Settings::default().apply_file(&path),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(parse_taus("tok=0").is_err());
    assert!(parse_taus("tok").is_err());
    let mut s = Settings::default();
    assert!(s.set("alpha", "abc").is_err());
    s.alpha = 0.0;
    assert_eq!(s.validate().unwrap_err().exit_code(), 1);
    assert_eq!(Settings::default().require_n_p().unwrap_err().exit_code(), 1);
}

#[test]
fn digests_are_stable_and_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.txt");
    fs::write(&p, "hello").unwrap();
    let a = digest_file(&p).unwrap();
    assert_eq!(a, digest_file(&p).unwrap());
    assert_eq!(
        a.sha256,
        "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
    );
    fs::write(&p, "hellp").unwrap();
    assert_ne!(a.sha256, digest_file(&p).unwrap().sha256);
}

fn curve(p: Perspective, points: Vec<(f64, f64)>) -> ErrorCurve {
    ErrorCurve {
        perspective: p,
        points,
        covered: 0,
        excluded: 0,
    }
}

#[test]
fn plot_data_files_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pts = vec![(0.1, 1.0 / 3.0), (0.2, 2.0 / 3.0), (1.0, 1.0)];
    let bundle = ReportBundle {
        curves: vec![
            curve(Perspective::Token, pts.clone()),
            curve(Perspective::Object, vec![]),
        ],
        ..Default::default()
    };
    let files = emit_plot_data(&bundle, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    for f in &files {
        assert!(fs::read_to_string(f).unwrap().starts_with("x,y\n"));
    }
    assert_eq!(fs::read_to_string(&files[1]).unwrap(), "x,y\n");
    let back = read_series(&files[0]).unwrap();
    assert_eq!(back.len(), pts.len());
    for (a, b) in back.iter().zip(&pts) {
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }
    assert!(read_series(dir.path().join("missing.csv")).is_err());
}

#[test]
fn manifest_path_naming() {
    assert_eq!(
        manifest_path_for(Path::new("out/core.jsonl")),
        Path::new("out/core.manifest.json")
    );
}
