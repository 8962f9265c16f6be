mod common;

use std::path::Path;
use std::process::{Command, Output};

fn ctxpipe(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxpipe"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .env_remove("CTXPIPE_TOKEN")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn chapman_with_zero_overlap_prints_twelve() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ctxpipe(tmp.path(), &["estimate", "chapman", "--n1", "0", "--n2", "12", "--m", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "12");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let usage = ctxpipe(tmp.path(), &["pipeline", "frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));

    let not_ws = ctxpipe(tmp.path(), &["pipeline", "status"]);
    assert_eq!(not_ws.status.code(), Some(1));
    assert!(stderr(&not_ws).starts_with("NOT_A_WORKSPACE: "), "{}", stderr(&not_ws));

    let undefined = ctxpipe(tmp.path(), &["estimate", "lp", "--n1", "3", "--n2", "4", "--m", "0"]);
    assert_eq!(undefined.status.code(), Some(1));
}

#[test]
fn sprint_close_without_auditor_needs_confirmation() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path();
    assert!(ctxpipe(ws, &["init"]).status.success());
    assert!(ctxpipe(ws, &["pipeline", "create", "--project", "SITE", "--domain", "WEB", "--scale", "sprint"])
        .status
        .success());
    let manifest = ws.join("pk.json");
    std::fs::write(&manifest, common::manifest("PK-B", "P-SITE-WEB", "Builder").to_string()).unwrap();
    assert!(ctxpipe(ws, &["package", "add", manifest.to_str().unwrap()]).status.success());
    for stage in ["reviewer", "design"] {
        let o = ctxpipe(ws, &["stage", "skip", "P-SITE-WEB", "--stage", stage, "--reason", "tiny change"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = ctxpipe(ws, &["stage", "begin", "P-SITE-WEB", "--stage", "builder", "--tool", "Claude", "--package", "PK-B"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ctxpipe(ws, &["stage", "complete", "P-SITE-WEB", "--record", "R-3", "--artifact", "site.zip"])
        .status
        .success());

    // stdin is not a terminal here, so there is nobody to ask
    let refused = ctxpipe(ws, &["pipeline", "close", "P-SITE-WEB"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).starts_with("CONFIRMATION_REQUIRED"), "{}", stderr(&refused));

    let closed = ctxpipe(ws, &["pipeline", "close", "P-SITE-WEB", "--yes"]);
    assert_eq!(closed.status.code(), Some(0), "{}", stderr(&closed));
    assert!(stderr(&closed).contains("NO_AUDITOR"));

    let status = ctxpipe(ws, &["--format", "structured", "pipeline", "status", "P-SITE-WEB"]);
    let v: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(v["pipeline"]["status"], "closed");
}

#[test]
fn interactive_confirmation_accepts_yes() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path();
    common::cli(ws, &["init"]);
    common::cli(ws, &["pipeline", "create", "--project", "SITE", "--domain", "WEB", "--scale", "sprint"]);
    let manifest = ws.join("pk.json");
    std::fs::write(&manifest, common::manifest("PK-B", "P-SITE-WEB", "Builder").to_string()).unwrap();
    common::cli(ws, &["package", "add", manifest.to_str().unwrap()]);
    common::cli(ws, &["stage", "skip", "P-SITE-WEB", "--stage", "reviewer", "--reason", "r"]);
    common::cli(ws, &["stage", "skip", "P-SITE-WEB", "--stage", "design", "--reason", "r"]);
    common::cli(ws, &["stage", "begin", "P-SITE-WEB", "--stage", "builder", "--tool", "Claude", "--package", "PK-B"]);
    common::cli(ws, &["stage", "complete", "P-SITE-WEB", "--record", "R-3", "--artifact", "a"]);

    let no = common::cli_with_input(ws, &["pipeline", "close", "P-SITE-WEB"], Some("n\n"));
    assert_eq!(no.code, 1);
    assert!(no.stderr.contains("Close anyway? [y/N]"));
    let yes = common::cli_with_input(ws, &["pipeline", "close", "P-SITE-WEB"], Some("y\n"));
    assert_eq!(yes.code, 0, "{}", yes.stderr);
    assert_eq!(yes.stdout.trim(), "Closed P-SITE-WEB");
}

#[test]
fn template_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path();
    common::cli(ws, &["init"]);
    let out = ws.join("inst");
    let o = common::cli(
        ws,
        &[
            "template", "instantiate", "dissertation-chapter", "--project", "THESIS", "--domain", "CH3", "--date",
            "2026-04-01", "--set", "author=A. Student", "--out", out.to_str().unwrap(),
        ],
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    for stage in ["reviewer", "design", "builder", "auditor"] {
        let file = out.join(format!("{stage}.md"));
        let text = std::fs::read_to_string(&file).unwrap();
        assert!(text.contains("P-THESIS-CH3") && text.contains("A. Student"));
        let v = common::cli(ws, &["template", "validate", file.to_str().unwrap()]);
        assert_eq!(v.code, 0, "{}{}", v.stdout, v.stderr);
    }
    let bad = ws.join("bad.md");
    std::fs::write(&bad, "## PURPOSE\nonly this\n").unwrap();
    assert_eq!(common::cli(ws, &["template", "validate", bad.to_str().unwrap()]).code, 1);
    let unknown = common::cli(
        ws,
        &["template", "instantiate", "code-build", "--project", "A", "--domain", "B", "--set", "colour=red"],
    );
    assert_eq!(unknown.code, 1);
    assert!(unknown.stderr.starts_with("UNKNOWN_META_KEY"), "{}", unknown.stderr);
}
