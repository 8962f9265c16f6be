use std::sync::Once;

use ctxpipe_py::ctxpipe_py;
use pyo3::prelude::*;

static INIT: Once = Once::new();

fn run(code: &std::ffi::CStr) {
    INIT.call_once(|| {
        pyo3::append_to_inittab!(ctxpipe_py);
        Python::initialize();
    });
    Python::attach(|py| py.run(code, None, None)).unwrap_or_else(|e| panic!("{e}"));
}

#[test]
fn module_surface_from_python() {
    run(cr#"
import ctxpipe
assert ctxpipe.chapman(0, 12, 0) == 12
assert ctxpipe.route_for("ExecutionError") == "Builder"
assert ctxpipe.classify_tokens(499) == "Minimal"
assert ctxpipe.STAGES == ["Reviewer", "Design", "Builder", "Auditor"]

p = ctxpipe.Pipeline("REPORT", "PAPER")
p.attach_package(ctxpipe.Package.from_dict({
    "package_id": "PK-R", "pipeline_id": p.id, "stage": "Reviewer",
    "elements": [{"element_id": "E1", "role": "exemplar", "source_kind": "file",
                  "label": "prior report", "content_ref": "prior.md"}],
}))
first = p.begin_stage("Reviewer", "ChatGPT", "PK-R")
assert first["value"]["record_id"] == "R-1", first
assert ctxpipe.Pipeline.replay(p.events()).state() == p.state()
"#);
}

#[test]
fn rule_errors_carry_codes() {
    run(cr#"
import ctxpipe
p = ctxpipe.Pipeline("SITE", "WEB", "sprint")
try:
    p.skip_stage("Builder", "no")
except ctxpipe.CtxpipeError as e:
    assert e.code == "NOT_SKIPPABLE", e.code
else:
    raise AssertionError("builder skip accepted")
try:
    ctxpipe.Package.parse("{not json")
except ctxpipe.ValidationError as e:
    assert e.code, e
else:
    raise AssertionError("bad manifest accepted")
"#);
}
