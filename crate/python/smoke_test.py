"""Smoke test for the ctxpipe extension module.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import ctxpipe

PIPELINE = "P-REPORT-PAPER"


def manifest(package_id, stage, design_authority=True):
    tags = ["design_authority"] if design_authority else []
    return {
        "package_id": package_id,
        "pipeline_id": PIPELINE,
        "stage": stage,
        "elements": [
            {"element_id": "E1", "role": "authority", "source_kind": "file", "label": "Design document",
             "content_ref": "design.md", "token_estimate": 900, "tags": tags, "reviewed": True},
            {"element_id": "E2", "role": "metadata", "source_kind": "verbal", "label": "Prompt",
             "content_ref": "operator", "token_estimate": 40},
        ],
    }


def check_estimators():
    assert ctxpipe.chapman(0, 12, 0) == 12
    assert f"{ctxpipe.n_version_detection([0.55, 0.55]):.4f}" == "0.7975"
    assert math.isclose(ctxpipe.wright_cost(3, 4, 0.8), 3 * 0.8 ** 2)
    ratio = ctxpipe.boehm_cost(1.0, 5) / ctxpipe.boehm_cost(1.0, 3)
    assert math.isclose(ratio, 10.0, rel_tol=1e-12)
    try:
        ctxpipe.lincoln_petersen(4, 5, 0)
    except ctxpipe.ValidationError as e:
        assert e.code == "UNDEFINED_ESTIMATE", e.code
    else:
        raise AssertionError("m = 0 should be undefined")


def check_packages():
    pkg = ctxpipe.Package.from_dict(manifest("PK-D", "Design"))
    assert pkg.total_tokens == 940 and pkg.size_class == "Moderate"
    assert ctxpipe.Package.parse(pkg.render()).render() == pkg.render()
    res = pkg.resolve("E2", "E1")
    assert res["winner"] == "E1", res
    assert ctxpipe.priority_of("Rubric") == 4
    assert ctxpipe.classify_tokens(2001) == "Comprehensive"
    assert ctxpipe.route_for("missing_context") == "Reviewer"


def check_in_memory_pipeline():
    p = ctxpipe.Pipeline("REPORT", "PAPER")
    for stage in ctxpipe.STAGES:
        p.attach_package(ctxpipe.Package.from_dict(manifest(f"PK-{stage}", stage)))
    for stage, tool in [("Reviewer", "ChatGPT"), ("Design", "Claude"), ("Builder", "Claude")]:
        rec = p.begin_stage(stage, tool, f"PK-{stage}")["value"]
        p.complete_stage(rec["record_id"], f"{stage.lower()}.md")
    try:
        p.begin_stage("Auditor", "claude", "PK-Auditor")
    except ctxpipe.RuleViolation as e:
        assert e.code == "RULE6_VIOLATION" and "The executor cannot be the auditor" in str(e)
    else:
        raise AssertionError("same tool audit should be rejected")
    audit = p.begin_stage("Auditor", "ChatGPT", "PK-Auditor")["value"]
    routed = p.record_finding("major", "structural", "sections out of order")["value"]
    assert routed["target_stage"] == "Design", routed
    copy = ctxpipe.Pipeline.replay(p.events())
    assert copy.state() == p.state()
    assert audit["record_id"] == "R-4"


def check_workspace(root):
    ws = ctxpipe.Workspace.init(root)
    assert ws.create_pipeline("REPORT", "PAPER", "task") == PIPELINE
    for stage in ctxpipe.STAGES:
        ws.add_package(ctxpipe.Package.from_dict(manifest(f"PK-{stage}", stage)))
    skipped = ws.skip_stage(PIPELINE, "Reviewer", "short task")
    assert any("generic or misaligned" in n["message"] for n in skipped["notices"])
    for stage, tool in [("Design", "Claude"), ("Builder", "Claude"), ("Auditor", "ChatGPT")]:
        rec = ws.begin_stage(PIPELINE, stage, tool, f"PK-{stage}")
        ws.complete_stage(PIPELINE, rec["record_id"], f"{stage.lower()}.md")
    closed = ws.close(PIPELINE)
    assert closed["warnings"] == [], closed
    assert ws.verify_trail(PIPELINE) == {"status": "Ok", "events": closed["revision"]}
    raw = (Path(root) / "pipelines" / PIPELINE / "trail.log").read_bytes()
    assert ctxpipe.verify_trail(raw)["status"] == "Ok"
    flipped = bytearray(raw)
    flipped[10] ^= 0x01
    assert ctxpipe.verify_trail(bytes(flipped))["at_seq"] == 1
    assert "PipelineClosed" in ws.render_trail(PIPELINE)
    assert ws.pipeline(PIPELINE).closed

    docs = ws.instantiate("academic-paper", "REPORT", "PAPER", date="2026-03-01")
    assert set(docs) == set(ctxpipe.STAGES)
    report = ctxpipe.validate_template(docs["Design"])
    assert report["valid"], report

    records = [
        {
            "interaction_number": n,
            "date_range": {"start": "2025-11-01", "end": "2025-11-01"},
            "title": f"Interaction {n}",
            "pipeline_id": PIPELINE,
            "tools_used": ["Claude" if n % 2 else "ChatGPT"],
            "stages_present": ["Builder"],
            "context_package": [{"priority": 1, "role": "Authority", "type": "file",
                                 "file_name": "design.md", "description": "design"}],
            "what_was_asked": "draft",
            "what_was_produced": "draft",
            "quality_outcome": "SUCCESS - no iteration" if n % 3 else "PARTIAL",
            "evidence_fragments": ["\"go\"", "accepted"],
        }
        for n in range(1, 7)
    ]
    path = Path(root) / "extraction.json"
    path.write_text(json.dumps(records))
    imported = ws.import_dataset(str(path), name="pilot")
    assert imported["records"] == 6
    table = ws.report("pilot", "quality", group_by="all")["table"]["rows"][0]
    assert table["total"] == 6 and table["first_pass_count"] == 4, table
    assert ctxpipe.quality_report(json.dumps(records))["rows"][0]["group"] == "Claude"


def main():
    check_estimators()
    check_packages()
    check_in_memory_pipeline()
    with tempfile.TemporaryDirectory() as root:
        check_workspace(root)
    print("ctxpipe python smoke test: ok")


if __name__ == "__main__":
    main()
