"""Smoke test for the inclusion_mediator extension.

Run after `pip install --no-build-isolation -e crates/python`:

    python python/smoke_test.py
"""

import json
import math
import tempfile

import inclusion_mediator as im


def pairwise_gini(xs):
    n, mean = len(xs), sum(xs) / len(xs)
    return sum(abs(a - b) for a in xs for b in xs) / (2 * n * n * mean)


def check_metrics():
    xs = [120.0, 30.0, 45.0, 5.0]
    assert math.isclose(im.gini(xs), pairwise_gini(xs), rel_tol=0, abs_tol=1e-12)
    assert im.gini([3.0, 3.0, 3.0]) == 0.0
    assert math.isclose(im.fair_share_deviation(50.0, 100.0, 4), math.log(2.0), abs_tol=1e-12)
    assert im.fair_share_deviation(25.0, 100.0, 4) == 0.0

    res = im.wilcoxon([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 4.0, 6.0, 8.0, 10.0], "greater")
    assert res["V"] == 15.0 and res["method"] == "EXACT"
    assert math.isclose(res["p_value"], 1 / 32, abs_tol=1e-12)
    assert res["r"] == 1.0
    assert im.rank_biserial(0.0, 5) == -1.0

    adj = im.bh_fdr_adjust([0.01, 0.04, 0.03, 0.005, 0.05])
    assert [round(p, 6) for p in adj] == [0.025, 0.05, 0.05, 0.025, 0.05], adj

    try:
        im.wilcoxon([1.0, 2.0], [1.0, 2.0])
    except im.DegenerateSampleError:
        pass
    else:
        raise AssertionError("all-zero differences must be degenerate")
    try:
        im.gini([])
    except im.MediatorError as e:
        assert isinstance(e, (im.UndefinedError, im.ValidationError))
    else:
        raise AssertionError("empty gini must fail")


def check_replay():
    report = im.replay_study()
    assert report["ok"], report["violations"]
    ginis = [m["gini"] for m in report["meetings"]]
    assert len(ginis) == 2 and ginis[0] < ginis[1]
    with tempfile.TemporaryDirectory() as d:
        crashed = im.replay_study(data_dir=d, crash_after=25)
        assert crashed["state_checksum"] == report["state_checksum"]

    bad = im.reference_scenario()
    bad["meetings"][0]["events"][0]["kind"] = "WHISPER"
    try:
        im.replay_study(bad)
    except im.ValidationError as e:
        assert "meetings[0].events[0].kind" in str(e), e
    else:
        raise AssertionError("bad scenario must be rejected")


def check_mediator():
    script = im.reference_scenario()["mock_script"]
    m = im.Mediator(script, step_ms=1000)
    made = m.create_team("Pilot", ["Quinlan", "Marisol", "Thaddeus"])
    team = made["team"]["team_id"]
    ann, bob, cyd = (u["user_id"] for u in made["users"])
    control = m.schedule_meeting(team, "control", 0)["meeting_id"]
    treatment = m.schedule_meeting(team, "treatment", 1)["meeting_id"]

    for u in (ann, bob, cyd):
        m.acknowledge_control(u, control)
    m.open_meeting(control, at_ms=0)
    for u in (ann, bob, cyd):
        assert m.ingest_event(control, u, "join", 0)
    assert not m.ingest_event(control, ann, "JOIN", 0)
    m.ingest_event(control, ann, "speak_start", 1000)
    m.ingest_event(control, ann, "speak_stop", 31000)
    m.ingest_event(control, bob, "speak_start", 32000)
    m.ingest_event(control, bob, "speak_stop", 42000)
    m.close_meeting(control, at_ms=60000)
    stats = m.meeting_stats(control)
    spoken = {p["user_id"]: p["total_speaking_ms"] for p in stats["participants"]}
    assert spoken == {ann: 30000, bob: 10000, cyd: 0}, spoken

    s = m.start_conversation("solicitation", bob, control)["session_id"]
    m.send_message(s, "It was fine")
    out = m.send_message(s, "Quinlan could ask quieter people for input")
    assert out["state"] == "AWAIT_APPROVAL", out
    draft = m.session(s)["pending_draft"]
    record = m.approve_feedback(draft)
    assert record["author_id"] == bob
    m.send_message(s, "nothing else")
    assert m.session(s)["state"] == "COMPLETE"
    turns = [json.loads(line) for line in m.transcript_jsonl(s).splitlines()]
    assert {"role", "text", "state_after", "ts_ms"} <= set(turns[0])
    assert m.outgoing(bob)[0]["target"] is not None

    try:
        m.advance_phase(ann, treatment, "in_meeting")
    except im.StateError:
        pass
    else:
        raise AssertionError("phase order must be enforced")

    inbox = m.inbox(ann, treatment)
    text = json.dumps(inbox)
    assert bob not in text and "Marisol" not in text
    assert inbox["items"][-1]["scope"] == "AGENT_DEFAULT"

    q = m.record_questionnaire(
        {"user_id": ann, "meeting_id": control, "instrument": "influence", "labels": ["q1"], "values": [6]}
    )
    assert q["recorded_at"] > 0
    assert m.seq == m.state()["seq"]


def main():
    check_metrics()
    check_replay()
    check_mediator()
    print("smoke test passed")


if __name__ == "__main__":
    main()
