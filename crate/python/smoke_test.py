"""Smoke test for the cogwalk Python extension.

Build and install it first, e.g.::

    maturin develop -m crates/py/Cargo.toml

then run ``python python/smoke_test.py`` from the repository root.
"""

import json
import math
from pathlib import Path

import cogwalk

ROOT = Path(__file__).resolve().parent.parent
MANIFEST = ROOT / "fixtures" / "demo-app" / "app.json"


def reply(action):
    return json.dumps({
        "current_state": "screen",
        "possible_actions": [{"action": action, "rationale": "fits the task", "confidence": "high"}],
        "next_action": action,
        "next_action_rationale": "this control matches the task",
    })


def main():
    graph = cogwalk.AppGraph.load(MANIFEST)
    assert graph.name == "demo-app"
    assert set(graph.task_ids) == {"t1", "t2", "t3"}
    assert "tap lessons tab" in graph.available_actions("home")
    assert cogwalk.AppGraph.validate_file(MANIFEST) == []

    session = cogwalk.Session(graph, "t1", participant_label="P99")
    miss = session.step(action_text="shake the phone", think_aloud="maybe a hidden menu")
    assert miss["advanced"] is False
    assert miss["messages"] == [cogwalk.FAILSAFE_MESSAGE]
    session.step(transition_id="home::tap lessons tab", think_aloud="lessons tab")
    session.step(action_text="tap food lesson", think_aloud="the food lesson")
    session.complete()
    trace = session.trace()
    assert trace["outcome"] == "completed"
    assert trace["agent_kind"] == "human"

    trace = cogwalk.run_scripted(graph, "t1", [reply("tap lessons tab"), reply("tap food lesson")])
    assert trace["outcome"] == "completed"
    path = [trace["start_screen"]] + [s["resolved"]["to"] for s in trace["steps"] if s["resolved"]]
    task = graph.task("t1")
    assert cogwalk.path_set_divergence([path], task["correct_paths"]) == 0.0

    parsed = cogwalk.parse_evaluator_response("Sure:\n```json\n" + reply("tap review button") + "\n```")
    assert parsed["next_action"] == "tap review button"
    try:
        cogwalk.parse_evaluator_response("no json here")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    assert cogwalk.collapse_rating("Slightly confusing") == "confusing"
    assert cogwalk.collapse_rating("not at all") == "not_confusing"
    assert cogwalk.cohens_kappa([1, 1, 0, 0], [1, 0, 0, 0]) == 0.5
    assert cogwalk.cohens_kappa([1, 1], [1, 1]) is None
    assert math.isclose(cogwalk.corrected_odds_ratio(10, 3, 2, 7), 9.0, rel_tol=1e-12)
    assert cogwalk.js_divergence({("a", "b"): 1.0}, {("c", "d"): 1.0}) == 1.0
    assert cogwalk.js_divergence({("a", "b"): 0.5, ("b", "c"): 0.5}, {("a", "b"): 0.5, ("b", "c"): 0.5}) == 0.0

    traces, violations = cogwalk.load_traces(ROOT / "fixtures" / "demo-app" / "human")
    assert len(traces) == 1 and violations == []
    print("python smoke test passed")


if __name__ == "__main__":
    main()
