"""Smoke test for the confgate Python bindings.

Build and install first:
    cd crates/py && maturin build --release -o /tmp/wheels
    pip install /tmp/wheels/confgate-*.whl
Then run from the repository root:
    python python/smoke_test.py
"""

import math
import pathlib
import sys

import confgate

ROOT = pathlib.Path(__file__).resolve().parent.parent
TRAIN = str(ROOT / "fixtures" / "train.jsonl")


def check_grammar():
    a = confgate.parse_action("CLICK <point>[[540, 1200]]</point>")
    assert a.kind == "CLICK" and a.point == (540, 1200)
    assert confgate.serialize_action(a) == "CLICK <point>[[540, 1200]]</point>"
    assert confgate.Action("TYPE [hello]]").text == "hello]"
    assert confgate.Action("COMPLETE").is_terminal
    try:
        confgate.parse_action("FLY [away]")
    except confgate.ActionError:
        pass
    else:
        raise AssertionError("bad action accepted")


def check_gate():
    assert confgate.decision(4, 3) and not confgate.decision(3, 3)
    assert confgate.classify_step(5, 1, 3) == "FP"
    assert confgate.farthest_score(2, 3) == 5
    assert confgate.farthest_score(4, 3) == 1
    assert abs(confgate.relative_efficiency(229, 302) - 0.7583) < 5e-4


def check_dataset_and_runs():
    ds = confgate.Dataset.load(TRAIN)
    assert ds.stats() == (5, 21, 5), ds.stats()
    assert len(ds) == 21

    manual = confgate.run(ds, gamma=5)
    rep = confgate.report(manual, 5)
    assert rep["sr"] == 1.0 and rep["interventions"] == 21

    auto = confgate.run(ds)
    assert all(not s["intervened"] for log in auto for s in log["steps"])

    rows = confgate.sweep(ds)
    counts = [r["interventions"] for r in rows]
    assert counts[0] == 0 and counts == sorted(counts), counts


def check_forge():
    ds = confgate.Dataset.load(TRAIN)
    triplets = confgate.forge(ds, 3, k=5, lam=0.5)
    assert triplets
    for t in triplets:
        assert t["chosen"]["score"] != t["rejected"]["score"]
    assert confgate.forge(ds, 3, k=0) == []


def check_losses():
    theta = confgate.ToyPolicy.random(2, 3, 4, seed=7)
    ref = confgate.ToyPolicy.random(2, 3, 4, seed=8)
    assert confgate.sft_loss(theta, [(0, [1, 2], [3])]) > 0
    pair = (1, ([0, 1], [2]), ([3, 3], [0]))
    same = confgate.dpo_loss(ref, ref, [pair], 0.1)
    assert abs(same - math.log(2)) < 1e-12
    report = confgate.gradient_check(count=10)
    assert report["passed"], report


def main():
    checks = [check_grammar, check_gate, check_dataset_and_runs, check_forge, check_losses]
    failed = 0
    for check in checks:
        try:
            check()
            print(f"PASS  {check.__name__}")
        except Exception as e:  # noqa: BLE001
            failed += 1
            print(f"FAIL  {check.__name__}: {e!r}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
