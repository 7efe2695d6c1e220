#!/usr/bin/env python3
"""One closed-loop benchmark episode, narrated turn by turn.

The scene is a static ball filmed for six frames; the first two frames are
corrupted. The model is the "sticky" mock: it answers wrongly on corrupted
frames and clings to the wrong belief for two more clean frames — the error
outlives its cause. The run shows how that persistence lands in the three
metrics, then verifies the record by rescoring and byte-exact replay.

Everything is written under demos/output/closed_loop/.
"""

import json
from pathlib import Path

import numpy as np

from degradebench import (
    Image,
    load_config,
    replay_record,
    run_benchmark,
    save_image,
    score_record,
)

OUT = Path(__file__).parent / "output" / "closed_loop"
frames_dir = OUT / "frames"
frames_dir.mkdir(parents=True, exist_ok=True)

# a dull little scene: flat backdrop, bright ball, slowly brightening
rng = np.random.default_rng(7)
base = rng.uniform(0.3, 0.5, size=(48, 64, 3))
yy, xx = np.mgrid[0:48, 0:64]
ball = (xx - 20) ** 2 + (yy - 24) ** 2 < 81
for t in range(6):
    arr = np.clip(base + 0.015 * t, 0, 1).copy()
    arr[ball] = 0.9
    save_image(Image.from_array(arr), frames_dir / f"frame{t:03d}.png")

annotations = OUT / "annotations.txt"
annotations.write_text("d=0\n" + "".join(f"{t},1,11.0,15.0,18.0,18.0,ball,\n" for t in range(6)))

config_path = OUT / "config.json"
config_path.write_text(
    json.dumps(
        {
            "schema_version": 1,
            "sequence": {"image_dir": "frames", "annotations": "annotations.txt"},
            "schedule": {"regime": "early", "length": 6, "boundary": 2},
            "tasks": {"kinds": ["presence"]},
            "model": {"mock": "sticky:2"},
            "episodes": 1,
            "master_seed": 11,
            "output": "record.jsonl",
        },
        indent=2,
    )
)

config = load_config(config_path)
(record,), _ = run_benchmark(config)

print("turn  frame   severity  task                                    answer  judged")
for turn in record.turns:
    tag = "corrupted" if turn["corrupted"] else "clean    "
    verdict = "ok " if turn["valid"] else "BAD"
    query = turn["task"]["query"]
    print(f"  {turn['t']}   {tag} {turn['severity']:.2f}      {query:<38} {turn['answer']!r:<7} {verdict}")

print()
metrics = record.summary["metrics"]
print(f"hallucination rate    {metrics['hallucination_rate']:.1f}%   (4 of 6 answers wrong)")
print(f"recovery rate         {metrics['recovery_rate']:.1f}%  (the error chain ends on a valid re-query)")
print(f"temporal consistency  {metrics['temporal_consistency']:.1f}%    (same fact, answer flipped mid-window)")

# the record can be independently rescored and replayed
report = score_record(config.output)
ok, detail = replay_record(config.output)
print()
print(f"rescoring matches stored summaries: {report['matches']}")
print(f"replay byte-identical: {ok}" + (f" ({detail})" if detail else ""))
print(f"record at {config.output}")
