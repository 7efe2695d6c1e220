#!/usr/bin/env python3
"""Pseudo-label filtering on a planted-truth annotator.

Forty questions with known answers. On twenty "easy" ones a synthetic
annotator is confident and usually right; on twenty "hard" ones it invents
a different phantom answer on every perturbed run. Ensemble disagreement
(mean pairwise Jensen-Shannon divergence) separates the two regimes, so
thresholding on it trades coverage for accuracy.

No files are written; the story is the printed table.
"""

from degradebench import EnsembleConfig, PlantedTruthMock, refine_loop, tune_threshold

easy = [f"what sits on surface {i}?" for i in range(20)]
hard = [f"what flickers in corner {i}?" for i in range(20)]
queries = easy + hard
truths = {q: f"object {i}" for i, q in enumerate(queries)}

mock = PlantedTruthMock(truths, hard=set(hard), p_correct_easy=0.8, master_seed=5)
config = EnsembleConfig(runs=5, max_rounds=2, threshold=0.15)

rows = []
for i, query in enumerate(queries):
    label = refine_loop(mock, None, query, config, seed=1000 + i)
    rows.append((query, label.answer, label.report.js, label.rounds_used))

print("bucket  consensus answer    js-spread  rounds  correct")
for query, answer, js, rounds in rows[:4] + rows[20:24]:
    bucket = "easy" if query in easy else "hard"
    mark = "yes" if answer == truths[query] else "no"
    print(f"{bucket:<6}  {answer:<18}  {js:9.4f}  {rounds:>6}  {mark}")
print(f"... ({len(rows)} items total)\n")

scores = [js for _, _, js, _ in rows]
hallucinated = [answer != truths[query] for query, answer, _, _ in rows]
tau, f1 = tune_threshold(scores, hallucinated)
print(f"swept threshold tau = {tau:.3f} (F1 {f1:.3f} against planted truth)")

kept = [i for i, s in enumerate(scores) if s < tau]
unfiltered = sum(not h for h in hallucinated) / len(rows)
retained = sum(not hallucinated[i] for i in kept) / len(kept)
print()
print(f"unfiltered label accuracy  {unfiltered:6.1%}  ({len(rows)} labels)")
print(f"retained  label accuracy   {retained:6.1%}  ({len(kept)} labels kept)")
print(f"filtering margin           {100 * (retained - unfiltered):+.1f} percentage points")
