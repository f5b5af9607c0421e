/** Side-by-side topic comparison.
 *
 * Topic identity across separately built models is undefined, so matching is
 * a display heuristic only (greedy maximum word overlap) and is labeled as
 * such on screen.
 */

import { renderTopicBars } from "./topics";
import type { TopicSummary } from "./types";

export interface TopicMatch {
  left: number;
  right: number;
  shared: string[];
}

function wordSet(topic: TopicSummary): Set<string> {
  return new Set(topic.words.map((w) => w.term));
}

/** Greedy max-overlap matching; larger overlaps claim their pair first. */
export function matchTopics(
  left: TopicSummary[],
  right: TopicSummary[],
): TopicMatch[] {
  const pairs: Array<{ l: number; r: number; shared: string[] }> = [];
  for (const lt of left) {
    const lWords = wordSet(lt);
    for (const rt of right) {
      const shared = [...wordSet(rt)].filter((t) => lWords.has(t)).sort();
      pairs.push({ l: lt.topic, r: rt.topic, shared });
    }
  }
  pairs.sort(
    (a, b) =>
      b.shared.length - a.shared.length || a.l - b.l || a.r - b.r,
  );
  const usedL = new Set<number>();
  const usedR = new Set<number>();
  const out: TopicMatch[] = [];
  for (const p of pairs) {
    if (usedL.has(p.l) || usedR.has(p.r)) continue;
    usedL.add(p.l);
    usedR.add(p.r);
    out.push({ left: p.l, right: p.r, shared: p.shared });
  }
  return out.sort((a, b) => a.left - b.left);
}

export function renderCompare(
  root: HTMLElement,
  left: TopicSummary[],
  right: TopicSummary[],
): TopicMatch[] {
  const doc = root.ownerDocument;
  root.replaceChildren();
  const note = doc.createElement("p");
  note.className = "compare-note";
  note.textContent =
    "Topics aligned by word overlap for display only; " +
    "merged models carry no topic identity.";
  root.appendChild(note);

  const matches = matchTopics(left, right);
  const byLeft = new Map(left.map((t) => [t.topic, t]));
  const byRight = new Map(right.map((t) => [t.topic, t]));
  for (const match of matches) {
    const row = doc.createElement("div");
    row.className = "compare-row";
    row.dataset.shared = String(match.shared.length);
    const shared = new Set(match.shared);
    const l = doc.createElement("div");
    l.className = "compare-left";
    const r = doc.createElement("div");
    r.className = "compare-right";
    renderTopicBars(l, [byLeft.get(match.left)!], shared);
    renderTopicBars(r, [byRight.get(match.right)!], shared);
    row.append(l, r);
    root.appendChild(row);
  }
  return matches;
}
